//! Block assembly of the level-structured generator `Q`.
//!
//! A level `k` counts the transactions in the waiting room. Within a level the
//! stages are ordered `l = 0` (block generation, phases `(i, r)`) followed by
//! `l = 1..=b` (blockchain building with `l` transactions in the block, phases
//! `(i, j)`). At level 0 the generation stage is the idle state and carries
//! only the MAP phase `i`. Inside every stage the MAP phase is the major index.
//!
//! Generation completes by selecting `min(k, b)` waiting transactions into the
//! block: level `k ≤ b` drops to level 0 at stage `k`, level `k > b` drops to
//! level `k - b` at stage `b`.

use thiserror::Error;

use crate::linalg::{add_block, kron, kron_sum, row_sums, set_block, Matrix};
use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("truncation level {found} is too small, need at least {min}")]
    TruncationTooSmall { found: usize, min: usize },
    #[error("state {0:?} is outside the state space")]
    InvalidState(StateIndex),
}

/// Orders and offsets of the level structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub map_order: usize,
    pub building_order: usize,
    pub generation_order: usize,
    pub block_cap: usize,
}

/// A state of the queue process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateIndex {
    pub level: usize,
    pub stage: usize,
    pub map_phase: usize,
    /// Generation phase when `stage == 0`, building phase otherwise; `None`
    /// only for the idle state at level 0.
    pub service_phase: Option<usize>,
}

impl Layout {
    pub fn of(model: &ModelSpec) -> Self {
        let (m0, m1, m2) = model.orders();
        Self {
            map_order: m0,
            building_order: m1,
            generation_order: m2,
            block_cap: model.block_cap(),
        }
    }

    /// Width of the generation stage at a positive level (`m0·m2`).
    pub fn generation_width(&self) -> usize {
        self.map_order * self.generation_order
    }

    /// Width of each building stage (`m0·m1`).
    pub fn building_width(&self) -> usize {
        self.map_order * self.building_order
    }

    /// Order of a positive level.
    pub fn level_order(&self) -> usize {
        self.generation_width() + self.block_cap * self.building_width()
    }

    /// Order of level 0.
    pub fn boundary_order(&self) -> usize {
        self.map_order + self.block_cap * self.building_width()
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        if stage == 0 {
            self.generation_width()
        } else {
            self.building_width()
        }
    }

    /// Offset of `stage` inside a positive level.
    pub fn stage_offset(&self, stage: usize) -> usize {
        if stage == 0 {
            0
        } else {
            self.generation_width() + (stage - 1) * self.building_width()
        }
    }

    pub fn boundary_stage_width(&self, stage: usize) -> usize {
        if stage == 0 {
            self.map_order
        } else {
            self.building_width()
        }
    }

    /// Offset of `stage` inside level 0.
    pub fn boundary_stage_offset(&self, stage: usize) -> usize {
        if stage == 0 {
            0
        } else {
            self.map_order + (stage - 1) * self.building_width()
        }
    }

    /// Position of `state` in the level-ordered state space.
    pub fn index(&self, state: StateIndex) -> Result<usize, GeneratorError> {
        let bad = GeneratorError::InvalidState(state);
        if state.stage > self.block_cap || state.map_phase >= self.map_order {
            return Err(bad);
        }
        let inner = match (state.level, state.stage, state.service_phase) {
            (0, 0, None) => state.map_phase,
            (_, 0, Some(r)) if state.level > 0 && r < self.generation_order => {
                state.map_phase * self.generation_order + r
            }
            (_, l, Some(j)) if l > 0 && j < self.building_order => {
                state.map_phase * self.building_order + j
            }
            _ => return Err(bad),
        };
        Ok(if state.level == 0 {
            self.boundary_stage_offset(state.stage) + inner
        } else {
            self.boundary_order()
                + (state.level - 1) * self.level_order()
                + self.stage_offset(state.stage)
                + inner
        })
    }

    /// Inverse of [`Layout::index`].
    pub fn state(&self, index: usize) -> StateIndex {
        let n0 = self.boundary_order();
        let (level, within) = if index < n0 {
            (0, index)
        } else {
            let n = self.level_order();
            (1 + (index - n0) / n, (index - n0) % n)
        };
        if level == 0 && within < self.map_order {
            return StateIndex {
                level,
                stage: 0,
                map_phase: within,
                service_phase: None,
            };
        }
        let (stage, inner, m) = if level == 0 {
            let s = 1 + (within - self.map_order) / self.building_width();
            (s, within - self.boundary_stage_offset(s), self.building_order)
        } else if within < self.generation_width() {
            (0, within, self.generation_order)
        } else {
            let s = 1 + (within - self.generation_width()) / self.building_width();
            (s, within - self.stage_offset(s), self.building_order)
        };
        StateIndex {
            level,
            stage,
            map_phase: inner / m,
            service_phase: Some(inner % m),
        }
    }
}

/// Per-stage building blocks shared by every level block.
#[derive(Debug, Clone)]
pub struct StageBlocks {
    /// `D ⊗ I_{m2}`.
    pub arrival_generation: Matrix,
    /// `D ⊗ I_{m1}`.
    pub arrival_building: Matrix,
    /// `C ⊕ S`.
    pub local_generation: Matrix,
    /// `C ⊕ T`.
    pub local_building: Matrix,
    /// `I ⊗ (T⁰β)`: building completes, generation restarts.
    pub restart: Matrix,
    /// `I ⊗ (S⁰α)`: generation completes, building starts.
    pub selection: Matrix,
    /// `I ⊗ T⁰`: building completes into the idle state.
    pub to_idle: Matrix,
    /// `D ⊗ β`: first arrival to the idle system.
    pub from_idle: Matrix,
    /// `C`.
    pub idle_local: Matrix,
}

impl StageBlocks {
    pub fn new(model: &ModelSpec) -> Self {
        let map = model.arrivals();
        let (building, generation) = (model.building(), model.generation());
        let (m0, m1, m2) = model.orders();
        let i0 = Matrix::identity(m0, m0);
        let kron_sum_ok = |a: &Matrix, b: &Matrix| kron_sum(a, b).expect("validated square");
        Self {
            arrival_generation: kron(map.d(), &Matrix::identity(m2, m2)),
            arrival_building: kron(map.d(), &Matrix::identity(m1, m1)),
            local_generation: kron_sum_ok(map.c(), generation.generator()),
            local_building: kron_sum_ok(map.c(), building.generator()),
            restart: kron(&i0, &(building.exit_column() * generation.initial_row())),
            selection: kron(&i0, &(generation.exit_column() * building.initial_row())),
            to_idle: kron(&i0, &building.exit_column()),
            from_idle: kron(map.d(), &generation.initial_row()),
            idle_local: map.c().clone(),
        }
    }
}

/// The blocks of `Q`.
///
/// `up` is `A0`, `local` is `A1`, `down` is `A_{b+1}`; `boundary_up` is `B0`,
/// `boundary_local` is `B1`. The blocks `B_{k+1}` from level `k ∈ 1..=b` to
/// level 0 differ only in the column stage and are produced by
/// [`LevelBlocks::boundary_down`].
#[derive(Debug, Clone)]
pub struct LevelBlocks {
    pub layout: Layout,
    pub stages: StageBlocks,
    pub up: Matrix,
    pub local: Matrix,
    pub down: Matrix,
    pub boundary_up: Matrix,
    pub boundary_local: Matrix,
}

pub fn build_level_blocks(model: &ModelSpec) -> LevelBlocks {
    let layout = Layout::of(model);
    let stages = StageBlocks::new(model);
    let b = layout.block_cap;
    let (n, n0, p) = (
        layout.level_order(),
        layout.boundary_order(),
        layout.generation_width(),
    );

    let mut up = Matrix::zeros(n, n);
    let mut local = Matrix::zeros(n, n);
    let mut down = Matrix::zeros(n, n);
    let mut boundary_up = Matrix::zeros(n0, n);
    let mut boundary_local = Matrix::zeros(n0, n0);

    set_block(&mut up, 0, 0, &stages.arrival_generation);
    set_block(&mut local, 0, 0, &stages.local_generation);
    set_block(&mut down, 0, layout.stage_offset(b), &stages.selection);
    set_block(&mut boundary_up, 0, 0, &stages.from_idle);
    set_block(&mut boundary_local, 0, 0, &stages.idle_local);
    for l in 1..=b {
        let (o, o0) = (layout.stage_offset(l), layout.boundary_stage_offset(l));
        set_block(&mut up, o, o, &stages.arrival_building);
        set_block(&mut local, o, o, &stages.local_building);
        set_block(&mut local, o, 0, &stages.restart);
        set_block(&mut boundary_up, o0, o, &stages.arrival_building);
        set_block(&mut boundary_local, o0, o0, &stages.local_building);
        set_block(&mut boundary_local, o0, 0, &stages.to_idle);
    }
    debug_assert_eq!(stages.selection.nrows(), p);

    LevelBlocks {
        layout,
        stages,
        up,
        local,
        down,
        boundary_up,
        boundary_local,
    }
}

impl LevelBlocks {
    pub fn block_cap(&self) -> usize {
        self.layout.block_cap
    }

    /// `B_{k+1}` for `1 ≤ k ≤ b`: generation completes at level `k` and all
    /// `k` waiters enter the block.
    pub fn boundary_down(&self, k: usize) -> Matrix {
        assert!(k >= 1 && k <= self.block_cap(), "level {k} has no boundary block");
        let l = &self.layout;
        let mut m = Matrix::zeros(l.level_order(), l.boundary_order());
        set_block(&mut m, 0, l.boundary_stage_offset(k), &self.stages.selection);
        m
    }

    /// `A0 + A1 + A_{b+1}`.
    pub fn drift_matrix(&self) -> Matrix {
        &self.up + &self.local + &self.down
    }
}

/// Finite copy of `Q` on levels `0..=levels`. The outgoing arrival block of
/// the last level is dropped and its rate folded back into the diagonal so
/// the result stays conservative.
pub fn truncated_generator(blocks: &LevelBlocks, levels: usize) -> Result<Matrix, GeneratorError> {
    let b = blocks.block_cap();
    if levels < b + 2 {
        return Err(GeneratorError::TruncationTooSmall {
            found: levels,
            min: b + 2,
        });
    }
    let (n, n0) = (blocks.layout.level_order(), blocks.layout.boundary_order());
    let order = n0 + levels * n;
    let offset = |k: usize| if k == 0 { 0 } else { n0 + (k - 1) * n };
    let mut q = Matrix::zeros(order, order);
    set_block(&mut q, 0, 0, &blocks.boundary_local);
    set_block(&mut q, 0, n0, &blocks.boundary_up);
    for k in 1..=levels {
        let o = offset(k);
        set_block(&mut q, o, o, &blocks.local);
        if k < levels {
            set_block(&mut q, o, offset(k + 1), &blocks.up);
        } else {
            let surplus = row_sums(&blocks.up);
            for i in 0..n {
                q[(o + i, o + i)] += surplus[i];
            }
        }
        if k <= b {
            add_block(&mut q, o, 0, &blocks.boundary_down(k));
        } else {
            add_block(&mut q, o, offset(k - b), &blocks.down);
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn scalar_fixture() -> LevelBlocks {
        build_level_blocks(&ModelSpec::exponential(1.0, 3.0, 5.0, 2).unwrap())
    }

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn scalar_model_blocks_by_hand() {
        let (lam, mu1, mu2) = (1.0, 3.0, 5.0);
        let q = scalar_fixture();
        assert_eq!(q.layout.level_order(), 3);
        assert_eq!(q.layout.boundary_order(), 3);
        assert_eq!(q.up, Matrix::identity(3, 3) * lam);
        #[rustfmt::skip]
        let a1 = m(3, 3, &[
            -lam - mu2, 0.0, 0.0,
            mu1, -lam - mu1, 0.0,
            mu1, 0.0, -lam - mu1,
        ]);
        assert_eq!(q.local, a1);
        let mut a3 = Matrix::zeros(3, 3);
        a3[(0, 2)] = mu2;
        assert_eq!(q.down, a3);
        #[rustfmt::skip]
        let b1 = m(3, 3, &[
            -lam, 0.0, 0.0,
            mu1, -lam - mu1, 0.0,
            mu1, 0.0, -lam - mu1,
        ]);
        assert_eq!(q.boundary_local, b1);
        assert_eq!(q.boundary_up, Matrix::identity(3, 3) * lam);
        let mut b2 = Matrix::zeros(3, 3);
        b2[(0, 1)] = mu2;
        assert_eq!(q.boundary_down(1), b2);
        let mut b3 = Matrix::zeros(3, 3);
        b3[(0, 2)] = mu2;
        assert_eq!(q.boundary_down(2), b3);
    }

    fn map_ph_model() -> ModelSpec {
        use crate::map::MarkovArrivalProcess;
        use crate::phase::PhaseType;
        ModelSpec::new(
            MarkovArrivalProcess::new(
                m(2, 2, &[-3.0, 1.0, 1.0, -2.0]),
                m(2, 2, &[2.0, 0.0, 0.0, 1.0]),
            )
            .unwrap(),
            PhaseType::erlang(2, 4.0).unwrap(),
            PhaseType::hyperexponential(&[0.3, 0.7], &[1.0, 3.0]).unwrap(),
            3,
        )
        .unwrap()
    }

    #[test]
    fn dimensions_count_states() {
        let q = build_level_blocks(&map_ph_model());
        assert_eq!(q.layout.level_order(), 2 * 2 + 3 * 2 * 2);
        assert_eq!(q.layout.boundary_order(), 2 + 3 * 2 * 2);
        assert_eq!(q.up.shape(), (16, 16));
        assert_eq!(q.boundary_up.shape(), (14, 16));
        assert_eq!(q.boundary_down(3).shape(), (16, 14));
    }

    #[test]
    fn repeating_rows_conserve() {
        let q = build_level_blocks(&map_ph_model());
        assert!(max_abs(&row_sums(&q.drift_matrix())) < 1e-12);
        let top = row_sums(&q.boundary_local) + row_sums(&q.boundary_up);
        assert!(max_abs(&top) < 1e-12);
        for k in 1..=3 {
            let rows = row_sums(&q.boundary_down(k)) + row_sums(&q.local) + row_sums(&q.up);
            assert!(max_abs(&rows) < 1e-12, "level {k}");
        }
    }

    #[test]
    fn truncated_chain_is_conservative() {
        let blocks = scalar_fixture();
        let q = truncated_generator(&blocks, 4).unwrap();
        assert_eq!(q.nrows(), 3 + 4 * 3);
        assert!(max_abs(&row_sums(&q)) < 1e-12);
        assert!(truncated_generator(&blocks, 3).is_err());
    }

    #[test]
    fn off_diagonal_entries_nonnegative() {
        let blocks = build_level_blocks(&map_ph_model());
        let q = truncated_generator(&blocks, 8).unwrap();
        for i in 0..q.nrows() {
            for j in 0..q.ncols() {
                if i != j {
                    assert!(q[(i, j)] >= 0.0, "({i},{j}) = {}", q[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn index_round_trip() {
        let layout = Layout::of(&map_ph_model());
        let order = layout.boundary_order() + 3 * layout.level_order();
        for i in 0..order {
            assert_eq!(layout.index(layout.state(i)).unwrap(), i);
        }
        let idle = StateIndex {
            level: 0,
            stage: 0,
            map_phase: 1,
            service_phase: None,
        };
        assert_eq!(layout.index(idle).unwrap(), 1);
        let busy_idle = StateIndex {
            service_phase: Some(0),
            ..idle
        };
        assert!(layout.index(busy_idle).is_err());
    }
}
