//! Rate matrix, boundary probabilities and the stationary measures.
//!
//! The rate matrix `R` solves `A0 + R A1 + R^{b+1} A_{b+1} = 0`. Only three
//! kinds of block in `R` can be nonzero: the generation-stage column, the
//! full-block-stage column, and one diagonal block repeated over the building
//! stages `1..b`. [`RateMatrix`] stores exactly those blocks.

use thiserror::Error;

use crate::generator::{LevelBlocks, Layout};
use crate::linalg::{
    inf_norm, max_abs_entry, row_mul, set_block, Factorized, LinalgError, Matrix, Vector,
};
use crate::stability::{is_stable, DriftReport, StabilityError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatgeoError {
    #[error("model is not positive recurrent (drift {lhs:.6e} >= {rhs:.6e})", lhs = .0.lhs, rhs = .0.rhs)]
    Unstable(DriftReport),
    #[error("rate matrix iteration did not converge after {iterations} iterations (gap {gap:.3e}, residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        gap: f64,
        residual: f64,
    },
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
}

/// How `R^{b+1}` is formed inside the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Powering {
    /// `b + 1` products of `R` with a thin `n × m0·m2` matrix, using the block
    /// pattern of `R`.
    #[default]
    Structured,
    /// Dense `R^{b+1}` by repeated squaring.
    BinarySquaring,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub powering: Powering,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            powering: Powering::Structured,
        }
    }
}

/// Minimal nonnegative solution `R` of the level equation.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    layout: Layout,
    /// Column stage 0, all rows (`n × p`).
    first_column: Matrix,
    /// Column stage `b`, all rows (`n × q`).
    last_column: Matrix,
    /// Diagonal block at stages `1..b` (`q × q`).
    middle: Matrix,
    /// Last successive-iterate gap (max entry).
    pub gap: f64,
    /// `‖R^{b+1} A_{b+1} + R A1 + A0‖∞` of the returned iterate.
    pub residual: f64,
    pub iterations: usize,
}

impl RateMatrix {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn order(&self) -> usize {
        self.layout.level_order()
    }

    /// `R · y`.
    pub fn apply(&self, y: &Matrix) -> Matrix {
        let l = &self.layout;
        let (p, q, b) = (l.generation_width(), l.building_width(), l.block_cap);
        let c = y.ncols();
        let y0 = y.rows(0, p);
        let yb = y.rows(l.stage_offset(b), q);
        let mut out = &self.first_column * y0 + &self.last_column * yb;
        if b >= 2 {
            let mut stacked = Matrix::zeros(q, (b - 1) * c);
            for s in 1..b {
                stacked
                    .columns_mut((s - 1) * c, c)
                    .copy_from(&y.rows(l.stage_offset(s), q));
            }
            let prod = &self.middle * stacked;
            for s in 1..b {
                let mut rows = out.rows_mut(l.stage_offset(s), q);
                rows += prod.columns((s - 1) * c, c);
            }
        }
        out
    }

    /// `x · R` for a row vector `x`.
    pub fn apply_left(&self, x: &Vector) -> Vector {
        let l = &self.layout;
        let (p, q, b) = (l.generation_width(), l.building_width(), l.block_cap);
        let mut out = Vector::zeros(l.level_order());
        out.rows_mut(0, p).copy_from(&self.first_column.tr_mul(x));
        if b >= 2 {
            let mut stacked = Matrix::zeros(q, b - 1);
            for s in 1..b {
                stacked.column_mut(s - 1).copy_from(&x.rows(l.stage_offset(s), q));
            }
            let prod = self.middle.tr_mul(&stacked);
            for s in 1..b {
                out.rows_mut(l.stage_offset(s), q).copy_from(&prod.column(s - 1));
            }
        }
        out.rows_mut(l.stage_offset(b), q)
            .copy_from(&self.last_column.tr_mul(x));
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let l = &self.layout;
        let (q, b) = (l.building_width(), l.block_cap);
        let mut r = Matrix::zeros(l.level_order(), l.level_order());
        set_block(&mut r, 0, 0, &self.first_column);
        for s in 1..b {
            set_block(&mut r, l.stage_offset(s), l.stage_offset(s), &self.middle);
        }
        set_block(&mut r, 0, l.stage_offset(b), &self.last_column);
        debug_assert_eq!(self.last_column.ncols(), q);
        r
    }

    /// `R^k · U` where `U` embeds the generation stage.
    pub fn power_on_generation(&self, k: usize) -> Matrix {
        let mut y = generation_embedding(&self.layout);
        for _ in 0..k {
            y = self.apply(&y);
        }
        y
    }

    /// Defining-equation residual recomputed from dense blocks.
    pub fn dense_residual(&self, blocks: &LevelBlocks) -> f64 {
        let r = self.to_dense();
        let b = blocks.block_cap();
        let power = dense_power(&r, b + 1);
        inf_norm(&(&power * &blocks.down + &r * &blocks.local + &blocks.up))
    }

    /// Spectral radius estimate by power iteration on `x ↦ x R`.
    pub fn spectral_radius(&self) -> f64 {
        let n = self.order();
        let mut x = Vector::from_element(n, 1.0 / n as f64);
        let mut estimate = 0.0;
        for _ in 0..100_000 {
            let y = self.apply_left(&x);
            let norm = y.sum();
            if norm <= 0.0 {
                return 0.0;
            }
            let next = norm;
            x = y / norm;
            if (next - estimate).abs() <= 1e-10 * next {
                return next;
            }
            estimate = next;
        }
        estimate
    }
}

pub(crate) fn generation_embedding(layout: &Layout) -> Matrix {
    let p = layout.generation_width();
    let mut u = Matrix::zeros(layout.level_order(), p);
    u.view_mut((0, 0), (p, p)).fill_with_identity();
    u
}

fn dense_power(r: &Matrix, mut k: usize) -> Matrix {
    let n = r.nrows();
    let mut result = Matrix::identity(n, n);
    let mut base = r.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Pieces of `(-A1)⁻¹` and the constant part of the iteration.
struct IterationParts {
    /// `W = A0 (-A1)⁻¹`, generation column (`n × p`).
    base_first: Matrix,
    /// `D ⊗ I · (-(C ⊕ T))⁻¹`.
    middle: Matrix,
    /// `Z` on the generation column (`p × p`).
    gain_first: Matrix,
    /// `Z` on the full-block column (`p × q`).
    gain_last: Matrix,
}

impl IterationParts {
    fn new(blocks: &LevelBlocks) -> Result<Self, LinalgError> {
        let l = &blocks.layout;
        let s = &blocks.stages;
        let (p, b) = (l.generation_width(), l.block_cap);
        let g0 = Factorized::new(&(-&s.local_generation))?.inverse()?;
        let gb = Factorized::new(&(-&s.local_building))?.inverse()?;
        let cross = &gb * &s.restart * &g0;
        let mut base_first = Matrix::zeros(l.level_order(), p);
        set_block(&mut base_first, 0, 0, &(&s.arrival_generation * &g0));
        let lower = &s.arrival_building * &cross;
        for st in 1..=b {
            set_block(&mut base_first, l.stage_offset(st), 0, &lower);
        }
        Ok(Self {
            base_first,
            middle: &s.arrival_building * &gb,
            gain_first: &s.selection * &cross,
            gain_last: &s.selection * &gb,
        })
    }

    /// `R = W + X Z` for `X = R_prev^{b+1} U`.
    fn assemble(&self, layout: &Layout, x: &Matrix) -> RateMatrix {
        let mut last_column = x * &self.gain_last;
        let o = layout.stage_offset(layout.block_cap);
        let mut tail = last_column.rows_mut(o, layout.building_width());
        tail += &self.middle;
        RateMatrix {
            layout: *layout,
            first_column: &self.base_first + x * &self.gain_first,
            last_column,
            middle: self.middle.clone(),
            gap: f64::INFINITY,
            residual: f64::INFINITY,
            iterations: 0,
        }
    }
}

/// Iterate `R ← (R^{b+1} A_{b+1} + A0)(-A1)⁻¹` from `R = 0`.
///
/// Refuses models that fail the drift test.
pub fn compute_rate_matrix(blocks: &LevelBlocks, opts: &SolverOptions) -> Result<RateMatrix, MatgeoError> {
    let drift = is_stable(blocks)?;
    if !drift.stable {
        return Err(MatgeoError::Unstable(drift));
    }
    match opts.powering {
        Powering::Structured => structured_iteration(blocks, opts),
        Powering::BinarySquaring => dense_iteration(blocks, opts),
    }
}

fn structured_iteration(blocks: &LevelBlocks, opts: &SolverOptions) -> Result<RateMatrix, MatgeoError> {
    let layout = blocks.layout;
    let b = layout.block_cap;
    let selection = &blocks.stages.selection;
    let parts = IterationParts::new(blocks)?;
    let mut x_prev = Matrix::zeros(layout.level_order(), layout.generation_width());
    let mut r = parts.assemble(&layout, &x_prev);
    let (mut gap, mut residual) = (f64::INFINITY, f64::INFINITY);
    for iteration in 1..=opts.max_iter {
        let x = r.power_on_generation(b + 1);
        let delta = &x - &x_prev;
        // R_{N+1} - R_N = ΔX·Z, and the residual of R_N is ΔX·Sel at stage b.
        gap = max_abs_entry(&(&delta * &parts.gain_first)).max(max_abs_entry(&(&delta * &parts.gain_last)));
        residual = inf_norm(&(&delta * selection));
        if !(gap.is_finite() && residual.is_finite()) {
            break;
        }
        if gap <= opts.tol && residual <= opts.tol {
            r.gap = gap;
            r.residual = residual;
            r.iterations = iteration;
            return Ok(r);
        }
        r = parts.assemble(&layout, &x);
        x_prev = x;
    }
    Err(MatgeoError::NotConverged {
        iterations: opts.max_iter,
        gap,
        residual,
    })
}

fn dense_iteration(blocks: &LevelBlocks, opts: &SolverOptions) -> Result<RateMatrix, MatgeoError> {
    let layout = blocks.layout;
    let b = layout.block_cap;
    let n = layout.level_order();
    let minus_local_inv = Factorized::new(&(-&blocks.local))?.inverse()?;
    let mut r = Matrix::zeros(n, n);
    let (mut gap, mut residual) = (f64::INFINITY, f64::INFINITY);
    for iteration in 1..=opts.max_iter {
        let power_down = dense_power(&r, b + 1) * &blocks.down;
        residual = inf_norm(&(&power_down + &r * &blocks.local + &blocks.up));
        let next = (power_down + &blocks.up) * &minus_local_inv;
        gap = max_abs_entry(&(&next - &r));
        if !(gap.is_finite() && residual.is_finite()) {
            break;
        }
        if gap <= opts.tol && residual <= opts.tol {
            let mut out = from_dense(&layout, &r);
            out.gap = gap;
            out.residual = residual;
            out.iterations = iteration;
            return Ok(out);
        }
        r = next;
    }
    Err(MatgeoError::NotConverged {
        iterations: opts.max_iter,
        gap,
        residual,
    })
}

fn from_dense(layout: &Layout, r: &Matrix) -> RateMatrix {
    let (n, p, q, b) = (
        layout.level_order(),
        layout.generation_width(),
        layout.building_width(),
        layout.block_cap,
    );
    let middle = if b >= 2 {
        let o = layout.stage_offset(1);
        r.view((o, o), (q, q)).into_owned()
    } else {
        Matrix::zeros(q, q)
    };
    RateMatrix {
        layout: *layout,
        first_column: r.view((0, 0), (n, p)).into_owned(),
        last_column: r.view((0, layout.stage_offset(b)), (n, q)).into_owned(),
        middle,
        gap: f64::INFINITY,
        residual: f64::INFINITY,
        iterations: 0,
    }
}

/// Stationary distribution `π_0, π_1, π_k = π_1 R^{k-1}`.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rate: RateMatrix,
    pub pi0: Vector,
    pub pi1: Vector,
    /// `(I - R)⁻¹ e`.
    tail: Vector,
    /// `(I - R)⁻² e`.
    tail2: Vector,
    /// `(I - R)⁻¹ h` with `h` the block-size weight of a positive level.
    tail_blocks: Vector,
}

/// Solve the censored boundary system for `(π_0, π_1)`.
///
/// The two balance equations
/// `π_0 B1 + π_1 Σ_{k=1}^{b} R^{k-1} B_{k+1} = 0` and
/// `π_0 B0 + π_1 (A1 + R^b A_{b+1}) = 0` are solved with one equation
/// replaced by `π_0 e + π_1 (I - R)⁻¹ e = 1`.
pub fn solve_boundary(blocks: &LevelBlocks, rate: RateMatrix) -> Result<SteadyState, MatgeoError> {
    let l = blocks.layout;
    let (n, n0, b, q) = (l.level_order(), l.boundary_order(), l.block_cap, l.building_width());
    let selection = &blocks.stages.selection;

    let mut system = Matrix::zeros(n0 + n, n0 + n);
    set_block(&mut system, 0, 0, &blocks.boundary_local);
    set_block(&mut system, 0, n0, &blocks.boundary_up);
    let mut y = generation_embedding(&l);
    for k in 1..=b {
        set_block(&mut system, n0, l.boundary_stage_offset(k), &(&y * selection));
        y = rate.apply(&y);
    }
    let mut bottom_right = blocks.local.clone();
    let mut tail_block = bottom_right.columns_mut(l.stage_offset(b), q);
    tail_block += &y * selection;
    set_block(&mut system, n0, n0, &bottom_right);

    let resolvent = Factorized::new(&(Matrix::identity(n, n) - rate.to_dense()))?;
    let tail = resolvent.solve_vec(&Vector::from_element(n, 1.0))?;
    let tail2 = resolvent.solve_vec(&tail)?;
    let tail_blocks = resolvent.solve_vec(&block_weights(&l))?;

    system.column_mut(0).fill(0.0);
    system.view_mut((0, 0), (n0, 1)).fill(1.0);
    system.view_mut((n0, 0), (n, 1)).copy_from(&tail);
    let mut rhs = Vector::zeros(n0 + n);
    rhs[0] = 1.0;
    let x = Factorized::new(&system.transpose())?.solve_vec(&rhs)?;
    let clamp = |v: Vector| v.map(|e| if e < 0.0 { 0.0 } else { e });
    Ok(SteadyState {
        rate,
        pi0: clamp(x.rows(0, n0).into_owned()),
        pi1: clamp(x.rows(n0, n).into_owned()),
        tail,
        tail2,
        tail_blocks,
    })
}

/// Stability check, rate matrix and boundary solve in one call.
pub fn solve_steady_state(blocks: &LevelBlocks, opts: &SolverOptions) -> Result<SteadyState, MatgeoError> {
    let rate = compute_rate_matrix(blocks, opts)?;
    solve_boundary(blocks, rate)
}

/// `h = (0, e, 2e, …, be)` on a positive level.
pub fn block_weights(layout: &Layout) -> Vector {
    let mut h = Vector::zeros(layout.level_order());
    for s in 1..=layout.block_cap {
        h.rows_mut(layout.stage_offset(s), layout.building_width())
            .fill(s as f64);
    }
    h
}

/// `h` on level 0.
pub fn boundary_block_weights(layout: &Layout) -> Vector {
    let mut h = Vector::zeros(layout.boundary_order());
    for s in 1..=layout.block_cap {
        h.rows_mut(layout.boundary_stage_offset(s), layout.building_width())
            .fill(s as f64);
    }
    h
}

impl SteadyState {
    pub fn layout(&self) -> Layout {
        self.rate.layout()
    }

    /// `π_k`.
    pub fn level(&self, k: usize) -> Vector {
        match k {
            0 => self.pi0.clone(),
            _ => (1..k).fold(self.pi1.clone(), |x, _| self.rate.apply_left(&x)),
        }
    }

    /// `π_1, …, π_count` in order.
    pub fn levels(&self, count: usize) -> Vec<Vector> {
        let mut out = Vec::with_capacity(count);
        let mut x = self.pi1.clone();
        for k in 0..count {
            if k > 0 {
                x = self.rate.apply_left(&x);
            }
            out.push(x.clone());
        }
        out
    }

    /// Probability of an empty waiting room, `π_0 e`.
    pub fn boundary_mass(&self) -> f64 {
        self.pi0.sum()
    }

    /// `π_0 e + π_1 (I - R)⁻¹ e`.
    pub fn total_mass(&self) -> f64 {
        self.pi0.sum() + self.pi1.dot(&self.tail)
    }

    /// `E[N1] = Σ k π_k e = π_1 (I - R)⁻² e`.
    pub fn mean_waiting_count(&self) -> f64 {
        self.pi1.dot(&self.tail2)
    }

    /// `π_1 R (I - R)⁻² e`, which falls short of `Σ k π_k e` by
    /// `π_1 (I - R)⁻¹ e`.
    pub fn mean_waiting_count_shifted(&self) -> f64 {
        self.mean_waiting_count() - self.pi1.dot(&self.tail)
    }

    /// `E[N2] = π_0 h_0 + π_1 (I - R)⁻¹ h`.
    pub fn mean_block_count(&self) -> f64 {
        self.pi0.dot(&boundary_block_weights(&self.layout())) + self.pi1.dot(&self.tail_blocks)
    }

    /// Residuals of the two boundary balance equations (max entry).
    pub fn boundary_residuals(&self, blocks: &LevelBlocks) -> (f64, f64) {
        let b = blocks.block_cap();
        let mut first = row_mul(&self.pi0, &blocks.boundary_local);
        let mut x = self.pi1.clone();
        for k in 1..=b {
            first += row_mul(&x, &blocks.boundary_down(k));
            if k < b {
                x = self.rate.apply_left(&x);
            }
        }
        let pib = self.rate.apply_left(&x);
        let second = row_mul(&self.pi0, &blocks.boundary_up)
            + row_mul(&self.pi1, &blocks.local)
            + row_mul(&pib, &blocks.down);
        (first.amax(), second.amax())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_level_blocks, truncated_generator};
    use crate::linalg::ctmc_stationary;
    use crate::map::MarkovArrivalProcess;
    use crate::model::ModelSpec;
    use crate::phase::PhaseType;

    fn fixture() -> LevelBlocks {
        build_level_blocks(&ModelSpec::exponential(0.3, 1.0, 2.0, 2).unwrap())
    }

    fn map_ph() -> LevelBlocks {
        let model = ModelSpec::new(
            MarkovArrivalProcess::new(
                Matrix::from_row_slice(2, 2, &[-3.0, 1.0, 1.0, -2.0]),
                Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
            )
            .unwrap(),
            PhaseType::erlang(2, 4.0).unwrap(),
            PhaseType::erlang(2, 3.0).unwrap(),
            3,
        )
        .unwrap();
        build_level_blocks(&model)
    }

    #[test]
    fn no_arrivals_gives_zero_rate_matrix() {
        let model = ModelSpec::new(
            MarkovArrivalProcess::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1)).unwrap(),
            PhaseType::exponential(1.0).unwrap(),
            PhaseType::exponential(2.0).unwrap(),
            2,
        )
        .unwrap();
        let r = compute_rate_matrix(&build_level_blocks(&model), &SolverOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(max_abs_entry(&r.to_dense()), 0.0);
    }

    #[test]
    fn fixture_residual_and_radius() {
        let q = fixture();
        let r = compute_rate_matrix(&q, &SolverOptions::default()).unwrap();
        assert!(r.residual <= 1e-12);
        assert!(r.dense_residual(&q) <= 1e-12);
        let sp = r.spectral_radius();
        assert!(sp > 0.0 && sp < 1.0, "{sp}");
        assert!(r.to_dense().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn routes_agree() {
        for q in [fixture(), map_ph()] {
            let a = compute_rate_matrix(&q, &SolverOptions::default()).unwrap();
            let opts = SolverOptions {
                powering: Powering::BinarySquaring,
                ..Default::default()
            };
            let b = compute_rate_matrix(&q, &opts).unwrap();
            assert!(max_abs_entry(&(a.to_dense() - b.to_dense())) < 1e-11);
        }
    }

    #[test]
    fn more_iterations_do_not_move_r() {
        let q = map_ph();
        let a = compute_rate_matrix(&q, &SolverOptions::default()).unwrap();
        let tighter = SolverOptions {
            tol: 1e-14,
            max_iter: 200_000,
            ..Default::default()
        };
        let b = compute_rate_matrix(&q, &tighter).unwrap();
        assert!(max_abs_entry(&(a.to_dense() - b.to_dense())) < 1e-12);
    }

    #[test]
    fn structured_products_match_dense() {
        let q = map_ph();
        let r = compute_rate_matrix(&q, &SolverOptions::default()).unwrap();
        let dense = r.to_dense();
        let n = dense.nrows();
        let y = Matrix::from_fn(n, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5);
        assert!(max_abs_entry(&(r.apply(&y) - &dense * &y)) < 1e-14);
        let x = Vector::from_fn(n, |i, _| (i % 4) as f64 * 0.25);
        assert!((r.apply_left(&x) - dense.tr_mul(&x)).amax() < 1e-14);
    }

    #[test]
    fn refuses_unstable() {
        let q = build_level_blocks(&ModelSpec::exponential(1.1, 2.0, 2.0, 1).unwrap());
        assert!(matches!(
            compute_rate_matrix(&q, &SolverOptions::default()),
            Err(MatgeoError::Unstable(_))
        ));
    }

    #[test]
    fn boundary_equations_and_normalization() {
        for q in [fixture(), map_ph()] {
            let ss = solve_steady_state(&q, &SolverOptions::default()).unwrap();
            let (r1, r2) = ss.boundary_residuals(&q);
            assert!(r1 <= 1e-10 && r2 <= 1e-10, "{r1} {r2}");
            assert!((ss.total_mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn levels_follow_geometric_form() {
        let q = fixture();
        let ss = solve_steady_state(&q, &SolverOptions::default()).unwrap();
        assert_eq!(ss.level(1), ss.pi1);
        let r = ss.rate.to_dense();
        let direct = r.tr_mul(&r.tr_mul(&ss.pi1));
        assert!((ss.level(3) - direct).amax() < 1e-14);
        let partial: f64 = ss.levels(400).iter().map(|v| v.sum()).sum();
        assert!((partial - ss.pi1.dot(&ss.tail)).abs() < 1e-10);
    }

    #[test]
    fn matches_truncated_chain() {
        let q = fixture();
        let ss = solve_steady_state(&q, &SolverOptions::default()).unwrap();
        let k = 60;
        let x = ctmc_stationary(&truncated_generator(&q, k).unwrap()).unwrap();
        let (n0, n) = (q.layout.boundary_order(), q.layout.level_order());
        assert!((x.rows(0, n0) - &ss.pi0).amax() < 1e-6);
        for (i, level) in ss.levels(20).iter().enumerate() {
            assert!((x.rows(n0 + i * n, n) - level).amax() < 1e-6);
        }
    }

    #[test]
    fn measures_match_partial_sums() {
        let q = fixture();
        let ss = solve_steady_state(&q, &SolverOptions::default()).unwrap();
        let h = block_weights(&q.layout);
        let mut n1 = 0.0;
        let mut n2 = ss.pi0.dot(&boundary_block_weights(&q.layout));
        for (i, level) in ss.levels(500).iter().enumerate() {
            n1 += (i + 1) as f64 * level.sum();
            n2 += level.dot(&h);
        }
        assert!((ss.mean_waiting_count() - n1).abs() < 1e-8);
        assert!((ss.mean_block_count() - n2).abs() < 1e-8);
        // each transaction spends one building time in a block
        assert!((ss.mean_block_count() - 0.3).abs() < 1e-10);
        let gap = ss.mean_waiting_count() - ss.mean_waiting_count_shifted();
        assert!((gap - ss.pi1.dot(&ss.tail)).abs() < 1e-14);
    }

    #[test]
    fn block_count_bounded_and_growing_in_cap() {
        let mut prev = 0.0;
        for b in [1, 2, 4, 8] {
            let q = build_level_blocks(&ModelSpec::exponential(0.5, 0.8, 2.0, b).unwrap());
            let ss = solve_steady_state(&q, &SolverOptions::default()).unwrap();
            let n2 = ss.mean_block_count();
            assert!(n2 <= b as f64 && n2 >= prev - 1e-9);
            prev = n2;
        }
    }
}
