//! Transaction-confirmation time as a first passage to absorption.
//!
//! A tagged transaction is followed through an absorbing chain whose level `k`
//! is the number of waiting transactions and whose stages mirror those of the
//! queue process. Every level, level 0 included, has the width of a positive
//! level; the generation stage at level 0 is kept as an unreachable-by-default
//! placeholder so that blocks line up across levels. Absorption happens when
//! the block carrying the tagged transaction finishes building; with `k > b`
//! waiters a building completion absorbs with probability `b / k`.

mod rg;

pub use rg::{rg_factorize, RgFactorization};

use thiserror::Error;

use crate::generator::{Layout, StageBlocks};
use crate::linalg::{kron, row_sums, set_block, Factorized, LinalgError, Matrix, Vector};
use crate::matgeo::SteadyState;
use crate::model::{ModelError, ModelSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfirmationError {
    #[error("truncation level {found} is too small, need at least {min}")]
    TruncationTooSmall { found: usize, min: usize },
    #[error("column-stage-0 routing of the first boundary block needs equal building and generation orders ({building} vs {generation})")]
    RoutingShape { building: usize, generation: usize },
    #[error("the waiting room is empty with probability one")]
    DegenerateBoundary,
    #[error("level {level}: censored diagonal block is singular")]
    SingularLevel { level: usize },
    #[error("truncation did not settle by level {levels} (last change {change:.3e})")]
    TruncationNotSettled { levels: usize, change: f64 },
    #[error("absorbing chain of order {order} exceeds the configured limit {limit}")]
    TooLarge { order: usize, limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Treatment of the arrival rate leaving the last retained level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurplusPolicy {
    /// The dropped rate becomes absorption.
    #[default]
    Absorb,
    /// The dropped rate is removed from the diagonal, as a self-loop.
    Reflect,
}

/// Column stage reached at level 0 when a generation completes at level `k ≤ b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryRouting {
    /// The block of `k` transactions starts building at stage `k`.
    #[default]
    StageAligned,
    /// As `StageAligned`, except that level 1 lands on stage 0.
    FirstToGeneration,
}

/// Truncated generator of the absorbing chain on levels `0..=levels`.
#[derive(Debug, Clone)]
pub struct AbsorbingChain {
    layout: Layout,
    stages: StageBlocks,
    idle_generation: Matrix,
    levels: usize,
    policy: SurplusPolicy,
    routing: BoundaryRouting,
}

impl AbsorbingChain {
    pub fn new(
        model: &ModelSpec,
        levels: usize,
        policy: SurplusPolicy,
        routing: BoundaryRouting,
    ) -> Result<Self, ConfirmationError> {
        let layout = Layout::of(model);
        let min = 2 * layout.block_cap + 2;
        if levels < min {
            return Err(ConfirmationError::TruncationTooSmall { found: levels, min });
        }
        if routing == BoundaryRouting::FirstToGeneration
            && layout.block_cap > 1
            && layout.building_order != layout.generation_order
        {
            return Err(ConfirmationError::RoutingShape {
                building: layout.building_order,
                generation: layout.generation_order,
            });
        }
        let m2 = layout.generation_order;
        Ok(Self {
            layout,
            stages: StageBlocks::new(model),
            idle_generation: kron(model.arrivals().c(), &Matrix::identity(m2, m2)),
            levels,
            policy,
            routing,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Highest retained level.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn level_order(&self) -> usize {
        self.layout.level_order()
    }

    pub fn order(&self) -> usize {
        (self.levels + 1) * self.level_order()
    }

    /// Diagonal block of level `k`.
    pub fn local(&self, k: usize) -> Matrix {
        let l = &self.layout;
        let b = l.block_cap;
        let n = l.level_order();
        let mut m = Matrix::zeros(n, n);
        let first = if k == 0 {
            &self.idle_generation
        } else {
            &self.stages.local_generation
        };
        set_block(&mut m, 0, 0, first);
        let restart = (k > b).then(|| &self.stages.restart * ((k - b) as f64 / k as f64));
        for s in 1..=b {
            let o = l.stage_offset(s);
            set_block(&mut m, o, o, &self.stages.local_building);
            if let Some(r) = &restart {
                set_block(&mut m, o, 0, r);
            }
        }
        if k == self.levels && self.policy == SurplusPolicy::Reflect {
            let surplus = row_sums(&self.full_up());
            for i in 0..n {
                m[(i, i)] += surplus[i];
            }
        }
        m
    }

    fn full_up(&self) -> Matrix {
        let l = &self.layout;
        let n = l.level_order();
        let mut m = Matrix::zeros(n, n);
        set_block(&mut m, 0, 0, &self.stages.arrival_generation);
        for s in 1..=l.block_cap {
            let o = l.stage_offset(s);
            set_block(&mut m, o, o, &self.stages.arrival_building);
        }
        m
    }

    /// Block from level `k` to `k + 1`; `None` at the last level.
    pub fn up(&self, k: usize) -> Option<Matrix> {
        if k >= self.levels {
            return None;
        }
        let mut m = self.full_up();
        if k == 0 {
            let p = self.layout.generation_width();
            m.view_mut((0, 0), (p, p)).fill(0.0);
        }
        Some(m)
    }

    /// Generation completion from level `k`: target level and block.
    pub fn down(&self, k: usize) -> Option<(usize, Matrix)> {
        let l = &self.layout;
        let b = l.block_cap;
        if k == 0 {
            return None;
        }
        let (target, stage) = if k <= b {
            let stage = match self.routing {
                BoundaryRouting::FirstToGeneration if k == 1 && b > 1 => 0,
                _ => k,
            };
            (0, stage)
        } else {
            (k - b, b)
        };
        let n = l.level_order();
        let mut m = Matrix::zeros(n, n);
        set_block(&mut m, 0, l.stage_offset(stage), &self.stages.selection);
        Some((target, m))
    }

    /// Absorption rates `H⁰` of level `k`.
    pub fn exit(&self, k: usize) -> Vector {
        let mut total = row_sums(&self.local(k));
        if let Some(u) = self.up(k) {
            total += row_sums(&u);
        }
        if let Some((_, d)) = self.down(k) {
            total += row_sums(&d);
        }
        -total
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.level_order();
        let mut h = Matrix::zeros(self.order(), self.order());
        for k in 0..=self.levels {
            set_block(&mut h, k * n, k * n, &self.local(k));
            if let Some(u) = self.up(k) {
                set_block(&mut h, k * n, (k + 1) * n, &u);
            }
            if let Some((t, d)) = self.down(k) {
                set_block(&mut h, k * n, t * n, &d);
            }
        }
        h
    }

    /// `H⁰` over all levels.
    pub fn exit_vector(&self) -> Vector {
        let n = self.level_order();
        let mut v = Vector::zeros(self.order());
        for k in 0..=self.levels {
            v.rows_mut(k * n, n).copy_from(&self.exit(k));
        }
        v
    }
}

/// Arrival-observed initial distributions over the absorbing chain.
#[derive(Debug, Clone)]
pub struct InitialVectors {
    /// `γ` over levels `0..=levels` (level 0 is zero).
    pub gamma: Vector,
    /// `φ`: the generation-stage part of `γ`.
    pub phi: Vector,
    /// `ψ = γ - φ`.
    pub psi: Vector,
    /// Mass of `γ` beyond the retained levels.
    pub tail_mass: f64,
}

impl InitialVectors {
    pub fn new(ss: &SteadyState, levels: usize) -> Result<Self, ConfirmationError> {
        let layout = ss.layout();
        let busy = 1.0 - ss.boundary_mass();
        if busy <= 0.0 {
            return Err(ConfirmationError::DegenerateBoundary);
        }
        let (n, p) = (layout.level_order(), layout.generation_width());
        let mut gamma = Vector::zeros((levels + 1) * n);
        for (i, level) in ss.levels(levels).into_iter().enumerate() {
            gamma.rows_mut((i + 1) * n, n).copy_from(&(level / busy));
        }
        let mut phi = Vector::zeros(gamma.len());
        for k in 1..=levels {
            phi.rows_mut(k * n, p).copy_from(&gamma.rows(k * n, p));
        }
        let psi = &gamma - &phi;
        let tail_mass = (1.0 - gamma.sum()).max(0.0);
        Ok(Self {
            gamma,
            phi,
            psi,
            tail_mass,
        })
    }

    /// `φ e`.
    pub fn generation_mass(&self) -> f64 {
        self.phi.sum()
    }
}

/// How systems in the absorbing generator are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PassageMethod {
    /// Dense LU up to [`DENSE_LIMIT`] states, block factorization beyond.
    #[default]
    Auto,
    Dense,
    Factorized,
}

/// Largest chain order solved by dense LU under [`PassageMethod::Auto`].
pub const DENSE_LIMIT: usize = 1500;

/// A prepared solver for `H x = r`.
pub enum FirstPassage {
    Dense(Factorized),
    Factorized(RgFactorization),
}

impl FirstPassage {
    pub fn new(chain: &AbsorbingChain, method: PassageMethod) -> Result<Self, ConfirmationError> {
        let dense = match method {
            PassageMethod::Dense => true,
            PassageMethod::Factorized => false,
            PassageMethod::Auto => chain.order() <= DENSE_LIMIT,
        };
        Ok(if dense {
            FirstPassage::Dense(Factorized::new(&chain.to_dense())?)
        } else {
            FirstPassage::Factorized(rg_factorize(chain)?)
        })
    }

    pub fn solve(&self, rhs: &Vector) -> Result<Vector, ConfirmationError> {
        match self {
            FirstPassage::Dense(f) => Ok(f.solve_vec(rhs)?),
            FirstPassage::Factorized(f) => Ok(f.solve(rhs)),
        }
    }

    /// `x = -H⁻¹ e`, the expected time to absorption from every state.
    pub fn mean_times(&self, order: usize) -> Result<Vector, ConfirmationError> {
        self.solve(&Vector::from_element(order, -1.0))
    }
}

/// First two moments of the time to absorption from `init`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageMoments {
    pub mean: f64,
    pub second_moment: f64,
}

impl PassageMoments {
    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }
}

pub fn passage_moments(
    solver: &FirstPassage,
    init: &Vector,
) -> Result<PassageMoments, ConfirmationError> {
    let x = solver.mean_times(init.len())?;
    let y = solver.solve(&(-&x))?;
    Ok(PassageMoments {
        mean: init.dot(&x),
        second_moment: 2.0 * init.dot(&y),
    })
}

/// `-init · H⁻¹ e`.
pub fn mean_first_passage(chain: &AbsorbingChain, init: &Vector) -> Result<f64, ConfirmationError> {
    let solver = FirstPassage::new(chain, PassageMethod::Auto)?;
    Ok(init.dot(&solver.mean_times(chain.order())?))
}

/// `2 init H⁻² e - (init H⁻¹ e)²`.
pub fn variance_first_passage(chain: &AbsorbingChain, init: &Vector) -> Result<f64, ConfirmationError> {
    let solver = FirstPassage::new(chain, PassageMethod::Auto)?;
    Ok(passage_moments(&solver, init)?.variance())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfirmationOptions {
    /// Fixed truncation level; adaptive doubling when `None`.
    pub levels: Option<usize>,
    /// Relative change in the mean passage time that ends the doubling.
    pub relative_tol: f64,
    /// Upper bound on the chain order.
    pub max_order: usize,
    pub routing: BoundaryRouting,
    pub method: PassageMethod,
}

impl Default for ConfirmationOptions {
    fn default() -> Self {
        Self {
            levels: None,
            relative_tol: 1e-6,
            max_order: 400_000,
            routing: BoundaryRouting::StageAligned,
            method: PassageMethod::Auto,
        }
    }
}

/// Components of the mean confirmation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfirmationReport {
    /// `E[ξ]` from the generation-stage initial vector.
    pub mean_first_passage: f64,
    /// `Var[ξ]`.
    pub var_first_passage: f64,
    /// Mean residual building time `E[Γs]`.
    pub equilibrium_build_mean: f64,
    /// `E[ξ] + (1 - φe) E[Γs]`.
    pub mean_confirmation: f64,
    /// `φ e`.
    pub generation_mass: f64,
    pub truncation_level: usize,
    /// Difference between the two surplus policies in the mean confirmation time.
    pub truncation_bracket: f64,
    /// `γ` mass beyond the truncation level.
    pub tail_mass: f64,
}

impl ConfirmationReport {
    /// `E[ξ] / φe`: the mean passage time of an arrival that finds a
    /// generation in progress.
    pub fn conditional_first_passage(&self) -> f64 {
        self.mean_first_passage / self.generation_mass
    }
}

fn passage_at(
    model: &ModelSpec,
    ss: &SteadyState,
    levels: usize,
    policy: SurplusPolicy,
    opts: &ConfirmationOptions,
) -> Result<(PassageMoments, InitialVectors), ConfirmationError> {
    let chain = AbsorbingChain::new(model, levels, policy, opts.routing)?;
    if chain.order() > opts.max_order {
        return Err(ConfirmationError::TooLarge {
            order: chain.order(),
            limit: opts.max_order,
        });
    }
    let init = InitialVectors::new(ss, levels)?;
    let solver = FirstPassage::new(&chain, opts.method)?;
    Ok((passage_moments(&solver, &init.phi)?, init))
}

/// Mean confirmation time `E[ξ] + (1 - φe) E[Γs]`.
pub fn mean_confirmation_time(
    model: &ModelSpec,
    ss: &SteadyState,
    opts: &ConfirmationOptions,
) -> Result<ConfirmationReport, ConfirmationError> {
    let b = model.block_cap();
    let floor = 2 * b + 2;
    let (levels, moments, init) = match opts.levels {
        Some(k) => {
            let (m, i) = passage_at(model, ss, k, SurplusPolicy::Absorb, opts)?;
            (k, m, i)
        }
        None => {
            let mut k = floor.max(50);
            let (mut prev, _) = passage_at(model, ss, k, SurplusPolicy::Absorb, opts)?;
            loop {
                let next_k = 2 * k;
                let (next, init) = passage_at(model, ss, next_k, SurplusPolicy::Absorb, opts)
                    .map_err(|e| match e {
                        ConfirmationError::TooLarge { .. } => ConfirmationError::TruncationNotSettled {
                            levels: k,
                            change: f64::NAN,
                        },
                        other => other,
                    })?;
                let change = (next.mean - prev.mean).abs();
                if change < opts.relative_tol * next.mean.abs() {
                    break (next_k, next, init);
                }
                prev = next;
                k = next_k;
            }
        }
    };
    let (reflected, _) = passage_at(model, ss, levels, SurplusPolicy::Reflect, opts)?;
    let equilibrium_build_mean = model.building().equilibrium()?.mean();
    let generation_mass = init.generation_mass();
    let combine = |xi: f64| xi + (1.0 - generation_mass) * equilibrium_build_mean;
    let mean_confirmation = combine(moments.mean);
    Ok(ConfirmationReport {
        mean_first_passage: moments.mean,
        var_first_passage: moments.variance(),
        equilibrium_build_mean,
        mean_confirmation,
        generation_mass,
        truncation_level: levels,
        truncation_bracket: (combine(reflected.mean) - mean_confirmation).abs(),
        tail_mass: init.tail_mass,
    })
}
