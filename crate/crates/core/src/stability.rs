//! Mean-drift stability test.

use thiserror::Error;

use crate::generator::LevelBlocks;
use crate::linalg::{ctmc_stationary, row_mul, row_sums, set_block, LinalgError, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("drift generator over the generation and full-block stages: {0}")]
    Linalg(#[from] LinalgError),
    #[error("rates must be positive and finite")]
    InvalidRate,
    #[error("block capacity must be at least 1")]
    BlockCap,
}

/// Outcome of the drift comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// Invariant measure on the generation stage.
    pub theta0: Vector,
    /// Invariant measure on the full-block stage `b`.
    pub thetab: Vector,
    /// Mean upward drift (arrival rate under the invariant measure).
    pub lhs: f64,
    /// Mean downward drift (`b` times the generation-completion rate).
    pub rhs: f64,
    pub stable: bool,
}

impl DriftReport {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// `A0 + A1 + A_{b+1}`.
pub fn drift_matrix(blocks: &LevelBlocks) -> Matrix {
    blocks.drift_matrix()
}

/// The generator restricted to the generation stage and the full-block stage,
/// on which the drift generator's invariant measure lives.
pub fn reduced_drift_generator(blocks: &LevelBlocks) -> Matrix {
    let s = &blocks.stages;
    let (p, q) = (s.selection.nrows(), s.selection.ncols());
    let mut m = Matrix::zeros(p + q, p + q);
    set_block(&mut m, 0, 0, &(&s.arrival_generation + &s.local_generation));
    set_block(&mut m, 0, p, &s.selection);
    set_block(&mut m, p, 0, &s.restart);
    set_block(&mut m, p, p, &(&s.arrival_building + &s.local_building));
    m
}

/// `(θ0, θb)`: the stages `1..b` carry no invariant mass.
pub fn invariant_measure(blocks: &LevelBlocks) -> Result<(Vector, Vector), StabilityError> {
    let p = blocks.layout.generation_width();
    let theta = ctmc_stationary(&reduced_drift_generator(blocks))?;
    Ok((
        theta.rows(0, p).into_owned(),
        theta.rows(p, theta.len() - p).into_owned(),
    ))
}

/// Positive recurrence holds iff the upward drift is strictly below the
/// downward drift.
pub fn is_stable(blocks: &LevelBlocks) -> Result<DriftReport, StabilityError> {
    let (theta0, thetab) = invariant_measure(blocks)?;
    let s = &blocks.stages;
    let lhs = theta0.dot(&row_sums(&s.arrival_generation)) + thetab.dot(&row_sums(&s.arrival_building));
    let rhs = blocks.block_cap() as f64 * row_mul(&theta0, &s.selection).sum();
    Ok(DriftReport {
        theta0,
        thetab,
        lhs,
        rhs,
        stable: lhs < rhs,
    })
}

/// Closed-form check for Poisson arrivals and exponential stages:
/// `b μ1 μ2 / (μ1 + μ2) > λ`.
pub fn is_stable_exponential(lambda: f64, mu1: f64, mu2: f64, block_cap: usize) -> Result<bool, StabilityError> {
    if ![lambda, mu1, mu2].iter().all(|x| x.is_finite() && *x > 0.0) {
        return Err(StabilityError::InvalidRate);
    }
    if block_cap == 0 {
        return Err(StabilityError::BlockCap);
    }
    Ok(block_cap as f64 * mu1 * mu2 / (mu1 + mu2) > lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::build_level_blocks;
    use crate::linalg::{max_abs, solve_linear};
    use crate::map::MarkovArrivalProcess;
    use crate::model::ModelSpec;
    use crate::phase::PhaseType;

    fn blocks(lambda: f64, mu1: f64, mu2: f64, b: usize) -> LevelBlocks {
        build_level_blocks(&ModelSpec::exponential(lambda, mu1, mu2, b).unwrap())
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
    fn drift_matrix_structure() {
        let q = blocks(0.3, 1.0, 2.0, 2);
        let a = drift_matrix(&q);
        assert!(max_abs(&row_sums(&a)) < 1e-15);
        assert_eq!(a[(0, 2)], 2.0);
        assert_eq!(a, &q.up + &q.local + &q.down);
    }

    #[test]
    fn symmetric_rates_split_evenly() {
        let (t0, tb) = invariant_measure(&blocks(0.7, 2.0, 2.0, 2)).unwrap();
        assert!((t0[0] - 0.5).abs() < 1e-15);
        assert!((tb[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn measure_residual_and_normalization() {
        let q = map_ph();
        let (t0, tb) = invariant_measure(&q).unwrap();
        let theta = Vector::from_iterator(t0.len() + tb.len(), t0.iter().chain(tb.iter()).copied());
        assert!((theta.sum() - 1.0).abs() < 1e-12);
        assert!(theta.iter().all(|&x| x >= 0.0));
        let res = row_mul(&theta, &reduced_drift_generator(&q));
        assert!(max_abs(&res) < 1e-10);
    }

    #[test]
    fn full_drift_solve_puts_no_mass_on_middle_stages() {
        // Solve θ A = 0 on the whole drift generator directly.
        let q = map_ph();
        let a = drift_matrix(&q);
        let n = a.nrows();
        let mut sys = a.transpose();
        sys.row_mut(n - 1).fill(1.0);
        let mut rhs = Matrix::zeros(n, 1);
        rhs[(n - 1, 0)] = 1.0;
        let theta = solve_linear(&sys, &rhs).unwrap();
        let l = q.layout;
        for i in l.stage_offset(1)..l.stage_offset(l.block_cap) {
            assert!(theta[(i, 0)].abs() < 1e-10);
        }
        let (t0, tb) = invariant_measure(&q).unwrap();
        for i in 0..t0.len() {
            assert!((theta[(i, 0)] - t0[i]).abs() < 1e-10);
        }
        for i in 0..tb.len() {
            assert!((theta[(l.stage_offset(l.block_cap) + i, 0)] - tb[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn light_load_large_blocks_is_stable() {
        assert!(is_stable(&blocks(0.3, 0.5, 2.0, 40)).unwrap().stable);
        assert!(is_stable_exponential(0.3, 0.5, 2.0, 40).unwrap());
    }

    #[test]
    fn overloaded_single_slot_is_unstable() {
        assert!(!is_stable(&blocks(1.1, 2.0, 2.0, 1)).unwrap().stable);
    }

    #[test]
    fn boundary_counts_as_unstable() {
        assert!(!is_stable_exponential(1.0, 2.0, 2.0, 1).unwrap());
    }

    #[test]
    fn no_arrivals_is_stable() {
        let model = ModelSpec::new(
            MarkovArrivalProcess::new(Matrix::zeros(1, 1), Matrix::zeros(1, 1)).unwrap(),
            PhaseType::exponential(1.0).unwrap(),
            PhaseType::exponential(1.0).unwrap(),
            2,
        )
        .unwrap();
        let r = is_stable(&build_level_blocks(&model)).unwrap();
        assert!(r.stable);
        assert_eq!(r.lhs, 0.0);
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(is_stable_exponential(0.0, 1.0, 1.0, 1).is_err());
        assert!(is_stable_exponential(1.0, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn larger_blocks_never_destabilize() {
        for &(lam, mu1, mu2) in &[(0.5, 1.0, 1.0), (2.0, 1.5, 3.0), (4.0, 2.0, 2.0)] {
            let mut was_stable = false;
            for b in 1..=6 {
                let s = is_stable(&blocks(lam, mu1, mu2, b)).unwrap().stable;
                assert!(!(was_stable && !s));
                was_stable = s;
            }
        }
    }
}
