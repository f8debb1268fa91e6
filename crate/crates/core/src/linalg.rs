//! Dense real-matrix kernel shared by every other module.
//!
//! Matrices are `nalgebra` dense matrices. Probability vectors are stored as
//! column vectors but carry row-vector semantics: `x · M` is written
//! [`row_mul`]`(x, M)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Absolute tolerance used when no other is configured.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("expected a square matrix, found {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is numerically singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
    #[error("generator is reducible: state {state} is not mutually reachable with state 0")]
    Reducible { state: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Kronecker sum `a ⊕ b = a ⊗ I + I ⊗ b`.
pub fn kron_sum(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(a)?;
    ensure_square(b)?;
    let ia = Matrix::identity(a.nrows(), a.nrows());
    let ib = Matrix::identity(b.nrows(), b.nrows());
    Ok(kron(a, &ib) + kron(&ia, b))
}

/// `x · m` for a row vector `x`.
pub fn row_mul(x: &Vector, m: &Matrix) -> Vector {
    m.tr_mul(x)
}

/// Row sums `m · e`.
pub fn row_sums(m: &Matrix) -> Vector {
    Vector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// Max-row-sum norm.
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_entry(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn ensure_square(m: &Matrix) -> Result<(), LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

pub fn ensure_finite(m: &Matrix) -> Result<(), LinalgError> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// An LU factorization that can be reused for several right-hand sides.
#[derive(Debug, Clone)]
pub struct Factorized {
    lu: LU<f64, Dyn, Dyn>,
}

impl Factorized {
    pub fn new(a: &Matrix) -> Result<Self, LinalgError> {
        ensure_square(a)?;
        ensure_finite(a)?;
        let lu = a.clone().lu();
        let u = lu.u();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..u.nrows() {
            let d = u[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let condition = if lo == 0.0 { f64::INFINITY } else { hi / lo };
        if !(condition.is_finite() && condition < 1e15) {
            return Err(LinalgError::Singular { condition });
        }
        Ok(Self { lu })
    }

    pub fn order(&self) -> usize {
        self.lu.l().nrows()
    }

    pub fn solve(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        if b.nrows() != self.order() {
            return Err(LinalgError::Dimension(format!(
                "right-hand side has {} rows, system has order {}",
                b.nrows(),
                self.order()
            )));
        }
        self.lu
            .solve(b)
            .ok_or(LinalgError::Singular { condition: f64::INFINITY })
    }

    pub fn solve_vec(&self, b: &Vector) -> Result<Vector, LinalgError> {
        if b.len() != self.order() {
            return Err(LinalgError::Dimension(format!(
                "right-hand side has length {}, system has order {}",
                b.len(),
                self.order()
            )));
        }
        self.lu
            .solve(b)
            .ok_or(LinalgError::Singular { condition: f64::INFINITY })
    }

    pub fn inverse(&self) -> Result<Matrix, LinalgError> {
        self.lu
            .try_inverse()
            .ok_or(LinalgError::Singular { condition: f64::INFINITY })
    }
}

/// Solve `a · x = b`.
pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    Factorized::new(a)?.solve(b)
}

/// True when the off-diagonal nonzero pattern of `q` is strongly connected.
pub fn is_irreducible(q: &Matrix) -> bool {
    first_unreachable(q).is_none()
}

fn first_unreachable(q: &Matrix) -> Option<usize> {
    let n = q.nrows();
    if n <= 1 {
        return None;
    }
    let forward = reach(n, |i, j| q[(i, j)] != 0.0);
    let backward = reach(n, |i, j| q[(j, i)] != 0.0);
    (0..n).find(|&s| !(forward[s] && backward[s]))
}

fn reach(n: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if i != j && !seen[j] && edge(i, j) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Stationary probability vector `x` of an irreducible conservative generator:
/// `x q = 0`, `x e = 1`.
///
/// One balance equation is replaced by the normalization and the resulting
/// system is solved directly.
pub fn ctmc_stationary(q: &Matrix) -> Result<Vector, LinalgError> {
    ensure_square(q)?;
    ensure_finite(q)?;
    let n = q.nrows();
    if n == 1 {
        return Ok(Vector::from_element(1, 1.0));
    }
    if let Some(state) = first_unreachable(q) {
        return Err(LinalgError::Reducible { state });
    }
    let mut system = q.transpose();
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = Vector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = Factorized::new(&system)?.solve_vec(&rhs)?;
    Ok(clean_probability(x))
}

/// Clamp rounding-level negatives to zero and renormalize.
pub(crate) fn clean_probability(mut x: Vector) -> Vector {
    x.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
    let s = x.sum();
    if s > 0.0 {
        x /= s;
    }
    x
}

/// Copy `block` into `target` with its top-left corner at `(row, col)`.
pub(crate) fn set_block(target: &mut Matrix, row: usize, col: usize, block: &Matrix) {
    target
        .view_mut((row, col), (block.nrows(), block.ncols()))
        .copy_from(block);
}

pub(crate) fn add_block(target: &mut Matrix, row: usize, col: usize, block: &Matrix) {
    let mut view = target.view_mut((row, col), (block.nrows(), block.ncols()));
    view += block;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let k = kron(&Matrix::identity(2, 2), &Matrix::identity(3, 3));
        assert_eq!(k, Matrix::identity(6, 6));
    }

    #[test]
    fn kron_with_scalar_factor() {
        let k = kron(&m(2, 2, &[0.0, 1.0, 1.0, 0.0]), &m(1, 1, &[2.0]));
        assert_eq!(k, m(2, 2, &[0.0, 2.0, 2.0, 0.0]));
    }

    #[test]
    fn kron_entry_layout() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = m(2, 2, &[7.0, 8.0, 9.0, 10.0]);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (4, 6));
        for i in 0..2 {
            for j in 0..3 {
                for p in 0..2 {
                    for q in 0..2 {
                        assert_eq!(k[(i * 2 + p, j * 2 + q)], a[(i, j)] * b[(p, q)]);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_sum_scalars() {
        let s = kron_sum(&m(1, 1, &[-1.0]), &m(1, 1, &[-2.0])).unwrap();
        assert_eq!(s, m(1, 1, &[-3.0]));
    }

    #[test]
    fn kron_sum_rejects_rectangular() {
        let err = kron_sum(&m(1, 2, &[1.0, 2.0]), &m(1, 1, &[1.0])).unwrap_err();
        assert_eq!(err, LinalgError::NotSquare { rows: 1, cols: 2 });
    }

    #[test]
    fn kron_sum_matches_hand_expansion() {
        // (C + D) of a two-state MMPP and an Erlang-2 sub-generator.
        let g = m(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let t = m(2, 2, &[-3.0, 3.0, 0.0, -3.0]);
        let s = kron_sum(&g, &t).unwrap();
        #[rustfmt::skip]
        let expected = m(4, 4, &[
            -4.0,  3.0,  1.0,  0.0,
             0.0, -4.0,  0.0,  1.0,
             1.0,  0.0, -4.0,  3.0,
             0.0,  1.0,  0.0, -4.0,
        ]);
        assert_eq!(s, expected);
    }

    #[test]
    fn stationary_of_single_state() {
        let x = ctmc_stationary(&m(1, 1, &[0.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0]);
    }

    #[test]
    fn stationary_two_state_balance() {
        let x = ctmc_stationary(&m(2, 2, &[-1.0, 1.0, 2.0, -2.0])).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stationary_rejects_reducible() {
        let q = m(2, 2, &[-1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(
            ctmc_stationary(&q),
            Err(LinalgError::Reducible { .. })
        ));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let b = m(2, 1, &[3.0, -1.0]);
        assert_eq!(solve_linear(&Matrix::identity(2, 2), &b).unwrap(), b);
        let x = solve_linear(&m(2, 2, &[2.0, 0.0, 0.0, 4.0]), &m(2, 1, &[2.0, 4.0])).unwrap();
        assert_eq!(x, m(2, 1, &[1.0, 1.0]));
    }

    #[test]
    fn solve_reports_singular() {
        let err = solve_linear(&m(2, 2, &[1.0, 2.0, 2.0, 4.0]), &m(2, 1, &[1.0, 1.0]));
        assert!(matches!(err, Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn irreducibility_pattern() {
        assert!(is_irreducible(&m(2, 2, &[-1.0, 1.0, 1.0, -1.0])));
        assert!(!is_irreducible(&m(2, 2, &[-1.0, 1.0, 0.0, -1.0])));
    }
}
