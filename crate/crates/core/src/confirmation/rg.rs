//! UL-type block factorization `H = (I - R_U) U (I - G_L)` of a truncated
//! absorbing chain, computed by censoring levels from the top down.

use super::{AbsorbingChain, ConfirmationError};
use crate::linalg::{set_block, Factorized, Matrix, Vector};

/// Factors of the truncated absorbing generator.
///
/// `rate[k]` links level `k` to `k + 1`, `diagonal[k]` is the censored block of
/// level `k`, and `lower[k]` lists `(l, G_{k,l})` for the levels `l < k`
/// reachable downward from `k` after censoring.
pub struct RgFactorization {
    level_order: usize,
    pub rate: Vec<Matrix>,
    pub diagonal: Vec<Matrix>,
    pub lower: Vec<Vec<(usize, Matrix)>>,
    inverses: Vec<Factorized>,
}

fn add_to(list: &mut Vec<(usize, Matrix)>, level: usize, block: Matrix) {
    match list.iter_mut().find(|(l, _)| *l == level) {
        Some((_, m)) => *m += block,
        None => list.push((level, block)),
    }
}

pub fn rg_factorize(chain: &AbsorbingChain) -> Result<RgFactorization, ConfirmationError> {
    let top = chain.levels();
    let n = chain.level_order();
    let mut rate = vec![Matrix::zeros(n, n); top];
    let mut diagonal = Vec::with_capacity(top + 1);
    let mut lower = vec![Vec::new(); top + 1];
    let mut inverses = Vec::with_capacity(top + 1);

    // Censored row of the current level: diagonal and lower blocks.
    let mut current = chain.local(top);
    let mut current_lower: Vec<(usize, Matrix)> = chain.down(top).into_iter().collect();
    for k in (0..=top).rev() {
        let neg = -&current;
        let f = Factorized::new(&neg).map_err(|_| ConfirmationError::SingularLevel { level: k })?;
        let inv = f.inverse()?;
        let gs: Vec<(usize, Matrix)> = current_lower.iter().map(|(l, block)| (*l, &inv * block)).collect();
        if k > 0 {
            let up = chain.up(k - 1).expect("inner level has an up block");
            rate[k - 1] = &up * &inv;
            let mut next = chain.local(k - 1);
            let mut next_lower: Vec<(usize, Matrix)> = chain.down(k - 1).into_iter().collect();
            for (l, g) in &gs {
                let fill = &up * g;
                if *l == k - 1 {
                    next += fill;
                } else {
                    add_to(&mut next_lower, *l, fill);
                }
            }
            current = next;
            current_lower = next_lower;
        }
        diagonal.push(neg.map(|x| -x));
        inverses.push(f);
        lower[k] = gs;
    }
    diagonal.reverse();
    inverses.reverse();
    Ok(RgFactorization {
        level_order: n,
        rate,
        diagonal,
        lower,
        inverses,
    })
}

impl RgFactorization {
    pub fn levels(&self) -> usize {
        self.diagonal.len() - 1
    }

    /// Solve `H x = rhs` by three block sweeps.
    pub fn solve(&self, rhs: &Vector) -> Vector {
        let n = self.level_order;
        let top = self.levels();
        let block = |v: &Vector, k: usize| v.rows(k * n, n).into_owned();
        // (I - R_U) z = rhs
        let mut z = vec![Vector::zeros(n); top + 1];
        z[top] = block(rhs, top);
        for k in (0..top).rev() {
            z[k] = block(rhs, k) + &self.rate[k] * &z[k + 1];
        }
        // U w = z, with U_k = -(-U_k)
        let w: Vec<Vector> = z
            .iter()
            .zip(&self.inverses)
            .map(|(zk, f)| -f.solve_vec(zk).expect("dimensions fixed at factorization"))
            .collect();
        // (I - G_L) x = w, where G_{k,l} = (-U_k)⁻¹ L_{k,l}
        let mut x = vec![Vector::zeros(n); top + 1];
        for k in 0..=top {
            let mut xk = w[k].clone();
            for (l, g) in &self.lower[k] {
                xk += g * &x[*l];
            }
            x[k] = xk;
        }
        let mut out = Vector::zeros((top + 1) * n);
        for (k, xk) in x.iter().enumerate() {
            out.rows_mut(k * n, n).copy_from(xk);
        }
        out
    }

    /// `(I - R_U) U (I - G_L)` assembled densely.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.level_order;
        let order = (self.levels() + 1) * n;
        let mut upper = Matrix::identity(order, order);
        for (k, r) in self.rate.iter().enumerate() {
            set_block(&mut upper, k * n, (k + 1) * n, &(-r));
        }
        let mut diag = Matrix::zeros(order, order);
        for (k, u) in self.diagonal.iter().enumerate() {
            set_block(&mut diag, k * n, k * n, u);
        }
        let mut lower = Matrix::identity(order, order);
        for (k, gs) in self.lower.iter().enumerate() {
            for (l, g) in gs {
                set_block(&mut lower, k * n, l * n, &(-g));
            }
        }
        upper * diag * lower
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confirmation::{BoundaryRouting, SurplusPolicy};
    use crate::linalg::{max_abs_entry, solve_linear};
    use crate::map::MarkovArrivalProcess;
    use crate::model::ModelSpec;
    use crate::phase::PhaseType;

    fn chain(model: &ModelSpec, k: usize) -> AbsorbingChain {
        AbsorbingChain::new(model, k, SurplusPolicy::Absorb, BoundaryRouting::StageAligned).unwrap()
    }

    #[test]
    fn reconstruction_matches_generator() {
        let c = chain(&ModelSpec::exponential(0.3, 1.0, 2.0, 2).unwrap(), 40);
        let f = rg_factorize(&c).unwrap();
        assert!(max_abs_entry(&(f.reconstruct() - c.to_dense())) < 1e-12);
    }

    #[test]
    fn diagonal_blocks_have_nonpositive_diagonal() {
        let c = chain(&ModelSpec::exponential(0.3, 1.0, 2.0, 2).unwrap(), 12);
        for u in rg_factorize(&c).unwrap().diagonal {
            assert!(u.diagonal().iter().all(|&x| x <= 0.0));
        }
    }

    #[test]
    fn two_level_elimination_by_hand() {
        // Levels 0 and 1 only: collapse a chain of order 2·n by hand.
        let model = ModelSpec::exponential(0.5, 1.0, 3.0, 1).unwrap();
        let c = chain(&model, 4);
        let f = rg_factorize(&c).unwrap();
        // top level: U_K = H_KK, R_{K-1} = H_{K-1,K}(-H_KK)^{-1}
        let top = c.levels();
        let hkk = c.local(top);
        assert_eq!(f.diagonal[top], hkk);
        let up = c.up(top - 1).unwrap();
        let inv = solve_linear(&(-&hkk), &Matrix::identity(hkk.nrows(), hkk.nrows())).unwrap();
        assert!(max_abs_entry(&(&f.rate[top - 1] - &up * &inv)) < 1e-14);
        let (target, down) = c.down(top).unwrap();
        let u_prev = if target == top - 1 {
            c.local(top - 1) + &up * &inv * &down
        } else {
            c.local(top - 1)
        };
        assert!(max_abs_entry(&(&f.diagonal[top - 1] - u_prev)) < 1e-14);
    }

    #[test]
    fn factorized_solve_matches_dense() {
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
        let c = chain(&model, 20);
        let f = rg_factorize(&c).unwrap();
        let rhs = Vector::from_element(c.order(), -1.0);
        let direct = solve_linear(&c.to_dense(), &Matrix::from_column_slice(c.order(), 1, rhs.as_slice())).unwrap();
        let x = f.solve(&rhs);
        for i in 0..c.order() {
            assert!((x[i] - direct[(i, 0)]).abs() < 1e-8 * direct[(i, 0)].abs().max(1.0));
        }
    }
}
