//! Phase-type distributions.

use rand::Rng;
use rand_distr::Exp1;

use crate::linalg::{ctmc_stationary, is_irreducible, Factorized, Matrix, Vector};
use crate::map::sample_discrete;
use crate::model::{check_rate, check_square, ModelError, VALIDATION_TOLERANCE};

/// PH law with initial vector `initial` (`α`) and sub-generator `generator`
/// (`T`); the exit vector is `T⁰ = -T e`.
#[derive(Debug, Clone)]
pub struct PhaseType {
    initial: Vector,
    generator: Matrix,
    exit: Vector,
    // (-T)^{-1} e
    mean_vector: Vector,
    sampler: Vec<PhaseMoves>,
}

#[derive(Debug, Clone)]
struct PhaseMoves {
    rate: f64,
    // cumulative over targets; `None` is absorption
    cumulative: Vec<f64>,
    targets: Vec<Option<usize>>,
}

impl PhaseType {
    pub fn new(initial: Vector, generator: Matrix) -> Result<Self, ModelError> {
        check_square("generator", &generator)?;
        let m = generator.nrows();
        if initial.len() != m {
            return Err(ModelError::OrderMismatch {
                component: "vector",
                expected: m,
                found: initial.len(),
            });
        }
        if !initial.iter().all(|x| x.is_finite()) {
            return Err(ModelError::NonFinite { component: "vector" });
        }
        if let Some((index, &value)) = initial.iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(ModelError::NegativeProbability {
                component: "vector",
                index,
                value,
            });
        }
        let sum = initial.sum();
        if (sum - 1.0).abs() > VALIDATION_TOLERANCE {
            return Err(ModelError::NotStochastic {
                component: "vector",
                sum,
            });
        }
        let mut exit = Vector::zeros(m);
        for i in 0..m {
            if generator[(i, i)] >= 0.0 {
                return Err(ModelError::Diagonal {
                    component: "generator",
                    index: i,
                    value: generator[(i, i)],
                });
            }
            for j in 0..m {
                if i != j && generator[(i, j)] < 0.0 {
                    return Err(ModelError::NegativeRate {
                        component: "generator",
                        row: i,
                        col: j,
                        value: generator[(i, j)],
                    });
                }
            }
            let row: f64 = generator.row(i).sum();
            if row > VALIDATION_TOLERANCE {
                return Err(ModelError::ExcessRowSum {
                    component: "generator",
                    row: i,
                    sum: row,
                });
            }
            exit[i] = (-row).max(0.0);
        }
        if exit.iter().all(|&x| x <= 0.0) {
            return Err(ModelError::NoExit {
                component: "generator",
            });
        }
        let minus_t: Matrix = -&generator;
        let mean_vector = Factorized::new(&minus_t)
            .and_then(|f| f.solve_vec(&Vector::from_element(m, 1.0)))
            .map_err(|_| ModelError::Singular {
                component: "generator",
            })?;
        if !mean_vector.iter().all(|x| x.is_finite() && *x >= 0.0) {
            return Err(ModelError::Singular {
                component: "generator",
            });
        }
        let sampler = (0..m)
            .map(|i| {
                let rate = -generator[(i, i)];
                let mut cumulative = Vec::new();
                let mut targets = Vec::new();
                let mut acc = 0.0;
                for j in 0..m {
                    if j != i && generator[(i, j)] > 0.0 {
                        acc += generator[(i, j)];
                        cumulative.push(acc);
                        targets.push(Some(j));
                    }
                }
                if exit[i] > 0.0 {
                    acc += exit[i];
                    cumulative.push(acc);
                    targets.push(None);
                }
                PhaseMoves {
                    rate,
                    cumulative,
                    targets,
                }
            })
            .collect();
        Ok(Self {
            initial,
            generator,
            exit,
            mean_vector,
            sampler,
        })
    }

    pub fn exponential(rate: f64) -> Result<Self, ModelError> {
        check_rate("generator", rate)?;
        Self::new(
            Vector::from_element(1, 1.0),
            Matrix::from_element(1, 1, -rate),
        )
    }

    /// Erlang law with `phases` stages of rate `rate` each.
    pub fn erlang(phases: usize, rate: f64) -> Result<Self, ModelError> {
        check_rate("generator", rate)?;
        if phases == 0 {
            return Err(ModelError::NotSquare {
                component: "generator",
                rows: 0,
                cols: 0,
            });
        }
        let mut t = Matrix::zeros(phases, phases);
        for i in 0..phases {
            t[(i, i)] = -rate;
            if i + 1 < phases {
                t[(i, i + 1)] = rate;
            }
        }
        let mut alpha = Vector::zeros(phases);
        alpha[0] = 1.0;
        Self::new(alpha, t)
    }

    pub fn hyperexponential(probs: &[f64], rates: &[f64]) -> Result<Self, ModelError> {
        for &r in rates {
            check_rate("generator", r)?;
        }
        let t = Matrix::from_diagonal(&Vector::from_iterator(
            rates.len(),
            rates.iter().map(|r| -r),
        ));
        Self::new(Vector::from_column_slice(probs), t)
    }

    pub fn order(&self) -> usize {
        self.generator.nrows()
    }

    pub fn initial(&self) -> &Vector {
        &self.initial
    }

    pub fn generator(&self) -> &Matrix {
        &self.generator
    }

    /// `T⁰ = -T e`.
    pub fn exit(&self) -> &Vector {
        &self.exit
    }

    /// `T⁰ α` as a square matrix.
    pub fn restart_matrix(&self) -> Matrix {
        &self.exit * self.initial.transpose()
    }

    /// Column matrix `T⁰`.
    pub fn exit_column(&self) -> Matrix {
        Matrix::from_column_slice(self.order(), 1, self.exit.as_slice())
    }

    /// Row matrix `α`.
    pub fn initial_row(&self) -> Matrix {
        Matrix::from_row_slice(1, self.order(), self.initial.as_slice())
    }

    /// `-α T⁻¹ e`.
    pub fn mean(&self) -> f64 {
        self.initial.dot(&self.mean_vector)
    }

    /// `k! α (-T)^{-k} e`.
    pub fn moment(&self, k: u32) -> f64 {
        let f = Factorized::new(&(-&self.generator)).expect("validated at construction");
        let mut v = Vector::from_element(self.order(), 1.0);
        let mut factorial = 1.0;
        for i in 1..=k {
            v = f.solve_vec(&v).expect("validated at construction");
            factorial *= i as f64;
        }
        factorial * self.initial.dot(&v)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.moment(2) - m * m
    }

    /// Stationary-life (equilibrium) version `(ϖ, T)` where `ϖ` is stationary
    /// for `T + T⁰α`.
    pub fn equilibrium(&self) -> Result<PhaseType, ModelError> {
        let q = &self.generator + self.restart_matrix();
        if !is_irreducible(&q) {
            return Err(ModelError::Reducible {
                component: "generator",
            });
        }
        let w = ctmc_stationary(&q).map_err(|source| ModelError::Linalg {
            component: "generator",
            source,
        })?;
        PhaseType::new(w, self.generator.clone())
    }

    /// Same law with the time axis rescaled so the mean becomes `1 / rate`.
    pub fn with_rate(&self, rate: f64) -> Result<PhaseType, ModelError> {
        check_rate("generator", rate)?;
        let factor = rate * self.mean();
        PhaseType::new(self.initial.clone(), &self.generator * factor)
    }

    /// Draw by simulating the phase chain until absorption.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut phase = sample_discrete(self.initial.as_slice(), rng);
        let mut total = 0.0;
        loop {
            let moves = &self.sampler[phase];
            let e: f64 = rng.sample(Exp1);
            total += e / moves.rate;
            let u = rng.random::<f64>() * moves.cumulative.last().copied().unwrap_or(0.0);
            let idx = moves
                .cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(moves.targets.len() - 1);
            match moves.targets[idx] {
                Some(next) => phase = next,
                None => return total,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_stats(p: &PhaseType, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<f64> = (0..n).map(|_| p.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn exponential_mean() {
        assert!((PhaseType::exponential(4.0).unwrap().mean() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn erlang_mean_and_variance() {
        let p = PhaseType::erlang(2, 3.0).unwrap();
        assert!((p.mean() - 2.0 / 3.0).abs() < 1e-14);
        assert!((p.variance() - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn hyperexponential_mixture_mean() {
        let p = PhaseType::hyperexponential(&[0.4, 0.6], &[1.0, 2.0]).unwrap();
        assert!((p.mean() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn equilibrium_of_exponential_is_itself() {
        let e = PhaseType::exponential(2.0).unwrap().equilibrium().unwrap();
        assert_eq!(e.initial().as_slice(), &[1.0]);
        assert!((e.mean() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_of_erlang2() {
        let mu = 3.0;
        let p = PhaseType::erlang(2, mu).unwrap();
        let e = p.equilibrium().unwrap();
        assert!((e.initial()[0] - 0.5).abs() < 1e-14);
        assert!((e.mean() - 1.5 / mu).abs() < 1e-14);
        // renewal identity E[X²] / (2 E[X])
        let renewal = p.moment(2) / (2.0 * p.mean());
        assert!((e.mean() - renewal).abs() < 1e-9);
    }

    #[test]
    fn validation_diagnostics() {
        let bad_alpha = PhaseType::new(
            Vector::from_column_slice(&[0.5, 0.4]),
            Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]),
        );
        assert!(matches!(bad_alpha, Err(ModelError::NotStochastic { .. })));
        let no_exit = PhaseType::new(
            Vector::from_column_slice(&[1.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
        );
        assert!(matches!(no_exit, Err(ModelError::NoExit { .. })));
        let positive_diag = PhaseType::new(
            Vector::from_column_slice(&[1.0]),
            Matrix::from_row_slice(1, 1, &[0.0]),
        );
        assert!(matches!(positive_diag, Err(ModelError::Diagonal { .. })));
    }

    #[test]
    fn singular_sub_generator_rejected() {
        // phase 1 traps: it never reaches absorption
        let p = PhaseType::new(
            Vector::from_column_slice(&[0.0, 1.0, 0.0]),
            Matrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 1.0, -1.0]),
        );
        assert!(matches!(p, Err(ModelError::Singular { .. })));
    }

    #[test]
    fn sampled_mean_exponential() {
        let p = PhaseType::exponential(2.0).unwrap();
        let n = 100_000;
        let (mean, var) = sample_stats(&p, n, 3);
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn sampled_erlang_variance() {
        let mu = 2.0;
        let p = PhaseType::erlang(2, mu).unwrap();
        let (_, var) = sample_stats(&p, 100_000, 5);
        assert!((var - 2.0 / (mu * mu)).abs() < 0.02, "{var}");
    }

    #[test]
    fn draws_are_positive_from_last_phase() {
        let p = PhaseType::new(
            Vector::from_column_slice(&[0.0, 1.0]),
            Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let min = (0..10_000).map(|_| p.sample(&mut rng)).fold(f64::INFINITY, f64::min);
        assert!(min > 0.0);
    }

    #[test]
    fn rescale_sets_mean() {
        let p = PhaseType::erlang(2, 3.0).unwrap().with_rate(0.5).unwrap();
        assert!((p.mean() - 2.0).abs() < 1e-13);
    }
}
