//! Markovian arrival processes.

use rand::Rng;
use rand_distr::Exp1;

use crate::linalg::{ctmc_stationary, is_irreducible, row_sums, Matrix, Vector};
use crate::model::{check_rate, check_square, ModelError, VALIDATION_TOLERANCE};

/// A MAP `(C, D)` of order `m0`: `C` holds environment-only transitions, `D`
/// the arrival-marked ones. `C + D` is an irreducible conservative generator.
#[derive(Debug, Clone)]
pub struct MarkovArrivalProcess {
    c: Matrix,
    d: Matrix,
    stationary: Vector,
    rate: f64,
    sampler: Vec<PhaseEvents>,
}

/// Outcome of one MAP transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapTransition {
    pub holding: f64,
    pub next_phase: usize,
    pub arrival: bool,
}

#[derive(Debug, Clone)]
struct PhaseEvents {
    total_rate: f64,
    // cumulative weights over (target, arrival) pairs
    cumulative: Vec<f64>,
    targets: Vec<(usize, bool)>,
}

impl MarkovArrivalProcess {
    pub fn new(c: Matrix, d: Matrix) -> Result<Self, ModelError> {
        check_square("C", &c)?;
        check_square("D", &d)?;
        let m = c.nrows();
        if d.nrows() != m {
            return Err(ModelError::OrderMismatch {
                component: "D",
                expected: m,
                found: d.nrows(),
            });
        }
        for i in 0..m {
            for j in 0..m {
                if d[(i, j)] < 0.0 {
                    return Err(ModelError::NegativeRate {
                        component: "D",
                        row: i,
                        col: j,
                        value: d[(i, j)],
                    });
                }
                if i != j && c[(i, j)] < 0.0 {
                    return Err(ModelError::NegativeRate {
                        component: "C",
                        row: i,
                        col: j,
                        value: c[(i, j)],
                    });
                }
            }
            if c[(i, i)] > 0.0 {
                return Err(ModelError::Diagonal {
                    component: "C",
                    index: i,
                    value: c[(i, i)],
                });
            }
        }
        let generator = &c + &d;
        for (row, sum) in row_sums(&generator).iter().enumerate() {
            if sum.abs() > VALIDATION_TOLERANCE {
                return Err(ModelError::RowSum {
                    component: "C",
                    row,
                    sum: *sum,
                });
            }
        }
        if !is_irreducible(&generator) {
            return Err(ModelError::Reducible { component: "C" });
        }
        let stationary = ctmc_stationary(&generator).map_err(|source| ModelError::Linalg {
            component: "C",
            source,
        })?;
        let rate = stationary.dot(&row_sums(&d));
        let sampler = (0..m)
            .map(|i| {
                let mut targets = Vec::new();
                let mut cumulative = Vec::new();
                let mut acc = 0.0;
                for j in 0..m {
                    if j != i && c[(i, j)] > 0.0 {
                        acc += c[(i, j)];
                        targets.push((j, false));
                        cumulative.push(acc);
                    }
                }
                for j in 0..m {
                    if d[(i, j)] > 0.0 {
                        acc += d[(i, j)];
                        targets.push((j, true));
                        cumulative.push(acc);
                    }
                }
                PhaseEvents {
                    total_rate: acc,
                    cumulative,
                    targets,
                }
            })
            .collect();
        Ok(Self {
            c,
            d,
            stationary,
            rate,
            sampler,
        })
    }

    pub fn poisson(lambda: f64) -> Result<Self, ModelError> {
        check_rate("D", lambda)?;
        Self::new(
            Matrix::from_element(1, 1, -lambda),
            Matrix::from_element(1, 1, lambda),
        )
    }

    /// Markov-modulated Poisson process: environment generator `q` with
    /// per-phase arrival rates.
    pub fn mmpp(q: &Matrix, rates: &[f64]) -> Result<Self, ModelError> {
        check_square("C", q)?;
        let d = Matrix::from_diagonal(&Vector::from_column_slice(rates));
        if d.nrows() != q.nrows() {
            return Err(ModelError::OrderMismatch {
                component: "D",
                expected: q.nrows(),
                found: d.nrows(),
            });
        }
        Self::new(q - &d, d)
    }

    pub fn order(&self) -> usize {
        self.c.nrows()
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    /// Stationary vector `ω` of `C + D`.
    pub fn stationary(&self) -> &Vector {
        &self.stationary
    }

    /// Stationary arrival rate `λ = ω D e`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Same MAP with both matrices scaled so the arrival rate is `lambda`.
    pub fn with_rate(&self, lambda: f64) -> Result<Self, ModelError> {
        check_rate("D", lambda)?;
        if self.rate <= 0.0 {
            return Err(ModelError::NonPositiveRate {
                component: "D",
                value: self.rate,
            });
        }
        let factor = lambda / self.rate;
        Self::new(&self.c * factor, &self.d * factor)
    }

    /// Simulate the sojourn in `phase` and the transition that ends it.
    ///
    /// The holding time is exponential with rate `-C(i,i)`; the next event is
    /// chosen proportionally to the off-diagonal entries of row `i` of `C` and
    /// all entries of row `i` of `D`. A phase with no outgoing rate holds
    /// forever (`holding = ∞`).
    pub fn sample_next<R: Rng + ?Sized>(&self, phase: usize, rng: &mut R) -> MapTransition {
        let events = &self.sampler[phase];
        if events.total_rate <= 0.0 {
            return MapTransition {
                holding: f64::INFINITY,
                next_phase: phase,
                arrival: false,
            };
        }
        let e: f64 = rng.sample(Exp1);
        let holding = e / events.total_rate;
        let u = rng.random::<f64>() * events.total_rate;
        let idx = events
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(events.targets.len() - 1);
        let (next_phase, arrival) = events.targets[idx];
        MapTransition {
            holding,
            next_phase,
            arrival,
        }
    }

    /// Draw an initial phase from `ω`.
    pub fn sample_stationary_phase<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_discrete(self.stationary.as_slice(), rng)
    }
}

pub(crate) fn sample_discrete<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
