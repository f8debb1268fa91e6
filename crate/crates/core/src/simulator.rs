//! Discrete-event simulation of the queue.
//!
//! Arrivals follow the MAP exactly. A generation stage starts when a building
//! stage ends with transactions waiting, or with the first arrival to an idle
//! system. When the generation completes, `min(k, b)` of the `k` waiting
//! transactions are drawn uniformly at random into the block, which then
//! builds; the transactions are confirmed when the building completes.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::ModelSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("horizon must be positive")]
    Horizon,
    #[error("at least one replication is required")]
    Replications,
    #[error("warmup fraction must lie in [0, 1), got {0}")]
    Warmup(f64),
}

/// Length of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Number of processed events (MAP transitions and stage completions).
    Events(u64),
    /// Simulated time.
    Time(f64),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: ModelSpec,
    pub horizon: Horizon,
    /// Fraction of the horizon discarded before statistics are collected.
    pub warmup: f64,
    pub replications: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(model: ModelSpec, horizon: Horizon, replications: usize, seed: u64) -> Self {
        Self {
            model,
            horizon,
            warmup: 0.2,
            replications,
            seed,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = match self.horizon {
            Horizon::Events(n) => n > 0,
            Horizon::Time(t) => t.is_finite() && t > 0.0,
        };
        if !ok {
            return Err(SimError::Horizon);
        }
        if self.replications == 0 {
            return Err(SimError::Replications);
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(SimError::Warmup(self.warmup));
        }
        Ok(())
    }
}

/// Mean across replications with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub replications: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let r = xs.len();
        if r == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                replications: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / r as f64;
        let std_error = if r > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
            (var / r as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            replications: r,
        }
    }

    /// Two-sided Student-t interval at confidence `level`.
    pub fn confidence_interval(&self, level: f64) -> (f64, f64) {
        if self.replications < 2 {
            return (self.mean, self.mean);
        }
        let t = StudentsT::new(0.0, 1.0, (self.replications - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + level / 2.0);
        (self.mean - t * self.std_error, self.mean + t * self.std_error)
    }

    pub fn contains(&self, value: f64, level: f64) -> bool {
        let (lo, hi) = self.confidence_interval(level);
        lo <= value && value <= hi
    }
}

/// What an arriving transaction finds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observed {
    Idle,
    Generation,
    Building,
}

/// Inclusion of the oldest waiter in the next block, by waiting count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelectionCount {
    pub trials: u64,
    pub included: u64,
}

impl SelectionCount {
    pub fn frequency(&self) -> f64 {
        self.included as f64 / self.trials as f64
    }

    /// Binomial standard error of [`SelectionCount::frequency`].
    pub fn std_error(&self) -> f64 {
        let p = self.frequency();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Per-replication bookkeeping checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conservation {
    pub arrivals: u64,
    pub departures: u64,
    pub in_system: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.arrivals == self.departures + self.in_system
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimates {
    pub mean_waiting: Estimate,
    pub mean_in_block: Estimate,
    pub mean_sojourn: Estimate,
    pub var_sojourn: Estimate,
    /// Sojourn of arrivals finding the system idle or generating.
    pub sojourn_after_generation: Estimate,
    /// Sojourn of arrivals finding a block building.
    pub sojourn_after_building: Estimate,
    /// Fraction of arrivals finding a generation in progress.
    pub generation_fraction: Estimate,
    pub idle_fraction: Estimate,
    pub building_fraction: Estimate,
    pub arrival_rate: Estimate,
    pub selection: BTreeMap<usize, SelectionCount>,
    pub conservation: Vec<Conservation>,
    pub max_block: usize,
    /// Set when most replications show a steadily growing waiting room.
    pub growing_backlog: bool,
    pub replications: usize,
    pub seed: u64,
}

/// Sojourn moments split by what the arrival observed.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSummary {
    pub mean_sojourn: Estimate,
    pub var_sojourn: Estimate,
    pub after_generation: Estimate,
    pub after_building: Estimate,
    pub generation_fraction: Estimate,
    pub selection: BTreeMap<usize, SelectionCount>,
}

#[derive(Debug, Clone, Copy)]
struct Txn {
    arrival: f64,
    observed: Observed,
    measured: bool,
}

#[derive(Debug, Clone)]
enum Stage {
    Idle,
    Generation { end: f64 },
    Building { end: f64, block: Vec<Txn> },
}

#[derive(Debug, Clone, Default)]
struct Moments {
    count: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    fn variance(&self) -> Option<f64> {
        (self.count > 1).then(|| {
            let n = self.count as f64;
            (self.sum_sq - self.sum * self.sum / n) / (n - 1.0)
        })
    }
}

#[derive(Debug, Clone)]
struct Replication {
    mean_waiting: f64,
    mean_in_block: f64,
    sojourn: Moments,
    after_generation: Moments,
    after_building: Moments,
    observed: [u64; 3],
    measured_arrivals: u64,
    measured_time: f64,
    selection: BTreeMap<usize, SelectionCount>,
    conservation: Conservation,
    max_block: usize,
    growing: bool,
}

const QUARTERS: usize = 4;

fn run_replication(cfg: &SimConfig, replication: u64) -> Replication {
    let model = &cfg.model;
    let map = model.arrivals();
    let b = model.block_cap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replication);

    let mut t: f64 = 0.0;
    let mut phase = map.sample_stationary_phase(&mut rng);
    let mut next_map = map.sample_next(phase, &mut rng);
    let mut map_event_at = next_map.holding;
    let mut stage = Stage::Idle;
    let mut waiting: Vec<Txn> = Vec::new();

    let (event_limit, time_limit) = match cfg.horizon {
        Horizon::Events(n) => (n, f64::INFINITY),
        Horizon::Time(h) => (u64::MAX, h),
    };
    let warmup_events = (event_limit as f64 * cfg.warmup) as u64;
    let mut warm_at = match cfg.horizon {
        Horizon::Events(_) => if warmup_events == 0 { Some(0.0) } else { None },
        Horizon::Time(h) => Some(h * cfg.warmup),
    };

    let mut area_waiting = 0.0;
    let mut area_block = 0.0;
    let mut quarter_area = [0.0; QUARTERS];
    let mut quarter_time = [0.0; QUARTERS];
    let mut sojourn = Moments::default();
    let mut after_generation = Moments::default();
    let mut after_building = Moments::default();
    let mut observed = [0u64; 3];
    let mut measured_arrivals = 0;
    let mut selection: BTreeMap<usize, SelectionCount> = BTreeMap::new();
    let (mut arrivals, mut departures) = (0u64, 0u64);
    let mut max_block = 0usize;
    let mut events = 0u64;

    loop {
        let stage_end = match &stage {
            Stage::Idle => f64::INFINITY,
            Stage::Generation { end } | Stage::Building { end, .. } => *end,
        };
        let next = map_event_at.min(stage_end);
        let until = next.min(time_limit);
        if let Some(w) = warm_at {
            let start = t.max(w);
            if until > start {
                let dt = until - start;
                let in_block = match &stage {
                    Stage::Building { block, .. } => block.len(),
                    _ => 0,
                };
                area_waiting += dt * waiting.len() as f64;
                area_block += dt * in_block as f64;
                match cfg.horizon {
                    Horizon::Time(h) => {
                        let width = (h - w) / QUARTERS as f64;
                        let mut s = start;
                        while s < until {
                            let q = (((s - w) / width) as usize).min(QUARTERS - 1);
                            let e = until.min(w + (q + 1) as f64 * width);
                            quarter_area[q] += (e - s) * waiting.len() as f64;
                            quarter_time[q] += e - s;
                            if e <= s {
                                break;
                            }
                            s = e;
                        }
                    }
                    Horizon::Events(n) => {
                        let span = (n - warmup_events).max(1);
                        let q = ((events.saturating_sub(warmup_events) * QUARTERS as u64 / span) as usize).min(QUARTERS - 1);
                        quarter_area[q] += dt * waiting.len() as f64;
                        quarter_time[q] += dt;
                    }
                }
            }
        }
        if next >= time_limit || events >= event_limit {
            t = until;
            break;
        }
        t = next;
        events += 1;
        if warm_at.is_none() && events >= warmup_events {
            warm_at = Some(t);
        }
        let measuring = warm_at.is_some_and(|w| t >= w);

        if map_event_at <= stage_end {
            phase = next_map.next_phase;
            if next_map.arrival {
                arrivals += 1;
                let seen = match stage {
                    Stage::Idle => Observed::Idle,
                    Stage::Generation { .. } => Observed::Generation,
                    Stage::Building { .. } => Observed::Building,
                };
                if measuring {
                    measured_arrivals += 1;
                    observed[seen as usize] += 1;
                }
                waiting.push(Txn {
                    arrival: t,
                    observed: seen,
                    measured: measuring,
                });
                if matches!(stage, Stage::Idle) {
                    stage = Stage::Generation {
                        end: t + model.generation().sample(&mut rng),
                    };
                }
            }
            next_map = map.sample_next(phase, &mut rng);
            map_event_at = t + next_map.holding;
            continue;
        }

        match std::mem::replace(&mut stage, Stage::Idle) {
            Stage::Generation { .. } => {
                let k = waiting.len();
                let take = k.min(b);
                let mut chosen: Vec<usize> = sample(&mut rng, k, take).into_vec();
                chosen.sort_unstable();
                if measuring {
                    let entry = selection.entry(k).or_default();
                    entry.trials += 1;
                    entry.included += u64::from(chosen.first() == Some(&0));
                }
                let mut block = Vec::with_capacity(take);
                let mut rest = Vec::with_capacity(k - take);
                let mut picks = chosen.iter().peekable();
                for (i, txn) in waiting.drain(..).enumerate() {
                    if picks.peek() == Some(&&i) {
                        picks.next();
                        block.push(txn);
                    } else {
                        rest.push(txn);
                    }
                }
                waiting = rest;
                max_block = max_block.max(block.len());
                stage = Stage::Building {
                    end: t + model.building().sample(&mut rng),
                    block,
                };
            }
            Stage::Building { block, .. } => {
                for txn in block {
                    departures += 1;
                    if txn.measured {
                        let s = t - txn.arrival;
                        sojourn.push(s);
                        match txn.observed {
                            Observed::Building => after_building.push(s),
                            _ => after_generation.push(s),
                        }
                    }
                }
                if !waiting.is_empty() {
                    stage = Stage::Generation {
                        end: t + model.generation().sample(&mut rng),
                    };
                }
            }
            Stage::Idle => unreachable!("idle stage has no completion"),
        }
    }

    let w = warm_at.unwrap_or(t);
    let measured_time = (t - w).max(0.0);
    let in_system = waiting.len()
        + match &stage {
            Stage::Building { block, .. } => block.len(),
            _ => 0,
        };
    let norm = |a: f64| if measured_time > 0.0 { a / measured_time } else { 0.0 };
    let growing = quarter_time.iter().all(|&q| q > 0.0) && {
        let means: Vec<f64> = (0..QUARTERS).map(|i| quarter_area[i] / quarter_time[i]).collect();
        means.windows(2).all(|p| p[1] > p[0]) && means[QUARTERS - 1] > 1.5 * means[0] + 1.0
    };
    Replication {
        mean_waiting: norm(area_waiting),
        mean_in_block: norm(area_block),
        sojourn,
        after_generation,
        after_building,
        observed,
        measured_arrivals,
        measured_time,
        selection,
        conservation: Conservation {
            arrivals,
            departures,
            in_system: in_system as u64,
        },
        max_block,
        growing,
    }
}

/// Run all replications, in parallel, and merge them in replication order.
pub fn simulate(cfg: &SimConfig) -> Result<SimEstimates, SimError> {
    cfg.validate()?;
    let reps: Vec<Replication> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect();

    let collect = |f: &dyn Fn(&Replication) -> Option<f64>| -> Estimate {
        let xs: Vec<f64> = reps.iter().filter_map(f).collect();
        Estimate::from_samples(&xs)
    };
    let fraction = |which: Observed| {
        move |r: &Replication| {
            (r.measured_arrivals > 0).then(|| r.observed[which as usize] as f64 / r.measured_arrivals as f64)
        }
    };
    let mut selection: BTreeMap<usize, SelectionCount> = BTreeMap::new();
    for r in &reps {
        for (k, c) in &r.selection {
            let e = selection.entry(*k).or_default();
            e.trials += c.trials;
            e.included += c.included;
        }
    }
    let growing = reps.iter().filter(|r| r.growing).count() * 2 > reps.len();
    Ok(SimEstimates {
        mean_waiting: collect(&|r| Some(r.mean_waiting)),
        mean_in_block: collect(&|r| Some(r.mean_in_block)),
        mean_sojourn: collect(&|r| r.sojourn.mean()),
        var_sojourn: collect(&|r| r.sojourn.variance()),
        sojourn_after_generation: collect(&|r| r.after_generation.mean()),
        sojourn_after_building: collect(&|r| r.after_building.mean()),
        generation_fraction: collect(&fraction(Observed::Generation)),
        idle_fraction: collect(&fraction(Observed::Idle)),
        building_fraction: collect(&fraction(Observed::Building)),
        arrival_rate: collect(&|r| (r.measured_time > 0.0).then(|| r.measured_arrivals as f64 / r.measured_time)),
        selection,
        conservation: reps.iter().map(|r| r.conservation).collect(),
        max_block: reps.iter().map(|r| r.max_block).max().unwrap_or(0),
        growing_backlog: growing,
        replications: cfg.replications,
        seed: cfg.seed,
    })
}

/// Sojourn statistics of individual transactions by what they found on arrival.
pub fn simulate_tagged(cfg: &SimConfig) -> Result<TaggedSummary, SimError> {
    let est = simulate(cfg)?;
    Ok(TaggedSummary {
        mean_sojourn: est.mean_sojourn,
        var_sojourn: est.var_sojourn,
        after_generation: est.sojourn_after_generation,
        after_building: est.sojourn_after_building,
        generation_fraction: est.generation_fraction,
        selection: est.selection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(model: ModelSpec, horizon: Horizon, reps: usize, seed: u64) -> SimConfig {
        SimConfig::new(model, horizon, reps, seed)
    }

    #[test]
    fn same_seed_same_output() {
        let m = ModelSpec::exponential(0.3, 1.0, 2.0, 2).unwrap();
        let a = simulate(&cfg(m.clone(), Horizon::Events(20_000), 4, 9)).unwrap();
        let b = simulate(&cfg(m, Horizon::Events(20_000), 4, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let m = ModelSpec::exponential(0.3, 1.0, 2.0, 2).unwrap();
        let a = simulate(&cfg(m.clone(), Horizon::Events(20_000), 2, 1)).unwrap();
        let b = simulate(&cfg(m, Horizon::Events(20_000), 2, 2)).unwrap();
        assert_ne!(a.mean_waiting, b.mean_waiting);
    }

    #[test]
    fn bookkeeping_invariants() {
        let m = ModelSpec::exponential(1.0, 1.0, 2.0, 3).unwrap();
        let est = simulate(&cfg(m, Horizon::Time(5_000.0), 3, 4)).unwrap();
        assert!(est.conservation.iter().all(Conservation::holds));
        assert!(est.max_block <= 3 && est.max_block > 0);
        assert!(!est.growing_backlog);
    }

    #[test]
    fn light_traffic_selects_everyone() {
        let m = ModelSpec::exponential(0.05, 5.0, 5.0, 10).unwrap();
        let est = simulate(&cfg(m, Horizon::Events(50_000), 2, 3)).unwrap();
        for (k, c) in &est.selection {
            assert!(*k <= 10);
            assert_eq!(c.included, c.trials);
        }
    }

    #[test]
    fn overload_is_flagged() {
        let m = ModelSpec::exponential(3.0, 1.0, 1.0, 2).unwrap();
        let est = simulate(&cfg(m, Horizon::Events(40_000), 3, 5)).unwrap();
        assert!(est.growing_backlog);
    }

    #[test]
    fn single_replication_has_zero_error() {
        let m = ModelSpec::exponential(0.3, 1.0, 2.0, 2).unwrap();
        let est = simulate(&cfg(m, Horizon::Events(5_000), 1, 5)).unwrap();
        assert_eq!(est.mean_waiting.std_error, 0.0);
    }

    #[test]
    fn config_validation() {
        let m = ModelSpec::exponential(0.3, 1.0, 2.0, 2).unwrap();
        assert_eq!(simulate(&cfg(m.clone(), Horizon::Events(0), 1, 0)), Err(SimError::Horizon));
        assert_eq!(simulate(&cfg(m.clone(), Horizon::Events(10), 0, 0)), Err(SimError::Replications));
        let mut c = cfg(m, Horizon::Events(10), 1, 0);
        c.warmup = 1.0;
        assert_eq!(simulate(&c), Err(SimError::Warmup(1.0)));
    }

    #[test]
    fn interval_uses_student_t() {
        let e = Estimate {
            mean: 1.0,
            std_error: 0.1,
            replications: 2,
        };
        // t_{0.975, 1} = 12.706
        let (lo, hi) = e.confidence_interval(0.95);
        assert!((hi - 1.0 - 1.2706).abs() < 1e-3 && (1.0 - lo - 1.2706).abs() < 1e-3);
    }

    #[test]
    fn little_law_and_block_mean() {
        let m = ModelSpec::exponential(0.3, 1.0, 2.0, 2).unwrap();
        let est = simulate(&cfg(m, Horizon::Events(400_000), 8, 21)).unwrap();
        let lhs = 0.3 * est.mean_sojourn.mean;
        let rhs = est.mean_waiting.mean + est.mean_in_block.mean;
        let se = (0.3 * est.mean_sojourn.std_error).hypot(est.mean_waiting.std_error + est.mean_in_block.std_error);
        assert!((lhs - rhs).abs() < 3.0 * se + 1e-3, "{lhs} vs {rhs} ± {se}");
        let n2 = est.mean_in_block;
        assert!((n2.mean - 0.3).abs() < 3.0 * n2.std_error + 1e-3);
    }
}
