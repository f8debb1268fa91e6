use std::path::Path;
use std::time::Instant;

use blockqueue::confirmation::{mean_confirmation_time, ConfirmationError, ConfirmationOptions};
use blockqueue::generator::build_level_blocks;
use blockqueue::matgeo::{solve_steady_state, MatgeoError, SolverOptions};
use blockqueue::model::ModelSpec;
use blockqueue::simulator::{simulate, Estimate, SimConfig};
use blockqueue::stability::is_stable;

use crate::config::{load_model_config, ModelConfig};
use crate::output::{fmt_num, fmt_opt, Table};
use crate::{CliError, GlobalFlags};

pub const SOLVE_HEADER: [&str; 11] = [
    "lambda",
    "mu1",
    "mu2",
    "b",
    "EN1",
    "EN2",
    "EConfirm",
    "VarXi",
    "R_residual",
    "truncationK",
    "wallclock",
];

pub const SIMULATE_HEADER: [&str; 6] = ["metric", "estimate", "std_error", "samples", "replications", "seed"];

/// Analytic results for one model.
#[derive(Debug, Clone)]
pub struct SolveRow {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub b: usize,
    pub mean_waiting: f64,
    pub mean_in_block: f64,
    pub confirmation: Option<(f64, f64, usize)>,
    pub residual: f64,
    pub seconds: Option<f64>,
}

impl SolveRow {
    pub fn fields(&self) -> Vec<String> {
        let (confirm, var, k) = match self.confirmation {
            Some((c, v, k)) => (fmt_num(c), fmt_num(v), k.to_string()),
            None => Default::default(),
        };
        vec![
            fmt_num(self.lambda),
            fmt_num(self.mu1),
            fmt_num(self.mu2),
            self.b.to_string(),
            fmt_num(self.mean_waiting),
            fmt_num(self.mean_in_block),
            confirm,
            var,
            fmt_num(self.residual),
            k,
            fmt_opt(self.seconds),
        ]
    }
}

#[derive(Debug)]
pub enum SolveFailure {
    Unstable { lhs: f64, rhs: f64 },
    Numerical(String),
}

impl From<SolveFailure> for CliError {
    fn from(f: SolveFailure) -> Self {
        match f {
            SolveFailure::Unstable { lhs, rhs } => CliError::unstable(format!(
                "model is not positive recurrent: arrival drift {} >= service drift {}",
                fmt_num(lhs),
                fmt_num(rhs)
            )),
            SolveFailure::Numerical(m) => CliError::numerical(m),
        }
    }
}

pub struct SolveSettings {
    pub solver: SolverOptions,
    pub truncation: Option<usize>,
    pub confirmation: bool,
    pub timing: bool,
}

impl SolveSettings {
    pub fn from_flags(flags: &GlobalFlags, config: &ModelConfig) -> Self {
        let mut solver = SolverOptions::default();
        if let Some(t) = flags.tol.or(config.solver.tolerance) {
            solver.tol = t;
        }
        if let Some(m) = flags.max_iter.or(config.solver.max_iter) {
            solver.max_iter = m;
        }
        Self {
            solver,
            truncation: flags.trunc_k.or(config.solver.truncation_k),
            confirmation: true,
            timing: flags.timing,
        }
    }
}

pub fn solve_model(model: &ModelSpec, settings: &SolveSettings) -> Result<SolveRow, SolveFailure> {
    let start = Instant::now();
    let blocks = build_level_blocks(model);
    let ss = solve_steady_state(&blocks, &settings.solver).map_err(|e| match e {
        MatgeoError::Unstable(r) => SolveFailure::Unstable { lhs: r.lhs, rhs: r.rhs },
        other => SolveFailure::Numerical(other.to_string()),
    })?;
    let confirmation = if settings.confirmation {
        let opts = ConfirmationOptions {
            levels: settings.truncation,
            ..ConfirmationOptions::default()
        };
        match mean_confirmation_time(model, &ss, &opts) {
            Ok(r) => Some((r.mean_confirmation, r.var_first_passage, r.truncation_level)),
            Err(e @ (ConfirmationError::TooLarge { .. } | ConfirmationError::TruncationNotSettled { .. })) => {
                eprintln!("warning: confirmation time skipped: {e}");
                None
            }
            Err(e) => return Err(SolveFailure::Numerical(e.to_string())),
        }
    } else {
        None
    };
    Ok(SolveRow {
        lambda: model.arrival_rate(),
        mu1: model.building_rate(),
        mu2: model.generation_rate(),
        b: model.block_cap(),
        mean_waiting: ss.mean_waiting_count(),
        mean_in_block: ss.mean_block_count(),
        confirmation,
        residual: ss.rate.residual,
        seconds: settings.timing.then(|| start.elapsed().as_secs_f64()),
    })
}

pub fn validate(path: &Path) -> Result<i32, CliError> {
    let config = load_model_config(path)?;
    let model = &config.model;
    let (m0, m1, m2) = model.orders();
    println!("valid model: {}", path.display());
    println!("orders: arrivals {m0}, building {m1}, generation {m2}");
    println!("block capacity: {}", model.block_cap());
    println!("lambda: {}", fmt_num(model.arrival_rate()));
    println!("mean building time (1/mu1): {}", fmt_num(model.building().mean()));
    println!("mean generation time (1/mu2): {}", fmt_num(model.generation().mean()));
    let report = is_stable(&build_level_blocks(model)).map_err(|e| CliError::numerical(e.to_string()))?;
    println!(
        "drift: arrivals {} vs service {} (margin {})",
        fmt_num(report.lhs),
        fmt_num(report.rhs),
        fmt_num(report.margin())
    );
    if report.stable {
        println!("stable: yes");
        Ok(0)
    } else {
        println!("stable: no");
        Ok(1)
    }
}

pub fn solve(path: &Path, out: Option<&Path>, flags: &GlobalFlags) -> Result<i32, CliError> {
    let config = load_model_config(path)?;
    let settings = SolveSettings::from_flags(flags, &config);
    let row = solve_model(&config.model, &settings)?;
    let mut table = Table::create(out, &SOLVE_HEADER)?;
    table.row(row.fields())?;
    table.finish()?;
    Ok(0)
}

pub fn simulation(path: &Path, out: Option<&Path>, flags: &GlobalFlags) -> Result<i32, CliError> {
    let config = load_model_config(path)?;
    let sim = &config.sim;
    let cfg = SimConfig {
        model: config.model.clone(),
        horizon: sim.horizon,
        warmup: sim.warmup,
        replications: sim.replications,
        seed: flags.seed.unwrap_or(sim.seed),
    };
    let est = simulate(&cfg).map_err(|e| CliError::input(format!("sim: {e}")))?;
    let mut table = Table::create(out, &SIMULATE_HEADER)?;
    let reps = est.replications.to_string();
    let seed = est.seed.to_string();
    let mut emit = |name: &str, mean: f64, se: f64, n: usize| -> std::io::Result<()> {
        table.row([name.to_string(), fmt_num(mean), fmt_num(se), n.to_string(), reps.clone(), seed.clone()])
    };
    let estimates: [(&str, Estimate); 10] = [
        ("EN1", est.mean_waiting),
        ("EN2", est.mean_in_block),
        ("ESojourn", est.mean_sojourn),
        ("VarSojourn", est.var_sojourn),
        ("ESojournAfterGeneration", est.sojourn_after_generation),
        ("ESojournAfterBuilding", est.sojourn_after_building),
        ("IdleFraction", est.idle_fraction),
        ("GenerationFraction", est.generation_fraction),
        ("BuildingFraction", est.building_fraction),
        ("ArrivalRate", est.arrival_rate),
    ];
    for (name, e) in estimates {
        emit(name, e.mean, e.std_error, e.replications)?;
    }
    for (k, c) in &est.selection {
        emit(&format!("Inclusion_k{k}"), c.frequency(), c.std_error(), c.trials as usize)?;
    }
    emit("MaxBlock", est.max_block as f64, 0.0, est.replications)?;
    emit("GrowingBacklog", f64::from(u8::from(est.growing_backlog)), 0.0, est.replications)?;
    table.finish()?;
    if !est.conservation.iter().all(|c| c.holds()) {
        return Err(CliError::numerical("simulation bookkeeping check failed"));
    }
    if est.growing_backlog {
        eprintln!("warning: the waiting room grows throughout the run; the model looks unstable");
    }
    Ok(0)
}
