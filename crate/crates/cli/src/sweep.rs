//! Parameter sweeps.
//!
//! ```json
//! {
//!   "parameter": "mu1",
//!   "grid": { "from": 0.05, "to": 1.5, "count": 30 },
//!   "blockCaps": [40, 320, 1000],
//!   "base": { "lambda": 0.3, "mu1": 1.0, "mu2": 2.0 },
//!   "confirmation": false,
//!   "output": "sweep.csv"
//! }
//! ```
//!
//! `values` may replace `grid` with an explicit list. When `parameter` is
//! `blockCap` the grid values are the block capacities and `blockCaps` must be
//! absent. Rows are written curve by curve: for each block capacity, every
//! grid value in order.

use std::path::{Path, PathBuf};

use blockqueue::model::ModelSpec;
use rayon::prelude::*;
use serde_json::Value;

use crate::commands::{solve_model, SolveFailure, SolveSettings, SOLVE_HEADER};
use crate::config::{parse_model_config, read_json, ConfigError, ModelConfig};
use crate::output::{fmt_num, Table};
use crate::{CliError, GlobalFlags};

/// Block capacities above this are dropped under `--fast`.
pub const FAST_BLOCK_LIMIT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameter {
    Lambda,
    Mu1,
    Mu2,
    BlockCap,
}

impl Parameter {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "lambda" => Some(Self::Lambda),
            "mu1" => Some(Self::Mu1),
            "mu2" => Some(Self::Mu2),
            "blockCap" => Some(Self::BlockCap),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::Mu1 => "mu1",
            Self::Mu2 => "mu2",
            Self::BlockCap => "blockCap",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parameter: Parameter,
    pub values: Vec<f64>,
    pub block_caps: Vec<usize>,
    pub base: ModelConfig,
    pub confirmation: bool,
    pub output: Option<PathBuf>,
}

fn grid(v: &Value) -> Result<Vec<f64>, ConfigError> {
    let obj = v.as_object().ok_or_else(|| ConfigError::field("grid", "expected an object"))?;
    let get = |k: &str| {
        obj.get(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| ConfigError::field(format!("grid.{k}"), "expected a number"))
    };
    let (from, to) = (get("from")?, get("to")?);
    let count = obj
        .get("count")
        .and_then(Value::as_u64)
        .filter(|&c| c >= 1)
        .ok_or_else(|| ConfigError::field("grid.count", "expected a positive integer"))? as usize;
    if count == 1 {
        return Ok(vec![from]);
    }
    let step = (to - from) / (count - 1) as f64;
    Ok((0..count).map(|i| if i + 1 == count { to } else { from + step * i as f64 }).collect())
}

pub fn parse_sweep(v: &Value) -> Result<SweepSpec, ConfigError> {
    let root = v.as_object().ok_or_else(|| ConfigError::field("(root)", "expected an object"))?;
    let name = root
        .get("parameter")
        .and_then(Value::as_str)
        .ok_or_else(|| ConfigError::field("parameter", "missing"))?;
    let parameter = Parameter::parse(name)
        .ok_or_else(|| ConfigError::field("parameter", format!("unknown parameter {name:?}; expected lambda, mu1, mu2 or blockCap")))?;
    let values = match (root.get("values"), root.get("grid")) {
        (Some(vs), None) => vs
            .as_array()
            .ok_or_else(|| ConfigError::field("values", "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, x)| x.as_f64().ok_or_else(|| ConfigError::field(format!("values[{i}]"), "expected a number")))
            .collect::<Result<Vec<_>, _>>()?,
        (None, Some(g)) => grid(g)?,
        _ => return Err(ConfigError::field("values", "give exactly one of values, grid")),
    };
    if values.is_empty() {
        return Err(ConfigError::field("values", "grid is empty"));
    }
    if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
        return Err(ConfigError::field(format!("values[{}]", i + 1), "grid must be strictly increasing"));
    }
    if values.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(ConfigError::field("values", "grid values must be positive and finite"));
    }
    let caps = match root.get("blockCaps") {
        Some(bs) => {
            if parameter == Parameter::BlockCap {
                return Err(ConfigError::field("blockCaps", "not allowed when sweeping blockCap"));
            }
            let caps = bs
                .as_array()
                .ok_or_else(|| ConfigError::field("blockCaps", "expected an array"))?
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    x.as_u64()
                        .filter(|&b| b >= 1)
                        .map(|b| b as usize)
                        .ok_or_else(|| ConfigError::field(format!("blockCaps[{i}]"), "expected a positive integer"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if caps.is_empty() {
                return Err(ConfigError::field("blockCaps", "must not be empty"));
            }
            Some(caps)
        }
        None => None,
    };
    if parameter == Parameter::BlockCap && values.iter().any(|x| x.fract() != 0.0) {
        return Err(ConfigError::field("values", "block capacities must be integers"));
    }
    let mut base = root.get("base").cloned().ok_or_else(|| ConfigError::field("base", "missing"))?;
    let base_obj = base.as_object_mut().ok_or_else(|| ConfigError::field("base", "expected an object"))?;
    let first_cap = match (&caps, parameter) {
        (Some(c), _) => c[0],
        (None, Parameter::BlockCap) => values[0] as usize,
        (None, _) => base_obj
            .get("blockCap")
            .and_then(Value::as_u64)
            .ok_or_else(|| ConfigError::field("blockCaps", "missing (or give base.blockCap)"))? as usize,
    };
    base_obj.insert("blockCap".into(), first_cap.into());
    let base = parse_model_config(&base).map_err(|e| match e {
        ConfigError::Field { field, message } => ConfigError::field(format!("base.{field}"), message),
        other => other,
    })?;
    let block_caps = caps.unwrap_or_else(|| vec![base.model.block_cap()]);
    let confirmation = match root.get("confirmation") {
        None => false,
        Some(c) => c.as_bool().ok_or_else(|| ConfigError::field("confirmation", "expected a boolean"))?,
    };
    let output = match root.get("output") {
        None => None,
        Some(o) => Some(PathBuf::from(
            o.as_str().ok_or_else(|| ConfigError::field("output", "expected a path string"))?,
        )),
    };
    Ok(SweepSpec {
        parameter,
        values,
        block_caps,
        base,
        confirmation,
        output,
    })
}

fn point_model(base: &ModelSpec, parameter: Parameter, value: f64, b: usize) -> Result<ModelSpec, String> {
    let m = match parameter {
        Parameter::Lambda => base.with_arrival_rate(value),
        Parameter::Mu1 => base.with_building_rate(value),
        Parameter::Mu2 => base.with_generation_rate(value),
        Parameter::BlockCap => base.with_block_cap(value as usize),
    }
    .map_err(|e| e.to_string())?;
    if parameter == Parameter::BlockCap {
        Ok(m)
    } else {
        m.with_block_cap(b).map_err(|e| e.to_string())
    }
}

pub const SWEEP_HEADER_PREFIX: [&str; 3] = ["parameter", "value", "status"];

pub fn sweep(path: &Path, out: Option<&Path>, flags: &GlobalFlags) -> Result<i32, CliError> {
    let spec = parse_sweep(&read_json(path)?)?;
    let mut settings = SolveSettings::from_flags(flags, &spec.base);
    settings.confirmation = spec.confirmation;

    let mut points: Vec<(f64, usize)> = Vec::new();
    if spec.parameter == Parameter::BlockCap {
        points.extend(spec.values.iter().map(|&v| (v, v as usize)));
    } else {
        for &b in &spec.block_caps {
            points.extend(spec.values.iter().map(|&v| (v, b)));
        }
    }
    if flags.fast {
        let before = points.len();
        points.retain(|&(_, b)| b <= FAST_BLOCK_LIMIT);
        if points.len() < before {
            eprintln!("note: --fast drops block capacities above {FAST_BLOCK_LIMIT}");
        }
    }

    let rows: Vec<Vec<String>> = points
        .par_iter()
        .map(|&(value, b)| {
            let prefix = [spec.parameter.name().to_string(), fmt_num(value)];
            let (status, fields) = match point_model(&spec.base.model, spec.parameter, value, b) {
                Err(e) => (format!("invalid: {e}"), None),
                Ok(model) => match solve_model(&model, &settings) {
                    Ok(row) => ("ok".to_string(), Some(row.fields())),
                    Err(SolveFailure::Unstable { .. }) => ("unstable".to_string(), None),
                    Err(SolveFailure::Numerical(m)) => (format!("failed: {m}"), None),
                },
            };
            let fields = fields.unwrap_or_else(|| {
                let mut empty = vec![String::new(); SOLVE_HEADER.len()];
                empty[3] = b.to_string();
                empty
            });
            prefix.into_iter().chain(std::iter::once(status)).chain(fields).collect()
        })
        .collect();

    let header: Vec<&str> = SWEEP_HEADER_PREFIX.iter().chain(SOLVE_HEADER.iter()).copied().collect();
    let target = out.map(Path::to_path_buf).or(spec.output.clone());
    let mut table = Table::create(target.as_deref(), &header)?;
    for row in rows {
        table.row(row)?;
    }
    table.finish()?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn grid_endpoints_and_count() {
        let s = parse_sweep(&json!({
            "parameter": "mu1", "grid": {"from": 0.05, "to": 1.5, "count": 30},
            "blockCaps": [40, 320], "base": {"lambda": 0.3, "mu1": 1.0, "mu2": 2.0}
        }))
        .unwrap();
        assert_eq!(s.values.len(), 30);
        assert_eq!(s.values[0], 0.05);
        assert_eq!(s.values[29], 1.5);
        assert_eq!(s.block_caps, vec![40, 320]);
        assert!(!s.confirmation);
    }

    #[test]
    fn rejects_unordered_grid() {
        let e = parse_sweep(&json!({
            "parameter": "lambda", "values": [0.1, 0.3, 0.2],
            "base": {"lambda": 0.3, "mu1": 1.0, "mu2": 2.0, "blockCap": 2}
        }))
        .unwrap_err();
        assert!(matches!(e, ConfigError::Field { ref field, .. } if field == "values[2]"));
    }

    #[test]
    fn base_errors_carry_prefix() {
        let e = parse_sweep(&json!({
            "parameter": "mu1", "values": [1.0], "blockCaps": [2],
            "base": {"lambda": -0.3, "mu1": 1.0, "mu2": 2.0}
        }))
        .unwrap_err();
        assert!(matches!(e, ConfigError::Field { ref field, .. } if field == "base.lambda"));
    }

    #[test]
    fn block_cap_sweep() {
        let s = parse_sweep(&json!({
            "parameter": "blockCap", "values": [1, 2, 4],
            "base": {"lambda": 0.3, "mu1": 1.0, "mu2": 2.0}
        }))
        .unwrap();
        let m = point_model(&s.base.model, s.parameter, 4.0, 0).unwrap();
        assert_eq!(m.block_cap(), 4);
    }
}
