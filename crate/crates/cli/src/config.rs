//! JSON model configuration.
//!
//! ```json
//! {
//!   "arrivals": { "order": 2, "C": [[-3, 1], [1, -2]], "D": [[2, 0], [0, 1]] },
//!   "generation": { "beta": [1, 0], "S": [[-3, 3], [0, -3]] },
//!   "building": { "alpha": [1, 0], "T": [[-4, 4], [0, -4]] },
//!   "blockCap": 3,
//!   "solver": { "tolerance": 1e-12, "maxIter": 100000, "truncationK": 200 },
//!   "sim": { "horizon": 1000000, "replications": 20, "seed": 7, "warmup": 0.2 }
//! }
//! ```
//!
//! `lambda`, `mu1` and `mu2` may replace `arrivals`, `building` and
//! `generation` with Poisson arrivals and exponential stages. A `horizon` given
//! as a number counts events; `{"time": t}` bounds simulated time instead.

use std::path::Path;

use blockqueue::linalg::{Matrix, Vector};
use blockqueue::map::MarkovArrivalProcess;
use blockqueue::model::{ModelError, ModelSpec};
use blockqueue::phase::PhaseType;
use blockqueue::simulator::Horizon;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverSection {
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
    pub truncation_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSection {
    pub horizon: Horizon,
    pub replications: usize,
    pub seed: u64,
    pub warmup: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: Horizon::Events(1_000_000),
            replications: 20,
            seed: 1,
            warmup: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub model: ModelSpec,
    pub solver: SolverSection,
    pub sim: SimSection,
}

pub fn read_json(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig, ConfigError> {
    parse_model_config(&read_json(path)?)
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn object<'a>(v: &'a Value, field: &str) -> Result<&'a serde_json::Map<String, Value>, ConfigError> {
    v.as_object().ok_or_else(|| ConfigError::field(field, "expected an object"))
}

fn number(v: &Value, field: &str) -> Result<f64, ConfigError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ConfigError::field(field, "expected a finite number"))
}

fn count(v: &Value, field: &str) -> Result<u64, ConfigError> {
    v.as_u64()
        .or_else(|| v.as_f64().filter(|x| x.fract() == 0.0 && *x >= 0.0 && *x < 2f64.powi(63)).map(|x| x as u64))
        .ok_or_else(|| ConfigError::field(field, "expected a nonnegative integer"))
}

fn vector(v: &Value, field: &str) -> Result<Vector, ConfigError> {
    let items = v.as_array().ok_or_else(|| ConfigError::field(field, "expected an array of numbers"))?;
    let xs = items
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{field}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    if xs.is_empty() {
        return Err(ConfigError::field(field, "must not be empty"));
    }
    Ok(Vector::from_vec(xs))
}

fn matrix(v: &Value, field: &str) -> Result<Matrix, ConfigError> {
    let rows = v.as_array().ok_or_else(|| ConfigError::field(field, "expected an array of rows"))?;
    if rows.is_empty() {
        return Err(ConfigError::field(field, "must not be empty"));
    }
    let rows = rows
        .iter()
        .enumerate()
        .map(|(i, r)| vector(r, &format!("{field}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let width = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(ConfigError::field(
            format!("{field}[{i}]"),
            format!("row has {} entries, expected {width}", rows[i].len()),
        ));
    }
    Ok(Matrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn required<'a>(obj: &'a serde_json::Map<String, Value>, prefix: &str, key: &str) -> Result<&'a Value, ConfigError> {
    obj.get(key).ok_or_else(|| ConfigError::field(join(prefix, key), "missing"))
}

fn model_error(prefix: &str, names: &[(&str, &str)], e: ModelError) -> ConfigError {
    let key = names
        .iter()
        .find(|(component, _)| *component == e.component())
        .map(|(_, key)| *key)
        .unwrap_or(e.component());
    ConfigError::field(join(prefix, key), e.to_string())
}

fn arrivals(root: &serde_json::Map<String, Value>) -> Result<MarkovArrivalProcess, ConfigError> {
    match (root.get("arrivals"), root.get("lambda")) {
        (Some(_), Some(_)) => Err(ConfigError::field("lambda", "conflicts with arrivals")),
        (None, Some(l)) => MarkovArrivalProcess::poisson(number(l, "lambda")?)
            .map_err(|e| ConfigError::field("lambda", e.to_string())),
        (Some(a), None) => {
            let obj = object(a, "arrivals")?;
            let c = matrix(required(obj, "arrivals", "C")?, "arrivals.C")?;
            let d = matrix(required(obj, "arrivals", "D")?, "arrivals.D")?;
            if let Some(o) = obj.get("order") {
                let order = count(o, "arrivals.order")? as usize;
                for (m, key) in [(&c, "arrivals.C"), (&d, "arrivals.D")] {
                    if m.nrows() != order || m.ncols() != order {
                        return Err(ConfigError::field(
                            key,
                            format!("is {}x{}, but order is {order}", m.nrows(), m.ncols()),
                        ));
                    }
                }
            }
            MarkovArrivalProcess::new(c, d).map_err(|e| model_error("arrivals", &[("C", "C"), ("D", "D")], e))
        }
        (None, None) => Err(ConfigError::field("arrivals", "missing (or give lambda)")),
    }
}

fn phase_type(
    root: &serde_json::Map<String, Value>,
    section: &str,
    shorthand: &str,
    vector_key: &str,
    generator_key: &str,
) -> Result<PhaseType, ConfigError> {
    match (root.get(section), root.get(shorthand)) {
        (Some(_), Some(_)) => Err(ConfigError::field(shorthand, format!("conflicts with {section}"))),
        (None, Some(r)) => {
            PhaseType::exponential(number(r, shorthand)?).map_err(|e| ConfigError::field(shorthand, e.to_string()))
        }
        (Some(s), None) => {
            let obj = object(s, section)?;
            let init = vector(required(obj, section, vector_key)?, &join(section, vector_key))?;
            let gen = matrix(required(obj, section, generator_key)?, &join(section, generator_key))?;
            PhaseType::new(init, gen).map_err(|e| {
                model_error(section, &[("vector", vector_key), ("generator", generator_key)], e)
            })
        }
        (None, None) => Err(ConfigError::field(section, format!("missing (or give {shorthand})"))),
    }
}

fn solver_section(root: &serde_json::Map<String, Value>) -> Result<SolverSection, ConfigError> {
    let Some(v) = root.get("solver") else {
        return Ok(SolverSection::default());
    };
    let obj = object(v, "solver")?;
    let mut s = SolverSection::default();
    if let Some(t) = obj.get("tolerance") {
        let t = number(t, "solver.tolerance")?;
        if t <= 0.0 {
            return Err(ConfigError::field("solver.tolerance", "must be positive"));
        }
        s.tolerance = Some(t);
    }
    if let Some(m) = obj.get("maxIter") {
        s.max_iter = Some(count(m, "solver.maxIter")? as usize);
    }
    if let Some(k) = obj.get("truncationK") {
        s.truncation_k = Some(count(k, "solver.truncationK")? as usize);
    }
    Ok(s)
}

fn horizon(v: &Value) -> Result<Horizon, ConfigError> {
    if let Some(obj) = v.as_object() {
        return match (obj.get("events"), obj.get("time")) {
            (Some(e), None) => Ok(Horizon::Events(count(e, "sim.horizon.events")?)),
            (None, Some(t)) => Ok(Horizon::Time(number(t, "sim.horizon.time")?)),
            _ => Err(ConfigError::field("sim.horizon", "expected exactly one of events, time")),
        };
    }
    Ok(Horizon::Events(count(v, "sim.horizon")?))
}

fn sim_section(root: &serde_json::Map<String, Value>) -> Result<SimSection, ConfigError> {
    let mut s = SimSection::default();
    let Some(v) = root.get("sim") else {
        return Ok(s);
    };
    let obj = object(v, "sim")?;
    if let Some(h) = obj.get("horizon") {
        s.horizon = horizon(h)?;
    }
    if let Some(r) = obj.get("replications") {
        s.replications = count(r, "sim.replications")? as usize;
    }
    if let Some(seed) = obj.get("seed") {
        s.seed = count(seed, "sim.seed")?;
    }
    if let Some(w) = obj.get("warmup") {
        s.warmup = number(w, "sim.warmup")?;
    }
    Ok(s)
}

pub fn parse_model_config(v: &Value) -> Result<ModelConfig, ConfigError> {
    let root = object(v, "(root)")?;
    let map = arrivals(root)?;
    let building = phase_type(root, "building", "mu1", "alpha", "T")?;
    let generation = phase_type(root, "generation", "mu2", "beta", "S")?;
    let b = count(required(root, "", "blockCap")?, "blockCap")? as usize;
    let model = ModelSpec::new(map, building, generation, b).map_err(|e| ConfigError::field("blockCap", e.to_string()))?;
    Ok(ModelConfig {
        model,
        solver: solver_section(root)?,
        sim: sim_section(root)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn shorthand_expands_to_order_one() {
        let c = parse_model_config(&json!({"lambda": 0.3, "mu1": 1.0, "mu2": 2.0, "blockCap": 2})).unwrap();
        assert_eq!(c.model.orders(), (1, 1, 1));
        assert!((c.model.arrival_rate() - 0.3).abs() < 1e-15);
        assert_eq!(c.sim, SimSection::default());
    }

    #[test]
    fn full_form_parses() {
        let c = parse_model_config(&json!({
            "arrivals": {"order": 2, "C": [[-3, 1], [1, -2]], "D": [[2, 0], [0, 1]]},
            "generation": {"beta": [1, 0], "S": [[-3, 3], [0, -3]]},
            "building": {"alpha": [1, 0], "T": [[-4, 4], [0, -4]]},
            "blockCap": 3,
            "solver": {"tolerance": 1e-11, "truncationK": 80},
            "sim": {"horizon": {"time": 100.0}, "seed": 5}
        }))
        .unwrap();
        assert_eq!(c.model.orders(), (2, 2, 2));
        assert_eq!(c.solver.truncation_k, Some(80));
        assert_eq!(c.sim.horizon, Horizon::Time(100.0));
        assert_eq!(c.sim.seed, 5);
    }

    fn field_of(v: Value) -> String {
        match parse_model_config(&v).unwrap_err() {
            ConfigError::Field { field, .. } => field,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn diagnostics_name_the_field() {
        let base = |d: Value| {
            json!({"arrivals": {"C": [[-1.0]], "D": d}, "mu1": 1.0, "mu2": 1.0, "blockCap": 1})
        };
        assert_eq!(field_of(base(json!([[-1.0]]))), "arrivals.D");
        assert_eq!(field_of(base(json!([["x"]]))), "arrivals.D[0][0]");
        assert_eq!(field_of(json!({"lambda": 1.0, "mu1": 1.0, "mu2": 1.0})), "blockCap");
        assert_eq!(field_of(json!({"lambda": 1.0, "mu1": 1.0, "mu2": 1.0, "blockCap": 0})), "blockCap");
        assert_eq!(
            field_of(json!({"lambda": 1.0, "mu1": 1.0, "blockCap": 1,
                "generation": {"beta": [0.5], "S": [[-1.0]]}})),
            "generation.beta"
        );
        assert_eq!(
            field_of(json!({"lambda": 1.0, "mu2": 1.0, "blockCap": 1,
                "building": {"alpha": [1.0], "T": [[1.0]]}})),
            "building.T"
        );
        assert_eq!(
            field_of(json!({"arrivals": {"order": 2, "C": [[-1.0]], "D": [[1.0]]}, "mu1": 1, "mu2": 1, "blockCap": 1})),
            "arrivals.C"
        );
        assert_eq!(field_of(json!({"lambda": 1.0, "mu1": 1.0, "mu2": 1.0, "blockCap": 1, "sim": {"seed": -1}})), "sim.seed");
    }
}
