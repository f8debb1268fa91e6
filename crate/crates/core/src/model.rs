//! The full queue description: one MAP, two PH laws and the block cap.
//!
//! Convention used throughout the crate: the blockchain-building stage is
//! PH `(α, T)` of order `m1` with rate `μ1 = 1 / E[building]`; the
//! block-generation (mining) stage is PH `(β, S)` of order `m2` with rate
//! `μ2 = 1 / E[generation]`.

use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::map::MarkovArrivalProcess;
use crate::phase::PhaseType;

/// Absolute tolerance for row-sum and normalization checks on user input.
pub const VALIDATION_TOLERANCE: f64 = 1e-9;

/// Validation failures. `component` names the offending input: `"C"`, `"D"`
/// for a MAP, `"vector"` / `"generator"` for a PH law.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{component}: expected a square matrix, found {rows}x{cols}")]
    NotSquare {
        component: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{component}: order {found} does not match expected order {expected}")]
    OrderMismatch {
        component: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{component}: non-finite entry")]
    NonFinite { component: &'static str },
    #[error("{component}: entry ({row},{col}) = {value} is negative")]
    NegativeRate {
        component: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("{component}: diagonal entry {index} = {value} must be negative")]
    Diagonal {
        component: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{component}: row {row} of C + D sums to {sum}, expected 0")]
    RowSum {
        component: &'static str,
        row: usize,
        sum: f64,
    },
    #[error("{component}: entry {index} = {value} is negative")]
    NegativeProbability {
        component: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{component}: entries sum to {sum}, expected 1")]
    NotStochastic { component: &'static str, sum: f64 },
    #[error("{component}: row {row} sums to {sum} > 0")]
    ExcessRowSum {
        component: &'static str,
        row: usize,
        sum: f64,
    },
    #[error("{component}: no exit to absorption")]
    NoExit { component: &'static str },
    #[error("{component}: sub-generator is singular")]
    Singular { component: &'static str },
    #[error("{component}: underlying generator is reducible")]
    Reducible { component: &'static str },
    #[error("{component}: rate must be positive and finite, got {value}")]
    NonPositiveRate { component: &'static str, value: f64 },
    #[error("block capacity must be at least 1")]
    BlockCap,
    #[error("{component}: {source}")]
    Linalg {
        component: &'static str,
        source: LinalgError,
    },
}

impl ModelError {
    pub fn component(&self) -> &'static str {
        match self {
            ModelError::NotSquare { component, .. }
            | ModelError::OrderMismatch { component, .. }
            | ModelError::NonFinite { component }
            | ModelError::NegativeRate { component, .. }
            | ModelError::Diagonal { component, .. }
            | ModelError::RowSum { component, .. }
            | ModelError::NegativeProbability { component, .. }
            | ModelError::NotStochastic { component, .. }
            | ModelError::ExcessRowSum { component, .. }
            | ModelError::NoExit { component }
            | ModelError::Singular { component }
            | ModelError::Reducible { component }
            | ModelError::NonPositiveRate { component, .. }
            | ModelError::Linalg { component, .. } => component,
            ModelError::BlockCap => "blockCap",
        }
    }
}

pub(crate) fn check_square(component: &'static str, m: &Matrix) -> Result<(), ModelError> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(ModelError::NotSquare {
            component,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(ModelError::NonFinite { component });
    }
    Ok(())
}

pub(crate) fn check_rate(component: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::NonPositiveRate { component, value })
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    arrivals: MarkovArrivalProcess,
    building: PhaseType,
    generation: PhaseType,
    block_cap: usize,
}

impl ModelSpec {
    pub fn new(
        arrivals: MarkovArrivalProcess,
        building: PhaseType,
        generation: PhaseType,
        block_cap: usize,
    ) -> Result<Self, ModelError> {
        if block_cap == 0 {
            return Err(ModelError::BlockCap);
        }
        Ok(Self {
            arrivals,
            building,
            generation,
            block_cap,
        })
    }

    /// Poisson arrivals with exponential building (`mu1`) and generation
    /// (`mu2`) times.
    pub fn exponential(lambda: f64, mu1: f64, mu2: f64, block_cap: usize) -> Result<Self, ModelError> {
        Self::new(
            MarkovArrivalProcess::poisson(lambda)?,
            PhaseType::exponential(mu1)?,
            PhaseType::exponential(mu2)?,
            block_cap,
        )
    }

    pub fn arrivals(&self) -> &MarkovArrivalProcess {
        &self.arrivals
    }

    /// Blockchain-building law `(α, T)`.
    pub fn building(&self) -> &PhaseType {
        &self.building
    }

    /// Block-generation law `(β, S)`.
    pub fn generation(&self) -> &PhaseType {
        &self.generation
    }

    pub fn block_cap(&self) -> usize {
        self.block_cap
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrivals.rate()
    }

    /// `μ1 = 1 / E[building time]`.
    pub fn building_rate(&self) -> f64 {
        1.0 / self.building.mean()
    }

    /// `μ2 = 1 / E[generation time]`.
    pub fn generation_rate(&self) -> f64 {
        1.0 / self.generation.mean()
    }

    /// Orders `(m0, m1, m2)`.
    pub fn orders(&self) -> (usize, usize, usize) {
        (
            self.arrivals.order(),
            self.building.order(),
            self.generation.order(),
        )
    }

    pub fn with_block_cap(&self, block_cap: usize) -> Result<Self, ModelError> {
        Self::new(
            self.arrivals.clone(),
            self.building.clone(),
            self.generation.clone(),
            block_cap,
        )
    }

    /// Rescale the MAP so its stationary rate becomes `lambda`.
    pub fn with_arrival_rate(&self, lambda: f64) -> Result<Self, ModelError> {
        let arrivals = self.arrivals.with_rate(lambda)?;
        Self::new(
            arrivals,
            self.building.clone(),
            self.generation.clone(),
            self.block_cap,
        )
    }

    /// Rescale the building law so its mean becomes `1 / mu1`.
    pub fn with_building_rate(&self, mu1: f64) -> Result<Self, ModelError> {
        let building = self.building.with_rate(mu1)?;
        Self::new(
            self.arrivals.clone(),
            building,
            self.generation.clone(),
            self.block_cap,
        )
    }

    /// Rescale the generation law so its mean becomes `1 / mu2`.
    pub fn with_generation_rate(&self, mu2: f64) -> Result<Self, ModelError> {
        let generation = self.generation.with_rate(mu2)?;
        Self::new(
            self.arrivals.clone(),
            self.building.clone(),
            generation,
            self.block_cap,
        )
    }
}
