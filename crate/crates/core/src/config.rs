//! JSON configuration for the car benchmark.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Car, ControlCost, ModelError, Obstacle, ObstacleSet, OcpInstance, PenaltySign, TimeGrid,
};

/// The configuration shipped with the crate; identical to [`BenchmarkConfig::default`].
pub const SHIPPED_CONFIG: &str = include_str!("../configs/car_benchmark.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySignSpec {
    AsPrinted,
    #[default]
    Repulsive,
}

impl From<PenaltySignSpec> for PenaltySign {
    fn from(s: PenaltySignSpec) -> Self {
        match s {
            PenaltySignSpec::AsPrinted => PenaltySign::AsPrinted,
            PenaltySignSpec::Repulsive => PenaltySign::Repulsive,
        }
    }
}

/// Car benchmark parameters. States are ordered `(r_x, r_y, θ, v, ω)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Free-form note carried along with the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Slip noise intensity on the position rows.
    pub alpha2: f64,
    /// Slip noise intensity on the heading row.
    pub beta2: f64,
    /// Obstacle penalty weight.
    pub lambda: f64,
    /// Margin added to every obstacle radius in the penalty.
    pub clearance: f64,
    pub obstacles: Vec<ObstacleSpec>,
    /// Terminal mean of `(r_x, r_y, θ, v, ω)`.
    pub goal: Vec<f64>,
    pub horizon: f64,
    #[serde(rename = "N")]
    pub nodes: usize,
    pub control_bounds: ControlBounds,
    #[serde(default)]
    pub penalty_sign: PenaltySignSpec,
    #[serde(default = "one")]
    pub variance_weight: f64,
    #[serde(default = "origin")]
    pub initial_state: Vec<f64>,
}

const LAYOUT_NOTE: &str = "Car benchmark. Four obstacles between start and goal; the first two \
flank the converged mean path just outside its penalty reach, the other two sit clear of every \
SCP iterate. The layout is a choice of this crate, not a published one.";

fn one() -> f64 {
    1.0
}

fn origin() -> Vec<f64> {
    vec![0.0; 5]
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            description: Some(LAYOUT_NOTE.to_string()),
            alpha2: 0.1,
            beta2: 0.01,
            lambda: 500.0,
            clearance: 0.1,
            obstacles: vec![
                ObstacleSpec {
                    cx: 0.8,
                    cy: 2.0,
                    radius: 0.3,
                },
                ObstacleSpec {
                    cx: 1.45,
                    cy: 0.95,
                    radius: 0.3,
                },
                ObstacleSpec {
                    cx: 0.25,
                    cy: 1.2,
                    radius: 0.25,
                },
                ObstacleSpec {
                    cx: 2.0,
                    cy: 1.9,
                    radius: 0.25,
                },
            ],
            goal: vec![2.2, 3.0, 0.0, 0.0, 0.0],
            horizon: 5.0,
            nodes: 41,
            control_bounds: ControlBounds {
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
            },
            penalty_sign: PenaltySignSpec::Repulsive,
            variance_weight: 1.0,
            initial_state: origin(),
        }
    }
}

impl BenchmarkConfig {
    /// Parses JSON, reporting syntax and schema errors with line and column.
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CONFIG, "car_benchmark.json").expect("shipped config parses")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn grid(&self) -> Result<TimeGrid, ModelError> {
        TimeGrid::new(self.nodes, self.horizon)
    }
}

/// Builds the car instance described by `config`.
pub fn build_car_benchmark(config: &BenchmarkConfig) -> Result<OcpInstance, ModelError> {
    let check = |what, expected, got| {
        if expected == got {
            Ok(())
        } else {
            Err(ModelError::Dimension {
                what,
                expected,
                got,
            })
        }
    };
    check("goal", 5, config.goal.len())?;
    check("initial_state", 5, config.initial_state.len())?;
    check("control_bounds.lower", 2, config.control_bounds.lower.len())?;
    check("control_bounds.upper", 2, config.control_bounds.upper.len())?;
    if !config.alpha2.is_finite() || !config.beta2.is_finite() {
        return Err(ModelError::NonFinite("noise intensities"));
    }

    let mut inst = OcpInstance::new(
        Arc::new(Car {
            alpha2: config.alpha2,
            beta2: config.beta2,
        }),
        config.horizon,
    );
    inst.control_cost = ControlCost::unit(2);
    inst.obstacles = ObstacleSet {
        obstacles: config
            .obstacles
            .iter()
            .map(|o| Obstacle {
                center: [o.cx, o.cy],
                radius: o.radius,
            })
            .collect(),
        clearance: config.clearance,
        weight: config.lambda,
        position_index: [0, 1],
    };
    inst.penalty_sign = config.penalty_sign.into();
    inst.control_lower = DVector::from_column_slice(&config.control_bounds.lower);
    inst.control_upper = DVector::from_column_slice(&config.control_bounds.upper);
    inst.x0 = DVector::from_column_slice(&config.initial_state[..3]);
    inst.z0 = DVector::from_column_slice(&config.initial_state[3..]);
    inst.goal_x = DVector::from_column_slice(&config.goal[..3]);
    inst.goal_z = DVector::from_column_slice(&config.goal[3..]);
    inst.variance_weight = config.variance_weight;
    inst.validate()?;
    config.grid()?;
    Ok(inst)
}
