//! Benchmark systems: the planar single integrator, the torque-limited
//! inverted pendulum, and a pendulum whose vector field is a learned network.

mod mlp;
mod obstacles;

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use mlp::{load_mlp, Activation, Layer, MlpModel, WeightFile, WeightFileLayer, MLP_FORMAT_MAJOR};
pub use obstacles::{inside_obstacle, ObstacleSet, WallSegment};

use crate::dynamics::{BoxBounds, StageCost, StateSpace, StateVec, SystemDef};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SingleIntegratorConfig {
    /// Half-width of the square state box.
    pub state_limit: f64,
    /// Half-width of the square control box.
    pub control_limit: f64,
    /// Macro step used in the stage cost `‖u‖·Δt`.
    pub step_dt: f64,
}

impl Default for SingleIntegratorConfig {
    fn default() -> Self {
        Self {
            state_limit: 5.0,
            control_limit: 1.0,
            step_dt: 0.5,
        }
    }
}

/// `ẋ = u`, `g = ‖u‖₂·Δt`, terminal state at the origin.
pub fn single_integrator(cfg: &SingleIntegratorConfig) -> SystemDef {
    let field = |_x: &[f64], u: &[f64], dx: &mut [f64]| dx.copy_from_slice(u);
    SystemDef {
        name: "single_integrator".into(),
        n: 2,
        m: 2,
        space: StateSpace {
            bounds: BoxBounds::symmetric(2, cfg.state_limit),
            wrap: vec![false, false],
        },
        control_bounds: BoxBounds::symmetric(2, cfg.control_limit),
        terminal_state: StateVec::zeros(2),
        vector_field: Arc::new(field),
        stage_cost: StageCost::ControlNorm { dt: cfg.step_dt },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumConfig {
    pub control_limit: f64,
    pub velocity_limit: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            control_limit: 4.0,
            velocity_limit: 4.0,
        }
    }
}

/// Control limit of the unrestricted pendulum problem.
pub const PENDULUM_RELAXED_LIMIT: f64 = 4.0;
/// Control limit of the restricted pendulum problem.
pub const PENDULUM_RESTRICTED_LIMIT: f64 = 1.0;

fn pendulum_shell(name: &str, cfg: &PendulumConfig, field: Arc<dyn crate::dynamics::VectorField>) -> Result<SystemDef> {
    if !(cfg.control_limit > 0.0 && cfg.control_limit.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "control limit must be positive, got {}",
            cfg.control_limit
        )));
    }
    if !(cfg.velocity_limit > 0.0 && cfg.velocity_limit.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "velocity limit must be positive, got {}",
            cfg.velocity_limit
        )));
    }
    Ok(SystemDef {
        name: name.into(),
        n: 2,
        m: 1,
        space: StateSpace {
            bounds: BoxBounds {
                lo: vec![-PI, -cfg.velocity_limit],
                hi: vec![PI, cfg.velocity_limit],
            },
            wrap: vec![true, false],
        },
        control_bounds: BoxBounds::symmetric(1, cfg.control_limit),
        terminal_state: StateVec::zeros(2),
        vector_field: field,
        stage_cost: StageCost::Quadratic {
            state_weights: vec![1.0, 1.0],
            control_weights: vec![1.0],
        },
    })
}

/// `ẋ = (x₂, sin x₁ + u)`, `g = xᵀx + uᵀu`, upright terminal state, `x₁` wrapped.
pub fn pendulum(control_limit: f64) -> Result<SystemDef> {
    pendulum_with(&PendulumConfig {
        control_limit,
        ..Default::default()
    })
}

pub fn pendulum_with(cfg: &PendulumConfig) -> Result<SystemDef> {
    let field = |x: &[f64], u: &[f64], dx: &mut [f64]| {
        dx[0] = x[1];
        dx[1] = x[0].sin() + u[0];
    };
    pendulum_shell("pendulum", cfg, Arc::new(field))
}

/// Pendulum-shaped system whose vector field is `model([x; u])`.
pub fn mlp_system(model: MlpModel, control_limit: f64) -> Result<SystemDef> {
    mlp_system_with(
        model,
        &PendulumConfig {
            control_limit,
            ..Default::default()
        },
    )
}

pub fn mlp_system_with(model: MlpModel, cfg: &PendulumConfig) -> Result<SystemDef> {
    if model.input_dim() != 3 || model.output_dim() != 2 {
        return Err(Error::InvalidParameter(format!(
            "pendulum network must map 3 -> 2, got {} -> {}",
            model.input_dim(),
            model.output_dim()
        )));
    }
    pendulum_shell("mlp", cfg, Arc::new(model))
}
