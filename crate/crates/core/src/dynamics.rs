//! Continuous vector fields and their fixed-step discretisation.
//!
//! A [`SystemDef`] bundles the vector field `F`, the state and control boxes,
//! the stage cost and the terminal state. [`step_forward`] and
//! [`step_backward`] integrate `F` over one macro step with the control held
//! constant, using explicit Euler substeps of length `sub_dt` (negated for the
//! backward direction).

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

macro_rules! real_vec {
    ($name:ident) => {
        #[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(SmallVec<[f64; 4]>);

        impl $name {
            pub fn from_slice(v: &[f64]) -> Self {
                Self(SmallVec::from_slice(v))
            }

            pub fn zeros(len: usize) -> Self {
                Self(SmallVec::from_elem(0.0, len))
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn to_vec(&self) -> Vec<f64> {
                self.0.to_vec()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|c| c.is_finite())
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(SmallVec::from_vec(v))
            }
        }

        impl<const N: usize> From<[f64; N]> for $name {
            fn from(v: [f64; N]) -> Self {
                Self::from_slice(&v)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.debug_list().entries(self.0.iter()).finish()
            }
        }
    };
}

real_vec!(StateVec);
real_vec!(ControlVec);

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TWO_PI * ((a + PI) / TWO_PI).floor();
    if w >= PI {
        w - TWO_PI
    } else {
        w
    }
}

/// Shortest signed angular difference `a - b`, in `[-π, π)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Axis-aligned box `[lo, hi]` per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                what: "box bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "box bounds must be finite with lo <= hi: {lo:?} / {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Symmetric box `[-limit, limit]^dim`.
    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self {
            lo: vec![-limit; dim],
            hi: vec![limit; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// True iff `self` lies inside `outer` (closed).
    pub fn is_subset_of(&self, outer: &BoxBounds) -> bool {
        self.dim() == outer.dim()
            && (0..self.dim()).all(|i| self.lo[i] >= outer.lo[i] && self.hi[i] <= outer.hi[i])
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Euclidean length of the box diagonal.
    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| if h > l { rng.gen_range(*l..*h) } else { *l })
            .collect()
    }
}

/// State box plus the set of angular axes, which defines the state metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub bounds: BoxBounds,
    pub wrap: Vec<bool>,
}

impl StateSpace {
    pub fn new(bounds: BoxBounds, wrap: Vec<bool>) -> Result<Self> {
        if wrap.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                what: "wrap mask",
                expected: bounds.dim(),
                got: wrap.len(),
            });
        }
        Ok(Self { bounds, wrap })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Per-axis difference `a - b`, shortest-angle on wrapped axes.
    #[inline]
    pub fn axis_diff(&self, axis: usize, a: f64, b: f64) -> f64 {
        if self.wrap[axis] {
            angle_diff(a, b)
        } else {
            a - b
        }
    }

    #[inline]
    pub fn distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            let d = self.axis_diff(i, a[i], b[i]);
            s += d * d;
        }
        s
    }

    #[inline]
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.distance_sq(a, b).sqrt()
    }

    pub fn wrap_in_place(&self, x: &mut [f64]) {
        for (v, w) in x.iter_mut().zip(&self.wrap) {
            if *w {
                *v = wrap_angle(*v);
            }
        }
    }

    /// Containment after wrapping angular axes.
    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        x.iter().enumerate().all(|(i, &v)| {
            let v = if self.wrap[i] { wrap_angle(v) } else { v };
            v >= self.bounds.lo[i] && v <= self.bounds.hi[i]
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVec {
        let mut x = self.bounds.sample(rng);
        self.wrap_in_place(&mut x);
        StateVec::from(x)
    }
}

/// Macro step and quadrature substep, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub step_dt: f64,
    pub sub_dt: f64,
}

impl IntegratorConfig {
    pub fn new(step_dt: f64, sub_dt: f64) -> Result<Self> {
        let cfg = Self { step_dt, sub_dt };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `sub_dt = step_dt / 10`.
    pub fn with_step(step_dt: f64) -> Self {
        Self {
            step_dt,
            sub_dt: step_dt / 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_dt > 0.0 && self.sub_dt > 0.0 && self.sub_dt <= self.step_dt * (1.0 + 1e-12))
        {
            return Err(Error::InvalidParameter(format!(
                "integrator needs 0 < sub_dt <= step_dt, got step_dt={} sub_dt={}",
                self.step_dt, self.sub_dt
            )));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        ((self.step_dt / self.sub_dt).round() as usize).max(1)
    }
}

/// Continuous-time dynamics `ẋ = F(x, u)`.
pub trait VectorField: Send + Sync {
    /// Writes `F(x, u)` into `dx` (same length as `x`).
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
}

impl<F> VectorField for F
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self(x, u, dx)
    }
}

/// Stage cost `g(x, u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageCost {
    /// `‖u‖₂ · dt`
    ControlNorm { dt: f64 },
    /// `Σ qᵢ xᵢ² + Σ rⱼ uⱼ²`
    Quadratic {
        state_weights: Vec<f64>,
        control_weights: Vec<f64>,
    },
}

impl StageCost {
    #[inline]
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            StageCost::ControlNorm { dt } => u.iter().map(|c| c * c).sum::<f64>().sqrt() * dt,
            StageCost::Quadratic {
                state_weights,
                control_weights,
            } => {
                let xs: f64 = x.iter().zip(state_weights).map(|(v, q)| q * v * v).sum();
                let us: f64 = u.iter().zip(control_weights).map(|(v, r)| r * v * v).sum();
                xs + us
            }
        }
    }
}

/// A dynamical system together with its optimal control problem data.
#[derive(Clone)]
pub struct SystemDef {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub space: StateSpace,
    pub control_bounds: BoxBounds,
    pub terminal_state: StateVec,
    pub vector_field: Arc<dyn VectorField>,
    pub stage_cost: StageCost,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("space", &self.space)
            .field("control_bounds", &self.control_bounds)
            .field("terminal_state", &self.terminal_state)
            .field("stage_cost", &self.stage_cost)
            .finish_non_exhaustive()
    }
}

impl SystemDef {
    pub fn state_bounds(&self) -> &BoxBounds {
        &self.space.bounds
    }

    #[inline]
    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self.stage_cost.eval(x, u)
    }

    pub fn field(&self, x: &[f64], u: &[f64]) -> StateVec {
        let mut dx = StateVec::zeros(self.n);
        self.vector_field.eval(x, u, &mut dx);
        dx
    }

    pub fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn check_control(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "control",
                expected: self.m,
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Structural checks plus a randomized nonnegativity check of the stage cost.
    pub fn validate(&self) -> Result<()> {
        if self.space.dim() != self.n || self.terminal_state.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "system state",
                expected: self.n,
                got: self.terminal_state.len(),
            });
        }
        if self.control_bounds.dim() != self.m {
            return Err(Error::DimensionMismatch {
                what: "system control",
                expected: self.m,
                got: self.control_bounds.dim(),
            });
        }
        if !self.space.contains(&self.terminal_state) {
            return Err(Error::InvalidParameter(
                "terminal state lies outside the state bounds".into(),
            ));
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0x5eed);
        for _ in 0..1000 {
            let x = self.space.sample(&mut rng);
            let u = self.control_bounds.sample(&mut rng);
            let g = self.stage_cost(&x, &u);
            if !(g >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "stage cost {g} < 0 at x={x:?}, u={u:?}"
                )));
            }
        }
        Ok(())
    }
}

fn integrate(sys: &SystemDef, cfg: &IntegratorConfig, x: &[f64], u: &[f64], sign: f64) -> Result<StateVec> {
    sys.check_state(x)?;
    sys.check_control(u)?;
    let substeps = cfg.substeps();
    let h = sign * cfg.step_dt / substeps as f64;
    let mut state = StateVec::from_slice(x);
    let mut dx = StateVec::zeros(sys.n);
    for _ in 0..substeps {
        sys.vector_field.eval(&state, u, &mut dx);
        for (s, d) in state.iter_mut().zip(dx.iter()) {
            *s += d * h;
        }
    }
    if !state.is_finite() {
        return Err(Error::IntegrationDiverged { substeps });
    }
    sys.space.wrap_in_place(&mut state);
    Ok(state)
}

/// One macro step forward in time under zero-order-hold control.
pub fn step_forward(sys: &SystemDef, cfg: &IntegratorConfig, x: &[f64], u: &[f64]) -> Result<StateVec> {
    integrate(sys, cfg, x, u, 1.0)
}

/// One macro step backward in time: Euler with negated substeps on the same field.
pub fn step_backward(sys: &SystemDef, cfg: &IntegratorConfig, x: &[f64], u: &[f64]) -> Result<StateVec> {
    integrate(sys, cfg, x, u, -1.0)
}
