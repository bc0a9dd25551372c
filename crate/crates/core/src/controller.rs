//! Feedback control from a stored value tree.
//!
//! The cost-to-go between vertices is interpolated with a compactly supported
//! bump kernel, and the control at a state is a pattern-search minimizer of
//! stage cost plus interpolated cost-to-go one step ahead.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_forward, ControlVec, StateVec, SystemDef};
use crate::error::{Error, Result};
use crate::graph::{Store, VertexId};

/// `φ(d) = exp(−1 / (1 − (γd)²))` for `d < 1/γ`, zero elsewhere.
#[inline]
pub fn bump(gamma: f64, d: f64) -> f64 {
    let s = gamma * d;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Use the cost-to-go of the nearest vertex with a finite value.
    #[default]
    Nearest,
    /// Report `+∞`.
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpConfig {
    /// Kernel sharpness; the support radius is `1/γ`.
    pub gamma: f64,
    #[serde(default)]
    pub fallback: Fallback,
}

/// Neighbors targeted inside the kernel support by [`InterpConfig::for_store`].
pub const DEFAULT_SUPPORT_NEIGHBORS: usize = 10;

impl InterpConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        let cfg = Self {
            gamma,
            fallback: Fallback::Nearest,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Picks `γ` so that the support radius equals the median distance from
    /// a vertex to its `neighbors`-th nearest other vertex.
    pub fn for_store(store: &Store, neighbors: usize) -> Result<Self> {
        let radius = median_kth_neighbor_distance(store, neighbors.max(1))
            .ok_or_else(|| Error::InvalidParameter("need at least two vertices to size the kernel".into()))?;
        Self::new(1.0 / radius)
    }
}

/// Median over (a strided subsample of) the vertices of the distance to the
/// `k`-th nearest other vertex.
pub fn median_kth_neighbor_distance(store: &Store, k: usize) -> Option<f64> {
    let n = store.len();
    if n < 2 {
        return None;
    }
    let k = k.min(n - 1);
    let stride = n.div_ceil(2000);
    let mut d: Vec<f64> = (0..n)
        .step_by(stride)
        .filter_map(|i| {
            let near = store.nearest_with_distance(store.state(VertexId(i)), k + 1);
            near.last().map(|&(_, d)| d)
        })
        .filter(|d| *d > 0.0)
        .collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

/// Kernel-weighted mean of the finite cost-to-go values around `x`.
pub fn interpolate_value(store: &Store, cfg: &InterpConfig, x: &[f64]) -> f64 {
    let mut wsum = 0.0;
    let mut jsum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (v, d) in store.within(x, 1.0 / cfg.gamma) {
        let j = store.cost_to_go(v);
        if !j.is_finite() {
            continue;
        }
        let w = bump(cfg.gamma, d);
        if w > 0.0 {
            wsum += w;
            jsum += w * j;
            lo = lo.min(j);
            hi = hi.max(j);
        }
    }
    if wsum > 0.0 {
        // a convex combination; the clamp only absorbs rounding
        return (jsum / wsum).clamp(lo, hi);
    }
    match cfg.fallback {
        Fallback::Reject => f64::INFINITY,
        Fallback::Nearest => nearest_finite_value(store, x),
    }
}

fn nearest_finite_value(store: &Store, x: &[f64]) -> f64 {
    let mut k = 8;
    loop {
        let near = store.nearest(x, k);
        if let Some(v) = near.iter().find(|v| store.cost_to_go(**v).is_finite()) {
            return store.cost_to_go(*v);
        }
        if near.len() < k {
            return f64::INFINITY;
        }
        k *= 4;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlSearchConfig {
    /// Initial step; `None` means half the widest control-box axis.
    pub alpha0: Option<f64>,
    pub eps_alpha: f64,
}

impl Default for ControlSearchConfig {
    fn default() -> Self {
        Self {
            alpha0: None,
            eps_alpha: 1e-3,
        }
    }
}

impl ControlSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_alpha > 0.0) {
            return Err(Error::InvalidParameter("eps_alpha must be positive".into()));
        }
        if let Some(a) = self.alpha0 {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidParameter("alpha0 must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `g(x, u) + Ĵ(f⁺(x, u))`
pub fn one_step_cost(store: &Store, sys: &SystemDef, icfg: &InterpConfig, x: &[f64], u: &[f64]) -> f64 {
    match step_forward(sys, store.integrator(), x, u) {
        Ok(next) => sys.stage_cost(x, u) + interpolate_value(store, icfg, &next),
        Err(_) => f64::INFINITY,
    }
}

/// Pattern search over the signed control axes, starting from `u = 0`.
pub fn control(
    store: &Store,
    sys: &SystemDef,
    icfg: &InterpConfig,
    scfg: &ControlSearchConfig,
    x: &[f64],
) -> Result<ControlVec> {
    sys.check_state(x)?;
    let ubox = &sys.control_bounds;
    let m = sys.m;
    let mut alpha = scfg.alpha0.unwrap_or_else(|| {
        0.5 * ubox.lo.iter().zip(&ubox.hi).map(|(l, h)| h - l).fold(0.0, f64::max)
    });
    let mut u = vec![0.0; m];
    ubox.clamp(&mut u);
    let mut best = one_step_cost(store, sys, icfg, x, &u);
    let mut probed = vec![u.clone()];
    let mut probe = vec![0.0; m];
    while alpha > scfg.eps_alpha {
        let mut winner: Option<(f64, Vec<f64>)> = None;
        for axis in 0..m {
            for sign in [1.0, -1.0] {
                probe.copy_from_slice(&u);
                probe[axis] += sign * alpha;
                ubox.clamp(&mut probe);
                let q = one_step_cost(store, sys, icfg, x, &probe);
                if !best.is_finite() {
                    probed.push(probe.clone());
                }
                if q < best && winner.as_ref().map_or(true, |(w, _)| q < *w) {
                    winner = Some((q, probe.clone()));
                }
            }
        }
        match winner {
            Some((q, next)) => {
                best = q;
                u = next;
            }
            None => alpha /= 2.0,
        }
    }
    if !best.is_finite() {
        return Err(Error::ControllerStarved { probed });
    }
    Ok(ControlVec::from(u))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub horizon: usize,
    pub goal_tol: f64,
    /// Leaving the state box by more than this much on a non-angular axis
    /// ends the run as a failure.
    pub divergence_margin: f64,
    /// Steps the state must remain in the goal region, up to the end of the
    /// run, to count as stabilized (capped at the run length).
    pub min_dwell: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            horizon: 600,
            goal_tol: 0.05,
            divergence_margin: 1.0,
            min_dwell: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `states[k]` is the state before `controls[k]` is applied; one longer
    /// than `controls`.
    pub states: Vec<StateVec>,
    pub controls: Vec<ControlVec>,
    pub control_dim: usize,
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
    /// First step at which the state is within `goal_tol` of the terminal state.
    pub steps_to_goal: Option<usize>,
    /// Step from which the state stays in the goal region until the end.
    pub settle_step: Option<usize>,
    /// Settled, with at least `min_dwell` steps spent in the goal region.
    pub stabilized: bool,
    pub failure: Option<String>,
    /// Wall time of each control computation, seconds.
    pub compute_secs: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVec {
        self.states.last().expect("a trajectory always holds its initial state")
    }

    /// Mean and population standard deviation of the per-step compute time.
    pub fn compute_stats(&self) -> (f64, f64) {
        let n = self.compute_secs.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let mean = self.compute_secs.iter().sum::<f64>() / n as f64;
        let var = self.compute_secs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    }

    /// Columns: `step, x0..x{n-1}, u0..u{m-1}, stage_cost, cumulative_cost`.
    /// The last row carries the final state with empty control cells.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.states[0].len();
        let m = self.control_dim;
        let mut header = vec!["step".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.push("stage_cost".into());
        header.push("cumulative_cost".into());
        writeln!(out, "{}", header.join(","))?;
        let mut cumulative = 0.0;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| fmt_num(*v)));
            match self.controls.get(k) {
                Some(u) => {
                    cumulative += self.stage_costs[k];
                    row.extend(u.iter().map(|v| fmt_num(*v)));
                    row.push(fmt_num(self.stage_costs[k]));
                }
                None => {
                    row.extend(std::iter::repeat(String::new()).take(m));
                    row.push(fmt_num(0.0));
                }
            }
            row.push(fmt_num(cumulative));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Nine significant digits.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = 8 - v.abs().log10().floor() as i32;
    if (0..=17).contains(&digits) {
        let s = format!("{v:.*}", digits as usize);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

/// Closed-loop rollout: controls are planned on `plan_sys` against the
/// store, states are advanced with `exec_sys`.
pub fn simulate(
    store: &Store,
    plan_sys: &SystemDef,
    exec_sys: &SystemDef,
    icfg: &InterpConfig,
    scfg: &ControlSearchConfig,
    sim: &SimulateConfig,
    x0: &[f64],
) -> Result<Trajectory> {
    plan_sys.check_state(x0)?;
    exec_sys.check_state(x0)?;
    icfg.validate()?;
    scfg.validate()?;
    let mut x = StateVec::from_slice(x0);
    exec_sys.space.wrap_in_place(&mut x);
    let goal = &exec_sys.terminal_state;
    let at_goal = |x: &[f64]| exec_sys.space.distance(x, goal) < sim.goal_tol;
    let mut traj = Trajectory {
        states: vec![x.clone()],
        controls: Vec::new(),
        control_dim: exec_sys.m,
        stage_costs: Vec::new(),
        total_cost: 0.0,
        steps_to_goal: at_goal(&x).then_some(0),
        settle_step: at_goal(&x).then_some(0),
        stabilized: false,
        failure: None,
        compute_secs: Vec::new(),
    };
    for k in 0..sim.horizon {
        let started = Instant::now();
        let u = match control(store, plan_sys, icfg, scfg, &x) {
            Ok(u) => u,
            Err(e) => {
                traj.failure = Some(format!("step {k}: {e}"));
                break;
            }
        };
        traj.compute_secs.push(started.elapsed().as_secs_f64());
        let g = exec_sys.stage_cost(&x, &u);
        let next = match step_forward(exec_sys, store.integrator(), &x, &u) {
            Ok(next) => next,
            Err(e) => {
                traj.failure = Some(format!("step {k}: {e}"));
                break;
            }
        };
        traj.controls.push(u);
        traj.stage_costs.push(g);
        traj.total_cost += g;
        x = next;
        traj.states.push(x.clone());
        let step = k + 1;
        if at_goal(&x) {
            traj.steps_to_goal.get_or_insert(step);
            traj.settle_step.get_or_insert(step);
        } else {
            traj.settle_step = None;
        }
        if diverged(exec_sys, &x, sim.divergence_margin) {
            traj.failure = Some(format!("step {step}: state {:?} left the state box", x.as_slice()));
            break;
        }
    }
    let steps = traj.controls.len();
    traj.stabilized = traj.failure.is_none()
        && traj
            .settle_step
            .is_some_and(|s| steps - s >= sim.min_dwell.min(steps));
    Ok(traj)
}

fn diverged(sys: &SystemDef, x: &[f64], margin: f64) -> bool {
    let b = &sys.space.bounds;
    x.iter().enumerate().any(|(i, v)| {
        !sys.space.wrap[i] && (*v < b.lo[i] - margin || *v > b.hi[i] + margin)
    })
}
