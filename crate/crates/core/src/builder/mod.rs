//! Offline construction of the graph and value tree.
//!
//! Each iteration grows the store backward in time from an existing vertex
//! ([`expand_backward`]), searches for extra one-step connections around the
//! new vertex ([`find_connections`]) and propagates any cost-to-go
//! improvement through the graph ([`update_tree`]).

mod reach;
mod steer;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use steer::{steer, steer_search, Direction, SteerConfig, SteerResult};

use crate::dynamics::{step_backward, step_forward, ControlVec, StateVec, SystemDef};
use crate::error::{Error, Result};
use crate::graph::{EdgeInsert, Store, VertexId};
use reach::ReachModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCriterion {
    MaxSeconds(f64),
    /// Stop once the store holds this many vertices (root included).
    MaxVertices(usize),
    /// Stop once some vertex lies within `radius` of `center`.
    GoalRegion { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub stop: StopCriterion,
    /// Backward control samples per expansion.
    pub controls_per_expand: usize,
    pub k_parents: usize,
    pub k_children: usize,
    pub steer: SteerConfig,
    pub rng_seed: u64,
    /// Consecutive iterations without a new vertex before giving up.
    pub max_failed_iterations: usize,
    /// Candidates whose residual under an affine fit of the probe rollouts
    /// exceeds `eps_connect` plus this multiple of the fit error are not
    /// steered.
    /// `None` steers every candidate.
    pub screen_factor: Option<f64>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            stop: StopCriterion::MaxVertices(1000),
            controls_per_expand: 8,
            k_parents: 10,
            k_children: 10,
            steer: SteerConfig::default(),
            rng_seed: 0,
            max_failed_iterations: 10_000,
            screen_factor: Some(2.0),
        }
    }
}

impl BuildConfig {
    pub fn validate(&self, sys: &SystemDef) -> Result<()> {
        if self.controls_per_expand == 0 || self.k_parents == 0 || self.k_children == 0 {
            return Err(Error::InvalidParameter(
                "controls_per_expand, k_parents and k_children must be >= 1".into(),
            ));
        }
        if let Some(f) = self.screen_factor {
            if !(f >= 0.0) {
                return Err(Error::InvalidParameter("screen_factor must be >= 0".into()));
            }
        }
        match &self.stop {
            StopCriterion::MaxSeconds(s) if !(*s >= 0.0) => {
                return Err(Error::InvalidParameter("max_seconds must be >= 0".into()))
            }
            StopCriterion::GoalRegion { center, radius } => {
                sys.check_state(center)?;
                if !(*radius > 0.0) {
                    return Err(Error::InvalidParameter("goal radius must be positive".into()));
                }
            }
            _ => {}
        }
        self.steer.validate(sys.m)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub iterations: usize,
    pub vertices_added: usize,
    pub edges_added: usize,
    /// Cost-to-go improvements applied by tree updates.
    pub rewires: usize,
    pub skipped_iterations: usize,
    pub elapsed_secs: f64,
    pub vertex_count: usize,
    pub edge_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub vertex: VertexId,
    pub parent: VertexId,
    pub control: ControlVec,
    /// Distance from the new state to its nearest pre-existing vertex.
    pub clearance: f64,
}

/// Called after every build iteration with the store and the running report.
pub trait BuildObserver {
    fn on_iteration(&mut self, store: &Store, report: &BuildReport);
}

impl<F: FnMut(&Store, &BuildReport)> BuildObserver for F {
    fn on_iteration(&mut self, store: &Store, report: &BuildReport) {
        self(store, report)
    }
}

struct NoObserver;

impl BuildObserver for NoObserver {
    fn on_iteration(&mut self, _: &Store, _: &BuildReport) {}
}

/// Backward step from `parent` under `u`, then corrected so that the forward
/// replay lands on `parent`: Euler is not its own inverse, and the edge has to
/// be feasible for the forward dynamics.
pub fn backward_predecessor(sys: &SystemDef, store: &Store, parent: &[f64], u: &[f64]) -> Result<StateVec> {
    let integ = store.integrator();
    let mut x = step_backward(sys, integ, parent, u)?;
    let tol = store.eps_connect() * 1e-3;
    for _ in 0..8 {
        let reached = step_forward(sys, integ, &x, u)?;
        if store.distance(&reached, parent) < tol {
            break;
        }
        for i in 0..x.len() {
            x[i] += sys.space.axis_diff(i, parent[i], reached[i]);
        }
        sys.space.wrap_in_place(&mut x);
    }
    Ok(x)
}

fn stop_reached(store: &Store, stop: &StopCriterion, started: Instant) -> bool {
    match stop {
        StopCriterion::MaxSeconds(s) => started.elapsed().as_secs_f64() >= *s,
        StopCriterion::MaxVertices(n) => store.len() >= *n,
        StopCriterion::GoalRegion { center, radius } => store
            .nearest_with_distance(center, 1)
            .first()
            .is_some_and(|(_, d)| *d <= *radius),
    }
}

/// Runs the construction loop until the stop criterion holds.
pub fn build(store: &mut Store, sys: &SystemDef, cfg: &BuildConfig) -> Result<BuildReport> {
    build_with_observer(store, sys, cfg, &mut NoObserver)
}

pub fn build_with_observer(
    store: &mut Store,
    sys: &SystemDef,
    cfg: &BuildConfig,
    observer: &mut dyn BuildObserver,
) -> Result<BuildReport> {
    cfg.validate(sys)?;
    if store.is_empty() {
        return Err(Error::InvalidParameter("build needs a store holding the root".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut report = BuildReport::default();
    let mut failures = 0usize;
    while !stop_reached(store, &cfg.stop, started) && failures < cfg.max_failed_iterations {
        report.iterations += 1;
        match expand_backward(store, sys, cfg, &mut rng)? {
            Some(exp) => {
                failures = 0;
                report.vertices_added += 1;
                report.edges_added += 1;
                let (p, c) = find_connections(store, sys, cfg, exp.vertex, &mut rng)?;
                report.edges_added += p + c;
                report.rewires += update_tree(store, exp.vertex)?;
            }
            None => {
                failures += 1;
                report.skipped_iterations += 1;
            }
        }
        report.vertex_count = store.len();
        report.edge_count = store.edge_count();
        observer.on_iteration(store, &report);
    }
    report.vertex_count = store.len();
    report.edge_count = store.edge_count();
    report.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// One backward expansion. Returns `None` when every candidate leaves the
/// state box.
pub fn expand_backward<R: Rng + ?Sized>(
    store: &mut Store,
    sys: &SystemDef,
    cfg: &BuildConfig,
    rng: &mut R,
) -> Result<Option<Expansion>> {
    if store.is_empty() {
        return Err(Error::InvalidParameter("expansion needs a non-empty store".into()));
    }
    let sample = sys.space.sample(rng);
    let parent = store.nearest(&sample, 1)[0];
    let parent_state = store.state(parent).clone();

    let mut best: Option<(f64, StateVec, ControlVec)> = None;
    for _ in 0..cfg.controls_per_expand {
        let u = ControlVec::from(sys.control_bounds.sample(rng));
        let x = match backward_predecessor(sys, store, &parent_state, &u) {
            Ok(x) => x,
            Err(Error::IntegrationDiverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        if !sys.space.contains(&x) {
            continue;
        }
        let clearance = store.nearest_with_distance(&x, 1)[0].1;
        if best.as_ref().map_or(true, |(c, _, _)| clearance > *c) {
            best = Some((clearance, x, u));
        }
    }
    let Some((clearance, x, u)) = best else {
        return Ok(None);
    };
    let vertex = store.add_vertex(&x)?;
    let edge = match store.add_edge(sys, vertex, parent, &u) {
        Ok(e) => e.id(),
        // The corrected predecessor replays within tolerance except for
        // pathological fields; drop the vertex's tree link in that case.
        Err(Error::InfeasibleEdge { .. }) => {
            return Ok(Some(Expansion { vertex, parent, control: u, clearance }));
        }
        Err(e) => return Err(e),
    };
    if store.via(edge).is_finite() {
        store.adopt(edge);
    }
    Ok(Some(Expansion {
        vertex,
        parent,
        control: u,
        clearance,
    }))
}

/// Candidate vertices near a set of probe endpoints, ranked by distance to
/// the closest probe; each carries the probe control that came closest.
fn probe_candidates(
    store: &Store,
    probes: &[(StateVec, ControlVec)],
    exclude: VertexId,
    k: usize,
) -> Vec<(VertexId, ControlVec)> {
    let mut best: Vec<(f64, VertexId, usize)> = Vec::new();
    for (j, (p, _)) in probes.iter().enumerate() {
        for (v, d) in store.nearest_with_distance(p, k + 1) {
            if v == exclude {
                continue;
            }
            match best.iter_mut().find(|(_, w, _)| *w == v) {
                Some(entry) if d < entry.0 => {
                    entry.0 = d;
                    entry.2 = j;
                }
                Some(_) => {}
                None => best.push((d, v, j)),
            }
        }
    }
    best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    best.truncate(k);
    best.into_iter().map(|(_, v, j)| (v, probes[j].1.clone())).collect()
}

/// Searches for new parents (edges `v → c`) and children (edges `c → v`) of
/// `v`. Returns the number of parent and child edges added.
pub fn find_connections<R: Rng + ?Sized>(
    store: &mut Store,
    sys: &SystemDef,
    cfg: &BuildConfig,
    v: VertexId,
    rng: &mut R,
) -> Result<(usize, usize)> {
    store.check_vertex(v)?;
    let state = store.state(v).clone();
    let integ = *store.integrator();
    let eps = store.eps_connect();

    let mut controls: Vec<ControlVec> = vec![ControlVec::from(sys.control_bounds.center())];
    for _ in 0..cfg.controls_per_expand {
        controls.push(ControlVec::from(sys.control_bounds.sample(rng)));
    }
    let forward_probes: Vec<(StateVec, ControlVec)> = controls
        .iter()
        .filter_map(|u| step_forward(sys, &integ, &state, u).ok().map(|x| (x, u.clone())))
        .collect();
    let backward_probes: Vec<(StateVec, ControlVec)> = controls
        .iter()
        .filter_map(|u| step_backward(sys, &integ, &state, u).ok().map(|x| (x, u.clone())))
        .collect();

    let forward_model = cfg
        .screen_factor
        .and_then(|f| ReachModel::fit(&sys.space, &state, &forward_probes).map(|m| (f, m)));
    let backward_model = cfg
        .screen_factor
        .and_then(|f| ReachModel::fit(&sys.space, &state, &backward_probes).map(|m| (f, m)));
    // The affine estimate replaces the probe control as the steering seed;
    // `None` means the candidate is clearly out of one-step reach.
    let screen = |model: &Option<(f64, ReachModel)>, target: &[f64], seed: ControlVec| -> Option<ControlVec> {
        match model {
            None => Some(seed),
            Some((factor, m)) => {
                let est = m.estimate(&sys.space, &state, target, &sys.control_bounds);
                (est.residual <= eps + factor * m.fit_err()).then_some(est.control)
            }
        }
    };

    let mut parents = 0;
    for (cand, seed) in probe_candidates(store, &forward_probes, v, cfg.k_parents) {
        let target = store.state(cand).clone();
        let Some(seed) = screen(&forward_model, &target, seed) else {
            continue;
        };
        let res = steer_search(sys, &integ, &cfg.steer, eps, &state, &target, Direction::Forward, Some(&seed), rng)?;
        if res.residual < eps {
            if let Ok(EdgeInsert::Added(_)) = store.add_edge(sys, v, cand, &res.control) {
                parents += 1;
            }
        }
    }
    let mut children = 0;
    for (cand, seed) in probe_candidates(store, &backward_probes, v, cfg.k_children) {
        // Steer forward from the child so the edge is feasible for f⁺ itself.
        let from = store.state(cand).clone();
        let Some(seed) = screen(&backward_model, &from, seed) else {
            continue;
        };
        let res = steer_search(sys, &integ, &cfg.steer, eps, &from, &state, Direction::Forward, Some(&seed), rng)?;
        if res.residual < eps {
            if let Ok(EdgeInsert::Added(_)) = store.add_edge(sys, cand, v, &res.control) {
                children += 1;
            }
        }
    }
    Ok((parents, children))
}

/// Adopts the best improving out-edge of `v`, then pushes the improvement to
/// every in-neighbour that would gain from descending through `v`,
/// recursively. Returns the number of distinct vertices whose cost-to-go fell.
pub fn update_tree(store: &mut Store, v: VertexId) -> Result<usize> {
    store.check_vertex(v)?;
    let root = store.root();
    let mut improved = vec![false; store.len()];
    let mut stack = vec![v];
    while let Some(w) = stack.pop() {
        if w != root {
            let before = store.cost_to_go(w);
            let mut best: Option<(f64, _)> = None;
            for &e in &store.vertex(w).out_edges {
                let j = store.via(e);
                if j < best.map_or(before, |(b, _)| b) {
                    best = Some((j, e));
                }
            }
            if let Some((_, e)) = best {
                store.adopt(e);
                improved[w.0] = true;
            }
        }
        let jw = store.cost_to_go(w);
        if !jw.is_finite() {
            continue;
        }
        // Reverse so the first in-edge is processed first, as in a recursive walk.
        for &e in store.vertex(w).in_edges.iter().rev() {
            let edge = store.edge(e);
            if edge.cost + jw < store.cost_to_go(edge.from) {
                stack.push(edge.from);
            }
        }
    }
    Ok(improved.iter().filter(|b| **b).count())
}
