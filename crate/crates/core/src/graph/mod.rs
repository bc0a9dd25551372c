//! The graph/tree store.
//!
//! One structure holds both the directed graph of dynamically connected
//! sampled states and the spanning tree that carries cost-to-go. Each vertex
//! owns at most one outgoing *tree edge*, which is always one of its graph
//! out-edges. Edge direction is always forward in time: applying
//! `edge.control` at `state(from)` for one macro step lands on `state(to)`.

mod index;
mod io;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use index::NnIndex;
pub use io::{deserialize, serialize, StoreFile, STORE_FORMAT_MAJOR};

use crate::dynamics::{step_forward, ControlVec, IntegratorConfig, StateSpace, StateVec, SystemDef};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub usize);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl VertexId {
    pub const ROOT: VertexId = VertexId(0);
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEdge {
    pub from: VertexId,
    pub to: VertexId,
    pub control: ControlVec,
    /// Current stage cost; `+∞` when a constraint disables the edge.
    pub cost: f64,
    /// Stage cost under the unconstrained problem.
    pub base_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexRecord {
    pub state: StateVec,
    pub cost_to_go: f64,
    pub tree_edge: Option<EdgeId>,
    pub out_edges: Vec<EdgeId>,
    pub in_edges: Vec<EdgeId>,
}

/// Opaque system description carried in the store header so a store can be
/// paired with the system it was built on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub system_name: String,
    #[serde(default)]
    pub system_params: serde_json::Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub integrator: IntegratorConfig,
    /// Maximum forward-replay residual for an edge to count as feasible.
    pub eps_connect: f64,
    /// Controls closer than this on the same (from, to) pair are duplicates.
    pub dedup_tol: f64,
}

impl StoreConfig {
    pub fn new(integrator: IntegratorConfig) -> Self {
        Self {
            integrator,
            eps_connect: 1e-3,
            dedup_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeInsert {
    Added(EdgeId),
    /// An edge on the same pair with a near-identical control already exists.
    Duplicate(EdgeId),
}

impl EdgeInsert {
    pub fn id(self) -> EdgeId {
        match self {
            EdgeInsert::Added(e) | EdgeInsert::Duplicate(e) => e,
        }
    }

    pub fn is_new(self) -> bool {
        matches!(self, EdgeInsert::Added(_))
    }
}

#[derive(Clone, Debug)]
pub struct Store {
    pub(crate) space: StateSpace,
    pub(crate) config: StoreConfig,
    pub(crate) meta: StoreMeta,
    pub(crate) root: VertexId,
    pub(crate) vertices: Vec<VertexRecord>,
    pub(crate) edges: Vec<GraphEdge>,
    pub(crate) index: NnIndex,
}

impl PartialEq for Store {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space
            && self.config == other.config
            && self.meta == other.meta
            && self.root == other.root
            && self.vertices == other.vertices
            && self.edges == other.edges
    }
}

impl Store {
    /// A store holding only the root vertex at the terminal state, `J = 0`.
    pub fn new(sys: &SystemDef, config: StoreConfig) -> Self {
        let mut store = Self::empty(sys.space.clone(), config, StoreMeta {
            system_name: sys.name.clone(),
            system_params: serde_json::Value::Null,
        });
        let mut root = sys.terminal_state.clone();
        store.space.wrap_in_place(&mut root);
        store.push_vertex(root, 0.0);
        store
    }

    pub(crate) fn empty(space: StateSpace, config: StoreConfig, meta: StoreMeta) -> Self {
        let index = NnIndex::new(space.clone());
        Self {
            space,
            config,
            meta,
            root: VertexId::ROOT,
            vertices: Vec::new(),
            edges: Vec::new(),
            index,
        }
    }

    fn push_vertex(&mut self, state: StateVec, cost_to_go: f64) -> VertexId {
        let id = self.index.insert(&state);
        debug_assert_eq!(id, self.vertices.len());
        self.vertices.push(VertexRecord {
            state,
            cost_to_go,
            tree_edge: None,
            out_edges: Vec::new(),
            in_edges: Vec::new(),
        });
        VertexId(id)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn integrator(&self) -> &IntegratorConfig {
        &self.config.integrator
    }

    pub fn eps_connect(&self) -> f64 {
        self.config.eps_connect
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn set_meta(&mut self, meta: StoreMeta) {
        self.meta = meta;
    }

    pub fn root(&self) -> VertexId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, v: VertexId) -> &VertexRecord {
        &self.vertices[v.0]
    }

    pub fn vertices(&self) -> &[VertexRecord] {
        &self.vertices
    }

    pub fn edge(&self, e: EdgeId) -> &GraphEdge {
        &self.edges[e.0]
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn state(&self, v: VertexId) -> &StateVec {
        &self.vertices[v.0].state
    }

    pub fn cost_to_go(&self, v: VertexId) -> f64 {
        self.vertices[v.0].cost_to_go
    }

    pub fn cost_to_go_all(&self) -> Vec<f64> {
        self.vertices.iter().map(|v| v.cost_to_go).collect()
    }

    pub fn tree_edge(&self, v: VertexId) -> Option<EdgeId> {
        self.vertices[v.0].tree_edge
    }

    pub fn contains(&self, v: VertexId) -> bool {
        v.0 < self.vertices.len()
    }

    pub(crate) fn check_vertex(&self, v: VertexId) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::UnknownVertex(v.0))
        }
    }

    /// Adds an unwired vertex (`J = +∞`).
    pub fn add_vertex(&mut self, x: &[f64]) -> Result<VertexId> {
        if x.len() != self.space.dim() {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.space.dim(),
                got: x.len(),
            });
        }
        if !x.iter().all(|c| c.is_finite()) || !self.space.contains(x) {
            return Err(Error::OutOfBounds { state: x.to_vec() });
        }
        let mut state = StateVec::from_slice(x);
        self.space.wrap_in_place(&mut state);
        Ok(self.push_vertex(state, f64::INFINITY))
    }

    /// Forward-replay residual of a prospective edge.
    pub fn edge_residual(&self, sys: &SystemDef, from: VertexId, to: VertexId, control: &[f64]) -> Result<f64> {
        self.check_vertex(from)?;
        self.check_vertex(to)?;
        let reached = step_forward(sys, &self.config.integrator, self.state(from), control)?;
        Ok(self.space.distance(&reached, self.state(to)))
    }

    /// Adds a graph edge after checking dynamic feasibility within `eps_connect`.
    pub fn add_edge(&mut self, sys: &SystemDef, from: VertexId, to: VertexId, control: &[f64]) -> Result<EdgeInsert> {
        sys.check_control(control)?;
        if from == to {
            return Err(Error::InvalidParameter(format!("self edge on {from}")));
        }
        let residual = self.edge_residual(sys, from, to, control)?;
        if !(residual < self.config.eps_connect) {
            return Err(Error::InfeasibleEdge {
                from: from.0,
                to: to.0,
                residual,
                tolerance: self.config.eps_connect,
            });
        }
        if let Some(dup) = self.find_duplicate(from, to, control) {
            return Ok(EdgeInsert::Duplicate(dup));
        }
        let cost = sys.stage_cost(self.state(from), control);
        Ok(EdgeInsert::Added(self.push_edge(from, to, ControlVec::from_slice(control), cost)))
    }

    fn find_duplicate(&self, from: VertexId, to: VertexId, control: &[f64]) -> Option<EdgeId> {
        let tol_sq = self.config.dedup_tol * self.config.dedup_tol;
        self.vertices[from.0].out_edges.iter().copied().find(|&e| {
            let edge = &self.edges[e.0];
            edge.to == to
                && edge
                    .control
                    .iter()
                    .zip(control)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    <= tol_sq
        })
    }

    pub(crate) fn push_edge(&mut self, from: VertexId, to: VertexId, control: ControlVec, cost: f64) -> EdgeId {
        let id = EdgeId(self.edges.len());
        self.edges.push(GraphEdge {
            from,
            to,
            control,
            cost,
            base_cost: cost,
        });
        self.vertices[from.0].out_edges.push(id);
        self.vertices[to.0].in_edges.push(id);
        id
    }

    /// Overwrites an edge's current cost (base cost is untouched).
    pub fn set_edge_cost(&mut self, e: EdgeId, cost: f64) {
        self.edges[e.0].cost = cost;
    }

    /// Makes `e` the tree edge of its source and sets `J = cost(e) + J(to)`.
    pub(crate) fn adopt(&mut self, e: EdgeId) {
        let edge = &self.edges[e.0];
        let j = edge.cost + self.vertices[edge.to.0].cost_to_go;
        let v = &mut self.vertices[edge.from.0];
        v.tree_edge = Some(e);
        v.cost_to_go = j;
    }

    pub(crate) fn detach(&mut self, v: VertexId) {
        let rec = &mut self.vertices[v.0];
        rec.tree_edge = None;
        rec.cost_to_go = f64::INFINITY;
    }

    /// Value obtained by routing `v` through `e` (which must leave `v`).
    #[inline]
    pub(crate) fn via(&self, e: EdgeId) -> f64 {
        let edge = &self.edges[e.0];
        edge.cost + self.vertices[edge.to.0].cost_to_go
    }

    /// The k metric-nearest vertices, ties broken by lower id.
    pub fn nearest(&self, x: &[f64], k: usize) -> Vec<VertexId> {
        self.index.nearest(x, k).into_iter().map(|(id, _)| VertexId(id)).collect()
    }

    pub fn nearest_with_distance(&self, x: &[f64], k: usize) -> Vec<(VertexId, f64)> {
        self.index.nearest(x, k).into_iter().map(|(id, d)| (VertexId(id), d)).collect()
    }

    /// Vertices strictly within `radius` of `x`.
    pub fn within(&self, x: &[f64], radius: f64) -> Vec<(VertexId, f64)> {
        self.index.within(x, radius).into_iter().map(|(id, d)| (VertexId(id), d)).collect()
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.space.distance(a, b)
    }

    /// Follows tree edges from `v` to the root; `None` if `v` is unwired.
    pub fn tree_path(&self, v: VertexId) -> Option<Vec<VertexId>> {
        let mut path = vec![v];
        let mut cur = v;
        while cur != self.root {
            let e = self.vertices[cur.0].tree_edge?;
            cur = self.edges[e.0].to;
            if path.len() > self.vertices.len() {
                return None;
            }
            path.push(cur);
        }
        Some(path)
    }

    /// Checks every structural invariant of the store. With `sys`, also
    /// replays each edge to confirm feasibility.
    pub fn check_invariants(&self, sys: Option<&SystemDef>) -> std::result::Result<(), String> {
        let root = &self.vertices[self.root.0];
        if root.cost_to_go != 0.0 || root.tree_edge.is_some() {
            return Err(format!("root {} must have J=0 and no tree edge", self.root));
        }
        for (i, v) in self.vertices.iter().enumerate() {
            let id = VertexId(i);
            if id == self.root {
                continue;
            }
            match v.tree_edge {
                Some(e) => {
                    if !v.out_edges.contains(&e) {
                        return Err(format!("{id}: tree edge {e:?} is not an out-edge"));
                    }
                    let want = self.via(e);
                    if v.cost_to_go != want {
                        return Err(format!("{id}: J={} but edge cost + parent J = {}", v.cost_to_go, want));
                    }
                }
                None => {
                    if v.cost_to_go.is_finite() {
                        return Err(format!("{id}: finite J={} without a tree edge", v.cost_to_go));
                    }
                }
            }
            if v.cost_to_go.is_finite() && self.tree_path(id).is_none() {
                return Err(format!("{id}: tree path does not reach the root"));
            }
        }
        // acyclicity over every vertex holding a tree edge
        let mut state = vec![0u8; self.vertices.len()];
        for start in 0..self.vertices.len() {
            let mut stack = Vec::new();
            let mut cur = start;
            while state[cur] == 0 {
                state[cur] = 1;
                stack.push(cur);
                match self.vertices[cur].tree_edge {
                    Some(e) => cur = self.edges[e.0].to.0,
                    None => break,
                }
                if state[cur] == 1 {
                    return Err(format!("tree cycle through v{cur}"));
                }
            }
            for s in stack {
                state[s] = 2;
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if !(e.base_cost >= 0.0) || !(e.cost >= 0.0) {
                return Err(format!("edge {i} has negative cost"));
            }
            if e.from == e.to {
                return Err(format!("edge {i} is a self edge"));
            }
            if let Some(sys) = sys {
                let r = self
                    .edge_residual(sys, e.from, e.to, &e.control)
                    .map_err(|err| err.to_string())?;
                if !(r < self.config.eps_connect) {
                    return Err(format!("edge {i} replay residual {r:e}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::step_backward;
    use crate::systems::{self, SingleIntegratorConfig};

    fn si() -> SystemDef {
        systems::single_integrator(&SingleIntegratorConfig {
            step_dt: 0.1,
            ..Default::default()
        })
    }

    fn si_store() -> (SystemDef, Store) {
        let sys = si();
        let store = Store::new(&sys, StoreConfig::new(IntegratorConfig::with_step(0.1)));
        (sys, store)
    }

    #[test]
    fn fresh_store_is_root_only() {
        let sys = systems::pendulum(4.0).unwrap();
        let store = Store::new(&sys, StoreConfig::new(IntegratorConfig::with_step(0.1)));
        assert_eq!(store.len(), 1);
        assert_eq!(store.state(VertexId::ROOT).as_slice(), &[0.0, 0.0]);
        assert_eq!(store.cost_to_go(VertexId::ROOT), 0.0);
        assert_eq!(store.nearest(&[0.0, 0.0], 1), vec![VertexId::ROOT]);
        assert_eq!(store.nearest(&[2.0, 3.0], 1), vec![VertexId::ROOT]);
        store.check_invariants(Some(&sys)).unwrap();
    }

    #[test]
    fn add_vertex_and_query() {
        let (_, mut store) = si_store();
        let v = store.add_vertex(&[1.0, 1.0]).unwrap();
        assert_eq!(v, VertexId(1));
        assert_eq!(store.cost_to_go(v), f64::INFINITY);
        assert_eq!(store.nearest(&[0.9, 0.9], 1), vec![v]);
        assert!(matches!(store.add_vertex(&[6.0, 0.0]), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn add_edge_feasibility() {
        let (sys, mut store) = si_store();
        let a = store.add_vertex(&[1.0, 0.0]).unwrap();
        let b = store.add_vertex(&[0.9, 0.0]).unwrap();
        let e = store.add_edge(&sys, a, b, &[-1.0, 0.0]).unwrap();
        assert!(e.is_new());
        assert!((store.edge(e.id()).cost - 0.1).abs() < 1e-15);
        match store.add_edge(&sys, a, b, &[1.0, 0.0]) {
            Err(Error::InfeasibleEdge { residual, .. }) => assert!((residual - 0.2).abs() < 1e-12),
            other => panic!("expected infeasible edge, got {other:?}"),
        }
        // near-identical control is a duplicate
        let dup = store.add_edge(&sys, a, b, &[-1.0 + 1e-9, 0.0]).unwrap();
        assert_eq!(dup, EdgeInsert::Duplicate(e.id()));
        assert_eq!(store.edge_count(), 1);
        assert!(store.add_edge(&sys, a, a, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn pendulum_round_trip_edge_is_accepted() {
        let sys = systems::pendulum(4.0).unwrap();
        let cfg = IntegratorConfig::new(0.1, 0.001).unwrap();
        let mut store = Store::new(&sys, StoreConfig::new(cfg));
        let u = [1.3];
        let parent_state = [0.4, -0.7];
        let p = store.add_vertex(&parent_state).unwrap();
        let child_state = step_backward(&sys, &cfg, &parent_state, &u).unwrap();
        let c = store.add_vertex(&child_state).unwrap();
        let residual = store.edge_residual(&sys, c, p, &u).unwrap();
        // first-order Euler round trip: residual ~ step_dt * sub_dt * |∂F/∂x| |F|
        assert!(residual < 0.1 * 0.001 * 5.0, "residual {residual}");
        assert!(store.add_edge(&sys, c, p, &u).unwrap().is_new());
    }

    #[test]
    fn tree_invariant_checker_catches_inconsistency() {
        let (sys, mut store) = si_store();
        let a = store.add_vertex(&[0.1, 0.0]).unwrap();
        let e = store.add_edge(&sys, a, VertexId::ROOT, &[-1.0, 0.0]).unwrap().id();
        store.adopt(e);
        store.check_invariants(Some(&sys)).unwrap();
        store.vertices[a.0].cost_to_go = 5.0;
        assert!(store.check_invariants(None).is_err());
    }
}
