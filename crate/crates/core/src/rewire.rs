//! Online problem modification over a frozen graph.
//!
//! Constraints only ever touch edge costs: an edge whose source state lies in
//! an obstacle, or whose control leaves the tightened control box, costs
//! `+∞`; all other edges get either the override cost or their stored base
//! cost. Vertices and edges are never removed, so clearing the constraints
//! restores the original problem exactly. The tree is then rebuilt from
//! scratch: hop-minimal paths first, then Bellman-Ford sweeps in vertex-id
//! order until nothing changes.

use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_forward, BoxBounds, IntegratorConfig, StageCost, SystemDef};
use crate::error::{check_version, Error, Result};
use crate::graph::{Store, VertexId};
use crate::systems::{inside_obstacle, ObstacleSet};

pub const CONSTRAINT_FORMAT_MAJOR: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default)]
    pub obstacles: ObstacleSet,
    /// Tightened control box; must lie inside the system's control box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_limit_override: Option<BoxBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_override: Option<StageCost>,
    /// Existing vertex to use as the new root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_override: Option<VertexId>,
    /// Also test the intermediate quadrature states of every edge against the
    /// obstacles, not just the source state.
    #[serde(default)]
    pub dense_edge_check: bool,
}

impl ConstraintSet {
    pub fn validate(&self, store: &Store, sys: &SystemDef) -> Result<()> {
        for b in &self.obstacles.boxes {
            if b.dim() != sys.n {
                return Err(Error::DimensionMismatch {
                    what: "obstacle box",
                    expected: sys.n,
                    got: b.dim(),
                });
            }
        }
        if !self.obstacles.walls.is_empty() && sys.n < 2 {
            return Err(Error::InvalidParameter("wall segments need a state dimension >= 2".into()));
        }
        if let Some(lim) = &self.control_limit_override {
            if lim.dim() != sys.m {
                return Err(Error::DimensionMismatch {
                    what: "control limit override",
                    expected: sys.m,
                    got: lim.dim(),
                });
            }
            if !lim.is_subset_of(&sys.control_bounds) {
                return Err(Error::InvalidParameter(
                    "control limit override must lie inside the control bounds".into(),
                ));
            }
        }
        if let Some(StageCost::Quadratic {
            state_weights,
            control_weights,
        }) = &self.cost_override
        {
            if state_weights.len() != sys.n || control_weights.len() != sys.m {
                return Err(Error::DimensionMismatch {
                    what: "cost override weights",
                    expected: sys.n + sys.m,
                    got: state_weights.len() + control_weights.len(),
                });
            }
        }
        if let Some(g) = self.goal_override {
            store.check_vertex(g)?;
        }
        Ok(())
    }
}

/// On-disk constraint file: the [`ConstraintSet`] fields plus a version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFile {
    pub format_version: String,
    #[serde(flatten)]
    pub constraints: ConstraintSet,
}

pub fn load_constraints(path: &Path) -> Result<ConstraintSet> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(v) => check_version(v, CONSTRAINT_FORMAT_MAJOR)?,
        None => return Err(Error::Schema("constraint file lacks format_version".into())),
    }
    let file: ConstraintFile =
        serde_json::from_value(value).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    Ok(file.constraints)
}

pub fn save_constraints(cs: &ConstraintSet, path: &Path) -> Result<()> {
    let file = ConstraintFile {
        format_version: format!("{CONSTRAINT_FORMAT_MAJOR}.0"),
        constraints: cs.clone(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn edge_path_hits(obs: &ObstacleSet, sys: &SystemDef, integ: &IntegratorConfig, x: &[f64], u: &[f64]) -> bool {
    let sub = IntegratorConfig {
        step_dt: integ.step_dt / integ.substeps() as f64,
        sub_dt: integ.step_dt / integ.substeps() as f64,
    };
    let mut state = x.to_vec();
    for _ in 0..integ.substeps() {
        match step_forward(sys, &sub, &state, u) {
            Ok(next) => state = next.to_vec(),
            Err(_) => return true,
        }
        if inside_obstacle(obs, &state) {
            return true;
        }
    }
    false
}

/// Recomputes every edge cost under `cs` and sets the root. Returns the
/// number of edges whose cost is now `+∞`.
pub fn apply_constraints(store: &mut Store, sys: &SystemDef, cs: &ConstraintSet) -> Result<usize> {
    cs.validate(store, sys)?;
    let integ = *store.integrator();
    let mut infinite = 0;
    for i in 0..store.edges.len() {
        let edge = &store.edges[i];
        let src = &store.vertices[edge.from.0].state;
        let blocked = inside_obstacle(&cs.obstacles, src)
            || cs
                .control_limit_override
                .as_ref()
                .is_some_and(|lim| !lim.contains(&edge.control))
            || (cs.dense_edge_check && edge_path_hits(&cs.obstacles, sys, &integ, src, &edge.control));
        let cost = if blocked {
            f64::INFINITY
        } else if let Some(g) = &cs.cost_override {
            g.eval(src, &edge.control)
        } else {
            edge.base_cost
        };
        if cost == f64::INFINITY {
            infinite += 1;
        }
        store.edges[i].cost = cost;
    }
    store.root = cs.goal_override.unwrap_or(VertexId::ROOT);
    Ok(infinite)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RebuildReport {
    /// Full relaxation sweeps, including the final one that changed nothing.
    pub sweeps: usize,
    pub reachable: usize,
}

/// Discards the tree and rebuilds it from the current edge costs.
pub fn rebuild_tree(store: &mut Store) -> RebuildReport {
    let n = store.len();
    let root = store.root;
    for i in 0..n {
        store.detach(VertexId(i));
    }
    store.vertices[root.0].cost_to_go = 0.0;

    // Phase 1: fewest-hop paths to the root over finite-cost edges.
    let mut seen = vec![false; n];
    seen[root.0] = true;
    let mut queue = VecDeque::from([root]);
    let mut reachable = 1;
    while let Some(w) = queue.pop_front() {
        for k in 0..store.vertices[w.0].in_edges.len() {
            let e = store.vertices[w.0].in_edges[k];
            let edge = &store.edges[e.0];
            let s = edge.from;
            if seen[s.0] || !edge.cost.is_finite() {
                continue;
            }
            seen[s.0] = true;
            store.adopt(e);
            reachable += 1;
            queue.push_back(s);
        }
    }

    // Phase 2: relax until a sweep changes nothing.
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut changed = false;
        for i in 0..n {
            if VertexId(i) == root {
                continue;
            }
            for k in 0..store.vertices[i].out_edges.len() {
                let e = store.vertices[i].out_edges[k];
                if store.via(e) < store.vertices[i].cost_to_go {
                    store.adopt(e);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    RebuildReport { sweeps, reachable }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModifyReport {
    pub edges_infinite: usize,
    pub reachable: usize,
    pub unreachable: usize,
    pub sweeps: usize,
    pub elapsed_secs: f64,
}

/// [`apply_constraints`] followed by [`rebuild_tree`].
pub fn modify(store: &mut Store, sys: &SystemDef, cs: &ConstraintSet) -> Result<ModifyReport> {
    let started = Instant::now();
    let edges_infinite = apply_constraints(store, sys, cs)?;
    let rebuild = rebuild_tree(store);
    Ok(ModifyReport {
        edges_infinite,
        reachable: rebuild.reachable,
        unreachable: store.len() - rebuild.reachable,
        sweeps: rebuild.sweeps,
        elapsed_secs: started.elapsed().as_secs_f64(),
    })
}
