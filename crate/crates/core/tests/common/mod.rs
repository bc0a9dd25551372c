#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::PathBuf;

use valuetree::builder::{build, BuildConfig, BuildReport, StopCriterion};
use valuetree::dynamics::{IntegratorConfig, SystemDef};
use valuetree::graph::{Store, StoreConfig};
use valuetree::systems::{self, SingleIntegratorConfig};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn si() -> SystemDef {
    systems::single_integrator(&SingleIntegratorConfig::default())
}

pub fn si_store(vertices: usize, seed: u64) -> (SystemDef, Store, BuildReport) {
    let sys = si();
    let mut store = Store::new(&sys, StoreConfig::new(IntegratorConfig::with_step(0.5)));
    let report = build(
        &mut store,
        &sys,
        &BuildConfig {
            stop: StopCriterion::MaxVertices(vertices),
            rng_seed: seed,
            ..Default::default()
        },
    )
    .unwrap();
    (sys, store, report)
}

/// Pendulum-shaped store with the step and tolerance used for swing-up.
pub fn pendulum_store(sys: &SystemDef, vertices: usize, seed: u64) -> (Store, BuildReport) {
    let mut cfg = StoreConfig::new(IntegratorConfig::with_step(0.1));
    cfg.eps_connect = 0.03;
    let mut store = Store::new(sys, cfg);
    let report = build(
        &mut store,
        sys,
        &BuildConfig {
            stop: StopCriterion::MaxVertices(vertices),
            rng_seed: seed,
            ..Default::default()
        },
    )
    .unwrap();
    (store, report)
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Shortest cost from every vertex to the root over the current edge costs,
/// by Dijkstra on the reversed graph. Sums are formed as `edge + rest`.
pub fn dijkstra_to_root(store: &Store) -> Vec<f64> {
    let n = store.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let root = store.root().0;
    dist[root] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry(0.0, root));
    while let Some(Entry(d, v)) = heap.pop() {
        if done[v] {
            continue;
        }
        done[v] = true;
        for &e in &store.vertices()[v].in_edges {
            let edge = store.edge(e);
            if !edge.cost.is_finite() {
                continue;
            }
            let cand = edge.cost + d;
            let u = edge.from.0;
            if cand < dist[u] {
                dist[u] = cand;
                heap.push(Entry(cand, u));
            }
        }
    }
    dist
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}
