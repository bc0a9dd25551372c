//! Store files.
//!
//! A store file is a single JSON document:
//!
//! ```text
//! {
//!   "format_version": "1.0",
//!   "system_name": "pendulum",
//!   "system_params": {...},              // opaque, written by the caller
//!   "space": {"bounds": {"lo": [..], "hi": [..]}, "wrap": [..]},
//!   "integrator": {"step_dt": .., "sub_dt": ..},
//!   "eps_connect": 0.001,
//!   "dedup_tol": 1e-6,
//!   "root": 0,
//!   "vertices": [{"state": [..], "cost_to_go": 1.5 | "inf", "tree_edge": 3 | null}, ...],
//!   "edges": [{"from": 1, "to": 0, "control": [..], "cost": 0.1 | "inf", "base_cost": 0.1}, ...]
//! }
//! ```
//!
//! Numbers are written in shortest round-trip form, so a load/save cycle
//! reproduces every value bit for bit. Infinite costs are the string `"inf"`.
//! Adjacency lists are not stored; they are rebuilt from the edge array in
//! edge-id order.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{EdgeId, Store, StoreConfig, StoreMeta, VertexId};
use crate::dynamics::{ControlVec, IntegratorConfig, StateSpace, StateVec};
use crate::error::{check_version, Error, Result};

pub const STORE_FORMAT_MAJOR: u32 = 1;

pub(crate) mod cost_serde {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            Err(serde::ser::Error::custom(format!("cost {v} is neither finite nor +inf")))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad cost literal {t:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct VertexRow {
    state: StateVec,
    #[serde(with = "cost_serde")]
    cost_to_go: f64,
    tree_edge: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    from: usize,
    to: usize,
    control: ControlVec,
    #[serde(with = "cost_serde")]
    cost: f64,
    #[serde(with = "cost_serde")]
    base_cost: f64,
}

/// On-disk representation of a [`Store`].
#[derive(Serialize, Deserialize)]
pub struct StoreFile {
    format_version: String,
    system_name: String,
    #[serde(default)]
    system_params: serde_json::Value,
    space: StateSpace,
    integrator: IntegratorConfig,
    eps_connect: f64,
    dedup_tol: f64,
    root: usize,
    vertices: Vec<VertexRow>,
    edges: Vec<EdgeRow>,
}

impl StoreFile {
    pub fn from_store(store: &Store) -> Self {
        Self {
            format_version: format!("{STORE_FORMAT_MAJOR}.0"),
            system_name: store.meta.system_name.clone(),
            system_params: store.meta.system_params.clone(),
            space: store.space.clone(),
            integrator: store.config.integrator,
            eps_connect: store.config.eps_connect,
            dedup_tol: store.config.dedup_tol,
            root: store.root.0,
            vertices: store
                .vertices
                .iter()
                .map(|v| VertexRow {
                    state: v.state.clone(),
                    cost_to_go: v.cost_to_go,
                    tree_edge: v.tree_edge.map(|e| e.0),
                })
                .collect(),
            edges: store
                .edges
                .iter()
                .map(|e| EdgeRow {
                    from: e.from.0,
                    to: e.to.0,
                    control: e.control.clone(),
                    cost: e.cost,
                    base_cost: e.base_cost,
                })
                .collect(),
        }
    }

    pub fn into_store(self) -> Result<Store> {
        check_version(&self.format_version, STORE_FORMAT_MAJOR)?;
        let corrupt = |m: String| Error::CorruptFile(m);
        let n = self.space.dim();
        if self.space.wrap.len() != n {
            return Err(corrupt("wrap mask length differs from state dimension".into()));
        }
        self.integrator.validate()?;
        let mut store = Store::empty(
            self.space,
            StoreConfig {
                integrator: self.integrator,
                eps_connect: self.eps_connect,
                dedup_tol: self.dedup_tol,
            },
            StoreMeta {
                system_name: self.system_name,
                system_params: self.system_params,
            },
        );
        let nv = self.vertices.len();
        if self.root >= nv {
            return Err(corrupt(format!("root {} out of range ({nv} vertices)", self.root)));
        }
        store.root = VertexId(self.root);
        for (i, row) in self.vertices.iter().enumerate() {
            if row.state.len() != n || !row.state.is_finite() {
                return Err(corrupt(format!("vertex {i} has a malformed state")));
            }
            store.push_vertex(row.state.clone(), row.cost_to_go);
        }
        let m = self.edges.first().map(|e| e.control.len());
        for (i, row) in self.edges.into_iter().enumerate() {
            if row.from >= nv || row.to >= nv || row.from == row.to {
                return Err(corrupt(format!("edge {i} has bad endpoints {}->{}", row.from, row.to)));
            }
            if Some(row.control.len()) != m {
                return Err(corrupt(format!("edge {i} has a control of the wrong length")));
            }
            let e = store.push_edge(VertexId(row.from), VertexId(row.to), row.control, row.cost);
            store.edges[e.0].base_cost = row.base_cost;
        }
        for (i, row) in self.vertices.iter().enumerate() {
            if let Some(e) = row.tree_edge {
                if e >= store.edges.len() || store.edges[e].from != VertexId(i) {
                    return Err(corrupt(format!("vertex {i} has tree edge {e} that does not leave it")));
                }
                store.vertices[i].tree_edge = Some(EdgeId(e));
            }
        }
        Ok(store)
    }
}

pub fn serialize(store: &Store, path: &Path) -> Result<()> {
    let text = to_string(store)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn to_string(store: &Store) -> Result<String> {
    let mut text = serde_json::to_string(&StoreFile::from_store(store))
        .map_err(|e| Error::CorruptFile(format!("serialize: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn deserialize(path: &Path) -> Result<Store> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    from_str(&text)
}

pub(crate) fn from_str(text: &str) -> Result<Store> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CorruptFile(format!("parse: {e}")))?;
    match value.get("format_version").and_then(|v| v.as_str()) {
        Some(v) => check_version(v, STORE_FORMAT_MAJOR)?,
        None => return Err(Error::CorruptFile("missing format_version".into())),
    }
    let file: StoreFile =
        serde_json::from_value(value).map_err(|e| Error::CorruptFile(format!("schema: {e}")))?;
    file.into_store()
}
