//! Transmission-network data model: nodes, lines, generators.
//!
//! A [`GridModel`] is immutable after load and safe to share across threads.
//! The on-disk format is TOML with top-level keys `base_mva`, `nodes`,
//! `lines` and `generators`.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("failed to read grid file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed grid file: {0}")]
    Parse(String),
    #[error("invalid grid: {0}")]
    Validation(String),
    #[error("unknown node: {0}")]
    UnknownNode(String),
}

/// One generator with a quadratic cost model `c0 + c1*P + c2*P^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: String,
    pub node: String,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub p_max: f64,
}

/// A transmission line between two nodes. Susceptance is in p.u. on the
/// system base; the thermal limit is in MW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub b_pu: f64,
    pub s_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeRecord {
    id: String,
    #[serde(default, rename = "ref")]
    is_ref: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridFile {
    base_mva: f64,
    nodes: Vec<NodeRecord>,
    #[serde(default)]
    lines: Vec<Line>,
    #[serde(default)]
    generators: Vec<GeneratorSpec>,
}

/// Validated network model. Node, line and generator order is the file
/// order (after parallel-line merging), and all cross-references are
/// resolved to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub base_mva: f64,
    pub nodes: Vec<String>,
    pub ref_node: usize,
    pub lines: Vec<Line>,
    pub generators: Vec<GeneratorSpec>,
    line_ends: Vec<(usize, usize)>,
    gen_nodes: Vec<usize>,
    adjacency: Vec<BTreeSet<usize>>,
}

impl GridModel {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_gens(&self) -> usize {
        self.generators.len()
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id)
    }

    /// Endpoint indices of line `l` as (from, to).
    pub fn line_endpoints(&self, l: usize) -> (usize, usize) {
        self.line_ends[l]
    }

    /// Node index the generator `g` is connected to.
    pub fn gen_node(&self, g: usize) -> usize {
        self.gen_nodes[g]
    }

    /// Effective susceptance of line `l` in MW per radian.
    pub fn b_eff(&self, l: usize) -> f64 {
        self.lines[l].b_pu * self.base_mva
    }

    /// Indices of nodes adjacent to node index `i`.
    pub fn adjacent(&self, i: usize) -> &BTreeSet<usize> {
        &self.adjacency[i]
    }

    /// Generators connected to node index `i`.
    pub fn gens_at(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.gen_nodes
            .iter()
            .enumerate()
            .filter_map(move |(g, &n)| (n == i).then_some(g))
    }

    /// Set of node ids adjacent to the node with identifier `id`.
    pub fn adjacency_of(&self, id: &str) -> Result<BTreeSet<&str>, GridError> {
        let i = self
            .node_index(id)
            .ok_or_else(|| GridError::UnknownNode(id.to_string()))?;
        Ok(self.adjacency[i]
            .iter()
            .map(|&j| self.nodes[j].as_str())
            .collect())
    }

    /// Serialize back to the grid file schema. Loading the result yields a
    /// model equal to `self` field-for-field.
    pub fn to_toml_string(&self) -> String {
        let file = GridFile {
            base_mva: self.base_mva,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, id)| NodeRecord {
                    id: id.clone(),
                    is_ref: i == self.ref_node,
                })
                .collect(),
            lines: self.lines.clone(),
            generators: self.generators.clone(),
        };
        toml::to_string(&file).expect("grid model serializes")
    }
}

/// Load and validate a grid description file.
pub fn load_grid(path: impl AsRef<Path>) -> Result<GridModel, GridError> {
    let text = std::fs::read_to_string(path)?;
    grid_from_str(&text)
}

/// Parse and validate a grid description from TOML text.
pub fn grid_from_str(text: &str) -> Result<GridModel, GridError> {
    let file: GridFile = toml::from_str(text).map_err(|e| GridError::Parse(e.to_string()))?;
    validate(file)
}

fn validate(file: GridFile) -> Result<GridModel, GridError> {
    if !(file.base_mva.is_finite() && file.base_mva > 0.0) {
        return Err(GridError::Validation(format!(
            "base_mva must be positive, got {}",
            file.base_mva
        )));
    }
    if file.nodes.is_empty() {
        return Err(GridError::Validation("no nodes defined".into()));
    }

    let mut index = BTreeMap::new();
    for (i, node) in file.nodes.iter().enumerate() {
        if index.insert(node.id.clone(), i).is_some() {
            return Err(GridError::Validation(format!(
                "duplicate node id {:?}",
                node.id
            )));
        }
    }
    let refs: Vec<usize> = file
        .nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| n.is_ref.then_some(i))
        .collect();
    let ref_node = match refs.as_slice() {
        [one] => *one,
        [] => return Err(GridError::Validation("no reference node".into())),
        _ => return Err(GridError::Validation("more than one reference node".into())),
    };

    // merge parallel lines on the unordered node pair
    let mut merged: Vec<Line> = Vec::new();
    let mut merged_ends: Vec<(usize, usize)> = Vec::new();
    for line in &file.lines {
        let from = *index
            .get(&line.from)
            .ok_or_else(|| GridError::Validation(format!("line endpoint {:?} is not a node", line.from)))?;
        let to = *index
            .get(&line.to)
            .ok_or_else(|| GridError::Validation(format!("line endpoint {:?} is not a node", line.to)))?;
        if from == to {
            return Err(GridError::Validation(format!(
                "line from {:?} to itself",
                line.from
            )));
        }
        if !(line.b_pu.is_finite() && line.b_pu > 0.0) {
            return Err(GridError::Validation(format!(
                "line {}-{} has nonpositive susceptance",
                line.from, line.to
            )));
        }
        if !(line.s_mw.is_finite() && line.s_mw > 0.0) {
            return Err(GridError::Validation(format!(
                "line {}-{} has nonpositive thermal limit",
                line.from, line.to
            )));
        }
        let key = (from.min(to), from.max(to));
        if let Some(pos) = merged_ends
            .iter()
            .position(|&(a, b)| (a.min(b), a.max(b)) == key)
        {
            merged[pos].b_pu += line.b_pu;
            merged[pos].s_mw += line.s_mw;
        } else {
            merged.push(line.clone());
            merged_ends.push((from, to));
        }
    }

    let mut gen_nodes = Vec::with_capacity(file.generators.len());
    let mut gen_ids = BTreeSet::new();
    for gen in &file.generators {
        if !gen_ids.insert(gen.id.clone()) {
            return Err(GridError::Validation(format!(
                "duplicate generator id {:?}",
                gen.id
            )));
        }
        let node = *index
            .get(&gen.node)
            .ok_or_else(|| GridError::Validation(format!("generator {:?} at unknown node {:?}", gen.id, gen.node)))?;
        if !(gen.p_max.is_finite() && gen.p_max > 0.0) {
            return Err(GridError::Validation(format!(
                "generator {:?} has nonpositive p_max",
                gen.id
            )));
        }
        if !(gen.c2.is_finite() && gen.c2 >= 0.0) || !gen.c1.is_finite() || !gen.c0.is_finite() {
            return Err(GridError::Validation(format!(
                "generator {:?} has an invalid cost model",
                gen.id
            )));
        }
        gen_nodes.push(node);
    }

    let n = file.nodes.len();
    let mut adjacency = vec![BTreeSet::new(); n];
    for &(a, b) in &merged_ends {
        adjacency[a].insert(b);
        adjacency[b].insert(a);
    }

    // connectivity via BFS from the reference node
    let mut seen = vec![false; n];
    let mut queue = vec![ref_node];
    seen[ref_node] = true;
    while let Some(i) = queue.pop() {
        for &j in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push(j);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(GridError::Validation(format!(
            "network is not connected: node {:?} unreachable from the reference node",
            file.nodes[i].id
        )));
    }

    Ok(GridModel {
        base_mva: file.base_mva,
        nodes: file.nodes.into_iter().map(|n| n.id).collect(),
        ref_node,
        lines: merged,
        generators: file.generators,
        line_ends: merged_ends,
        gen_nodes,
        adjacency,
    })
}
