//! The undirected graph on interaction masks read off the nonzero pattern of
//! the Schur–Banachiewicz inverse, with separation testing and DOT / JSON
//! export.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bitgroup::{IndexSets, Mask};
use crate::error::{Error, Result};
use crate::schur::OmegaMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Wing {
    /// Center `𝓑`.
    B,
    /// Left wing `𝓛`.
    L,
    /// Right wing `𝓡`.
    R,
}

impl Wing {
    fn cluster_label(self) -> &'static str {
        match self {
            Wing::L => "left wing",
            Wing::B => "center",
            Wing::R => "right wing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub mask: Mask,
    pub wing: Wing,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    /// Raw `Ω` entry.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeginGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub tol: f64,
}

/// Renders `mask` as a product of coordinate names, e.g. `A1*B1`; the
/// constant interaction renders as `1`.
pub fn mask_label(mask: Mask, names: &[String]) -> String {
    let parts: Vec<String> = (0..mask.width())
        .filter(|&j| mask.has_coordinate(j))
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("X{}", j + 1)))
        .collect();
    if parts.is_empty() {
        "1".to_string()
    } else {
        parts.join("*")
    }
}

/// Vertices in `(𝓑, 𝓛, 𝓡)` order; an edge joins two distinct vertices whose
/// `Ω` entry exceeds `tol` in magnitude. `names` labels base coordinates
/// (missing names fall back to `X{j}`).
pub fn build_graph(omega: &OmegaMatrix, labels: &IndexSets, tol: f64, names: &[String]) -> Result<BeginGraph> {
    let n = labels.len();
    if omega.omega.nrows() != n {
        return Err(Error::LengthMismatch { expected: n, got: omega.omega.nrows() });
    }
    let nodes: Vec<Node> = labels
        .center
        .iter()
        .map(|&m| (m, Wing::B))
        .chain(labels.left.iter().map(|&m| (m, Wing::L)))
        .chain(labels.right.iter().map(|&m| (m, Wing::R)))
        .map(|(mask, wing)| Node { mask, wing, label: mask_label(mask, names) })
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let w = omega.omega[(u, v)];
            if w.abs() > tol {
                edges.push(Edge { u, v, weight: w });
            }
        }
    }
    Ok(BeginGraph { nodes, edges, tol })
}

/// Whether every path from `𝓛` to `𝓡` passes through `𝓑`.
pub fn separates(g: &BeginGraph) -> bool {
    let n = g.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for e in &g.edges {
        adj[e.u].push(e.v);
        adj[e.v].push(e.u);
    }
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| g.nodes[i].wing == Wing::L).collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(u) = queue.pop_front() {
        if g.nodes[u].wing == Wing::R {
            return false;
        }
        for &v in &adj[u] {
            if !seen[v] && g.nodes[v].wing != Wing::B {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Json,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" | "gv" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

pub fn export_graph(g: &BeginGraph, format: GraphFormat) -> Result<String> {
    match format {
        GraphFormat::Dot => Ok(to_dot(g)),
        GraphFormat::Json => Ok(serde_json::to_string_pretty(g)? + "\n"),
    }
}

pub fn import_graph_json(text: &str) -> Result<BeginGraph> {
    Ok(serde_json::from_str(text)?)
}

fn to_dot(g: &BeginGraph) -> String {
    let mut out = String::from("graph begin {\n  node [shape=ellipse];\n");
    for wing in [Wing::L, Wing::B, Wing::R] {
        let _ = writeln!(out, "  subgraph cluster_{wing:?} {{");
        let _ = writeln!(out, "    label=\"{}\";", wing.cluster_label());
        for (i, node) in g.nodes.iter().enumerate().filter(|(_, n)| n.wing == wing) {
            let _ = writeln!(out, "    n{i} [label=\"{}\", mask=\"{}\"];", node.label, node.mask);
        }
        out.push_str("  }\n");
    }
    let heaviest = g.edges.iter().fold(0.0f64, |acc, e| acc.max(e.weight.abs()));
    for e in &g.edges {
        let pen = if heaviest > 0.0 { 1.0 + 3.0 * e.weight.abs() / heaviest } else { 1.0 };
        let _ = writeln!(out, "  n{} -- n{} [omega=\"{}\", penwidth={:.3}];", e.u, e.v, e.weight, pen);
    }
    out.push_str("}\n");
    out
}
