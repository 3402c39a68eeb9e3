//! Directed and partially directed graphs over named nodes, with
//! deterministic JSON and DOT serialization.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node: {0}")]
    UnknownNode(String),
    #[error("self loop on node {0}")]
    SelfLoop(String),
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("edge {0} -> {1} appears both directed and undirected")]
    MixedEdge(String, String),
}

/// A directed acyclic graph. Edges are ordered `(from, to)` index pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    nodes: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
}

impl Dag {
    pub fn new(nodes: Vec<String>, edges: BTreeSet<(usize, usize)>) -> Result<Self, GraphError> {
        for &(a, b) in &edges {
            if a == b {
                return Err(GraphError::SelfLoop(nodes[a].clone()));
            }
        }
        let dag = Dag { nodes, edges };
        if dag.topological_order().is_none() {
            return Err(GraphError::Cyclic);
        }
        Ok(dag)
    }

    pub fn empty(nodes: Vec<String>) -> Self {
        Dag {
            nodes,
            edges: BTreeSet::new(),
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn parents(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, b)| b == v)
            .map(|&(a, _)| a)
            .collect()
    }

    pub fn children(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(a, _)| a == v)
            .map(|&(_, b)| b)
            .collect()
    }

    /// All nodes reachable by directed paths from `v`, excluding `v`.
    pub fn descendants(&self, v: usize) -> BTreeSet<usize> {
        self.reach(v, |u| self.children(u))
    }

    pub fn ancestors(&self, v: usize) -> BTreeSet<usize> {
        self.reach(v, |u| self.parents(u))
    }

    fn reach(&self, v: usize, next: impl Fn(usize) -> Vec<usize>) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from(next(v));
        while let Some(u) = queue.pop_front() {
            if out.insert(u) {
                queue.extend(next(u));
            }
        }
        out.remove(&v);
        out
    }

    /// Kahn's algorithm; `None` when a cycle exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.edges {
            indeg[b] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for c in self.children(v) {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// The same graph with every edge out of `v` removed; used by the
    /// backdoor criterion.
    pub fn without_outgoing(&self, v: usize) -> Dag {
        Dag {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .filter(|&&(a, _)| a != v)
                .copied()
                .collect(),
        }
    }

    pub fn to_pdag(&self) -> Pdag {
        Pdag {
            nodes: self.nodes.clone(),
            directed: self.edges.clone(),
            undirected: BTreeSet::new(),
        }
    }
}

/// A partially directed graph: the output shape of constraint-based
/// structure search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdag {
    nodes: Vec<String>,
    directed: BTreeSet<(usize, usize)>,
    /// Stored with the smaller index first.
    undirected: BTreeSet<(usize, usize)>,
}

impl Pdag {
    pub fn new(
        nodes: Vec<String>,
        directed: BTreeSet<(usize, usize)>,
        undirected: BTreeSet<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let undirected: BTreeSet<(usize, usize)> = undirected
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        for &(a, b) in &directed {
            if a == b {
                return Err(GraphError::SelfLoop(nodes[a].clone()));
            }
            if directed.contains(&(b, a)) {
                return Err(GraphError::MixedEdge(nodes[a].clone(), nodes[b].clone()));
            }
            if undirected.contains(&(a.min(b), a.max(b))) {
                return Err(GraphError::MixedEdge(nodes[a].clone(), nodes[b].clone()));
            }
        }
        for &(a, b) in &undirected {
            if a == b {
                return Err(GraphError::SelfLoop(nodes[a].clone()));
            }
        }
        Ok(Pdag {
            nodes,
            directed,
            undirected,
        })
    }

    /// Complete undirected graph over the nodes.
    pub fn complete(nodes: Vec<String>) -> Self {
        let n = nodes.len();
        let mut undirected = BTreeSet::new();
        for a in 0..n {
            for b in (a + 1)..n {
                undirected.insert((a, b));
            }
        }
        Pdag {
            nodes,
            directed: BTreeSet::new(),
            undirected,
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn directed_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.directed
    }

    pub fn undirected_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.undirected
    }

    pub fn has_undirected(&self, a: usize, b: usize) -> bool {
        self.undirected.contains(&(a.min(b), a.max(b)))
    }

    pub fn has_directed(&self, from: usize, to: usize) -> bool {
        self.directed.contains(&(from, to))
    }

    /// Adjacent via any edge kind.
    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.has_undirected(a, b) || self.has_directed(a, b) || self.has_directed(b, a)
    }

    pub fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &(a, b) in &self.directed {
            if a == v {
                out.insert(b);
            }
            if b == v {
                out.insert(a);
            }
        }
        for &(a, b) in &self.undirected {
            if a == v {
                out.insert(b);
            }
            if b == v {
                out.insert(a);
            }
        }
        out
    }

    pub fn remove_undirected(&mut self, a: usize, b: usize) {
        self.undirected.remove(&(a.min(b), a.max(b)));
    }

    /// Replace an undirected edge with the orientation `from -> to`.
    /// Returns false when the edge is no longer undirected.
    pub fn orient(&mut self, from: usize, to: usize) -> bool {
        if self.has_undirected(from, to) {
            self.remove_undirected(from, to);
            self.directed.insert((from, to));
            true
        } else {
            false
        }
    }

    /// True if the directed part contains a path `from -> .. -> to`.
    pub fn directed_path_exists(&self, from: usize, to: usize) -> bool {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                return true;
            }
            for &(a, b) in &self.directed {
                if a == v && seen.insert(b) {
                    queue.push_back(b);
                }
            }
        }
        false
    }

    /// The node-pair skeleton (all adjacencies, unordered).
    pub fn skeleton(&self) -> BTreeSet<(usize, usize)> {
        let mut out = self.undirected.clone();
        for &(a, b) in &self.directed {
            out.insert((a.min(b), a.max(b)));
        }
        out
    }
}

/// Structural Hamming distance between two partially directed graphs over
/// the same node names: counts node pairs whose edge presence, kind, or
/// orientation differs.
pub fn shd(a: &Pdag, b: &Pdag) -> Result<usize, GraphError> {
    let names: BTreeMap<&str, usize> = a.nodes.iter().map(|n| n.as_str()).zip(0..).collect();
    let mut remap = Vec::with_capacity(b.nodes.len());
    for n in &b.nodes {
        remap.push(
            *names
                .get(n.as_str())
                .ok_or_else(|| GraphError::UnknownNode(n.clone()))?,
        );
    }
    #[derive(PartialEq)]
    enum Kind {
        None,
        Undirected,
        Forward,
        Backward,
    }
    let classify = |g: &Pdag, map: &dyn Fn(usize) -> usize, x: usize, y: usize| {
        let (gx, gy) = (map(x), map(y));
        if g.has_undirected(gx, gy) {
            Kind::Undirected
        } else if g.has_directed(gx, gy) {
            Kind::Forward
        } else if g.has_directed(gy, gx) {
            Kind::Backward
        } else {
            Kind::None
        }
    };
    let ident = |v: usize| v;
    let inverse: BTreeMap<usize, usize> = remap.iter().copied().zip(0..).collect();
    let via_b = |v: usize| inverse[&v];
    let n = a.n();
    let mut dist = 0;
    for x in 0..n {
        for y in (x + 1)..n {
            let ka = classify(a, &ident, x, y);
            let kb = classify(b, &via_b, x, y);
            if ka != kb {
                dist += 1;
            }
        }
    }
    Ok(dist)
}

/// Serialized graph form shared by DAGs and PDAGs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphJson {
    pub nodes: Vec<String>,
    pub directed_edges: Vec<(String, String)>,
    pub undirected_edges: Vec<(String, String)>,
}

impl Pdag {
    pub fn to_json(&self) -> GraphJson {
        let name = |i: usize| self.nodes[i].clone();
        let mut directed: Vec<_> = self.directed.iter().map(|&(a, b)| (name(a), name(b))).collect();
        let mut undirected: Vec<_> =
            self.undirected.iter().map(|&(a, b)| (name(a), name(b))).collect();
        directed.sort();
        undirected.sort();
        GraphJson {
            nodes: self.nodes.clone(),
            directed_edges: directed,
            undirected_edges: undirected,
        }
    }

    /// DOT output with lexicographically sorted node and edge statements;
    /// byte-stable for fixed input.
    pub fn to_dot(&self, graph_name: &str) -> String {
        let mut out = format!("digraph {graph_name} {{\n");
        let mut names: Vec<&String> = self.nodes.iter().collect();
        names.sort();
        for n in names {
            out.push_str(&format!("  {};\n", dot_quote(n)));
        }
        let mut lines = Vec::new();
        for &(a, b) in &self.directed {
            lines.push(format!(
                "  {} -> {};\n",
                dot_quote(&self.nodes[a]),
                dot_quote(&self.nodes[b])
            ));
        }
        for &(a, b) in &self.undirected {
            lines.push(format!(
                "  {} -> {} [dir=none];\n",
                dot_quote(&self.nodes[a]),
                dot_quote(&self.nodes[b])
            ));
        }
        lines.sort();
        for l in lines {
            out.push_str(&l);
        }
        out.push_str("}\n");
        out
    }
}

impl Dag {
    pub fn to_json(&self) -> GraphJson {
        self.to_pdag().to_json()
    }

    pub fn to_dot(&self, graph_name: &str) -> String {
        self.to_pdag().to_dot(graph_name)
    }

    pub fn from_json(json: &GraphJson) -> Result<Dag, GraphError> {
        let index: BTreeMap<&str, usize> =
            json.nodes.iter().map(|n| n.as_str()).zip(0..).collect();
        let mut edges = BTreeSet::new();
        for (a, b) in &json.directed_edges {
            let ia = *index
                .get(a.as_str())
                .ok_or_else(|| GraphError::UnknownNode(a.clone()))?;
            let ib = *index
                .get(b.as_str())
                .ok_or_else(|| GraphError::UnknownNode(b.clone()))?;
            edges.insert((ia, ib));
        }
        Dag::new(json.nodes.clone(), edges)
    }
}

pub(crate) fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cycle_rejected() {
        let e: BTreeSet<_> = [(0, 1), (1, 2), (2, 0)].into_iter().collect();
        assert!(matches!(
            Dag::new(nodes(&["a", "b", "c"]), e),
            Err(GraphError::Cyclic)
        ));
    }

    #[test]
    fn descendants_and_ancestors() {
        let e: BTreeSet<_> = [(0, 1), (1, 2), (0, 3)].into_iter().collect();
        let g = Dag::new(nodes(&["a", "b", "c", "d"]), e).unwrap();
        assert_eq!(g.descendants(0), BTreeSet::from([1, 2, 3]));
        assert_eq!(g.ancestors(2), BTreeSet::from([0, 1]));
        assert!(g.descendants(2).is_empty());
    }

    #[test]
    fn pdag_rejects_two_cycles_and_mixed_edges() {
        let d: BTreeSet<_> = [(0, 1), (1, 0)].into_iter().collect();
        assert!(Pdag::new(nodes(&["a", "b"]), d, BTreeSet::new()).is_err());
        let d: BTreeSet<_> = [(0, 1)].into_iter().collect();
        let u: BTreeSet<_> = [(0, 1)].into_iter().collect();
        assert!(Pdag::new(nodes(&["a", "b"]), d, u).is_err());
    }

    #[test]
    fn dot_output_is_sorted_and_stable() {
        let d: BTreeSet<_> = [(2, 0), (1, 0)].into_iter().collect();
        let g = Pdag::new(nodes(&["c", "b", "a"]), d, BTreeSet::new()).unwrap();
        let dot = g.to_dot("g");
        let expected = "digraph g {\n  \"a\";\n  \"b\";\n  \"c\";\n  \"a\" -> \"c\";\n  \"b\" -> \"c\";\n}\n";
        assert_eq!(dot, expected);
        assert_eq!(dot, g.to_dot("g"));
    }

    #[test]
    fn shd_counts_kind_differences() {
        let a = Pdag::new(
            nodes(&["x", "y", "z"]),
            [(0, 1)].into_iter().collect(),
            [(1, 2)].into_iter().collect(),
        )
        .unwrap();
        let b = Pdag::new(
            nodes(&["x", "y", "z"]),
            [(1, 0)].into_iter().collect(),
            BTreeSet::new(),
        )
        .unwrap();
        // x-y flipped orientation (1) plus missing y-z (1).
        assert_eq!(shd(&a, &b).unwrap(), 2);
        assert_eq!(shd(&a, &a).unwrap(), 0);
    }

    #[test]
    fn json_round_trip() {
        let e: BTreeSet<_> = [(0, 1), (1, 2)].into_iter().collect();
        let g = Dag::new(nodes(&["a", "b", "c"]), e).unwrap();
        let json = g.to_json();
        let back = Dag::from_json(&json).unwrap();
        assert_eq!(g, back);
    }
}
