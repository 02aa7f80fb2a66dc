//! Interaction graph, walk parameters and the memory matrix.
//!
//! Vertices are numbered `1..=k`. An edge `(u, v)` means elephant `v` reads
//! the step history of elephant `u`, i.e. `u` is an in-neighbour of `v`.
//! The memory matrix has entries
//!
//! ```text
//! b[i][j] = (2 p_j - 1) / d_j^in   if (i, j) is an edge, 0 otherwise
//! ```
//!
//! so that `E[X_{n+1} | F_n] = S_n B / n` for the row vector of positions `S_n`.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Slack allowed on the column-sum and unit-disk invariants.
const INVARIANT_TOL: f64 = 1e-9;

/// A directed graph on `1..=k` in which every vertex has an in-neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    k: usize,
    edges: Vec<(usize, usize)>,
    in_neighbours: Vec<Vec<usize>>,
    out_neighbours: Vec<Vec<usize>>,
}

impl DirectedGraph {
    /// Builds and validates a graph from 1-based edges.
    pub fn new(k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut seen = BTreeSet::new();
        let mut in_neighbours = vec![Vec::new(); k];
        let mut out_neighbours = vec![Vec::new(); k];
        for &(u, v) in edges {
            if u == 0 || v == 0 || u > k || v > k {
                return Err(Error::VertexOutOfRange(u, v, k));
            }
            if !seen.insert((u, v)) {
                return Err(Error::DuplicateEdge(u, v));
            }
            in_neighbours[v - 1].push(u - 1);
            out_neighbours[u - 1].push(v - 1);
        }
        if let Some(v) = in_neighbours.iter().position(Vec::is_empty) {
            return Err(Error::ZeroInDegree(v + 1));
        }
        for list in in_neighbours.iter_mut().chain(out_neighbours.iter_mut()) {
            list.sort_unstable();
        }
        Ok(Self {
            k,
            edges: seen.into_iter().collect(),
            in_neighbours,
            out_neighbours,
        })
    }

    /// The two-vertex graph `{(1,2), (2,1)}`: each elephant reads only the other.
    pub fn two_elephants() -> Self {
        Self::new(2, &[(1, 2), (2, 1)]).expect("static graph")
    }

    /// A single vertex with a self-loop (the classic elephant walk).
    pub fn self_loop() -> Self {
        Self::new(1, &[(1, 1)]).expect("static graph")
    }

    /// The directed cycle `1 -> 2 -> ... -> k -> 1`.
    pub fn cycle(k: usize) -> Result<Self> {
        let edges: Vec<_> = (1..=k).map(|u| (u, u % k + 1)).collect();
        Self::new(k, &edges)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Sorted 1-based edge list.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// 0-based in-neighbours of the 0-based vertex `v`.
    pub fn in_neighbours(&self, v: usize) -> &[usize] {
        &self.in_neighbours[v]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_neighbours[v].len()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        self.in_neighbours.iter().map(Vec::len).collect()
    }

    pub fn is_strongly_connected(&self) -> bool {
        let reach_all = |adj: &[Vec<usize>]| {
            let mut seen = vec![false; self.k];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach_all(&self.out_neighbours) && reach_all(&self.in_neighbours)
    }
}

/// Graph plus per-vertex memory parameters `p` and first-step probabilities `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WalkConfigFile", into = "WalkConfigFile")]
pub struct WalkConfig {
    graph: DirectedGraph,
    p: Vec<f64>,
    q: Vec<f64>,
}

/// On-disk schema: `{"k": int, "edges": [[u,v],...], "p": [...], "q": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfigFile {
    pub k: usize,
    pub edges: Vec<[usize; 2]>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl TryFrom<WalkConfigFile> for WalkConfig {
    type Error = Error;

    fn try_from(f: WalkConfigFile) -> Result<Self> {
        let edges: Vec<_> = f.edges.iter().map(|e| (e[0], e[1])).collect();
        WalkConfig::new(DirectedGraph::new(f.k, &edges)?, f.p, f.q)
    }
}

impl From<WalkConfig> for WalkConfigFile {
    fn from(c: WalkConfig) -> Self {
        WalkConfigFile {
            k: c.graph.k,
            edges: c.graph.edges.iter().map(|&(u, v)| [u, v]).collect(),
            p: c.p,
            q: c.q,
        }
    }
}

fn check_unit_interval(name: &str, values: &[f64], k: usize) -> Result<()> {
    if values.len() != k {
        return Err(Error::InvalidParameter(format!(
            "{name} has length {} but k = {k}",
            values.len()
        )));
    }
    if let Some(x) = values.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidParameter(format!("{name} entry {x} not in [0, 1]")));
    }
    Ok(())
}

impl WalkConfig {
    pub fn new(graph: DirectedGraph, p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        check_unit_interval("p", &p, graph.k)?;
        check_unit_interval("q", &q, graph.k)?;
        Ok(Self { graph, p, q })
    }

    /// Two elephants sharing memory parameter `p`, each reading the other.
    pub fn two_elephants(p: f64, q1: f64, q2: f64) -> Result<Self> {
        Self::new(DirectedGraph::two_elephants(), vec![p, p], vec![q1, q2])
    }

    pub fn self_loop(p: f64, q: f64) -> Result<Self> {
        Self::new(DirectedGraph::self_loop(), vec![p], vec![q])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn k(&self) -> usize {
        self.graph.k
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Returns the shared memory parameter if this is the two-elephant graph
    /// with `p_1 = p_2`.
    pub fn two_elephant_memory(&self) -> Option<f64> {
        (self.graph.k == 2 && self.graph.edges == [(1, 2), (2, 1)] && self.p[0] == self.p[1]).then_some(self.p[0])
    }
}

/// The k x k memory matrix, with its column-sum and spectral invariants checked.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryMatrix {
    entries: DMatrix<f64>,
}

impl MemoryMatrix {
    /// Wraps an arbitrary square matrix, asserting `sum_i |B_ij| <= 1` for every
    /// column and that the spectrum lies in the closed unit disk.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvariantViolation("matrix must be square and non-empty".into()));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvariantViolation("non-finite entry".into()));
        }
        for (j, col) in entries.column_iter().enumerate() {
            let s: f64 = col.iter().map(|x| x.abs()).sum();
            if s > 1.0 + INVARIANT_TOL {
                return Err(Error::InvariantViolation(format!(
                    "column {} has absolute sum {s} > 1",
                    j + 1
                )));
            }
        }
        let m = Self { entries };
        let radius = m.spectral_radius();
        if radius > 1.0 + INVARIANT_TOL {
            return Err(Error::InvariantViolation(format!("spectral radius {radius} exceeds 1")));
        }
        Ok(m)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        crate::linalg::eigenvalues(&self.entries)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Nonzero entries of column `j` as `(row, value)` pairs.
    pub fn column_support(&self, j: usize) -> Vec<(usize, f64)> {
        self.entries
            .column(j)
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(i, &b)| (i, b))
            .collect()
    }
}

/// Builds the memory matrix of a walk configuration.
pub fn memory_matrix(config: &WalkConfig) -> MemoryMatrix {
    let k = config.k();
    let mut b = DMatrix::zeros(k, k);
    for j in 0..k {
        let weight = (2.0 * config.p[j] - 1.0) / config.graph.in_degree(j) as f64;
        for &i in config.graph.in_neighbours(j) {
            b[(i, j)] = weight;
        }
    }
    MemoryMatrix::new(b).expect("memory matrix of a valid configuration satisfies its invariants")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_elephant_graph_has_unit_in_degrees() {
        let g = DirectedGraph::new(2, &[(1, 2), (2, 1)]).unwrap();
        assert_eq!(g.in_degrees(), vec![1, 1]);
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn self_loop_is_valid() {
        let g = DirectedGraph::new(1, &[(1, 1)]).unwrap();
        assert_eq!(g.in_degrees(), vec![1]);
    }

    #[test]
    fn missing_in_neighbour_is_rejected() {
        assert_eq!(DirectedGraph::new(2, &[(1, 2)]), Err(Error::ZeroInDegree(1)));
    }

    #[test]
    fn duplicate_and_out_of_range_edges_are_rejected() {
        assert_eq!(
            DirectedGraph::new(2, &[(1, 2), (2, 1), (1, 2)]),
            Err(Error::DuplicateEdge(1, 2))
        );
        assert_eq!(DirectedGraph::new(2, &[(1, 3)]), Err(Error::VertexOutOfRange(1, 3, 2)));
        assert_eq!(DirectedGraph::new(0, &[]), Err(Error::EmptyGraph));
    }

    #[test]
    fn two_elephant_memory_matrix() {
        let c = WalkConfig::two_elephants(0.75, 0.5, 0.5).unwrap();
        let b = memory_matrix(&c);
        assert_eq!(b.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
    }

    #[test]
    fn half_memory_gives_zero_matrix() {
        let g = DirectedGraph::new(3, &[(1, 2), (2, 3), (3, 1), (1, 1), (2, 1)]).unwrap();
        let c = WalkConfig::new(g, vec![0.5; 3], vec![0.3; 3]).unwrap();
        assert!(memory_matrix(&c).matrix().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn three_cycle_has_cube_roots_of_unity() {
        let c = WalkConfig::new(DirectedGraph::cycle(3).unwrap(), vec![1.0; 3], vec![0.5; 3]).unwrap();
        let b = memory_matrix(&c);
        // ones on positions (1,2), (2,3), (3,1)
        let expected = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.]);
        assert_eq!(b.matrix(), &expected);
        let mut eig = crate::linalg::eigenvalues(b.matrix());
        eig.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap()));
        let s = 3f64.sqrt() / 2.0;
        let want = [(1.0, 0.0), (-0.5, s), (-0.5, -s)];
        for (z, (re, im)) in eig.iter().zip(want) {
            assert!((z.re - re).abs() < 1e-12 && (z.im - im).abs() < 1e-12, "{z}");
        }
    }

    #[test]
    fn config_json_round_trip_uses_exact_field_names() {
        let text = r#"{"k":2,"edges":[[1,2],[2,1]],"p":[0.6,0.6],"q":[0.5,0.5]}"#;
        let c = WalkConfig::from_json(text).unwrap();
        assert_eq!(c.to_json(), text);
        assert_eq!(c.two_elephant_memory(), Some(0.6));
        assert!(WalkConfig::from_json(r#"{"k":2,"edges":[[1,2]],"p":[0.6,0.6],"q":[0.5,0.5]}"#).is_err());
    }

    #[test]
    fn parameters_must_lie_in_unit_interval() {
        assert!(WalkConfig::two_elephants(1.2, 0.5, 0.5).is_err());
        assert!(WalkConfig::new(DirectedGraph::self_loop(), vec![0.5, 0.5], vec![0.5]).is_err());
    }

    #[test]
    fn generic_matrix_violating_column_sums_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.8, 0.5]);
        assert!(matches!(MemoryMatrix::new(m), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn disconnected_graph_is_not_strongly_connected() {
        let g = DirectedGraph::new(2, &[(1, 1), (1, 2)]).unwrap();
        assert!(!g.is_strongly_connected());
    }
}
