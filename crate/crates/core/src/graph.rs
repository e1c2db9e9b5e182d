//! Communication graphs, gossip matrices and their spectral profile.
//!
//! Vertices are 0-based internally. The edge-list text format is 1-based:
//! the first line holds `N`, every following non-empty line holds `i j`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Retry budget for randomized topologies that must come out connected.
pub const MAX_TOPOLOGY_ATTEMPTS: usize = 1000;

/// Tolerance for the symmetric/row-sum checks on a gossip matrix.
pub const MATRIX_TOL: f64 = 1e-12;

/// Tolerance reported with every spectral computation.
pub const EIGEN_TOL: f64 = 1e-10;

/// Undirected, simple, connected graph over `n` vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl CommGraph {
    /// Builds a graph from 0-based edges, rejecting self-loops, duplicates and
    /// disconnected edge sets.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let g = Self::unchecked(n, edges)?;
        if !g.is_connected() {
            return Err(Error::BadParams("graph is not connected".into()));
        }
        Ok(g)
    }

    fn unchecked(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::BadParams("graph needs at least one vertex".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::BadParams(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            if a == b {
                return Err(Error::BadParams(format!("self-loop at vertex {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(Error::BadParams(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &set {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for row in &mut adjacency {
            row.sort_unstable();
        }
        Ok(Self { n, edges: set, adjacency })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    /// Edges as ordered pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Neighbors of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Breadth-first reachability from vertex 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count == self.n
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for (a, b) in self.edges() {
            let _ = writeln!(s, "{} {}", a + 1, b + 1);
        }
        s
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::Parse("empty edge list".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("vertex count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let mut next = || -> Result<usize> {
                let tok = it.next().ok_or_else(|| Error::Parse(format!("bad edge line `{line}`")))?;
                let v: usize = tok.parse().map_err(|e| Error::Parse(format!("`{tok}`: {e}")))?;
                if v == 0 {
                    return Err(Error::Parse("edge-list vertices are 1-based".into()));
                }
                Ok(v - 1)
            };
            let a = next()?;
            let b = next()?;
            edges.push((a, b));
        }
        Self::new(n, edges)
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

/// Topology family with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Topology {
    Ring { n: usize },
    Path { n: usize },
    Grid { rows: usize, cols: usize },
    Complete { n: usize },
    Star { n: usize },
    RandomRegular { n: usize, degree: usize },
    ErdosRenyi { n: usize, p: f64 },
}

impl Topology {
    pub fn n_agents(&self) -> usize {
        match *self {
            Topology::Ring { n }
            | Topology::Path { n }
            | Topology::Complete { n }
            | Topology::Star { n }
            | Topology::RandomRegular { n, .. }
            | Topology::ErdosRenyi { n, .. } => n,
            Topology::Grid { rows, cols } => rows * cols,
        }
    }
}

/// Builds a connected communication graph. Randomized kinds draw from a
/// stream keyed by `seed`.
pub fn build_topology(kind: &Topology, seed: u64) -> Result<CommGraph> {
    let n = kind.n_agents();
    if n < 2 {
        return Err(Error::BadParams(format!("need at least 2 agents, got {n}")));
    }
    match *kind {
        Topology::Ring { n } => {
            if n < 3 {
                return Err(Error::BadParams("a ring needs at least 3 vertices".into()));
            }
            CommGraph::new(n, (0..n).map(|i| (i, (i + 1) % n)))
        }
        Topology::Path { n } => CommGraph::new(n, (0..n - 1).map(|i| (i, i + 1))),
        Topology::Grid { rows, cols } => {
            if rows == 0 || cols == 0 {
                return Err(Error::BadParams(format!("grid {rows}x{cols} is empty")));
            }
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let v = r * cols + c;
                    if c + 1 < cols {
                        edges.push((v, v + 1));
                    }
                    if r + 1 < rows {
                        edges.push((v, v + cols));
                    }
                }
            }
            CommGraph::new(n, edges)
        }
        Topology::Complete { n } => CommGraph::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))),
        Topology::Star { n } => CommGraph::new(n, (1..n).map(|i| (0, i))),
        Topology::RandomRegular { n, degree } => random_regular(n, degree, seed),
        Topology::ErdosRenyi { n, p } => erdos_renyi(n, p, seed),
    }
}

fn random_regular(n: usize, degree: usize, seed: u64) -> Result<CommGraph> {
    if degree == 0 || degree >= n {
        return Err(Error::BadParams(format!("degree {degree} must lie in [1, {n})")));
    }
    if !(n * degree).is_multiple_of(2) {
        return Err(Error::BadParams(format!("n * degree = {} must be even", n * degree)));
    }
    let mut rng = rng::graph_stream(seed);
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degree)).collect();
    'attempt: for _ in 0..MAX_TOPOLOGY_ATTEMPTS {
        stubs.shuffle(&mut rng);
        let mut set = BTreeSet::new();
        for pair in stubs.chunks(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !set.insert((a, b)) {
                continue 'attempt;
            }
        }
        let g = CommGraph::unchecked(n, set)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Unconnectable { attempts: MAX_TOPOLOGY_ATTEMPTS })
}

fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<CommGraph> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::BadParams(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = rng::graph_stream(seed);
    for _ in 0..MAX_TOPOLOGY_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng::unit_f64(&mut rng) < p {
                    edges.push((i, j));
                }
            }
        }
        let g = CommGraph::unchecked(n, edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Unconnectable { attempts: MAX_TOPOLOGY_ATTEMPTS })
}

/// Symmetric doubly stochastic matrix supported on a communication graph.
#[derive(Debug, Clone)]
pub struct GossipMatrix {
    weights: DMatrix<f64>,
    graph: CommGraph,
    rows: Vec<Vec<(usize, f64)>>,
}

impl GossipMatrix {
    /// Validates symmetry, nonnegativity, unit row sums and support on `graph`.
    pub fn new(weights: DMatrix<f64>, graph: CommGraph) -> Result<Self> {
        let n = graph.n_agents();
        if weights.nrows() != n || weights.ncols() != n {
            return Err(Error::DimMismatch { expected: n, actual: weights.nrows() });
        }
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::BadParams(format!("W({i},{j}) = {w} is not a nonnegative real")));
                }
                if (w - weights[(j, i)]).abs() > MATRIX_TOL {
                    return Err(Error::BadParams(format!("W is not symmetric at ({i},{j})")));
                }
                if w > 0.0 && i != j && !graph.has_edge(i, j) {
                    return Err(Error::BadParams(format!("W({i},{j}) > 0 outside the graph support")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > MATRIX_TOL {
                return Err(Error::BadParams(format!("row {i} sums to {sum}")));
            }
        }
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| j == i || graph.has_edge(i, j)).map(|j| (j, weights[(i, j)])).collect())
            .collect();
        Ok(Self { weights, graph, rows })
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Entries of row `i` over the closed neighborhood of `i`, in vertex order.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_csv(&self) -> String {
        let n = self.n_agents();
        let mut s = String::new();
        for i in 0..n {
            let line: Vec<String> = (0..n).map(|j| format!("{}", self.weights[(i, j)])).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Metropolis-Hastings weights: `1 / (1 + max(deg i, deg j))` on edges, the
/// diagonal takes the remainder of each row.
pub fn metropolis_weights(g: &CommGraph) -> Result<GossipMatrix> {
    let n = g.n_agents();
    let mut w = DMatrix::zeros(n, n);
    for (a, b) in g.edges() {
        let v = 1.0 / (1.0 + g.degree(a).max(g.degree(b)) as f64);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..n {
        let off: f64 = g.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    GossipMatrix::new(w, g.clone())
}

/// Lazy Laplacian weights `I - (laziness / d_max) L` with `L = D - A`.
pub fn laplacian_weights(g: &CommGraph, laziness: f64) -> Result<GossipMatrix> {
    if !(laziness > 0.0 && laziness <= 1.0) {
        return Err(Error::BadParams(format!("laziness {laziness} must lie in (0, 1]")));
    }
    let n = g.n_agents();
    let step = laziness / g.max_degree().max(1) as f64;
    let mut w = DMatrix::zeros(n, n);
    for (a, b) in g.edges() {
        w[(a, b)] = step;
        w[(b, a)] = step;
    }
    for i in 0..n {
        w[(i, i)] = 1.0 - step * g.degree(i) as f64;
    }
    GossipMatrix::new(w, g.clone())
}

/// Second-largest singular value of `W` and the spectral gap `1 - sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectralProfile {
    pub sigma2: f64,
    pub rho: f64,
    pub solver_tolerance: f64,
}

/// Computes `sigma2` from a dense symmetric eigendecomposition.
pub fn spectral_gap(w: &GossipMatrix) -> Result<SpectralProfile> {
    let n = w.n_agents();
    if n == 1 {
        return Ok(SpectralProfile { sigma2: 0.0, rho: 1.0, solver_tolerance: EIGEN_TOL });
    }
    let eig = SymmetricEigen::new(w.weights().clone());
    let mut mags: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    // Eigenvalues within solver tolerance of zero are reported as exactly zero.
    let sigma2 = if mags[1] < EIGEN_TOL { 0.0 } else { mags[1].min(1.0) };
    if sigma2 >= 1.0 - MATRIX_TOL {
        return Err(Error::Degenerate { sigma2 });
    }
    Ok(SpectralProfile { sigma2, rho: 1.0 - sigma2, solver_tolerance: EIGEN_TOL })
}
