//! Weighted communication digraphs and the structural checks used to decide
//! whether a consensus protocol is expected to converge on a given topology.
//!
//! Convention: `a[i][j] > 0` iff agent `i` receives the output of agent `j`,
//! i.e. information flows along the edge `j -> i`. Indices are zero-based.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use thiserror::Error;

/// Tolerance on weighted degree sums when testing balance.
pub const BALANCE_TOL: f64 = 1e-12;

/// Smallest eigenvalue the symmetric part must exceed to count as positive definite.
pub const PD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency matrix must be square: row {row} has {len} entries, expected {n}")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("weight a[{i}][{j}] = {w} must be finite and nonnegative")]
    InvalidWeight { i: usize, j: usize, w: f64 },
    #[error("self-loop at node {0}: diagonal weights must be zero")]
    SelfLoop(usize),
    #[error("edge endpoint {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("graph is not weight-balanced (node {node}: in-degree {d_in}, out-degree {d_out})")]
    NotBalanced { node: usize, d_in: f64, d_out: f64 },
    #[error("leader weight vector has {got} entries, expected {n}")]
    LeaderWeightsLen { got: usize, n: usize },
}

/// Weighted directed graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    weights: DMatrix<f64>,
}

impl Digraph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n, n),
        }
    }

    /// Builds a graph from a row-major adjacency matrix (`rows[i][j] = a_ij`).
    pub fn from_matrix(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        let n = rows.len();
        let mut weights = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(GraphError::NotSquare {
                    row: i,
                    len: row.len(),
                    n,
                });
            }
            for (j, &w) in row.iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::InvalidWeight { i, j, w });
                }
                if i == j && w != 0.0 {
                    return Err(GraphError::SelfLoop(i));
                }
                weights[(i, j)] = w;
            }
        }
        Ok(Self { weights })
    }

    /// Builds a graph from directed edges `(from, to, weight)`; an edge
    /// `from -> to` sets `a[to][from] = weight`. Repeated edges overwrite.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut g = Self::empty(n);
        for &(from, to, w) in edges {
            for node in [from, to] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { node, n });
                }
            }
            if !w.is_finite() || w < 0.0 {
                return Err(GraphError::InvalidWeight { i: to, j: from, w });
            }
            if from == to {
                if w != 0.0 {
                    return Err(GraphError::SelfLoop(from));
                }
                continue;
            }
            g.weights[(to, from)] = w;
        }
        Ok(g)
    }

    /// Undirected graph: every pair `{a, b}` is inserted in both directions.
    pub fn undirected(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let both: Vec<_> = edges
            .iter()
            .flat_map(|&(a, b, w)| [(a, b, w), (b, a, w)])
            .collect();
        Self::from_edges(n, &both)
    }

    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }

    /// Weight `a_ij` of the edge `j -> i`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        self.weights.row(i).sum()
    }

    pub fn out_degree(&self, i: usize) -> f64 {
        self.weights.column(i).sum()
    }

    /// `l_ii = sum_j a_ij`, `l_ij = -a_ij`. Rows sum to zero up to the rounding
    /// of the degree sum (exactly, for integer weights).
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.weights.clone();
        for i in 0..self.node_count() {
            l[(i, i)] = self.in_degree(i);
        }
        l
    }

    pub fn is_undirected(&self) -> bool {
        self.weights == self.weights.transpose()
    }

    /// Every node has equal weighted in- and out-degree.
    pub fn is_balanced(&self) -> bool {
        self.first_unbalanced_node().is_none()
    }

    fn first_unbalanced_node(&self) -> Option<(usize, f64, f64)> {
        (0..self.node_count())
            .map(|i| (i, self.in_degree(i), self.out_degree(i)))
            .find(|&(_, d_in, d_out)| (d_in - d_out).abs() >= BALANCE_TOL)
    }

    /// Forward and reverse reachability sweeps from node 0 both cover the graph.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.node_count();
        if n <= 1 {
            return true;
        }
        let forward = self.reach_from(0, |g, v, u| g.weights[(u, v)] > 0.0);
        let backward = self.reach_from(0, |g, v, u| g.weights[(v, u)] > 0.0);
        forward.iter().all(|&r| r) && backward.iter().all(|&r| r)
    }

    /// The underlying undirected graph is connected.
    pub fn is_weakly_connected(&self) -> bool {
        let n = self.node_count();
        if n <= 1 {
            return true;
        }
        let seen = self.reach_from(0, |g, v, u| g.weights[(u, v)] + g.weights[(v, u)] > 0.0);
        seen.iter().all(|&r| r)
    }

    /// `L + L^T`, the Laplacian of the mirror graph. Only defined for balanced graphs.
    pub fn mirror_laplacian(&self) -> Result<DMatrix<f64>, GraphError> {
        if let Some((node, d_in, d_out)) = self.first_unbalanced_node() {
            return Err(GraphError::NotBalanced { node, d_in, d_out });
        }
        let l = self.laplacian();
        Ok(&l + l.transpose())
    }

    /// Breadth-first sweep; `step(g, v, u)` says whether `u` is reachable in one hop from `v`.
    fn reach_from(&self, start: usize, step: impl Fn(&Self, usize, usize) -> bool) -> Vec<bool> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            for u in 0..n {
                if !seen[u] && step(self, v, u) {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }
}

/// Follower graph plus pinning gains from a single stationary leader.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderGraph {
    followers: Digraph,
    leader_weights: Vec<f64>,
}

impl LeaderGraph {
    pub fn new(followers: Digraph, leader_weights: Vec<f64>) -> Result<Self, GraphError> {
        let n = followers.node_count();
        if leader_weights.len() != n {
            return Err(GraphError::LeaderWeightsLen {
                got: leader_weights.len(),
                n,
            });
        }
        if let Some((i, &w)) = leader_weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(GraphError::InvalidWeight { i, j: n, w });
        }
        Ok(Self {
            followers,
            leader_weights,
        })
    }

    pub fn followers(&self) -> &Digraph {
        &self.followers
    }

    /// Pinning gain `a_i0` of follower `i`.
    pub fn leader_weights(&self) -> &[f64] {
        &self.leader_weights
    }

    pub fn has_leader_edge(&self) -> bool {
        self.leader_weights.iter().any(|&w| w > 0.0)
    }

    /// `H = L_followers + diag(a_10, ..., a_N0)`.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let mut h = self.followers.laplacian();
        for (i, &w) in self.leader_weights.iter().enumerate() {
            h[(i, i)] += w;
        }
        h
    }

    /// Every follower has a directed information path starting at the leader.
    pub fn leader_globally_reachable(&self) -> bool {
        let n = self.followers.node_count();
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| self.leader_weights[i] > 0.0).collect();
        for &i in &queue {
            seen[i] = true;
        }
        while let Some(v) = queue.pop_front() {
            for u in 0..n {
                if !seen[u] && self.followers.weight(u, v) > 0.0 {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// True iff every eigenvalue of `(M + M^T) / 2` exceeds [`PD_TOL`].
/// Non-square and empty input yields `false`.
pub fn symmetric_part_positive_definite(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.nrows() == 0 {
        return false;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().all(|&ev| ev > PD_TOL)
}
