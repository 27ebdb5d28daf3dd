//! Interbank relation networks: complete, Erdős–Rényi and Barabási–Albert.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::params::NetworkKind;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("a complete network needs at least 2 banks, got {0}")]
    TooFewBanks(usize),
    #[error("edge probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("attachment count must satisfy 1 <= m < B, got m={m}, B={n}")]
    BadAttachment { m: usize, n: usize },
}

/// Symmetric boolean adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationNetwork {
    n: usize,
    adj: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
}

impl RelationNetwork {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adj: vec![false; n * n],
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut net = Self::empty(n);
        for (i, j) in edges {
            net.add_edge(i, j);
        }
        net
    }

    fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i < self.n && j < self.n, "edge ({i}, {j}) out of range");
        if i == j || self.adj[i * self.n + j] {
            return;
        }
        self.adj[i * self.n + j] = true;
        self.adj[j * self.n + i] = true;
        // keep neighbour lists sorted so iteration order is reproducible
        let pos = self.neighbors[i].binary_search(&j).unwrap_err();
        self.neighbors[i].insert(pos, j);
        let pos = self.neighbors[j].binary_search(&i).unwrap_err();
        self.neighbors[j].insert(pos, i);
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    /// Sorted neighbour list of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            2.0 * self.edge_count() as f64 / self.n as f64
        }
    }

    /// Undirected edges with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    /// Write one `i j` pair per line, 0-indexed.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, j) in self.edges() {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }
}

pub fn gen_complete(n: usize) -> Result<RelationNetwork, NetworkError> {
    if n < 2 {
        return Err(NetworkError::TooFewBanks(n));
    }
    let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    Ok(RelationNetwork::from_edges(n, edges))
}

pub fn gen_er(n: usize, p: f64, seed: u64) -> Result<RelationNetwork, NetworkError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(NetworkError::BadProbability(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = RelationNetwork::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                net.add_edge(i, j);
            }
        }
    }
    Ok(net)
}

/// Preferential attachment grown from an `m`-clique; each arriving node
/// links to `m` distinct existing nodes chosen with probability ∝ degree.
pub fn gen_ba(n: usize, m: usize, seed: u64) -> Result<RelationNetwork, NetworkError> {
    if m < 1 || m >= n {
        return Err(NetworkError::BadAttachment { m, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = RelationNetwork::empty(n);
    // every edge endpoint appears once here, so uniform picks are degree-weighted
    let mut endpoints: Vec<usize> = Vec::with_capacity(2 * m * n);
    for i in 0..m {
        for j in i + 1..m {
            net.add_edge(i, j);
            endpoints.push(i);
            endpoints.push(j);
        }
    }
    let mut targets = Vec::with_capacity(m);
    for new in m..n {
        targets.clear();
        while targets.len() < m {
            let t = if endpoints.is_empty() {
                // m == 1: the seed clique is a single isolated node
                rng.random_range(0..new)
            } else {
                endpoints[rng.random_range(0..endpoints.len())]
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            net.add_edge(new, t);
            endpoints.push(new);
            endpoints.push(t);
        }
    }
    Ok(net)
}

pub fn generate(kind: NetworkKind, n: usize, seed: u64) -> Result<RelationNetwork, NetworkError> {
    match kind {
        NetworkKind::Complete => gen_complete(n),
        NetworkKind::Er(p) => gen_er(n, p, seed),
        NetworkKind::Ba(m) => gen_ba(n, m, seed),
    }
}
