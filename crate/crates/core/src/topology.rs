//! Communication graphs and gossip mixing matrices.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{RandomStream, Seed};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyKind {
    Ring,
    /// Non-toroidal 2D grid.
    MeshGrid { rows: usize, cols: usize },
    Custom,
}

/// Undirected, connected, static graph over clients `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    adjacency: Vec<Vec<usize>>,
    diameter: usize,
    kind: TopologyKind,
}

impl Topology {
    pub fn ring(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!("ring needs n >= 2, got {n}")));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::build(n, &edges, TopologyKind::Ring)
    }

    pub fn mesh_grid(rows: usize, cols: usize) -> Result<Self> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidTopology("grid size overflows".into()))?;
        if rows == 0 || cols == 0 || n < 2 {
            return Err(Error::InvalidTopology(format!(
                "grid {rows}x{cols} needs at least 2 nodes"
            )));
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
        Self::build(n, &edges, TopologyKind::MeshGrid { rows, cols })
    }

    /// Wrap-around grid. Exposed as a custom topology.
    pub fn torus(rows: usize, cols: usize) -> Result<Self> {
        let n = rows * cols;
        if rows == 0 || cols == 0 || n < 2 {
            return Err(Error::InvalidTopology(format!(
                "torus {rows}x{cols} needs at least 2 nodes"
            )));
        }
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                edges.push((v, r * cols + (c + 1) % cols));
                edges.push((v, ((r + 1) % rows) * cols + c));
            }
        }
        Self::custom(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::custom(n, &edges)
    }

    /// Node 0 is the hub.
    pub fn star(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Self::custom(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Self::custom(n, &edges)
    }

    /// Random spanning tree (each node attaches to a uniformly chosen earlier
    /// node) plus every other pair independently with probability `p_extra`.
    pub fn random_connected(n: usize, p_extra: f64, seed: Seed) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!("need n >= 2, got {n}")));
        }
        let mut stream = RandomStream::derived(seed, crate::rng::StreamDomain::Topology, 0);
        let mut edges = Vec::new();
        for v in 1..n {
            edges.push((stream.index_unchecked(v), v));
        }
        for i in 0..n {
            for j in i + 1..n {
                if stream.uniform() < p_extra {
                    edges.push((i, j));
                }
            }
        }
        Self::custom(n, &edges)
    }

    /// Graph from an explicit edge list. Duplicate edges are merged.
    pub fn custom(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::build(n, edges, TopologyKind::Custom)
    }

    fn build(n: usize, edges: &[(usize, usize)], kind: TopologyKind) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!("need n >= 2, got {n}")));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidTopology(format!("self-loop at node {u}")));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let mut topo = Topology {
            n,
            adjacency,
            diameter: 0,
            kind,
        };
        let mut diameter = 0;
        for src in 0..n {
            let dist = topo.distances_from(src);
            if let Some(unreached) = dist.iter().position(Option::is_none) {
                return Err(Error::InvalidTopology(format!(
                    "graph is disconnected: node {unreached} unreachable from {src}"
                )));
            }
            diameter = dist.iter().flatten().copied().fold(diameter, usize::max);
        }
        topo.diameter = diameter;
        Ok(topo)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    /// Undirected edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    /// BFS hop distances from `src`; `None` for unreachable nodes.
    pub fn distances_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[src] = Some(0);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn distance_matrix(&self) -> Vec<Vec<usize>> {
        (0..self.n)
            .map(|s| self.distances_from(s).into_iter().map(|d| d.unwrap_or(usize::MAX)).collect())
            .collect()
    }
}

/// Row-major `n × n` gossip weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    weights: Vec<f64>,
}

impl MixingMatrix {
    /// Metropolis–Hastings weights: `1 / (1 + max(deg i, deg j))` on edges,
    /// the remainder on the diagonal.
    pub fn metropolis(topology: &Topology) -> Self {
        let n = topology.n();
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            let mut off = 0.0;
            for &j in topology.neighbors(i) {
                let w = 1.0 / (1.0 + topology.degree(i).max(topology.degree(j)) as f64);
                weights[i * n + j] = w;
                off += w;
            }
            weights[i * n + i] = 1.0 - off;
        }
        MixingMatrix { n, weights }
    }

    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            weights[i * n + i] = 1.0;
        }
        MixingMatrix { n, weights }
    }

    /// Wraps arbitrary weights; checks nonnegativity, symmetry and unit row
    /// sums (tolerance 1e-12).
    pub fn from_rows(n: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::InvalidMixing(format!(
                "{} weights for a {n}x{n} matrix",
                weights.len()
            )));
        }
        let m = MixingMatrix { n, weights };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let w = self.get(i, j);
                if !(w >= 0.0) {
                    return Err(Error::InvalidMixing(format!("w[{i}][{j}] = {w} is negative")));
                }
                if (w - self.get(j, i)).abs() > 1e-12 {
                    return Err(Error::InvalidMixing(format!("not symmetric at ({i}, {j})")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidMixing(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_diameters() {
        assert_eq!(Topology::ring(16).unwrap().diameter(), 8);
        assert_eq!(Topology::ring(32).unwrap().diameter(), 16);
        assert_eq!(Topology::mesh_grid(4, 4).unwrap().diameter(), 6);
        assert_eq!(Topology::torus(4, 4).unwrap().diameter(), 4);
        let path = Topology::custom(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        assert_eq!(path.diameter(), 4);
        assert_eq!(Topology::star(9).unwrap().diameter(), 2);
        assert_eq!(Topology::complete(6).unwrap().diameter(), 1);
        assert_eq!(Topology::ring(2).unwrap().diameter(), 1);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(matches!(
            Topology::custom(4, &[(0, 1), (2, 3)]),
            Err(Error::InvalidTopology(_))
        ));
        assert!(Topology::custom(3, &[(0, 0), (1, 2)]).is_err());
        assert!(Topology::custom(3, &[(0, 3)]).is_err());
        assert!(Topology::ring(1).is_err());
    }

    #[test]
    fn metropolis_closed_forms() {
        let w = MixingMatrix::metropolis(&Topology::ring(4).unwrap());
        for i in 0..4 {
            assert!((w.get(i, i) - 1.0 / 3.0).abs() < 1e-15);
            assert!((w.get(i, (i + 1) % 4) - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(w.get(i, (i + 2) % 4), 0.0);
        }
        let star = MixingMatrix::metropolis(&Topology::star(5).unwrap());
        for leaf in 1..5 {
            assert!((star.get(0, leaf) - 0.2).abs() < 1e-15);
            assert!((star.get(leaf, leaf) - 0.8).abs() < 1e-15);
        }
        assert!((star.get(0, 0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn non_stochastic_rejected() {
        assert!(matches!(
            MixingMatrix::from_rows(2, vec![0.5, 0.5, 0.4, 0.6]),
            Err(Error::InvalidMixing(_))
        ));
        assert!(MixingMatrix::from_rows(2, vec![0.5, 0.5, 0.5, 0.5]).is_ok());
    }

    #[test]
    fn random_graphs_are_connected_and_deterministic() {
        for s in 0..5 {
            let a = Topology::random_connected(40, 0.05, Seed(s)).unwrap();
            let b = Topology::random_connected(40, 0.05, Seed(s)).unwrap();
            assert_eq!(a, b);
            assert!(a.diameter() >= 1);
        }
    }
}
