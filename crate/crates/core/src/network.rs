//! Random directed deployments and hop-minimal routing toward the gateway.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;

use crate::error::{QncError, Result};
use crate::seed;

/// Default link capacity in bits per channel use.
pub const DEFAULT_CAPACITY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    /// Bits per channel use.
    pub capacity: f64,
}

/// Directed simple graph with a designated gateway. Node ids are zero-based
/// in memory and one-based in the edge-list file.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    n: usize,
    edges: Vec<Edge>,
    gateway: usize,
    in_edges: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
}

impl NetworkGraph {
    pub fn new(n: usize, edges: Vec<Edge>, gateway: usize) -> Result<Self> {
        if n == 0 {
            return Err(QncError::InvalidArgument("graph needs at least one node".into()));
        }
        if gateway >= n {
            return Err(QncError::InvalidArgument(format!(
                "gateway {gateway} out of range for {n} nodes"
            )));
        }
        let mut in_edges = vec![Vec::new(); n];
        let mut out_edges = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for (id, e) in edges.iter().enumerate() {
            if e.tail >= n || e.head >= n {
                return Err(QncError::InvalidArgument(format!(
                    "edge {id} ({} -> {}) has an endpoint outside 0..{n}",
                    e.tail, e.head
                )));
            }
            if e.tail == e.head {
                return Err(QncError::InvalidArgument(format!("edge {id} is a self-loop")));
            }
            if !(e.capacity > 0.0) {
                return Err(QncError::InvalidArgument(format!(
                    "edge {id} has non-positive capacity {}",
                    e.capacity
                )));
            }
            if !seen.insert((e.tail, e.head)) {
                return Err(QncError::InvalidArgument(format!(
                    "duplicate edge {} -> {}",
                    e.tail, e.head
                )));
            }
            out_edges[e.tail].push(id);
            in_edges[e.head].push(id);
        }
        Ok(Self { n, edges, gateway, in_edges, out_edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn gateway(&self) -> usize {
        self.gateway
    }

    /// Edge ids whose head is `v`, ascending.
    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_edges[v]
    }

    /// Edge ids whose tail is `v`, ascending.
    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    /// Serializes to the edge-list text format: `n gateway`, then
    /// `tail head capacity` per edge, one-based node ids.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n, self.gateway + 1);
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.tail + 1, e.head + 1, e.capacity);
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or(QncError::Parse { line: 1, msg: "missing header".into() })?;
        let hdr: Vec<&str> = header.split_whitespace().collect();
        if hdr.len() != 2 {
            return Err(QncError::Parse { line: hline, msg: "expected `n gateway`".into() });
        }
        let n = parse_field::<usize>(hdr[0], hline)?;
        let gateway = one_based(parse_field::<usize>(hdr[1], hline)?, hline)?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(QncError::Parse { line, msg: "expected `tail head capacity`".into() });
            }
            edges.push(Edge {
                tail: one_based(parse_field(f[0], line)?, line)?,
                head: one_based(parse_field(f[1], line)?, line)?,
                capacity: parse_field(f[2], line)?,
            });
        }
        Self::new(n, edges, gateway)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| QncError::io(path, e))
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QncError::io(path, e))?;
        Self::from_edge_list(&text)
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| QncError::Parse { line, msg: format!("bad field `{s}`") })
}

fn one_based(id: usize, line: usize) -> Result<usize> {
    id.checked_sub(1)
        .ok_or(QncError::Parse { line, msg: "node ids are one-based".into() })
}

/// Draws `m_edges` distinct ordered pairs uniformly at random and a uniform
/// gateway. Antiparallel pairs are allowed, multi-edges are not.
pub fn generate_random_network(
    n: usize,
    m_edges: usize,
    capacity: f64,
    seed: u64,
) -> Result<NetworkGraph> {
    if n < 2 {
        return Err(QncError::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if m_edges < 1 {
        return Err(QncError::InvalidArgument("need at least one edge".into()));
    }
    let slots = n * (n - 1);
    if m_edges > slots {
        return Err(QncError::TooManyEdges { n, requested: m_edges, max: slots });
    }
    let mut rng = seed::rng(seed);
    let mut picks = index::sample(&mut rng, slots, m_edges).into_vec();
    picks.sort_unstable();
    let edges = picks
        .into_iter()
        .map(|idx| {
            let tail = idx / (n - 1);
            let r = idx % (n - 1);
            let head = if r < tail { r } else { r + 1 };
            Edge { tail, head, capacity }
        })
        .collect();
    let gateway = rng.gen_range(0..n);
    NetworkGraph::new(n, edges, gateway)
}

/// Resamples deployments until every node can reach the gateway.
pub fn generate_reachable_network(
    n: usize,
    m_edges: usize,
    capacity: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<NetworkGraph> {
    let mut last_bad = 0;
    for attempt in 0..max_attempts.max(1) {
        let g = generate_random_network(n, m_edges, capacity, seed::child(seed, attempt as u64))?;
        match shortest_paths(&g).first_unreachable() {
            None => return Ok(g),
            Some(v) => last_bad = v,
        }
    }
    Err(QncError::Unreachable(last_bad))
}

/// Hop-minimal in-tree toward the gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTree {
    /// Edge to forward on; `None` at the gateway and at unreachable nodes.
    pub next_hop: Vec<Option<usize>>,
    /// `None` marks nodes with no directed path to the gateway.
    pub hop_distance: Vec<Option<usize>>,
}

impl RoutingTree {
    pub fn first_unreachable(&self) -> Option<usize> {
        self.hop_distance.iter().position(Option::is_none)
    }

    pub fn max_hop_distance(&self) -> usize {
        self.hop_distance.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// Unit-weight shortest paths over reversed edges (Dijkstra with unit weights
/// reduces to breadth-first search). Ties go to the smallest edge id.
pub fn shortest_paths(g: &NetworkGraph) -> RoutingTree {
    let mut dist = vec![None; g.n()];
    dist[g.gateway()] = Some(0usize);
    let mut queue = VecDeque::from([g.gateway()]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &e in g.in_edges(u) {
            let t = g.edges()[e].tail;
            if dist[t].is_none() {
                dist[t] = Some(du + 1);
                queue.push_back(t);
            }
        }
    }
    let next_hop = (0..g.n())
        .map(|v| {
            let dv = dist[v]?;
            if dv == 0 {
                return None;
            }
            g.out_edges(v)
                .iter()
                .copied()
                .find(|&e| dist[g.edges()[e].head] == Some(dv - 1))
        })
        .collect();
    RoutingTree { next_hop, hop_distance: dist }
}
