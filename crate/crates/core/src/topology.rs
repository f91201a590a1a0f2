//! Undirected communication graph between agents.
//!
//! Agents are numbered `1..=N`. Generators for the line, ring, star and
//! complete families are exact; [`Topology::random_connected`] samples a
//! connected graph around a requested mean degree.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Attempts made by [`Topology::random_connected`] before giving up.
pub const RANDOM_GRAPH_RETRY_CAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    num_agents: usize,
    /// Unordered pairs stored as `(low, high)`.
    edges: BTreeSet<(usize, usize)>,
    /// `adjacency[i - 1]` lists the neighbors of agent `i` in increasing order.
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a graph from an explicit edge list. Isolated agents are allowed
    /// here so that degenerate and disconnected graphs can be represented;
    /// the simulator rejects them.
    pub fn from_edges(num_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if num_agents == 0 {
            return Err(Error::InvalidSize("a topology needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for id in [a, b] {
                if id == 0 || id > num_agents {
                    return Err(Error::UnknownAgent(id));
                }
            }
            if a == b {
                return Err(Error::InvalidTopology(format!("self-loop at agent {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self::from_edge_set(num_agents, set))
    }

    fn from_edge_set(num_agents: usize, edges: BTreeSet<(usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); num_agents];
        for &(a, b) in &edges {
            adjacency[a - 1].push(b);
            adjacency[b - 1].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Self {
            num_agents,
            edges,
            adjacency,
        }
    }

    pub fn line(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("line topology needs N >= 2, got {n}")));
        }
        Self::from_edges(n, (1..n).map(|i| (i, i + 1)))
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSize(format!("ring topology needs N >= 3, got {n}")));
        }
        Self::from_edges(n, (1..=n).map(|i| (i, i % n + 1)))
    }

    /// Agent 1 is the hub.
    pub fn star(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("star topology needs N >= 2, got {n}")));
        }
        Self::from_edges(n, (2..=n).map(|i| (1, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("complete topology needs N >= 2, got {n}")));
        }
        Self::from_edges(n, all_pairs(n))
    }

    /// Samples a connected graph whose mean degree is within 0.5 of
    /// `avg_degree`.
    ///
    /// The edge count is `round(N * avg_degree / 2)` (raised to `N - 1` when
    /// that is still within tolerance). Edges are drawn uniformly without
    /// replacement; components are then joined by random bridging edges and
    /// the surplus is trimmed by deleting random non-bridge edges.
    pub fn random_connected(n: usize, avg_degree: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("random topology needs N >= 2, got {n}")));
        }
        let infeasible = || Error::InfeasibleDegree {
            num_agents: n,
            avg_degree,
        };
        if !avg_degree.is_finite() || avg_degree < 1.0 || avg_degree > (n - 1) as f64 {
            return Err(infeasible());
        }
        let max_edges = n * (n - 1) / 2;
        let target = ((n as f64 * avg_degree / 2.0).round() as usize).clamp(n - 1, max_edges);
        if (2.0 * target as f64 / n as f64 - avg_degree).abs() > 0.5 {
            return Err(infeasible());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(usize, usize)> = all_pairs(n).collect();
        for _ in 0..RANDOM_GRAPH_RETRY_CAP {
            let mut edges: BTreeSet<(usize, usize)> =
                pairs.choose_multiple(&mut rng, target).copied().collect();
            loop {
                let components = components(n, &edges);
                if components.len() == 1 {
                    break;
                }
                let first = rng.random_range(0..components.len());
                let mut second = rng.random_range(0..components.len() - 1);
                if second >= first {
                    second += 1;
                }
                let a = *components[first].choose(&mut rng).expect("components are non-empty");
                let b = *components[second].choose(&mut rng).expect("components are non-empty");
                edges.insert((a.min(b), a.max(b)));
            }
            let mut stuck = false;
            while edges.len() > target {
                let removable: Vec<(usize, usize)> = edges
                    .iter()
                    .copied()
                    .filter(|&e| !is_bridge(n, &edges, e))
                    .collect();
                match removable.choose(&mut rng) {
                    Some(e) => {
                        edges.remove(e);
                    }
                    None => {
                        stuck = true;
                        break;
                    }
                }
            }
            if !stuck {
                return Ok(Self::from_edge_set(n, edges));
            }
        }
        Err(Error::GeneratorExhausted(RANDOM_GRAPH_RETRY_CAP))
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(low, high)` pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, agent: usize) -> Result<&[usize]> {
        self.check_id(agent)?;
        Ok(&self.adjacency[agent - 1])
    }

    pub fn degree(&self, agent: usize) -> Result<usize> {
        self.neighbors(agent).map(<[usize]>::len)
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.num_agents as f64
    }

    pub fn is_connected(&self) -> bool {
        components(self.num_agents, &self.edges).len() == 1
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    fn check_id(&self, agent: usize) -> Result<()> {
        if agent == 0 || agent > self.num_agents {
            Err(Error::UnknownAgent(agent))
        } else {
            Ok(())
        }
    }

    /// Edge-list text: first line `N`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.num_agents);
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn parse_edge_list(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source_name, None, "empty edge list"))?;
        let n: usize = header
            .parse()
            .map_err(|_| Error::parse(source_name, Some(line_no), format!("expected agent count, found `{header}`")))?;
        let mut edges = Vec::new();
        for (line_no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
            match parsed.as_deref() {
                Some(&[a, b]) => edges.push((a, b)),
                _ => {
                    return Err(Error::parse(
                        source_name,
                        Some(line_no),
                        format!("expected `i j`, found `{line}`"),
                    ))
                }
            }
        }
        Self::from_edges(n, edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text, &path.display().to_string())
    }
}

fn all_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..=n).flat_map(move |a| (a + 1..=n).map(move |b| (a, b)))
}

fn components(n: usize, edges: &BTreeSet<(usize, usize)>) -> Vec<Vec<usize>> {
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in edges {
        adjacency[a - 1].push(b - 1);
        adjacency[b - 1].push(a - 1);
    }
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start + 1];
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &w in &adjacency[u] {
                if label[w] == usize::MAX {
                    label[w] = id;
                    members.push(w + 1);
                    queue.push_back(w);
                }
            }
        }
        out.push(members);
    }
    out
}

fn is_bridge(n: usize, edges: &BTreeSet<(usize, usize)>, edge: (usize, usize)) -> bool {
    let mut without = edges.clone();
    without.remove(&edge);
    components(n, &without).len() > components(n, edges).len()
}
