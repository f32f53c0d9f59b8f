//! Dual graph of a multipatch structure and a connected, balanced
//! partitioner: region growing from spread seeds followed by boundary swaps.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{MultipatchTopology, SubdomainLayout};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("cannot split {nodes} patches into {parts} parts")]
    InvalidPartCount { parts: usize, nodes: usize },
    #[error("dual graph is disconnected")]
    CannotRepair,
    #[error("part {part} has {size} patches, more than twice the target {target}")]
    InfeasibleBalance {
        part: usize,
        size: usize,
        target: usize,
    },
    #[error("labeling has {got} entries for {expected} patches")]
    LengthMismatch { got: usize, expected: usize },
}

/// Patches as nodes, patch-interfaces as edges.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGraph {
    pub n_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub adjacency: Vec<Vec<usize>>,
    pub node_weights: Vec<f64>,
}

impl DualGraph {
    pub fn from_edges(n_nodes: usize, edges: Vec<[usize; 2]>) -> Self {
        let mut adjacency = vec![Vec::new(); n_nodes];
        for &[a, b] in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        DualGraph {
            n_nodes,
            edges,
            adjacency,
            node_weights: vec![1.0; n_nodes],
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.n_nodes);
        self.node_weights = weights;
        self
    }

    /// Number of dual edges whose endpoints carry different labels.
    pub fn cut_size(&self, labels: &[usize]) -> usize {
        self.edges
            .iter()
            .filter(|&&[a, b]| labels[a] != labels[b])
            .count()
    }

    pub fn is_connected(&self) -> bool {
        self.n_nodes == 0
            || self
                .components_of(&(0..self.n_nodes).collect::<Vec<_>>())
                .len()
                == 1
    }

    /// Connected components of the subgraph induced by `nodes`, each sorted,
    /// listed in order of their smallest node.
    pub fn components_of(&self, nodes: &[usize]) -> Vec<Vec<usize>> {
        let mut inside = vec![false; self.n_nodes];
        for &v in nodes {
            inside[v] = true;
        }
        let mut seen = vec![false; self.n_nodes];
        let mut sorted = nodes.to_vec();
        sorted.sort_unstable();
        let mut out = Vec::new();
        for &start in &sorted {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &self.adjacency[v] {
                    if inside[w] && !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    fn distances_from(&self, sources: &[usize]) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_nodes];
        let mut queue = VecDeque::new();
        for &s in sources {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

pub fn dual_graph(topology: &MultipatchTopology) -> DualGraph {
    let edges = topology
        .interfaces
        .iter()
        .map(|it| [it.a.patch, it.b.patch])
        .collect();
    DualGraph::from_edges(topology.n_patches(), edges)
}

/// Partition statistics, kept to check that refinement never increases the cut.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOutcome {
    pub layout: SubdomainLayout,
    pub cut_after_growing: usize,
    pub cut_after_refinement: usize,
}

pub fn partition(
    graph: &DualGraph,
    n_sub: usize,
    seed: u64,
) -> Result<SubdomainLayout, PartitionError> {
    partition_detailed(graph, n_sub, seed).map(|o| o.layout)
}

pub fn partition_detailed(
    graph: &DualGraph,
    n_sub: usize,
    seed: u64,
) -> Result<PartitionOutcome, PartitionError> {
    let n = graph.n_nodes;
    if n_sub == 0 || n_sub > n {
        return Err(PartitionError::InvalidPartCount {
            parts: n_sub,
            nodes: n,
        });
    }
    if !graph.is_connected() {
        return Err(PartitionError::CannotRepair);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut priority: Vec<usize> = (0..n).collect();
    priority.shuffle(&mut rng);
    let mut rank = vec![0; n];
    for (r, &v) in priority.iter().enumerate() {
        rank[v] = r;
    }

    let seeds = spread_seeds(graph, n_sub, &rank);
    let mut labels = grow_regions(graph, &seeds, &rank);
    let cut_after_growing = graph.cut_size(&labels);
    refine(graph, &mut labels, n_sub);
    let cut_after_refinement = graph.cut_size(&labels);

    let target = n.div_ceil(n_sub);
    let mut sizes = vec![0; n_sub];
    for &l in &labels {
        sizes[l] += 1;
    }
    if let Some(part) = (0..n_sub).find(|&k| sizes[k] > 2 * target) {
        return Err(PartitionError::InfeasibleBalance {
            part,
            size: sizes[part],
            target,
        });
    }
    let layout = SubdomainLayout {
        assignment: labels,
        n_sub,
    };
    Ok(PartitionOutcome {
        layout,
        cut_after_growing,
        cut_after_refinement,
    })
}

/// Farthest-point seeding; the first seed and all ties follow the random rank.
fn spread_seeds(graph: &DualGraph, n_sub: usize, rank: &[usize]) -> Vec<usize> {
    let first = (0..graph.n_nodes).min_by_key(|&v| rank[v]).unwrap();
    let mut seeds = vec![first];
    while seeds.len() < n_sub {
        let dist = graph.distances_from(&seeds);
        let next = (0..graph.n_nodes)
            .filter(|v| !seeds.contains(v))
            .max_by_key(|&v| (dist[v], std::cmp::Reverse(rank[v])))
            .unwrap();
        seeds.push(next);
    }
    seeds
}

/// The smallest part repeatedly takes the frontier node it is most strongly
/// attached to, so every part stays connected.
fn grow_regions(graph: &DualGraph, seeds: &[usize], rank: &[usize]) -> Vec<usize> {
    let n = graph.n_nodes;
    let k = seeds.len();
    let mut labels = vec![usize::MAX; n];
    let mut weight = vec![0.0; k];
    for (part, &s) in seeds.iter().enumerate() {
        labels[s] = part;
        weight[part] += graph.node_weights[s];
    }
    let dist: Vec<Vec<usize>> = seeds.iter().map(|&s| graph.distances_from(&[s])).collect();
    let mut remaining = n - k;
    let mut stuck = vec![false; k];
    while remaining > 0 {
        let part = (0..k)
            .filter(|&p| !stuck[p])
            .min_by(|&a, &b| weight[a].total_cmp(&weight[b]).then(a.cmp(&b)));
        let Some(part) = part else { break };
        let best = (0..n)
            .filter(|&v| labels[v] == usize::MAX)
            .filter_map(|v| {
                let links = graph.adjacency[v]
                    .iter()
                    .filter(|&&w| labels[w] == part)
                    .count();
                (links > 0).then_some((v, links))
            })
            .max_by_key(|&(v, links)| {
                (
                    links,
                    std::cmp::Reverse(dist[part][v]),
                    std::cmp::Reverse(rank[v]),
                )
            });
        match best {
            Some((v, _)) => {
                labels[v] = part;
                weight[part] += graph.node_weights[v];
                remaining -= 1;
            }
            None => stuck[part] = true,
        }
    }
    labels
}

/// Greedy boundary swaps. A move must reduce the cut, or keep it and improve
/// the balance, while keeping both parts connected and nonempty.
fn refine(graph: &DualGraph, labels: &mut [usize], n_sub: usize) {
    let n = graph.n_nodes;
    let target = n.div_ceil(n_sub);
    let mut sizes = vec![0usize; n_sub];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for _pass in 0..4 * n {
        let mut moved = false;
        for v in 0..n {
            let from = labels[v];
            if sizes[from] == 1 {
                continue;
            }
            let mut counts = vec![0i64; n_sub];
            for &w in &graph.adjacency[v] {
                counts[labels[w]] += 1;
            }
            let mut best: Option<(usize, i64)> = None;
            for to in 0..n_sub {
                if to == from || counts[to] == 0 {
                    continue;
                }
                let gain = counts[to] - counts[from];
                let balances = sizes[to] + 1 < sizes[from];
                let admissible = if gain > 0 {
                    sizes[to] < target || balances
                } else {
                    gain == 0 && balances
                };
                if admissible && best.is_none_or(|(_, g)| gain > g) {
                    best = Some((to, gain));
                }
            }
            let Some((to, _)) = best else { continue };
            let rest: Vec<usize> = (0..n).filter(|&w| w != v && labels[w] == from).collect();
            if graph.components_of(&rest).len() != 1 {
                continue;
            }
            labels[v] = to;
            sizes[from] -= 1;
            sizes[to] += 1;
            moved = true;
        }
        if !moved {
            break;
        }
    }
}

/// Keeps the largest connected piece of every part and absorbs each other
/// fragment into the adjacent part it shares the most dual edges with.
/// Parts that end up empty are dropped and the labels compacted.
pub fn repair_connectivity(
    labels: &[usize],
    graph: &DualGraph,
) -> Result<SubdomainLayout, PartitionError> {
    let n = graph.n_nodes;
    if labels.len() != n {
        return Err(PartitionError::LengthMismatch {
            got: labels.len(),
            expected: n,
        });
    }
    if !graph.is_connected() {
        return Err(PartitionError::CannotRepair);
    }
    let n_parts = labels.iter().max().map_or(0, |m| m + 1);
    let mut out: Vec<Option<usize>> = vec![None; n];
    let mut fragments = Vec::new();
    for part in 0..n_parts {
        let nodes: Vec<usize> = (0..n).filter(|&v| labels[v] == part).collect();
        let mut comps = graph.components_of(&nodes);
        if comps.is_empty() {
            continue;
        }
        // stable: ties keep the component with the smallest node
        let keep = (0..comps.len())
            .max_by_key(|&i| (comps[i].len(), std::cmp::Reverse(i)))
            .unwrap();
        for &v in &comps[keep] {
            out[v] = Some(part);
        }
        comps.remove(keep);
        fragments.extend(comps);
    }
    while !fragments.is_empty() {
        let mut progress = false;
        let mut pending = Vec::new();
        for frag in fragments {
            let mut counts = vec![0usize; n_parts];
            for &v in &frag {
                for &w in &graph.adjacency[v] {
                    if let Some(l) = out[w] {
                        counts[l] += 1;
                    }
                }
            }
            let best = (0..n_parts)
                .filter(|&l| counts[l] > 0)
                .max_by_key(|&l| (counts[l], std::cmp::Reverse(l)));
            match best {
                Some(l) => {
                    for &v in &frag {
                        out[v] = Some(l);
                    }
                    progress = true;
                }
                None => pending.push(frag),
            }
        }
        if !progress {
            return Err(PartitionError::CannotRepair);
        }
        fragments = pending;
    }
    let mut remap = vec![usize::MAX; n_parts];
    let mut next = 0;
    for part in 0..n_parts {
        if out.contains(&Some(part)) {
            remap[part] = next;
            next += 1;
        }
    }
    let assignment = out.into_iter().map(|l| remap[l.unwrap()]).collect();
    Ok(SubdomainLayout {
        assignment,
        n_sub: next,
    })
}

/// True if every part induces a connected, nonempty subgraph.
pub fn parts_connected(graph: &DualGraph, layout: &SubdomainLayout) -> bool {
    (0..layout.n_sub).all(|k| graph.components_of(&layout.patches_of(k)).len() == 1)
}
