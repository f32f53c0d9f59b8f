//! Tree-cotree gauging on the control graph: edge weights, a weighted
//! Kruskal spanning tree that stays consistent on the Dirichlet boundary and
//! across subdomains, and the split of the unknowns into eliminated, primal
//! and remaining sets.

use std::fmt::Write as _;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SubdomainLayout;
use crate::splines::{ControlGraph, GraphTags};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaugeError {
    #[error("edge {0} belongs to no subdomain")]
    UntaggedEdge(usize),
    #[error("control graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },
    #[error("tree is inconsistent on the Dirichlet boundary: {0:?}")]
    InconsistentDirichlet(DirichletWitness),
}

pub const WEIGHT_DIRICHLET_INTERFACE: u8 = 1;
pub const WEIGHT_CROSS: u8 = 2;
pub const WEIGHT_WIRE_BASKET: u8 = 3;
pub const WEIGHT_BOUNDARY: u8 = 4;
pub const WEIGHT_INTERIOR: u8 = 5;

/// Edges lying on at least two facet closures, or shared by more than two
/// subdomains, together with their endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireBasket {
    pub edges: Vec<usize>,
    pub vertices: Vec<usize>,
}

pub fn wire_basket(graph: &ControlGraph, tags: &GraphTags) -> WireBasket {
    let edges: Vec<usize> = (0..graph.n_edges())
        .filter(|&e| tags.edge_facets[e].len() >= 2 || tags.edge_subdomains[e].len() > 2)
        .collect();
    let mut vertices: Vec<usize> = edges.iter().flat_map(|&e| graph.edges[e]).collect();
    vertices.sort_unstable();
    vertices.dedup();
    WireBasket { edges, vertices }
}

/// Weight classes 1 to 5 in increasing Kruskal priority order.
pub fn classify_edges(graph: &ControlGraph, tags: &GraphTags) -> Result<Vec<u8>, GaugeError> {
    (0..graph.n_edges())
        .map(|e| {
            let subs = tags.edge_subdomains[e].len();
            let dirichlet = graph.edge_dirichlet[e];
            if subs == 0 {
                return Err(GaugeError::UntaggedEdge(e));
            }
            Ok(if dirichlet && subs >= 2 {
                WEIGHT_DIRICHLET_INTERFACE
            } else if subs > 2 {
                WEIGHT_CROSS
            } else if tags.edge_facets[e].len() >= 2 {
                WEIGHT_WIRE_BASKET
            } else if dirichlet || subs == 2 {
                WEIGHT_BOUNDARY
            } else {
                WEIGHT_INTERIOR
            })
        })
        .collect()
}

/// Kruskal with lowest weight first; ties go to the smaller edge index.
pub fn kruskal_tree(graph: &ControlGraph, weights: &[u8]) -> Result<Vec<bool>, GaugeError> {
    let mut order: Vec<usize> = (0..graph.n_edges()).collect();
    order.sort_by_key(|&e| weights[e]);
    spanning_tree_in_order(graph, &order)
}

/// Greedy spanning tree inserting edges in the given order.
pub fn spanning_tree_in_order(
    graph: &ControlGraph,
    order: &[usize],
) -> Result<Vec<bool>, GaugeError> {
    let mut sets = UnionFind::<usize>::new(graph.n_vertices);
    let mut in_tree = vec![false; graph.n_edges()];
    let mut count = 0;
    for &e in order {
        let [a, b] = graph.edges[e];
        if sets.union(a, b) {
            in_tree[e] = true;
            count += 1;
        }
    }
    if graph.n_vertices > 0 && count + 1 != graph.n_vertices {
        return Err(GaugeError::DisconnectedGraph {
            components: graph.n_vertices - count,
        });
    }
    Ok(in_tree)
}

/// True if the marked edges form a spanning tree of the whole graph.
pub fn is_spanning_tree(graph: &ControlGraph, in_tree: &[bool]) -> bool {
    let mut sets = UnionFind::<usize>::new(graph.n_vertices);
    let mut count = 0;
    for (e, &[a, b]) in graph.edges.iter().enumerate() {
        if in_tree[e] {
            if !sets.union(a, b) {
                return false;
            }
            count += 1;
        }
    }
    count + 1 == graph.n_vertices.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirichletWitness {
    /// A Dirichlet tree edge closing a cycle of Dirichlet tree edges.
    Cycle { edge: usize },
    /// A Dirichlet edge whose endpoints the restricted tree leaves apart.
    Gap { edge: usize },
}

/// Checks that the tree restricted to the Dirichlet subgraph spans every
/// connected component of that subgraph. Returns a witness otherwise.
pub fn verify_dirichlet_consistency(
    graph: &ControlGraph,
    in_tree: &[bool],
) -> Option<DirichletWitness> {
    let mut sets = UnionFind::<usize>::new(graph.n_vertices);
    for (e, &[a, b]) in graph.edges.iter().enumerate() {
        if in_tree[e] && graph.edge_dirichlet[e] && !sets.union(a, b) {
            return Some(DirichletWitness::Cycle { edge: e });
        }
    }
    (0..graph.n_edges())
        .find(|&e| {
            let [a, b] = graph.edges[e];
            graph.edge_dirichlet[e] && !sets.equiv(a, b)
        })
        .map(|edge| DirichletWitness::Gap { edge })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DofClass {
    DirichletEliminated,
    Tree,
    Primal,
    Remaining,
}

impl DofClass {
    pub fn label(self) -> &'static str {
        match self {
            DofClass::DirichletEliminated => "dirichlet",
            DofClass::Tree => "tree",
            DofClass::Primal => "primal",
            DofClass::Remaining => "remaining",
        }
    }
}

/// Unknowns of one subdomain. Local index `i` refers to `edges[i]`; the
/// remaining set is ordered as listed and split by position into interface
/// and interior parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainDofs {
    pub subdomain: usize,
    pub edges: Vec<usize>,
    pub dirichlet: Vec<usize>,
    pub tree: Vec<usize>,
    pub primal: Vec<usize>,
    /// Coarse index of each entry of `primal`.
    pub primal_coarse: Vec<usize>,
    pub remaining: Vec<usize>,
    pub r_interface: Vec<usize>,
    pub r_interior: Vec<usize>,
}

impl SubdomainDofs {
    pub fn n_local(&self) -> usize {
        self.edges.len()
    }

    pub fn local_of(&self, edge: usize) -> Option<usize> {
        self.edges.binary_search(&edge).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeDecomposition {
    pub weights: Vec<u8>,
    pub in_tree: Vec<bool>,
    pub classes: Vec<DofClass>,
    /// Global edge of each coarse (primal) unknown.
    pub primal_edges: Vec<usize>,
    pub subdomains: Vec<SubdomainDofs>,
}

impl GaugeDecomposition {
    pub fn n_gp(&self) -> usize {
        self.primal_edges.len()
    }

    pub fn n_subdomains(&self) -> usize {
        self.subdomains.len()
    }

    pub fn count(&self, class: DofClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

/// Primal unknowns are the weight-2 cotree edges off the Dirichlet boundary.
pub fn select_primal_and_split(
    graph: &ControlGraph,
    tags: &GraphTags,
    weights: &[u8],
    in_tree: &[bool],
    layout: &SubdomainLayout,
) -> GaugeDecomposition {
    let n_edges = graph.n_edges();
    let mut classes = Vec::with_capacity(n_edges);
    let mut primal_edges = Vec::new();
    let mut coarse_of = vec![usize::MAX; n_edges];
    for e in 0..n_edges {
        let class = if graph.edge_dirichlet[e] {
            DofClass::DirichletEliminated
        } else if in_tree[e] {
            DofClass::Tree
        } else if weights[e] == WEIGHT_CROSS {
            coarse_of[e] = primal_edges.len();
            primal_edges.push(e);
            DofClass::Primal
        } else {
            DofClass::Remaining
        };
        classes.push(class);
    }

    let mut per_sub: Vec<Vec<usize>> = vec![Vec::new(); layout.n_sub];
    for (e, subs) in tags.edge_subdomains.iter().enumerate() {
        for &k in subs {
            per_sub[k].push(e);
        }
    }
    let subdomains = per_sub
        .into_iter()
        .enumerate()
        .map(|(k, edges)| {
            let mut dofs = SubdomainDofs {
                subdomain: k,
                edges,
                dirichlet: Vec::new(),
                tree: Vec::new(),
                primal: Vec::new(),
                primal_coarse: Vec::new(),
                remaining: Vec::new(),
                r_interface: Vec::new(),
                r_interior: Vec::new(),
            };
            for (i, &e) in dofs.edges.iter().enumerate() {
                match classes[e] {
                    DofClass::DirichletEliminated => dofs.dirichlet.push(i),
                    DofClass::Tree => dofs.tree.push(i),
                    DofClass::Primal => {
                        dofs.primal.push(i);
                        dofs.primal_coarse.push(coarse_of[e]);
                    }
                    DofClass::Remaining => {
                        let pos = dofs.remaining.len();
                        dofs.remaining.push(i);
                        if tags.edge_subdomains[e].len() >= 2 {
                            dofs.r_interface.push(pos);
                        } else {
                            dofs.r_interior.push(pos);
                        }
                    }
                }
            }
            dofs
        })
        .collect();

    GaugeDecomposition {
        weights: weights.to_vec(),
        in_tree: in_tree.to_vec(),
        classes,
        primal_edges,
        subdomains,
    }
}

/// Weights, tree, Dirichlet check and split in one call.
pub fn gauge(
    graph: &ControlGraph,
    tags: &GraphTags,
    layout: &SubdomainLayout,
) -> Result<GaugeDecomposition, GaugeError> {
    let weights = classify_edges(graph, tags)?;
    let in_tree = kruskal_tree(graph, &weights)?;
    if let Some(w) = verify_dirichlet_consistency(graph, &in_tree) {
        return Err(GaugeError::InconsistentDirichlet(w));
    }
    Ok(select_primal_and_split(
        graph, tags, &weights, &in_tree, layout,
    ))
}

/// Global tree edges seen by each subdomain.
pub fn project_tree_to_subdomains(
    in_tree: &[bool],
    tags: &GraphTags,
    n_sub: usize,
) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_sub];
    for (e, subs) in tags.edge_subdomains.iter().enumerate() {
        if in_tree[e] {
            for &k in subs {
                out[k].push(e);
            }
        }
    }
    out
}

/// Eliminated edges of subdomain `k` (Dirichlet, tree and primal) connect all
/// of its vertices. This is equivalent to the remaining block of the local
/// curl-curl matrix being nonsingular when the subdomain is simply connected.
pub fn local_gauge_is_complete(
    graph: &ControlGraph,
    tags: &GraphTags,
    decomposition: &GaugeDecomposition,
    k: usize,
) -> bool {
    let dofs = &decomposition.subdomains[k];
    let mut sets = UnionFind::<usize>::new(graph.n_vertices);
    for &e in &dofs.edges {
        if decomposition.classes[e] != DofClass::Remaining {
            let [a, b] = graph.edges[e];
            sets.union(a, b);
        }
    }
    let mut root = None;
    for (v, subs) in tags.vertex_subdomains.iter().enumerate() {
        if subs.contains(&k) {
            let r = sets.find(v);
            if *root.get_or_insert(r) != r {
                return false;
            }
        }
    }
    true
}

/// Graphviz rendering of one subdomain's graph, coloured by class, with
/// control point coordinates as node positions.
pub fn subdomain_dot(graph: &ControlGraph, decomposition: &GaugeDecomposition, k: usize) -> String {
    let dofs = &decomposition.subdomains[k];
    let mut out = String::new();
    writeln!(out, "graph subdomain_{k} {{").unwrap();
    writeln!(out, "  node [shape=point];").unwrap();
    let mut vertices: Vec<usize> = dofs.edges.iter().flat_map(|&e| graph.edges[e]).collect();
    vertices.sort_unstable();
    vertices.dedup();
    for v in vertices {
        let [x, y, z] = graph.vertex_points[v];
        writeln!(
            out,
            "  v{v} [pos=\"{:.4},{:.4}!\", comment=\"z={z:.4}\"];",
            x + 0.35 * z,
            y + 0.2 * z
        )
        .unwrap();
    }
    for &e in &dofs.edges {
        let [a, b] = graph.edges[e];
        let (color, style) = match decomposition.classes[e] {
            DofClass::DirichletEliminated if decomposition.in_tree[e] => ("gray40", "bold"),
            DofClass::DirichletEliminated => ("gray70", "dashed"),
            DofClass::Tree => ("black", "bold"),
            DofClass::Primal => ("red", "bold"),
            DofClass::Remaining => ("blue", "solid"),
        };
        writeln!(
            out,
            "  v{a} -- v{b} [color={color}, style={style}, label=\"{}\"];",
            decomposition.weights[e]
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        box_grid, build_facets, build_topology, cube27_three_part_layout, DirichletGranularity,
        MultipatchTopology,
    };
    use crate::partition::{dual_graph, partition};
    use crate::splines::{control_graph, make_spaces, tag_graph};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        graph: ControlGraph,
        tags: GraphTags,
        layout: SubdomainLayout,
    }

    fn setup(topo: &MultipatchTopology, layout: SubdomainLayout, p: usize, divs: usize) -> Setup {
        let facets = build_facets(topo, &layout, DirichletGranularity::PerPatchFacet).unwrap();
        let (s, w) = make_spaces(p, divs).unwrap();
        let graph = control_graph(topo, &s, &w).unwrap();
        let tags = tag_graph(&graph, &layout, &facets);
        Setup {
            graph,
            tags,
            layout,
        }
    }

    fn cube27() -> MultipatchTopology {
        build_topology(box_grid([3, 3, 3], [3.0; 3]), 1e-9).unwrap()
    }

    fn bar() -> MultipatchTopology {
        build_topology(box_grid([2, 1, 1], [2.0, 1.0, 1.0]), 1e-9).unwrap()
    }

    #[test]
    fn bar_weights_and_tree() {
        let topo = bar();
        let s = setup(&topo, SubdomainLayout::new(vec![0, 1]).unwrap(), 1, 1);
        let w = classify_edges(&s.graph, &s.tags).unwrap();
        assert_eq!(w.len(), 20);
        let ones: Vec<usize> = (0..20).filter(|&e| w[e] == 1).collect();
        assert_eq!(ones.len(), 4);
        for &e in &ones {
            // perimeter of the shared square at x = 1
            let [a, b] = s.graph.edges[e];
            assert_eq!(s.graph.vertex_points[a][0], 1.0);
            assert_eq!(s.graph.vertex_points[b][0], 1.0);
        }
        assert!(w.iter().all(|&x| x != WEIGHT_CROSS && x != WEIGHT_INTERIOR));
        // the other edges lie on the boundary, along cube edges (wire basket) or not
        assert!(w.iter().all(|&x| x == 1 || x == 3 || x == 4));

        let tree = kruskal_tree(&s.graph, &w).unwrap();
        assert_eq!(tree.iter().filter(|&&t| t).count(), 11);
        assert_eq!(ones.iter().filter(|&&e| tree[e]).count(), 3);
        assert!(is_spanning_tree(&s.graph, &tree));
        assert_eq!(verify_dirichlet_consistency(&s.graph, &tree), None);

        let dec = select_primal_and_split(&s.graph, &s.tags, &w, &tree, &s.layout);
        assert_eq!(dec.n_gp(), 0);
        assert_eq!(dec.count(DofClass::DirichletEliminated), 20);
    }

    #[test]
    fn single_subdomain_has_no_low_weights() {
        let topo = cube27();
        let s = setup(&topo, SubdomainLayout::single(27), 2, 2);
        let w = classify_edges(&s.graph, &s.tags).unwrap();
        assert!(w.iter().all(|&x| (3..=5).contains(&x)));
        let tree = kruskal_tree(&s.graph, &w).unwrap();
        let dec = select_primal_and_split(&s.graph, &s.tags, &w, &tree, &s.layout);
        let proj = project_tree_to_subdomains(&tree, &s.tags, 1);
        let global: Vec<usize> = (0..tree.len()).filter(|&e| tree[e]).collect();
        assert_eq!(proj[0], global);
        assert!(dec.subdomains[0].r_interface.is_empty());
        assert!(local_gauge_is_complete(&s.graph, &s.tags, &dec, 0));
    }

    #[test]
    fn cube_tree_counts() {
        let topo = cube27();
        let s = setup(&topo, SubdomainLayout::single(27), 1, 1);
        let w = classify_edges(&s.graph, &s.tags).unwrap();
        let tree = kruskal_tree(&s.graph, &w).unwrap();
        assert_eq!(s.graph.n_edges(), 144);
        assert_eq!(tree.iter().filter(|&&t| t).count(), 63);
    }

    #[test]
    fn weight_classes_follow_definitions() {
        let topo = cube27();
        let s = setup(&topo, cube27_three_part_layout(), 1, 2);
        let w = classify_edges(&s.graph, &s.tags).unwrap();
        for e in 0..s.graph.n_edges() {
            let subs = s.tags.edge_subdomains[e].len();
            let dir = s.graph.edge_dirichlet[e];
            let expected = if dir && subs >= 2 {
                1
            } else if subs > 2 {
                2
            } else if s.tags.edge_facets[e].len() >= 2 {
                3
            } else if dir || subs == 2 {
                4
            } else {
                5
            };
            assert_eq!(w[e], expected, "edge {e}");
            if subs > 2 {
                assert!(w[e] <= 2);
            }
        }
        let basket = wire_basket(&s.graph, &s.tags);
        assert!((0..w.len())
            .filter(|&e| w[e] <= 3)
            .all(|e| basket.edges.contains(&e)));
    }

    fn check_all(s: &Setup) -> GaugeDecomposition {
        let dec = gauge(&s.graph, &s.tags, &s.layout).unwrap();
        assert!(is_spanning_tree(&s.graph, &dec.in_tree));
        for k in 0..s.layout.n_sub {
            assert!(
                local_gauge_is_complete(&s.graph, &s.tags, &dec, k),
                "subdomain {k}"
            );
            // remaining dofs are shared by at most two subdomains
            for &i in &dec.subdomains[k].remaining {
                assert!(s.tags.edge_subdomains[dec.subdomains[k].edges[i]].len() <= 2);
            }
        }
        // every non-Dirichlet edge has exactly one class
        let total: usize = [
            DofClass::DirichletEliminated,
            DofClass::Tree,
            DofClass::Primal,
            DofClass::Remaining,
        ]
        .iter()
        .map(|&c| dec.count(c))
        .sum();
        assert_eq!(total, s.graph.n_edges());
        dec
    }

    #[test]
    fn three_part_layout_coarse_size_is_mesh_independent() {
        let topo = cube27();
        let mut sizes = Vec::new();
        for p in 1..=3 {
            for divs in 2..=4 {
                let s = setup(&topo, cube27_three_part_layout(), p, divs);
                sizes.push(check_all(&s).n_gp());
            }
        }
        assert!(sizes.iter().all(|&n| n == sizes[0]), "{sizes:?}");
        assert_eq!(sizes[0], 1);
    }

    #[test]
    fn two_subdomains_have_no_primal() {
        let topo = cube27();
        let g = dual_graph(&topo);
        let s = setup(&topo, partition(&g, 2, 0).unwrap(), 2, 2);
        assert_eq!(check_all(&s).n_gp(), 0);
    }

    #[test]
    fn partitioned_layouts_are_solvable_and_coarse_grows_slowly() {
        let topo = cube27();
        let g = dual_graph(&topo);
        for n_sub in 2..=12 {
            let s = setup(&topo, partition(&g, n_sub, 0).unwrap(), 1, 2);
            let dec = check_all(&s);
            assert!(
                dec.n_gp() as f64 <= 2.5 * n_sub as f64 + 2.0,
                "n_sub {n_sub}: {}",
                dec.n_gp()
            );
        }
    }

    #[test]
    fn tree_projection_is_acyclic_per_subdomain() {
        let topo = cube27();
        let s = setup(&topo, cube27_three_part_layout(), 2, 2);
        let dec = check_all(&s);
        for edges in project_tree_to_subdomains(&dec.in_tree, &s.tags, 3) {
            let mut sets = UnionFind::<usize>::new(s.graph.n_vertices);
            for e in edges {
                let [a, b] = s.graph.edges[e];
                assert!(sets.union(a, b));
            }
        }
    }

    #[test]
    fn uniform_weights_break_dirichlet_consistency() {
        let topo = cube27();
        let s = setup(&topo, SubdomainLayout::single(27), 1, 1);
        let mut failures = 0;
        for seed in 0..20 {
            let mut order: Vec<usize> = (0..s.graph.n_edges()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let tree = spanning_tree_in_order(&s.graph, &order).unwrap();
            assert!(is_spanning_tree(&s.graph, &tree));
            if let Some(DirichletWitness::Gap { edge }) =
                verify_dirichlet_consistency(&s.graph, &tree)
            {
                assert!(s.graph.edge_dirichlet[edge]);
                failures += 1;
            }
        }
        assert!(failures > 0);
    }

    #[test]
    fn no_dirichlet_boundary_is_vacuously_consistent() {
        let topo = bar();
        let s = setup(&topo, SubdomainLayout::single(2), 1, 2);
        let mut graph = s.graph.clone();
        graph.edge_dirichlet.iter_mut().for_each(|d| *d = false);
        let tree =
            spanning_tree_in_order(&graph, &(0..graph.n_edges()).collect::<Vec<_>>()).unwrap();
        assert_eq!(verify_dirichlet_consistency(&graph, &tree), None);
    }

    #[test]
    fn disconnected_graph_is_reported() {
        let topo = bar();
        let s = setup(&topo, SubdomainLayout::single(2), 1, 1);
        let mut graph = s.graph.clone();
        let keep: Vec<usize> = (0..graph.n_edges())
            .filter(|&e| !graph.edges[e].contains(&0))
            .collect();
        assert!(matches!(
            spanning_tree_in_order(&graph, &keep),
            Err(GaugeError::DisconnectedGraph { components: 2 })
        ));
        graph.edges.clear();
        assert!(!is_spanning_tree(&graph, &[]));
    }

    #[test]
    fn dot_output_lists_subdomain_edges() {
        let topo = bar();
        let s = setup(&topo, SubdomainLayout::new(vec![0, 1]).unwrap(), 1, 1);
        let dec = gauge(&s.graph, &s.tags, &s.layout).unwrap();
        let dot = subdomain_dot(&s.graph, &dec, 0);
        assert!(dot.starts_with("graph subdomain_0 {"));
        assert_eq!(dot.matches(" -- ").count(), dec.subdomains[0].n_local());
    }
}
