use crate::geometry::{dist, FacetDecomposition, MultipatchTopology, Point, Side, SubdomainLayout};
use crate::sparse::CsrMatrix;

use super::{CurlSpace, ScalarSpace, SplineError};

/// Global edge and relative orientation of a patch-local 1-form function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalEdge {
    pub edge: usize,
    pub sign: i8,
}

/// Vertices are glued 0-form control points, edges are 1-form basis
/// functions. Numbering is canonical: vertex classes are numbered by their
/// smallest `(patch, local index)` member, edges by their sorted endpoints.
#[derive(Debug, Clone)]
pub struct ControlGraph {
    pub scalar: ScalarSpace,
    pub space: CurlSpace,
    pub n_vertices: usize,
    /// Endpoints `[from, to]` with `from < to`.
    pub edges: Vec<[usize; 2]>,
    pub vertex_points: Vec<Point>,
    pub patch_vertices: Vec<Vec<usize>>,
    pub patch_edges: Vec<Vec<LocalEdge>>,
    pub edge_patches: Vec<Vec<usize>>,
    pub edge_dirichlet: Vec<bool>,
    pub vertex_dirichlet: Vec<bool>,
}

/// Layout- and facet-dependent edge tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphTags {
    pub edge_subdomains: Vec<Vec<usize>>,
    pub edge_facets: Vec<Vec<usize>>,
    pub vertex_subdomains: Vec<Vec<usize>>,
}

impl ControlGraph {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Local 1-form dofs lying on a side of the reference cube.
    pub fn local_edges_on_side(&self, side: Side) -> Vec<usize> {
        let n = self.space.n();
        let bound = if side.is_high() { n - 1 } else { 0 };
        (0..self.space.dim())
            .filter(|&dof| {
                let (c, idx) = self.space.multi_index(dof);
                c != side.axis() && idx[side.axis()] == bound
            })
            .collect()
    }

    pub fn local_vertices_on_side(&self, side: Side) -> Vec<usize> {
        let n = self.scalar.n();
        let bound = if side.is_high() { n - 1 } else { 0 };
        (0..self.scalar.dim())
            .filter(|&v| self.scalar.multi_index(v)[side.axis()] == bound)
            .collect()
    }

    pub fn dirichlet_edges(&self) -> Vec<usize> {
        (0..self.n_edges())
            .filter(|&e| self.edge_dirichlet[e])
            .collect()
    }

    /// Adjacency lists over vertices.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        for &[a, b] in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.n_vertices == 0 {
            return true;
        }
        let adj = self.vertex_neighbors();
        let mut seen = vec![false; self.n_vertices];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n_vertices
    }
}

pub fn control_graph(
    topology: &MultipatchTopology,
    scalar: &ScalarSpace,
    space: &CurlSpace,
) -> Result<ControlGraph, SplineError> {
    let order: Vec<usize> = (0..topology.interfaces.len()).collect();
    control_graph_in_order(topology, scalar, space, &order)
}

/// Builds the graph gluing interfaces in the given order.
pub(crate) fn control_graph_in_order(
    topology: &MultipatchTopology,
    scalar: &ScalarSpace,
    space: &CurlSpace,
    interface_order: &[usize],
) -> Result<ControlGraph, SplineError> {
    let n = scalar.n();
    let nv = scalar.dim();
    let n_patches = topology.n_patches();
    let mut parent: Vec<usize> = (0..n_patches * nv).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let point_of =
        |patch: usize, idx: [usize; 3]| topology.patches[patch].map(scalar.greville(idx));

    for &i in interface_order {
        let it = &topology.interfaces[i];
        let (sa, sb) = (it.a.side, it.b.side);
        let (ta, tb) = (sa.tangent_axes(), sb.tangent_axes());
        let bound = |s: Side| if s.is_high() { n - 1 } else { 0 };
        let scale = topology.patches[it.a.patch].diameter();
        for i1 in 0..n {
            for i0 in 0..n {
                let mut ia = [0; 3];
                ia[sa.axis()] = bound(sa);
                ia[ta[0]] = i0;
                ia[ta[1]] = i1;
                let [y0, y1] = it.orientation.apply_index([i0, i1], n);
                let mut ib = [0; 3];
                ib[sb.axis()] = bound(sb);
                ib[tb[0]] = y0;
                ib[tb[1]] = y1;
                if dist(point_of(it.a.patch, ia), point_of(it.b.patch, ib)) > 1e-8 * scale {
                    return Err(SplineError::OrientationMismatch { a: it.a, b: it.b });
                }
                let ga = it.a.patch * nv + scalar.index(ia);
                let gb = it.b.patch * nv + scalar.index(ib);
                let (ra, rb) = (find(&mut parent, ga), find(&mut parent, gb));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }

    // Roots are class minima, so first-encounter numbering is canonical.
    let mut class_id = vec![usize::MAX; n_patches * nv];
    let mut n_vertices = 0;
    let mut vertex_points = Vec::new();
    let mut patch_vertices = vec![vec![0; nv]; n_patches];
    for g in 0..n_patches * nv {
        let r = find(&mut parent, g);
        if class_id[r] == usize::MAX {
            class_id[r] = n_vertices;
            n_vertices += 1;
            vertex_points.push(point_of(g / nv, scalar.multi_index(g % nv)));
        }
        patch_vertices[g / nv][g % nv] = class_id[r];
    }

    let local_endpoints = |dof: usize| {
        let (c, idx) = space.multi_index(dof);
        let mut next = idx;
        next[c] += 1;
        (scalar.index(idx), scalar.index(next))
    };

    let mut keys: Vec<[usize; 2]> = Vec::with_capacity(n_patches * space.dim());
    for pv in &patch_vertices {
        for dof in 0..space.dim() {
            let (a, b) = local_endpoints(dof);
            let (ga, gb) = (pv[a], pv[b]);
            keys.push([ga.min(gb), ga.max(gb)]);
        }
    }
    keys.sort_unstable();
    keys.dedup();
    let edges = keys;

    let mut patch_edges = Vec::with_capacity(n_patches);
    let mut edge_patches = vec![Vec::new(); edges.len()];
    for (j, pv) in patch_vertices.iter().enumerate() {
        let mut local = Vec::with_capacity(space.dim());
        for dof in 0..space.dim() {
            let (a, b) = local_endpoints(dof);
            let (ga, gb) = (pv[a], pv[b]);
            let key = [ga.min(gb), ga.max(gb)];
            let edge = edges.binary_search(&key).expect("edge registered");
            local.push(LocalEdge {
                edge,
                sign: if ga < gb { 1 } else { -1 },
            });
            edge_patches[edge].push(j);
        }
        patch_edges.push(local);
    }
    for ep in &mut edge_patches {
        ep.dedup();
    }

    let mut graph = ControlGraph {
        scalar: scalar.clone(),
        space: space.clone(),
        n_vertices,
        edge_dirichlet: vec![false; edges.len()],
        vertex_dirichlet: vec![false; n_vertices],
        edges,
        vertex_points,
        patch_vertices,
        patch_edges,
        edge_patches,
    };
    for f in &topology.boundary {
        for dof in graph.local_edges_on_side(f.side) {
            let e = graph.patch_edges[f.patch][dof].edge;
            graph.edge_dirichlet[e] = true;
        }
        for v in graph.local_vertices_on_side(f.side) {
            let g = graph.patch_vertices[f.patch][v];
            graph.vertex_dirichlet[g] = true;
        }
    }
    Ok(graph)
}

pub fn tag_graph(
    graph: &ControlGraph,
    layout: &SubdomainLayout,
    facets: &FacetDecomposition,
) -> GraphTags {
    let edge_subdomains: Vec<Vec<usize>> = graph
        .edge_patches
        .iter()
        .map(|ps| {
            let mut s: Vec<usize> = ps.iter().map(|&j| layout.subdomain_of(j)).collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let mut vertex_subdomains = vec![Vec::new(); graph.n_vertices];
    for (j, pv) in graph.patch_vertices.iter().enumerate() {
        for &g in pv {
            vertex_subdomains[g].push(layout.subdomain_of(j));
        }
    }
    for s in &mut vertex_subdomains {
        s.sort_unstable();
        s.dedup();
    }
    let mut edge_facets = vec![Vec::new(); graph.n_edges()];
    let side_edges: Vec<Vec<usize>> = Side::ALL
        .iter()
        .map(|&s| graph.local_edges_on_side(s))
        .collect();
    for (j, pe) in graph.patch_edges.iter().enumerate() {
        for side in Side::ALL {
            if let Some(f) = facets.facet_of(crate::geometry::PatchFacet::new(j, side)) {
                for &dof in &side_edges[side.index()] {
                    edge_facets[pe[dof].edge].push(f);
                }
            }
        }
    }
    for f in &mut edge_facets {
        f.sort_unstable();
        f.dedup();
    }
    GraphTags {
        edge_subdomains,
        edge_facets,
        vertex_subdomains,
    }
}

/// Signed incidence matrix: row `(u -> v)` has `-1` at `u` and `+1` at `v`.
pub fn discrete_gradient(graph: &ControlGraph) -> CsrMatrix {
    let rows = graph
        .edges
        .iter()
        .map(|&[a, b]| vec![(a, -1.0), (b, 1.0)])
        .collect();
    CsrMatrix::from_sorted_rows(graph.n_vertices, rows)
}
