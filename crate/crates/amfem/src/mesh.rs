//! Conforming 2D triangle meshes with newest-vertex bisection.
//!
//! A [`Mesh`] is immutable after construction. Refinement ([`Mesh::bisect`],
//! [`Mesh::uniform_refine`]) returns a new mesh together with a
//! [`RefinementTrace`] relating it to its parent. Construction validates the
//! full conformity contract: positive orientation, every edge shared by one
//! (boundary) or two (interior) triangles with opposite traversal directions,
//! no duplicate triangles, no unreferenced vertices, consistent boundary
//! flags, a connected dual graph, and Euler characteristic 1 (no holes).
//!
//! Triangles are stored as `[peak, a, b]` in counterclockwise order where
//! `(a, b)` is the refinement edge (the edge opposite the peak vertex). On
//! construction from raw arrays or a file the refinement edge is the longest
//! edge, ties broken by lowest global edge index; under bisection children
//! receive the standard newest-vertex labels.

use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_mesh_id() -> u64 {
    NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("triangle {tri} references vertex {vertex}, but there are only {n_vertices} vertices")]
    IndexOutOfRange {
        tri: usize,
        vertex: usize,
        n_vertices: usize,
    },
    #[error("triangle {0} repeats a vertex")]
    RepeatedVertex(usize),
    #[error("triangle {0} has non-positive signed area {1:e}")]
    NonPositiveArea(usize, f64),
    #[error("triangle {0} duplicates triangle {1} (same vertex set)")]
    DuplicateTriangle(usize, usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    OverSharedEdge(usize, usize),
    #[error("edge ({0}, {1}) is traversed twice in the same direction (overlapping or inverted triangles)")]
    InconsistentOrientation(usize, usize),
    #[error("vertex {0} is not referenced by any triangle")]
    UnreferencedVertex(usize),
    #[error("vertex {vertex}: stored boundary flag {stored} contradicts the flag {derived} derived from edge incidence")]
    BoundaryFlagMismatch {
        vertex: usize,
        stored: bool,
        derived: bool,
    },
    #[error("mesh is disconnected (dual graph has more than one component)")]
    Disconnected,
    #[error("mesh is not simply connected (Euler characteristic {0}, expected 1)")]
    NotSimplyConnected(i64),
    #[error("mark set was built for a different mesh")]
    MarkSetMeshMismatch,
    #[error("mark set entry {0} is out of range or duplicated")]
    InvalidMark(usize),
    #[error("mesh has no vertices or no triangles")]
    Empty,
}

/// Where a marking came from; carried along so reports can attribute marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkProvenance {
    Sigma,
    Total,
    Union,
}

/// A validated set of triangle indices of one specific mesh.
#[derive(Debug, Clone)]
pub struct MarkSet {
    mesh_id: u64,
    triangles: Vec<usize>,
    provenance: MarkProvenance,
}

impl MarkSet {
    /// Sorts the indices and rejects out-of-range or duplicate entries.
    pub fn new(
        mesh: &Mesh,
        mut triangles: Vec<usize>,
        provenance: MarkProvenance,
    ) -> Result<Self, MeshError> {
        triangles.sort_unstable();
        for (i, &t) in triangles.iter().enumerate() {
            if t >= mesh.n_triangles() || (i > 0 && triangles[i - 1] == t) {
                return Err(MeshError::InvalidMark(t));
            }
        }
        Ok(MarkSet {
            mesh_id: mesh.id(),
            triangles,
            provenance,
        })
    }

    pub fn all(mesh: &Mesh, provenance: MarkProvenance) -> Self {
        MarkSet {
            mesh_id: mesh.id(),
            triangles: (0..mesh.n_triangles()).collect(),
            provenance,
        }
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn triangles(&self) -> &[usize] {
        &self.triangles
    }

    pub fn provenance(&self) -> MarkProvenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// How each vertex of a refined mesh relates to its parent mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexOrigin {
    /// Same vertex (and same index) as in the parent mesh.
    Old(usize),
    /// Midpoint of the parent-mesh edge with these endpoint vertex indices.
    Midpoint(usize, usize),
}

/// Parent→child bookkeeping produced by one refinement step.
#[derive(Debug, Clone)]
pub struct RefinementTrace {
    pub coarse_id: u64,
    pub fine_id: u64,
    /// For each fine triangle, the index of the coarse triangle containing it.
    pub parent: Vec<usize>,
    /// For each fine vertex, where it came from.
    pub vertex_origin: Vec<VertexOrigin>,
}

impl RefinementTrace {
    /// Children of each coarse triangle, derived from the parent map.
    pub fn children(&self, n_coarse: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_coarse];
        for (child, &p) in self.parent.iter().enumerate() {
            out[p].push(child);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeshMetrics {
    pub h_max: f64,
    pub min_angle: f64,
    pub n_elements: usize,
    pub n_interior_edges: usize,
    pub n_interior_vertices: usize,
}

/// An immutable conforming triangulation with derived adjacency.
#[derive(Debug, Clone)]
pub struct Mesh {
    id: u64,
    vertices: Vec<[f64; 2]>,
    boundary_vertex: Vec<bool>,
    /// `[peak, a, b]`, counterclockwise; refinement edge is `(a, b)`.
    triangles: Vec<[usize; 3]>,
    generation: Vec<u32>,
    /// Sorted pairs `lo < hi`, in lexicographic order.
    edges: Vec<[usize; 2]>,
    boundary_edge: Vec<bool>,
    /// `tri_edges[t][i]` is the edge opposite local vertex `i` of triangle `t`.
    tri_edges: Vec<[usize; 3]>,
    /// Adjacent triangles per edge, in ascending triangle order.
    edge_tris: Vec<[Option<usize>; 2]>,
    interior_vertex_ids: Vec<usize>,
    interior_edge_ids: Vec<usize>,
    edge_lookup: HashMap<(usize, usize), usize>,
}

impl Mesh {
    // ----- construction ---------------------------------------------------

    /// Builds and validates a mesh from raw arrays. The refinement edge of
    /// every triangle is set to its longest edge (ties: lowest edge index).
    pub fn from_arrays(
        vertices: Vec<[f64; 2]>,
        boundary_vertex: Vec<bool>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        let n = triangles.len();
        Self::build(vertices, boundary_vertex, triangles, vec![0; n], true)
    }

    fn build(
        vertices: Vec<[f64; 2]>,
        boundary_vertex: Vec<bool>,
        mut triangles: Vec<[usize; 3]>,
        generation: Vec<u32>,
        relabel: bool,
    ) -> Result<Self, MeshError> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::IndexOutOfRange {
                        tri: t,
                        vertex: v,
                        n_vertices: nv,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::RepeatedVertex(t));
            }
            let a = signed_area(&vertices, tri);
            if a <= 0.0 {
                return Err(MeshError::NonPositiveArea(t, a));
            }
        }

        // Deterministic global edge enumeration: lexicographic sorted pairs.
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(3 * triangles.len());
        for tri in &triangles {
            for i in 0..3 {
                let (u, v) = (tri[i], tri[(i + 1) % 3]);
                pairs.push((u.min(v), u.max(v)));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let edges: Vec<[usize; 2]> = pairs.iter().map(|&(a, b)| [a, b]).collect();
        let edge_lookup: HashMap<(usize, usize), usize> =
            pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();

        if relabel {
            for tri in triangles.iter_mut() {
                *tri = rotate_to_longest_edge(&vertices, *tri, &edge_lookup);
            }
        }

        // Edge incidence, traversal directions, duplicate triangles.
        let ne = edges.len();
        let mut edge_tris: Vec<[Option<usize>; 2]> = vec![[None, None]; ne];
        let mut forward_seen = vec![false; ne]; // traversed lo -> hi
        let mut backward_seen = vec![false; ne]; // traversed hi -> lo
        let mut tri_edges = vec![[0usize; 3]; triangles.len()];
        let mut seen_sets: HashMap<[usize; 3], usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            let mut key = *tri;
            key.sort_unstable();
            if let Some(&first) = seen_sets.get(&key) {
                return Err(MeshError::DuplicateTriangle(t, first));
            }
            seen_sets.insert(key, t);
            for i in 0..3 {
                // Edge opposite local vertex i, traversed in boundary order.
                let (u, v) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
                let e = edge_lookup[&(u.min(v), u.max(v))];
                tri_edges[t][i] = e;
                let fwd = u < v;
                let seen = if fwd {
                    &mut forward_seen
                } else {
                    &mut backward_seen
                };
                if seen[e] {
                    return Err(MeshError::InconsistentOrientation(edges[e][0], edges[e][1]));
                }
                seen[e] = true;
                if edge_tris[e][0].is_none() {
                    edge_tris[e][0] = Some(t);
                } else if edge_tris[e][1].is_none() {
                    edge_tris[e][1] = Some(t);
                } else {
                    return Err(MeshError::OverSharedEdge(edges[e][0], edges[e][1]));
                }
            }
        }

        let boundary_edge: Vec<bool> = edge_tris.iter().map(|et| et[1].is_none()).collect();

        // Boundary flags must match edge-derived incidence exactly.
        let mut derived_bnd = vec![false; nv];
        for (e, edge) in edges.iter().enumerate() {
            if boundary_edge[e] {
                derived_bnd[edge[0]] = true;
                derived_bnd[edge[1]] = true;
            }
        }
        let mut referenced = vec![false; nv];
        for tri in &triangles {
            for &v in tri {
                referenced[v] = true;
            }
        }
        for v in 0..nv {
            if !referenced[v] {
                return Err(MeshError::UnreferencedVertex(v));
            }
            if boundary_vertex[v] != derived_bnd[v] {
                return Err(MeshError::BoundaryFlagMismatch {
                    vertex: v,
                    stored: boundary_vertex[v],
                    derived: derived_bnd[v],
                });
            }
        }

        // Dual-graph connectivity (triangles linked through interior edges).
        let nt = triangles.len();
        let mut visited = vec![false; nt];
        let mut stack = vec![0usize];
        visited[0] = true;
        let mut count = 1;
        while let Some(t) = stack.pop() {
            for &e in &tri_edges[t] {
                for ot in edge_tris[e].iter().flatten() {
                    if !visited[*ot] {
                        visited[*ot] = true;
                        count += 1;
                        stack.push(*ot);
                    }
                }
            }
        }
        if count != nt {
            return Err(MeshError::Disconnected);
        }
        let chi = nv as i64 - ne as i64 + nt as i64;
        if chi != 1 {
            return Err(MeshError::NotSimplyConnected(chi));
        }

        let interior_vertex_ids: Vec<usize> = (0..nv).filter(|&v| !boundary_vertex[v]).collect();
        let interior_edge_ids: Vec<usize> = (0..ne).filter(|&e| !boundary_edge[e]).collect();

        Ok(Mesh {
            id: fresh_mesh_id(),
            vertices,
            boundary_vertex,
            triangles,
            generation,
            edges,
            boundary_edge,
            tri_edges,
            edge_tris,
            interior_vertex_ids,
            interior_edge_ids,
            edge_lookup,
        })
    }

    // ----- fixtures --------------------------------------------------------

    /// Unit square split by the diagonal (0,0)-(1,1): 4 vertices, 5 edges,
    /// 2 triangles, no interior vertices.
    pub fn unit_square_two_triangles() -> Mesh {
        Mesh::from_arrays(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![true; 4],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .expect("fixture must be valid")
    }

    /// Unit square fanned from its center: 5 vertices, 8 edges, 4 triangles,
    /// 1 interior vertex and 4 interior edges (the smallest mesh on which all
    /// three discrete spaces are nonempty).
    pub fn criss_cross() -> Mesh {
        Mesh::from_arrays(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]],
            vec![true, true, true, true, false],
            vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
        )
        .expect("fixture must be valid")
    }

    /// Unit square as a 2x2 grid of squares, each split by the diagonal
    /// pointing at the center: 9 vertices, 16 edges, 8 triangles, 1 interior
    /// vertex.
    pub fn criss_cross_2x2() -> Mesh {
        let vertices = vec![
            [0.0, 0.0],
            [0.5, 0.0],
            [1.0, 0.0],
            [0.0, 0.5],
            [0.5, 0.5],
            [1.0, 0.5],
            [0.0, 1.0],
            [0.5, 1.0],
            [1.0, 1.0],
        ];
        let boundary = vec![true, true, true, true, false, true, true, true, true];
        let triangles = vec![
            [0, 1, 4],
            [0, 4, 3],
            [1, 2, 4],
            [2, 5, 4],
            [3, 4, 6],
            [4, 7, 6],
            [4, 5, 8],
            [4, 8, 7],
        ];
        Mesh::from_arrays(vertices, boundary, triangles).expect("fixture must be valid")
    }

    /// L-shaped domain (-1,1)^2 minus the closed fourth quadrant, fanned from
    /// the reentrant corner at the origin: 8 vertices, 13 edges, 6 triangles.
    /// The origin sits on the boundary, so there are no interior vertices;
    /// runs on this domain start from at least one refinement.
    pub fn l_shape_fan() -> Mesh {
        let vertices = vec![
            [0.0, 0.0],
            [1.0, 0.0],
            [1.0, 1.0],
            [0.0, 1.0],
            [-1.0, 1.0],
            [-1.0, 0.0],
            [-1.0, -1.0],
            [0.0, -1.0],
        ];
        let boundary = vec![true; 8];
        let triangles = vec![
            [0, 1, 2],
            [0, 2, 3],
            [0, 3, 4],
            [0, 4, 5],
            [0, 5, 6],
            [0, 6, 7],
        ];
        Mesh::from_arrays(vertices, boundary, triangles).expect("fixture must be valid")
    }

    // ----- basic accessors --------------------------------------------------

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// `[peak, a, b]` with refinement edge `(a, b)`, counterclockwise.
    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Endpoints `lo < hi` of edge `e`; the global orientation is lo → hi.
    pub fn edge(&self, e: usize) -> [usize; 2] {
        self.edges[e]
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn generation(&self, t: usize) -> u32 {
        self.generation[t]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn is_boundary_edge(&self, e: usize) -> bool {
        self.boundary_edge[e]
    }

    /// Edge opposite local vertex `i` of triangle `t`.
    pub fn tri_edges(&self, t: usize) -> [usize; 3] {
        self.tri_edges[t]
    }

    /// The one or two triangles adjacent to edge `e` (ascending order).
    pub fn edge_tris(&self, e: usize) -> [Option<usize>; 2] {
        self.edge_tris[e]
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_lookup.get(&(a.min(b), a.max(b))).copied()
    }

    /// Interior (non-boundary) vertex indices, ascending.
    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior_vertex_ids
    }

    /// Interior (non-boundary) edge indices, ascending.
    pub fn interior_edges(&self) -> &[usize] {
        &self.interior_edge_ids
    }

    // ----- geometry ----------------------------------------------------------

    pub fn points(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.triangles[t];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let p = self.points(t);
        [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt()
    }

    /// Longest side of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        self.tri_edges[t]
            .iter()
            .map(|&e| self.edge_length(e))
            .fold(0.0, f64::max)
    }

    /// Smallest interior angle of triangle `t`, in radians.
    pub fn min_angle_of(&self, t: usize) -> f64 {
        let p = self.points(t);
        let mut min = f64::INFINITY;
        for i in 0..3 {
            let a = p[i];
            let b = p[(i + 1) % 3];
            let c = p[(i + 2) % 3];
            let u = [b[0] - a[0], b[1] - a[1]];
            let v = [c[0] - a[0], c[1] - a[1]];
            let dot = u[0] * v[0] + u[1] * v[1];
            let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
            let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
            let angle = (dot / (nu * nv)).clamp(-1.0, 1.0).acos();
            min = min.min(angle);
        }
        min
    }

    /// Whether point `p` lies in (closed) triangle `t`, up to `tol` in
    /// barycentric coordinates.
    pub fn contains_point(&self, t: usize, p: [f64; 2], tol: f64) -> bool {
        let [a, b, c] = self.points(t);
        let area = self.area(t);
        let l0 = cross_diff(b, c, p) / (2.0 * area);
        let l1 = cross_diff(c, a, p) / (2.0 * area);
        let l2 = cross_diff(a, b, p) / (2.0 * area);
        l0 >= -tol && l1 >= -tol && l2 >= -tol
    }

    pub fn metrics(&self) -> MeshMetrics {
        let h_max = (0..self.n_triangles())
            .map(|t| self.area(t).sqrt())
            .fold(0.0, f64::max);
        let min_angle = (0..self.n_triangles())
            .map(|t| self.min_angle_of(t))
            .fold(f64::INFINITY, f64::min);
        MeshMetrics {
            h_max,
            min_angle,
            n_elements: self.n_triangles(),
            n_interior_edges: self.interior_edge_ids.len(),
            n_interior_vertices: self.interior_vertex_ids.len(),
        }
    }

    // ----- refinement ---------------------------------------------------------

    /// Bisects every marked triangle at least once and completes the mesh so
    /// the result is conforming. Unmarked triangles are split only as far as
    /// completion requires (one or two bisections).
    pub fn bisect(&self, marked: &MarkSet) -> Result<(Mesh, RefinementTrace), MeshError> {
        if marked.mesh_id() != self.id {
            return Err(MeshError::MarkSetMeshMismatch);
        }
        for &t in marked.triangles() {
            if t >= self.n_triangles() {
                return Err(MeshError::InvalidMark(t));
            }
        }
        if marked.is_empty() {
            let mesh = self.clone();
            let trace = RefinementTrace {
                coarse_id: self.id,
                fine_id: mesh.id,
                parent: (0..self.n_triangles()).collect(),
                vertex_origin: (0..self.n_vertices()).map(VertexOrigin::Old).collect(),
            };
            return Ok((mesh, trace));
        }

        // Closure: an edge set S such that whenever a triangle has any edge
        // in S, its refinement edge is in S too. Splitting every triangle at
        // its in-S edges (refinement edge first, then the others one level
        // deeper) then yields a conforming mesh in a single pass: the only
        // splittable edge of a child is its own refinement edge, which is an
        // original edge of the parent.
        let mut in_s = vec![false; self.n_edges()];
        let mut work: Vec<usize> = Vec::new();
        let add_edge = |e: usize, in_s: &mut Vec<bool>, work: &mut Vec<usize>| {
            if !in_s[e] {
                in_s[e] = true;
                work.push(e);
            }
        };
        for &t in marked.triangles() {
            add_edge(self.tri_edges[t][0], &mut in_s, &mut work);
        }
        while let Some(e) = work.pop() {
            for t in self.edge_tris[e].iter().flatten() {
                add_edge(self.tri_edges[*t][0], &mut in_s, &mut work);
            }
        }

        Ok(self.split_edges(&in_s))
    }

    /// One uniform refinement round: every triangle is bisected at its
    /// refinement edge (plus completion splits where a neighbor's refinement
    /// edge cuts it). Mesh size halves every two rounds.
    pub fn uniform_refine(&self) -> (Mesh, RefinementTrace) {
        let marked = MarkSet::all(self, MarkProvenance::Total);
        self.bisect(&marked)
            .expect("uniform refinement of a valid mesh cannot fail")
    }

    /// Splits exactly the edges with `in_s[e] = true`; the set must already be
    /// closed (triangle has edge in S ⟹ its refinement edge in S).
    fn split_edges(&self, in_s: &[bool]) -> (Mesh, RefinementTrace) {
        let mut vertices = self.vertices.clone();
        let mut flags = self.boundary_vertex.clone();
        let mut origin: Vec<VertexOrigin> =
            (0..self.n_vertices()).map(VertexOrigin::Old).collect();
        let mut midpoint: Vec<Option<usize>> = vec![None; self.n_edges()];
        for e in 0..self.n_edges() {
            if in_s[e] {
                let [a, b] = self.edges[e];
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                midpoint[e] = Some(vertices.len());
                vertices.push([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]);
                flags.push(self.boundary_edge[e]);
                origin.push(VertexOrigin::Midpoint(a, b));
            }
        }

        let mut triangles: Vec<[usize; 3]> = Vec::with_capacity(self.n_triangles() * 2);
        let mut generation: Vec<u32> = Vec::with_capacity(self.n_triangles() * 2);
        let mut parent: Vec<usize> = Vec::with_capacity(self.n_triangles() * 2);
        for t in 0..self.n_triangles() {
            let [p, a, b] = self.triangles[t];
            let g = self.generation[t];
            let e_ref = self.tri_edges[t][0];
            let emit = |tri: [usize; 3], gen: u32, triangles: &mut Vec<[usize; 3]>,
                        generation: &mut Vec<u32>, parent: &mut Vec<usize>| {
                triangles.push(tri);
                generation.push(gen);
                parent.push(t);
            };
            match midpoint[e_ref] {
                None => emit([p, a, b], g, &mut triangles, &mut generation, &mut parent),
                Some(m) => {
                    // Children [m, p, a] and [m, b, p]: counterclockwise, with
                    // the parent's remaining original edges as their
                    // refinement edges.
                    for &(child, e_child) in
                        &[([m, p, a], self.tri_edges[t][2]), ([m, b, p], self.tri_edges[t][1])]
                    {
                        match midpoint[e_child] {
                            None => emit(child, g + 1, &mut triangles, &mut generation, &mut parent),
                            Some(m2) => {
                                let [cp, ca, cb] = child;
                                emit([m2, cp, ca], g + 2, &mut triangles, &mut generation, &mut parent);
                                emit([m2, cb, cp], g + 2, &mut triangles, &mut generation, &mut parent);
                            }
                        }
                    }
                }
            }
        }

        let mesh = Mesh::build(vertices, flags, triangles, generation, false)
            .expect("refinement of a valid mesh must be valid");
        let trace = RefinementTrace {
            coarse_id: self.id,
            fine_id: mesh.id,
            parent,
            vertex_origin: origin,
        };
        (mesh, trace)
    }

    // ----- i/o -------------------------------------------------------------

    /// Reads the text format: line 1 `NV NT`, then NV lines `x y flag`,
    /// then NT lines `v0 v1 v2`.
    pub fn load(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
        let text = std::fs::read_to_string(path)?;
        Mesh::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Mesh, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(MeshError::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
        let mut it = header.split_whitespace();
        let nv: usize = parse_token(&mut it, line, "vertex count")?;
        let nt: usize = parse_token(&mut it, line, "triangle count")?;
        let mut vertices = Vec::with_capacity(nv);
        let mut flags = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, l) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                msg: format!("expected {nv} vertex lines"),
            })?;
            let mut it = l.split_whitespace();
            let x: f64 = parse_token(&mut it, line, "x coordinate")?;
            let y: f64 = parse_token(&mut it, line, "y coordinate")?;
            let flag: u8 = parse_token(&mut it, line, "boundary flag")?;
            if flag > 1 {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("boundary flag must be 0 or 1, got {flag}"),
                });
            }
            vertices.push([x, y]);
            flags.push(flag == 1);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, l) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                msg: format!("expected {nt} triangle lines"),
            })?;
            let mut it = l.split_whitespace();
            let v0: usize = parse_token(&mut it, line, "vertex index")?;
            let v1: usize = parse_token(&mut it, line, "vertex index")?;
            let v2: usize = parse_token(&mut it, line, "vertex index")?;
            triangles.push([v0, v1, v2]);
        }
        Mesh::from_arrays(vertices, flags, triangles)
    }

    /// Writes the same text format `load` reads.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.n_vertices(), self.n_triangles());
        for v in 0..self.n_vertices() {
            let [x, y] = self.vertices[v];
            let flag = u8::from(self.boundary_vertex[v]);
            let _ = writeln!(s, "{x:?} {y:?} {flag}");
        }
        for tri in &self.triangles {
            let _ = writeln!(s, "{} {} {}", tri[0], tri[1], tri[2]);
        }
        s
    }

    /// Renders the triangulation as a standalone SVG.
    pub fn save_svg(&self, path: impl AsRef<Path>) -> Result<(), MeshError> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }

    pub fn to_svg(&self) -> String {
        let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
        let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &[x, y] in &self.vertices {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        let w = (xmax - xmin).max(1e-12);
        let h = (ymax - ymin).max(1e-12);
        let margin = 0.03 * w.max(h);
        let stroke = 0.0015 * w.max(h);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\">",
            xmin - margin,
            -(ymax + margin),
            w + 2.0 * margin,
            h + 2.0 * margin
        );
        let _ = writeln!(
            s,
            "<g stroke=\"black\" stroke-width=\"{stroke}\" fill=\"none\" stroke-linecap=\"round\">"
        );
        // SVG's y axis points down; mirror so the mesh renders upright.
        for e in 0..self.n_edges() {
            let [a, b] = self.edges[e];
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let _ = writeln!(
                s,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>",
                pa[0], -pa[1], pb[0], -pb[1]
            );
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, "</svg>");
        s
    }
}

fn signed_area(vertices: &[[f64; 2]], tri: &[usize; 3]) -> f64 {
    let a = vertices[tri[0]];
    let b = vertices[tri[1]];
    let c = vertices[tri[2]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// Twice the signed area of triangle (a, b, p).
fn cross_diff(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Cyclically rotates `tri` so the longest edge (ties: lowest global edge
/// index) sits opposite local vertex 0. Squared lengths are compared, which
/// is exact on integer-like coordinates.
fn rotate_to_longest_edge(
    vertices: &[[f64; 2]],
    tri: [usize; 3],
    edge_lookup: &HashMap<(usize, usize), usize>,
) -> [usize; 3] {
    let mut best = 0usize;
    let mut best_key = (f64::NEG_INFINITY, usize::MAX);
    for i in 0..3 {
        let (u, v) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
        let (pu, pv) = (vertices[u], vertices[v]);
        let len2 = (pv[0] - pu[0]).powi(2) + (pv[1] - pu[1]).powi(2);
        let idx = edge_lookup[&(u.min(v), u.max(v))];
        // Longer wins; equal lengths fall back to the lower edge index.
        if len2 > best_key.0 || (len2 == best_key.0 && idx < best_key.1) {
            best_key = (len2, idx);
            best = i;
        }
    }
    [tri[best], tri[(best + 1) % 3], tri[(best + 2) % 3]]
}

fn parse_token<T: std::str::FromStr>(
    it: &mut std::str::SplitWhitespace<'_>,
    line: usize,
    what: &str,
) -> Result<T, MeshError> {
    let tok = it.next().ok_or_else(|| MeshError::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| MeshError::Parse {
        line,
        msg: format!("invalid {what}: {tok:?}"),
    })
}
