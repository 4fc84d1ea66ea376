use std::collections::{BTreeSet, HashSet};

use crate::error::{Error, Result};
use crate::Vec3;

/// Triangle mesh with a derived, deduplicated undirected edge list.
///
/// Edges are stored as `[i, j]` with `i < j`, sorted lexicographically, so the
/// edge list does not depend on face order.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        let mut seen = HashSet::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: v,
                        count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} repeats a vertex: {f:?}"
                )));
            }
            let mut key = *f;
            key.sort_unstable();
            if !seen.insert(key) {
                return Err(Error::InvalidMesh(format!("duplicate face {fi}: {f:?}")));
            }
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        let edges = edges_of(&faces);
        Ok(TriMesh {
            vertices,
            faces,
            edges,
        })
    }

    /// Mesh with the same connectivity and new vertex positions.
    pub fn with_positions(&self, positions: Vec<Vec3>) -> Result<Self> {
        if positions.len() != self.vertices.len() {
            return Err(Error::SizeMismatch(format!(
                "{} positions for a {}-vertex mesh",
                positions.len(),
                self.vertices.len()
            )));
        }
        Ok(TriMesh {
            vertices: positions,
            faces: self.faces.clone(),
            edges: self.edges.clone(),
        })
    }

    /// Concatenate meshes into one (vertex indices offset per part).
    pub fn concat(parts: &[TriMesh]) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for p in parts {
            let off = vertices.len();
            vertices.extend_from_slice(&p.vertices);
            faces.extend(p.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        }
        TriMesh::new(vertices, faces)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bounding_box(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.vertices)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        triangle_area(&self.vertices, self.faces[face])
    }

    pub fn average_face_area(&self) -> f64 {
        if self.faces.is_empty() {
            return 0.0;
        }
        let total: f64 = (0..self.faces.len()).map(|f| self.face_area(f)).sum();
        total / self.faces.len() as f64
    }

    /// Sorted neighbor lists derived from the edge list.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &[a, b] in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Connected-component label per vertex (labels numbered by first vertex).
    pub fn component_labels(&self) -> Vec<usize> {
        component_labels(self.vertices.len(), &self.edges)
    }

    pub fn num_components(&self) -> usize {
        let labels = self.component_labels();
        labels.iter().copied().max().map_or(0, |m| m + 1)
    }
}

pub(crate) fn edges_of(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut set = BTreeSet::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            set.insert([a.min(b), a.max(b)]);
        }
    }
    set.into_iter().collect()
}

pub(crate) fn component_labels(n: usize, edges: &[[usize; 2]]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &[a, b] in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[v] = label[r];
    }
    out
}

pub fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        (Vec3::zeros(), Vec3::zeros())
    } else {
        (lo, hi)
    }
}

pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    let (lo, hi) = bounding_box(points);
    (hi - lo).norm()
}

pub fn triangle_area(vertices: &[Vec3], f: [usize; 3]) -> f64 {
    let a = vertices[f[0]];
    0.5 * (vertices[f[1]] - a).cross(&(vertices[f[2]] - a)).norm()
}

/// Divergence-theorem signed volume. For open meshes this is a pseudo-volume
/// that depends on the origin.
pub fn signed_volume(mesh: &TriMesh) -> f64 {
    signed_volume_of(mesh.vertices(), mesh.faces())
}

pub fn signed_volume_of(vertices: &[Vec3], faces: &[[usize; 3]]) -> f64 {
    faces
        .iter()
        .map(|f| vertices[f[0]].dot(&vertices[f[1]].cross(&vertices[f[2]])))
        .sum::<f64>()
        / 6.0
}

/// Per-vertex one-ring area: sum of the areas of incident faces.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexAreas(pub Vec<f64>);

impl VertexAreas {
    pub fn compute(vertices: &[Vec3], faces: &[[usize; 3]]) -> Self {
        let mut areas = vec![0.0; vertices.len()];
        for &f in faces {
            let a = triangle_area(vertices, f);
            for v in f {
                areas[v] += a;
            }
        }
        VertexAreas(areas)
    }

    pub fn of(mesh: &TriMesh) -> Self {
        Self::compute(mesh.vertices(), mesh.faces())
    }
}
