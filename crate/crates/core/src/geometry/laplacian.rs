use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::{bbox_diagonal, triangle_area, TriMesh};
use crate::error::{Error, Result};
use crate::Vec3;

/// Cotangents are clamped to this magnitude.
pub const COT_CLAMP: f64 = 1e4;

/// Faces with area below `DEGENERATE_AREA * diag²` count as zero-area.
pub const DEGENERATE_AREA: f64 = 1e-14;

/// What to do with zero-area triangles while assembling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegenerateFaces {
    /// Fail, naming the first zero-area face.
    Reject,
    /// Drop the face's contribution.
    Skip,
}

/// Curvature-flow Laplacian: `L_ij = cot α_ij + cot β_ij` on edges,
/// `L_ii = -Σ_k L_ik`. Boundary edges carry a single cotangent.
#[derive(Debug, Clone)]
pub struct CotanLaplacian {
    matrix: CsrMatrix<f64>,
}

pub fn cotan_laplacian(mesh: &TriMesh) -> Result<CotanLaplacian> {
    CotanLaplacian::assemble(mesh.vertices(), mesh.faces(), DegenerateFaces::Reject)
}

fn clamped_cot(u: Vec3, v: Vec3) -> f64 {
    let cross = u.cross(&v).norm();
    let dot = u.dot(&v);
    let c = if cross > 0.0 {
        dot / cross
    } else if dot >= 0.0 {
        COT_CLAMP
    } else {
        -COT_CLAMP
    };
    c.clamp(-COT_CLAMP, COT_CLAMP)
}

impl CotanLaplacian {
    pub fn assemble(
        vertices: &[Vec3],
        faces: &[[usize; 3]],
        policy: DegenerateFaces,
    ) -> Result<Self> {
        let n = vertices.len();
        let diag = bbox_diagonal(vertices);
        let tiny = DEGENERATE_AREA * diag * diag;
        let mut off = Vec::with_capacity(faces.len() * 3);
        for (fi, &f) in faces.iter().enumerate() {
            if triangle_area(vertices, f) <= tiny {
                match policy {
                    DegenerateFaces::Reject => return Err(Error::DegenerateTriangle { face: fi }),
                    DegenerateFaces::Skip => continue,
                }
            }
            for k in 0..3 {
                let o = f[k];
                let i = f[(k + 1) % 3];
                let j = f[(k + 2) % 3];
                let c = clamped_cot(vertices[i] - vertices[o], vertices[j] - vertices[o]);
                off.push((i, j, c));
            }
        }
        let mut coo = CooMatrix::new(n, n);
        let mut diagonal = vec![0.0; n];
        for &(i, j, c) in &off {
            coo.push(i, j, c);
            coo.push(j, i, c);
            diagonal[i] -= c;
            diagonal[j] -= c;
        }
        for (i, d) in diagonal.into_iter().enumerate() {
            coo.push(i, i, d);
        }
        Ok(CotanLaplacian {
            matrix: CsrMatrix::from(&coo),
        })
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = self.matrix.row(i);
        row.col_indices()
            .iter()
            .position(|&c| c == j)
            .map_or(0.0, |k| row.values()[k])
    }

    /// `L · X` applied to each coordinate.
    pub fn apply(&self, x: &[Vec3]) -> Vec<Vec3> {
        (0..self.dim())
            .map(|i| {
                let row = self.matrix.row(i);
                row.col_indices()
                    .iter()
                    .zip(row.values())
                    .fold(Vec3::zeros(), |acc, (&j, &w)| acc + x[j] * w)
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.matrix.row(i).values().iter().sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;
    use proptest::prelude::*;

    #[test]
    fn equilateral_triangle_weights() {
        let v = vec![
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2]]).unwrap();
        let l = cotan_laplacian(&m).unwrap();
        let cot60 = 1.0 / 3f64.sqrt();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((l.get(i, j) - cot60).abs() < 1e-12);
            assert!((l.get(j, i) - cot60).abs() < 1e-12);
        }
        assert!((l.get(0, 0) + 2.0 * cot60).abs() < 1e-12);
    }

    #[test]
    fn unit_square_weights() {
        let m = primitives::quad(0.0, 1.0, 0.0, 1.0, 0.0);
        let l = cotan_laplacian(&m).unwrap();
        // both angles opposite the diagonal are right angles
        assert!(l.get(0, 2).abs() < 1e-12);
        // boundary sides: single cot 45°
        for (i, j) in [(0, 1), (1, 2), (2, 3), (0, 3)] {
            assert!((l.get(i, j) - 1.0).abs() < 1e-12);
        }
        assert_eq!(l.get(1, 3), 0.0);
        assert!((l.get(0, 0) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_face_is_named() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0), Vec3::y()];
        let m = TriMesh::new(v, vec![[0, 1, 3], [0, 1, 2]]).unwrap();
        assert!(matches!(
            cotan_laplacian(&m),
            Err(Error::DegenerateTriangle { face: 1 })
        ));
        let l = CotanLaplacian::assemble(m.vertices(), m.faces(), DegenerateFaces::Skip).unwrap();
        assert_eq!(l.get(1, 2), 0.0);
    }

    #[test]
    fn symmetric_and_edge_supported() {
        let s = primitives::icosphere(2, 1.0);
        let l = cotan_laplacian(&s).unwrap();
        let edges: std::collections::HashSet<[usize; 2]> = s.edges().iter().copied().collect();
        for i in 0..l.dim() {
            let row = l.matrix().row(i);
            for (&j, &w) in row.col_indices().iter().zip(row.values()) {
                if i != j {
                    assert!(edges.contains(&[i.min(j), i.max(j)]));
                    assert!((w - l.get(j, i)).abs() < 1e-15);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn constant_functions_are_in_the_kernel(
            jitter in proptest::collection::vec(-0.2f64..0.2, 42 * 3),
            c in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            let base = primitives::icosphere(1, 1.0);
            let pos: Vec<Vec3> = base.vertices().iter().enumerate()
                .map(|(i, p)| p + Vec3::new(jitter[3*i], jitter[3*i+1], jitter[3*i+2]))
                .collect();
            let m = base.with_positions(pos).unwrap();
            let l = cotan_laplacian(&m).unwrap();
            let cvec = Vec3::from(c);
            let out = l.apply(&vec![cvec; m.num_vertices()]);
            let scale = m.bbox_diagonal().max(1.0) * cvec.norm().max(1.0);
            for o in out {
                prop_assert!(o.amax() < 1e-9 * scale);
            }
            for s in l.row_sums() {
                prop_assert!(s.abs() < 1e-9 * scale);
            }
        }
    }
}
