//! Minimal Wavefront OBJ reader/writer (`v` and `f` records only).

use std::fmt::Write as _;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::Vec3;

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tok = content.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let t = tok.next().ok_or_else(|| Error::Parse {
                        line,
                        msg: "vertex needs 3 coordinates".into(),
                    })?;
                    *c = t.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad coordinate {t:?}"),
                    })?;
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = tok.collect();
                if refs.len() != 3 {
                    return Err(Error::NonTriangularFace {
                        line,
                        count: refs.len(),
                    });
                }
                let mut f = [0usize; 3];
                for (slot, r) in f.iter_mut().zip(&refs) {
                    let head = r.split('/').next().unwrap_or("");
                    let idx: i64 = head.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad face index {r:?}"),
                    })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        -1
                    };
                    if resolved < 0 {
                        return Err(Error::IndexOutOfRange {
                            face: faces.len(),
                            index: idx.unsigned_abs() as usize,
                            count: vertices.len(),
                        });
                    }
                    *slot = resolved as usize;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.num_vertices() * 40 + mesh.num_faces() * 20);
    for v in mesh.vertices() {
        // `{:?}` on f64 prints the shortest round-tripping representation
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_obj(mesh)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;

    const TET: &str = "# tetra\nv 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";

    #[test]
    fn parses_tetrahedron() {
        let m = parse_obj(TET).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces(), m.num_edges()), (4, 4, 6));
    }

    #[test]
    fn quad_face_is_rejected() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap_err();
        assert!(matches!(err, Error::NonTriangularFace { count: 4, .. }));
        assert!(err.to_string().contains("non-triangular face"));
    }

    #[test]
    fn out_of_range_index() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 9\n").unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { .. }));
    }

    #[test]
    fn slash_and_negative_indices() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1/1/1 -2/2 -1//3\n").unwrap();
        assert_eq!(m.faces()[0], [0, 1, 2]);
    }

    #[test]
    fn icosphere_file_round_trip() {
        let s = primitives::icosphere(2, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ico.obj");
        save_obj(&s, &p).unwrap();
        let back = load_mesh(&p).unwrap();
        assert_eq!((back.num_vertices(), back.num_faces(), back.num_edges()), (162, 320, 480));
        assert_eq!(back, s);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(load_mesh("/nonexistent/x.obj"), Err(Error::Io { .. })));
    }
}
