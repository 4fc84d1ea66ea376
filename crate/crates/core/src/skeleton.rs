//! Gaussian-ellipsoid bones and the joints connecting them.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::contraction::SkeletonGraph;
use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::{Mat3, Vec3};

/// Radial semi-axes never drop below this fraction of the bone length.
pub const RADIAL_FLOOR: f64 = 0.05;

/// A bone as an ellipsoid with precision `Q = VᵀΛV` (rows of `V` are the
/// principal axes, `Λ` holds inverse squared semi-axes) plus a length.
///
/// Only `center`, `Q` and `length` are stored; `V`, `Λ` are recovered by
/// eigendecomposition so serialization is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub center: Vec3,
    pub q: Mat3,
    pub length: f64,
}

fn orthonormal_frame(axis: &Vec3) -> Mat3 {
    let a = axis.normalize();
    let helper = if a.x.abs() <= a.y.abs() && a.x.abs() <= a.z.abs() {
        Vec3::x()
    } else if a.y.abs() <= a.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let b = a.cross(&helper).normalize();
    let c = a.cross(&b);
    Mat3::from_rows(&[a.transpose(), b.transpose(), c.transpose()])
}

impl Bone {
    /// Bone from principal axes (rows of `v`) and precisions `lambda`.
    pub fn from_axes(center: Vec3, v: &Mat3, lambda: &Vec3, length: f64) -> Self {
        let q = v.transpose() * Mat3::from_diagonal(lambda) * v;
        Bone {
            center,
            q: (q + q.transpose()) * 0.5,
            length,
        }
    }

    /// Capsule-like bone along `axis` with semi-axes `length/2` and `radius`.
    pub fn along(center: Vec3, axis: &Vec3, length: f64, radius: f64) -> Self {
        let half = (0.5 * length).max(radius);
        let lambda = Vec3::new(1.0 / (half * half), 1.0 / (radius * radius), 1.0 / (radius * radius));
        Bone::from_axes(center, &orthonormal_frame(axis), &lambda, length)
    }

    /// Isotropic zero-length bone.
    pub fn blob(center: Vec3, radius: f64) -> Self {
        let l = 1.0 / (radius * radius);
        Bone {
            center,
            q: Mat3::from_diagonal_element(l),
            length: 0.0,
        }
    }

    /// `(V, Λ)` with the first row of `V` the bone axis: the eigenvector whose
    /// eigenvalue is most distinct from the other two. `V` is a rotation.
    pub fn axes(&self) -> (Mat3, Vec3) {
        let eig = SymmetricEigen::new(self.q);
        let ev = eig.eigenvalues;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| ev[a].total_cmp(&ev[b]));
        // in ascending order the outlier is either the first or the last
        let (lo, mid, hi) = (ev[order[0]], ev[order[1]], ev[order[2]]);
        let first = if (mid - lo) >= (hi - mid) { order[0] } else { order[2] };
        let rest: Vec<usize> = order.iter().copied().filter(|&i| i != first).collect();
        let idx = [first, rest[0], rest[1]];
        let rows: Vec<_> = idx
            .iter()
            .map(|&i| eig.eigenvectors.column(i).transpose())
            .collect();
        let mut v = Mat3::from_rows(&rows);
        if v.determinant() < 0.0 {
            v.set_row(2, &(-v.row(2)));
        }
        (v, Vec3::new(ev[idx[0]], ev[idx[1]], ev[idx[2]]))
    }

    pub fn axis(&self) -> Vec3 {
        self.axes().0.row(0).transpose()
    }

    /// Squared Mahalanobis distance `(x−C)ᵀQ(x−C)`.
    pub fn mahalanobis(&self, x: &Vec3) -> f64 {
        let d = x - self.center;
        d.dot(&(self.q * d))
    }

    /// The two ends `C ± axis·length/2`.
    pub fn endpoints(&self) -> [Vec3; 2] {
        let a = self.axis() * (0.5 * self.length);
        [self.center - a, self.center + a]
    }

    /// `[C, Q row-major, length]`.
    pub fn pack(&self) -> [f64; 13] {
        let mut out = [0.0; 13];
        out[..3].copy_from_slice(self.center.as_slice());
        for r in 0..3 {
            for c in 0..3 {
                out[3 + 3 * r + c] = self.q[(r, c)];
            }
        }
        out[12] = self.length;
        out
    }

    pub fn unpack(p: &[f64; 13]) -> Self {
        Bone {
            center: Vec3::new(p[0], p[1], p[2]),
            q: Mat3::from_row_slice(&p[3..12]),
            length: p[12],
        }
    }

    pub fn is_spd(&self) -> bool {
        SymmetricEigen::new(self.q).eigenvalues.iter().all(|&l| l > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub bone_a: usize,
    pub bone_b: usize,
    pub position: Vec3,
}

impl Joint {
    pub fn new(a: usize, b: usize, position: Vec3) -> Self {
        Joint {
            bone_a: a.min(b),
            bone_b: a.max(b),
            position,
        }
    }

    pub fn pack(&self) -> [f64; 5] {
        [
            self.bone_a as f64,
            self.bone_b as f64,
            self.position.x,
            self.position.y,
            self.position.z,
        ]
    }

    pub fn connects(&self, b: usize) -> bool {
        self.bone_a == b || self.bone_b == b
    }

    pub fn other(&self, b: usize) -> usize {
        if self.bone_a == b {
            self.bone_b
        } else {
            self.bone_a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Skeleton {
    pub bones: Vec<Bone>,
    pub joints: Vec<Joint>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoneDoc {
    center: [f64; 3],
    #[serde(rename = "Q")]
    q: [f64; 9],
    length: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    bones: [usize; 2],
    pos: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    bones: Vec<BoneDoc>,
    joints: Vec<JointDoc>,
}

impl Skeleton {
    pub fn new(bones: Vec<Bone>, joints: Vec<Joint>) -> Result<Self> {
        let s = Skeleton { bones, joints };
        s.validate()?;
        Ok(s)
    }

    pub fn num_bones(&self) -> usize {
        self.bones.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut pairs = BTreeSet::new();
        for (k, j) in self.joints.iter().enumerate() {
            if j.bone_a == j.bone_b {
                return Err(Error::InvalidSpec(format!("joint {k} is a self-loop")));
            }
            if j.bone_a >= self.bones.len() || j.bone_b >= self.bones.len() {
                return Err(Error::InvalidSpec(format!("joint {k} references a missing bone")));
            }
            if !pairs.insert((j.bone_a.min(j.bone_b), j.bone_a.max(j.bone_b))) {
                return Err(Error::InvalidSpec(format!("joint {k} duplicates a bone pair")));
            }
        }
        for (b, bone) in self.bones.iter().enumerate() {
            let finite = bone.center.iter().chain(bone.q.iter()).all(|x| x.is_finite());
            if !finite || !(bone.length >= 0.0) {
                return Err(Error::InvalidSpec(format!("bone {b} has invalid parameters")));
            }
        }
        Ok(())
    }

    /// Indices of joints touching bone `b`.
    pub fn joints_of(&self, b: usize) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&k| self.joints[k].connects(b))
            .collect()
    }

    pub fn neighbors(&self, b: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self
            .joints
            .iter()
            .filter(|j| j.connects(b))
            .map(|j| j.other(b))
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    pub fn joint_between(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.joints
            .iter()
            .position(|j| (j.bone_a.min(j.bone_b), j.bone_a.max(j.bone_b)) == key)
    }

    pub fn pack_bones(&self) -> Vec<[f64; 13]> {
        self.bones.iter().map(Bone::pack).collect()
    }

    pub fn pack_joints(&self) -> Vec<[f64; 5]> {
        self.joints.iter().map(Joint::pack).collect()
    }

    pub fn to_json(&self) -> String {
        let doc = SkeletonDoc {
            bones: self
                .bones
                .iter()
                .map(|b| {
                    let p = b.pack();
                    BoneDoc {
                        center: [p[0], p[1], p[2]],
                        q: p[3..12].try_into().expect("9 entries"),
                        length: p[12],
                    }
                })
                .collect(),
            joints: self
                .joints
                .iter()
                .map(|j| JointDoc {
                    bones: [j.bone_a, j.bone_b],
                    pos: [j.position.x, j.position.y, j.position.z],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("skeleton serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SkeletonDoc =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("skeleton: {e}")))?;
        let bones = doc
            .bones
            .iter()
            .map(|b| Bone {
                center: Vec3::from(b.center),
                q: Mat3::from_row_slice(&b.q),
                length: b.length,
            })
            .collect();
        let joints = doc
            .joints
            .iter()
            .map(|j| Joint {
                bone_a: j.bones[0],
                bone_b: j.bones[1],
                position: Vec3::from(j.pos),
            })
            .collect();
        Skeleton::new(bones, joints).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Skeleton::from_json(&text)
    }
}

fn rms(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    (n > 0).then(|| (s / n as f64).sqrt())
}

/// One bone per graph edge (axis along the edge, semi-axis `length/2`,
/// radial semi-axes from the RMS distance of absorbed vertices to the edge
/// line), one joint per pair of edges sharing a node. Isolated nodes become
/// zero-length blobs.
pub fn skeleton_from_graph(graph: &SkeletonGraph, mesh: &TriMesh) -> Result<Skeleton> {
    if graph.nodes.is_empty() {
        return Err(Error::EmptyGraph);
    }
    graph.validate()?;
    let pos = mesh.vertices();
    let check = |v: usize| {
        if v < pos.len() {
            Ok(())
        } else {
            Err(Error::SizeMismatch(format!("absorbed vertex {v} not in mesh")))
        }
    };
    let blob_floor = 1e-3 * mesh.bbox_diagonal().max(f64::MIN_POSITIVE);
    let mut bones = Vec::new();
    let mut node_bones = vec![Vec::new(); graph.nodes.len()];
    for (ei, &[a, b]) in graph.edges.iter().enumerate() {
        let (pa, pb) = (graph.nodes[a], graph.nodes[b]);
        let len = (pb - pa).norm();
        let center = (pa + pb) * 0.5;
        for &v in &graph.absorbed[ei] {
            check(v)?;
        }
        let bone = if len > blob_floor * 1e-6 {
            let axis = (pb - pa) / len;
            let r = rms(graph.absorbed[ei].iter().map(|&v| {
                let d = pos[v] - pa;
                (d - axis * d.dot(&axis)).norm()
            }))
            .unwrap_or(0.0)
            .max(RADIAL_FLOOR * len);
            Bone::from_axes(
                center,
                &orthonormal_frame(&axis),
                &Vec3::new(4.0 / (len * len), 1.0 / (r * r), 1.0 / (r * r)),
                len,
            )
        } else {
            let r = rms(graph.absorbed[ei].iter().map(|&v| (pos[v] - center).norm()))
                .unwrap_or(0.0)
                .max(blob_floor);
            Bone::blob(center, r)
        };
        node_bones[a].push(bones.len());
        node_bones[b].push(bones.len());
        bones.push(bone);
    }
    for (n, p) in graph.nodes.iter().enumerate() {
        if graph.degree(n) == 0 {
            for &v in &graph.node_absorbed[n] {
                check(v)?;
            }
            let r = rms(graph.node_absorbed[n].iter().map(|&v| (pos[v] - p).norm()))
                .unwrap_or(0.0)
                .max(blob_floor);
            bones.push(Bone::blob(*p, r));
        }
    }
    let mut joints = Vec::new();
    for (n, list) in node_bones.iter().enumerate() {
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                joints.push(Joint::new(list[i], list[j], graph.nodes[n]));
            }
        }
    }
    Skeleton::new(bones, joints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(nodes: Vec<Vec3>, edges: Vec<[usize; 2]>) -> SkeletonGraph {
        let n = nodes.len();
        SkeletonGraph {
            absorbed: vec![Vec::new(); edges.len()],
            node_absorbed: vec![Vec::new(); n],
            nodes,
            edges,
        }
    }

    #[test]
    fn single_edge_hand_values() {
        // ring of radius 0.5 around the x axis
        let verts: Vec<Vec3> = (0..8)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / 8.0;
                Vec3::new(1.0, 0.5 * t.cos(), 0.5 * t.sin())
            })
            .collect();
        let mesh = TriMesh::new(verts, vec![]).unwrap();
        let mut g = graph(vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)], vec![[0, 1]]);
        g.absorbed[0] = (0..8).collect();
        let s = skeleton_from_graph(&g, &mesh).unwrap();
        let b = &s.bones[0];
        assert!((b.center - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(b.length, 2.0);
        let (v, l) = b.axes();
        assert!((l[0] - 1.0).abs() < 1e-9);
        assert!((l[1] - 4.0).abs() < 1e-9 && (l[2] - 4.0).abs() < 1e-9);
        assert!(v.row(0).transpose().cross(&Vec3::x()).norm() < 1e-9);
        assert!(s.joints.is_empty());
    }

    #[test]
    fn chain_and_star_joint_counts() {
        let mesh = TriMesh::new(vec![], vec![]).unwrap();
        let chain = graph(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1], [1, 2]],
        );
        let s = skeleton_from_graph(&chain, &mesh).unwrap();
        assert_eq!((s.num_bones(), s.num_joints()), (2, 1));
        assert_eq!(s.joints[0].position, Vec3::x());

        let star = graph(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
            vec![[0, 1], [0, 2], [0, 3]],
        );
        let s = skeleton_from_graph(&star, &mesh).unwrap();
        assert_eq!((s.num_bones(), s.num_joints()), (3, 3));
    }

    #[test]
    fn empty_graph_is_an_error() {
        let mesh = TriMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(
            skeleton_from_graph(&graph(vec![], vec![]), &mesh),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn json_round_trips() {
        let empty = Skeleton::new(vec![Bone::blob(Vec3::new(0.1, 0.2, 0.3), 0.7)], vec![]).unwrap();
        assert_eq!(Skeleton::from_json(&empty.to_json()).unwrap(), empty);

        let bones: Vec<Bone> = (0..19)
            .map(|i| {
                let t = i as f64 * 0.37;
                Bone::along(
                    Vec3::new(t, t.sin(), 1.0 / 3.0),
                    &Vec3::new(t.cos(), 1.0, t),
                    0.1 + t,
                    0.05 + 0.01 * t,
                )
            })
            .collect();
        let joints = (0..18).map(|i| Joint::new(i, i + 1, Vec3::new(i as f64 / 7.0, 0.0, 0.1))).collect();
        let s = Skeleton::new(bones, joints).unwrap();
        assert_eq!(Skeleton::from_json(&s.to_json()).unwrap(), s);

        let text = s.to_json();
        let cut = &text[..text.len() / 2];
        assert!(matches!(Skeleton::from_json(cut), Err(Error::Schema(_))));
    }

    #[test]
    fn rejects_self_loops_and_duplicate_pairs() {
        let b = || Bone::blob(Vec3::zeros(), 1.0);
        assert!(Skeleton::new(vec![b()], vec![Joint { bone_a: 0, bone_b: 0, position: Vec3::zeros() }]).is_err());
        assert!(Skeleton::new(
            vec![b(), b()],
            vec![Joint::new(0, 1, Vec3::zeros()), Joint::new(1, 0, Vec3::x())]
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn eigen_reconstruction_recovers_q(
            ax in proptest::array::uniform3(-1.0f64..1.0),
            len in 0.05f64..3.0,
            r in 0.01f64..0.5,
        ) {
            let axis = Vec3::from(ax);
            prop_assume!(axis.norm() > 1e-3);
            let b = Bone::along(Vec3::zeros(), &axis, len, r);
            prop_assert!(b.is_spd());
            let (v, l) = b.axes();
            prop_assert!((v.transpose() * v - Mat3::identity()).amax() < 1e-6);
            prop_assert!(l.iter().all(|&x| x > 0.0));
            let back = Bone::from_axes(b.center, &v, &l, b.length);
            prop_assert!((back.q - b.q).amax() < 1e-8);
        }
    }
}
