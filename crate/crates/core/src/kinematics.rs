//! Rigid transforms, linear blend skinning and per-bone pose fitting.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Quaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::dr_loss;
use crate::rendering::Camera;
use crate::skinning::{RigidityCoeffs, SkinningWeights};
use crate::{Mat4, Vec3};

/// Blended matrices with a condition number above this are treated as singular.
pub const MAX_BLEND_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformDoc {
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        TransformDoc {
            q: [q.w, q.i, q.j, q.k],
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = TransformDoc::deserialize(d)?;
        let q = Quaternion::new(doc.q[0], doc.q[1], doc.q[2], doc.q[3]);
        let n = q.norm();
        if !(n.is_finite() && (n - 1.0).abs() < 1e-6) {
            return Err(serde::de::Error::custom("quaternion must have unit norm"));
        }
        Ok(RigidTransform {
            // stored exactly; unit norm already checked
            rotation: UnitQuaternion::new_unchecked(q),
            translation: Vec3::from(doc.t),
        })
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    pub fn rotation(r: UnitQuaternion<f64>) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// Rotation by `angle` about the axis through `pivot` along `axis`.
    pub fn about(pivot: Vec3, axis: &Vec3, angle: f64) -> Self {
        let r = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        Self::new(r, pivot - r * pivot)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation.to_rotation_matrix().into_inner());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Nearest rigid transform to a 4×4 matrix (rotation part projected).
    pub fn from_matrix(m: &Mat4) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let rot = Rotation3::from_matrix(&r);
        RigidTransform {
            rotation: UnitQuaternion::from_rotation_matrix(&rot),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    /// Left perturbation: rotation vector `d[0..3]` about `pivot`, then
    /// translation `d[3..6]`.
    fn perturbed(&self, d: &[f64], pivot: &Vec3) -> RigidTransform {
        let r = UnitQuaternion::from_scaled_axis(Vec3::new(d[0], d[1], d[2]));
        RigidTransform {
            rotation: r * self.rotation,
            translation: r * (self.translation - pivot) + pivot + Vec3::new(d[3], d[4], d[5]),
        }
    }
}

/// Root transform, one transform per bone, and optionally the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFrame {
    pub root: RigidTransform,
    #[serde(rename = "bones")]
    pub per_bone: Vec<RigidTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
}

impl PoseFrame {
    pub fn identity(bones: usize) -> Self {
        PoseFrame {
            root: RigidTransform::identity(),
            per_bone: vec![RigidTransform::identity(); bones],
            camera: None,
        }
    }

    pub fn num_bones(&self) -> usize {
        self.per_bone.len()
    }

    /// `T₀ ∘ T_b`, the full motion of a rigid part.
    pub fn composite(&self, b: usize) -> RigidTransform {
        self.root.compose(&self.per_bone[b])
    }

    fn params(&self) -> usize {
        6 * (1 + self.per_bone.len())
    }

    fn perturbed(&self, k: usize, d: &[f64], pivots: &[Vec3]) -> PoseFrame {
        let mut out = self.clone();
        if k == 0 {
            out.root = self.root.perturbed(d, &pivots[0]);
        } else {
            out.per_bone[k - 1] = self.per_bone[k - 1].perturbed(d, &pivots[k]);
        }
        out
    }
}

pub fn save_poses(poses: &[PoseFrame], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(poses).expect("poses serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<PoseFrame>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("poses: {e}")))
}

fn check_dims(n: usize, w: &SkinningWeights, pose: &PoseFrame) -> Result<()> {
    if w.num_vertices() != n || w.num_bones() != pose.num_bones() {
        return Err(Error::SizeMismatch(format!(
            "{n} vertices / {} bones vs weights {}×{}",
            pose.num_bones(),
            w.num_vertices(),
            w.num_bones()
        )));
    }
    Ok(())
}

/// Per-vertex `Σ_b W_{n,b} T_b` as 4×4 matrices (root excluded).
pub fn blend_matrices(w: &SkinningWeights, pose: &PoseFrame) -> Vec<Mat4> {
    let mats: Vec<Mat4> = pose.per_bone.iter().map(RigidTransform::to_matrix).collect();
    (0..w.num_vertices())
        .map(|n| {
            let mut m = Mat4::zeros();
            for (b, t) in mats.iter().enumerate() {
                let wb = w.w[(n, b)];
                if wb != 0.0 {
                    m += t * wb;
                }
            }
            m
        })
        .collect()
}

fn apply_h(m: &Mat4, p: &Vec3) -> Vec3 {
    m.fixed_view::<3, 3>(0, 0) * p + m.fixed_view::<3, 1>(0, 3)
}

/// `X_n = T₀ (Σ_b W_{n,b} T_b) X⁰_n`.
pub fn blend_skin(rest: &[Vec3], w: &SkinningWeights, pose: &PoseFrame) -> Result<Vec<Vec3>> {
    check_dims(rest.len(), w, pose)?;
    let root = pose.root.to_matrix();
    Ok(blend_matrices(w, pose)
        .iter()
        .zip(rest)
        .map(|(m, p)| apply_h(&(root * m), p))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardMode {
    /// Invert each vertex's blended matrix (exact inverse of [`blend_skin`]).
    #[default]
    ExactInverse,
    /// Blend the inverse bone transforms (approximate).
    BlendOfInverses,
}

fn condition_3x3(m: &Matrix3<f64>) -> f64 {
    let sv = m.singular_values();
    let lo = sv.min();
    if lo > 0.0 {
        sv.max() / lo
    } else {
        f64::INFINITY
    }
}

pub fn backward_blend_skin(
    posed: &[Vec3],
    w: &SkinningWeights,
    pose: &PoseFrame,
    mode: BackwardMode,
) -> Result<Vec<Vec3>> {
    check_dims(posed.len(), w, pose)?;
    let root_inv = pose.root.inverse();
    match mode {
        BackwardMode::ExactInverse => {
            let blends = blend_matrices(w, pose);
            let mut out = Vec::with_capacity(posed.len());
            for (n, (m, p)) in blends.iter().zip(posed).enumerate() {
                // a one-hot row is inverted analytically
                let row = w.w.row(n);
                if let Some(b) = row.iter().position(|&x| x == 1.0) {
                    if row.iter().filter(|&&x| x != 0.0).count() == 1 {
                        out.push(pose.per_bone[b].inverse().apply(&root_inv.apply(p)));
                        continue;
                    }
                }
                let a: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
                let condition = condition_3x3(&a);
                if condition > MAX_BLEND_CONDITION {
                    return Err(Error::SingularBlend {
                        vertex: n,
                        condition,
                    });
                }
                let t: Vec3 = m.fixed_view::<3, 1>(0, 3).into_owned();
                let lu = a.lu();
                let x = lu
                    .solve(&(root_inv.apply(p) - t))
                    .ok_or(Error::SingularBlend {
                        vertex: n,
                        condition,
                    })?;
                out.push(x);
            }
            Ok(out)
        }
        BackwardMode::BlendOfInverses => {
            let inv = PoseFrame {
                root: RigidTransform::identity(),
                per_bone: pose.per_bone.iter().map(RigidTransform::inverse).collect(),
                camera: None,
            };
            let local: Vec<Vec3> = posed.iter().map(|p| root_inv.apply(p)).collect();
            Ok(blend_matrices(w, &inv)
                .iter()
                .zip(&local)
                .map(|(m, p)| apply_h(m, p))
                .collect())
        }
    }
}

/// Weighted Kabsch: rigid `T` minimizing `Σ w_n ‖T x_n − y_n‖²`.
/// `None` when the weighted source points are (nearly) collinear.
pub fn weighted_procrustes(src: &[Vec3], dst: &[Vec3], weights: &[f64]) -> Option<RigidTransform> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let xs = src.iter().zip(weights).fold(Vec3::zeros(), |a, (p, &w)| a + p * w) / total;
    let ys = dst.iter().zip(weights).fold(Vec3::zeros(), |a, (p, &w)| a + p * w) / total;
    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for ((x, y), &w) in src.iter().zip(dst).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let dx = x - xs;
        h += dx * (y - ys).transpose() * w;
        scatter += dx * dx.transpose() * w;
    }
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return None;
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Some(RigidTransform::new(rot, ys - rot * xs))
}

/// Root fitted on all vertices, then each bone on the root-relative targets
/// with that bone's weight column.
pub fn fit_pose_procrustes(
    rest: &[Vec3],
    w: &SkinningWeights,
    targets: &[Vec3],
) -> Result<PoseFrame> {
    if rest.len() != targets.len() || w.num_vertices() != rest.len() {
        return Err(Error::SizeMismatch("rest, targets and weights must agree".into()));
    }
    let ones = vec![1.0; rest.len()];
    let root = weighted_procrustes(rest, targets, &ones).unwrap_or_else(|| {
        let c0 = rest.iter().sum::<Vec3>() / rest.len().max(1) as f64;
        let c1 = targets.iter().sum::<Vec3>() / targets.len().max(1) as f64;
        RigidTransform::translation(c1 - c0)
    });
    let inv = root.inverse();
    let local: Vec<Vec3> = targets.iter().map(|p| inv.apply(p)).collect();
    let mut per_bone = Vec::with_capacity(w.num_bones());
    for b in 0..w.num_bones() {
        let col: Vec<f64> = w.w.column(b).iter().copied().collect();
        let t = weighted_procrustes(rest, &local, &col).ok_or_else(|| Error::DegeneratePart {
            bone: b,
            reason: if col.iter().sum::<f64>() > 0.0 {
                "vertices are collinear".into()
            } else {
                "no vertices".into()
            },
        })?;
        per_bone.push(t);
    }
    Ok(PoseFrame {
        root,
        per_bone,
        camera: None,
    })
}

/// Reconstruction objective `Σ‖blend_skin(X⁰) − target‖² + η·L_DR(X⁰, X)`.
pub struct PoseObjective<'a> {
    pub rest: &'a [Vec3],
    pub weights: &'a SkinningWeights,
    pub targets: &'a [Vec3],
    pub eta: f64,
    pub edges: &'a [[usize; 2]],
    pub rigidity: Option<&'a RigidityCoeffs>,
}

impl PoseObjective<'_> {
    pub fn value(&self, pose: &PoseFrame) -> Result<f64> {
        let posed = blend_skin(self.rest, self.weights, pose)?;
        let mut e: f64 = posed
            .iter()
            .zip(self.targets)
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        if self.eta > 0.0 {
            if let Some(r) = self.rigidity {
                e += self.eta * dr_loss(self.rest, &posed, self.edges, r)?;
            }
        }
        if !e.is_finite() {
            return Err(Error::NonFinite("pose objective".into()));
        }
        Ok(e)
    }

    /// Rotation pivots: the centroid of the points each transform moves
    /// (root: all rest-frame-skinned points; bone: its weighted points).
    fn pivots(&self, pose: &PoseFrame) -> Result<Vec<Vec3>> {
        let root_free = PoseFrame {
            root: RigidTransform::identity(),
            ..pose.clone()
        };
        let local = blend_skin(self.rest, self.weights, &root_free)?;
        let n = local.len().max(1) as f64;
        let mut out = vec![local.iter().sum::<Vec3>() / n];
        for b in 0..pose.num_bones() {
            let col = self.weights.w.column(b);
            let total: f64 = col.sum();
            let c = if total > 0.0 {
                self.rest.iter().zip(col.iter()).fold(Vec3::zeros(), |a, (p, &w)| a + p * w) / total
            } else {
                Vec3::zeros()
            };
            out.push(pose.per_bone[b].apply(&c));
        }
        Ok(out)
    }

    /// Central differences over local (rotation vector about a pivot,
    /// translation) perturbations of every transform, root first.
    pub fn gradient(&self, pose: &PoseFrame, h: f64) -> Result<Vec<f64>> {
        let pivots = self.pivots(pose)?;
        self.gradient_with(pose, h, &pivots)
    }

    fn gradient_with(&self, pose: &PoseFrame, h: f64, pivots: &[Vec3]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; pose.params()];
        let mut d = [0.0; 6];
        for k in 0..=pose.num_bones() {
            for c in 0..6 {
                d[c] = h;
                let plus = self.value(&pose.perturbed(k, &d, pivots))?;
                d[c] = -h;
                let minus = self.value(&pose.perturbed(k, &d, pivots))?;
                d[c] = 0.0;
                g[6 * k + c] = (plus - minus) / (2.0 * h);
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradientConfig {
    pub iterations: usize,
    pub difference_step: f64,
    pub initial_step: f64,
    pub max_halvings: usize,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig {
            iterations: 50,
            difference_step: 1e-6,
            initial_step: 1.0,
            max_halvings: 40,
        }
    }
}

fn apply_step(pose: &PoseFrame, g: &[f64], alpha: f64, pivots: &[Vec3]) -> PoseFrame {
    let mut out = pose.clone();
    let step = |k: usize| -> [f64; 6] { std::array::from_fn(|c| -alpha * g[6 * k + c]) };
    out.root = pose.root.perturbed(&step(0), &pivots[0]);
    for b in 0..pose.num_bones() {
        out.per_bone[b] = pose.per_bone[b].perturbed(&step(b + 1), &pivots[b + 1]);
    }
    out
}

/// Gradient descent with backtracking; the result never scores worse than
/// `init`.
pub fn refine_pose_gradient(
    objective: &PoseObjective<'_>,
    init: &PoseFrame,
    cfg: &GradientConfig,
) -> Result<PoseFrame> {
    let mut pose = init.clone();
    let mut value = objective.value(&pose)?;
    let mut alpha = cfg.initial_step;
    for _ in 0..cfg.iterations {
        let pivots = objective.pivots(&pose)?;
        let g = objective.gradient_with(&pose, cfg.difference_step, &pivots)?;
        let gnorm2: f64 = g.iter().map(|x| x * x).sum();
        if !(gnorm2 > 0.0) {
            break;
        }
        // normalise so the first trial moves by at most `alpha` per parameter
        let scale = 1.0 / gnorm2.sqrt();
        let mut accepted = false;
        let mut a = alpha;
        for _ in 0..cfg.max_halvings {
            let trial = apply_step(&pose, &g, a * scale, &pivots);
            let v = objective.value(&trial)?;
            if v < value {
                pose = trial;
                value = v;
                accepted = true;
                break;
            }
            a *= 0.5;
        }
        if !accepted {
            break;
        }
        alpha = (a * 2.0).min(cfg.initial_step);
    }
    Ok(pose)
}
