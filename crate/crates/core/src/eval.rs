//! Comparison of a fitted run against synthetic ground truth.

use std::path::Path;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_weights, save_weights, write_json};
use crate::kinematics::{blend_skin, load_poses, save_poses, PoseFrame};
use crate::skeleton::Skeleton;
use crate::skinning::{compute_skinning_weights, one_hot_parts, SkinningWeights};
use crate::synth::{read_dataset, Dataset};
use crate::Vec3;

/// Keypoints within this multiple of `√(silhouette area)` count as transferred.
pub const KEYPOINT_THRESHOLD: f64 = 0.2;

/// Costs are scaled to integers for the assignment solver.
const COST_SCALE: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub bones: usize,
    pub gt_bones: usize,
    pub bone_count_error: usize,
    /// Mean distance of optimally matched joints over the rest bbox diagonal.
    pub joint_error: f64,
    pub vertex_rms: Vec<f64>,
    pub mean_vertex_rms: f64,
    /// Symmetric Chamfer distance averaged over frames.
    pub chamfer: f64,
    pub part_agreement: f64,
    pub keypoint_transfer: f64,
}

/// Skeleton, weights and fitted poses of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub skeleton: Skeleton,
    pub weights: SkinningWeights,
    pub poses: Vec<PoseFrame>,
}

impl RunArtifacts {
    pub fn save(&self, dir: &Path) -> Result<()> {
        crate::io::create_dir(dir)?;
        self.skeleton.save(dir.join("skeleton.json"))?;
        save_weights(&self.weights, dir.join("weights.bin"))?;
        save_poses(&self.poses, dir.join("poses.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let need = |name: &str| {
            let p = dir.join(name);
            if p.exists() {
                Ok(p)
            } else {
                Err(Error::MissingArtifact(p))
            }
        };
        Ok(RunArtifacts {
            skeleton: Skeleton::load(need("skeleton.json")?)?,
            weights: load_weights(need("weights.bin")?)?,
            poses: load_poses(need("poses.json")?)?,
        })
    }
}

/// Minimum-cost matching between rows and columns of `cost`, as `(row, col)`
/// pairs; the smaller side is fully matched.
pub fn min_cost_matching(cost: &[Vec<f64>], cols: usize) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let max = cost.iter().flatten().fold(0.0f64, |m, &c| m.max(c.abs())).max(1e-300);
    let scaled = |c: f64| -((c / max) * COST_SCALE).round() as i64;
    if rows <= cols {
        let m = Matrix::from_fn(rows, cols, |(r, c)| scaled(cost[r][c]));
        kuhn_munkres(&m).1.into_iter().enumerate().collect()
    } else {
        let m = Matrix::from_fn(cols, rows, |(c, r)| scaled(cost[r][c]));
        let mut out: Vec<(usize, usize)> = kuhn_munkres(&m).1.into_iter().enumerate().map(|(c, r)| (r, c)).collect();
        out.sort_unstable();
        out
    }
}

/// Mean matched-joint distance over `diag`. When either side has no joints
/// the error is 0 if both are empty and 1 otherwise.
pub fn joint_error(fit: &[Vec3], gt: &[Vec3], diag: f64) -> f64 {
    if fit.is_empty() || gt.is_empty() {
        return if fit.len() == gt.len() { 0.0 } else { 1.0 };
    }
    let cost: Vec<Vec<f64>> = fit.iter().map(|a| gt.iter().map(|b| (a - b).norm()).collect()).collect();
    let pairs = min_cost_matching(&cost, gt.len());
    pairs.iter().map(|&(r, c)| cost[r][c]).sum::<f64>() / pairs.len() as f64 / diag
}

pub fn vertex_rms(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::SizeMismatch("vertex sets differ in size or are empty".into()));
    }
    Ok((a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / a.len() as f64).sqrt())
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
        .sum::<f64>()
        / from.len() as f64
}

/// Average of the two directed mean nearest-neighbour distances.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::SizeMismatch("chamfer of an empty point set".into()));
    }
    Ok(0.5 * (mean_nearest(a, b) + mean_nearest(b, a)))
}

/// Fraction of vertices whose part agrees after the best one-to-one
/// matching of fitted parts to ground-truth parts.
pub fn part_agreement(fit: &[usize], fit_parts: usize, gt: &[usize], gt_parts: usize) -> Result<f64> {
    if fit.len() != gt.len() || fit.is_empty() {
        return Err(Error::SizeMismatch("label vectors differ in size or are empty".into()));
    }
    if fit.iter().any(|&l| l >= fit_parts) || gt.iter().any(|&l| l >= gt_parts) {
        return Err(Error::SizeMismatch("label out of range".into()));
    }
    let mut counts = vec![vec![0.0; gt_parts]; fit_parts];
    for (&a, &b) in fit.iter().zip(gt) {
        counts[a][b] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|c| -c).collect()).collect();
    let agree: f64 = min_cost_matching(&cost, gt_parts).iter().map(|&(r, c)| counts[r][c]).sum();
    Ok(agree / fit.len() as f64)
}

/// Ground-truth joint positions followed by bone midpoints, each with the
/// ground-truth bone whose motion carries it.
pub fn keypoints(gt: &Skeleton) -> Vec<(Vec3, usize)> {
    gt.joints
        .iter()
        .map(|j| (j.position, j.bone_a))
        .chain(gt.bones.iter().enumerate().map(|(b, bone)| (bone.center, b)))
        .collect()
}

/// Fraction of (keypoint, frame) pairs whose projection through the fitted
/// skeleton lands within `KEYPOINT_THRESHOLD·√|S|` pixels of the projection
/// of the ground-truth motion. Fitted keypoints are blended with skinning
/// weights evaluated at the keypoint.
pub fn keypoint_transfer(fit: &RunArtifacts, gt: &Dataset, temperature: f64) -> Result<f64> {
    let frames = gt.poses.len();
    if fit.poses.len() != frames || gt.frames.cameras.len() != frames || gt.frames.silhouettes.len() != frames {
        return Err(Error::SizeMismatch("fitted and ground-truth frame counts differ".into()));
    }
    let kps = keypoints(&gt.skeleton);
    if kps.is_empty() || frames == 0 {
        return Err(Error::SizeMismatch("no keypoints to transfer".into()));
    }
    let rest: Vec<Vec3> = kps.iter().map(|k| k.0).collect();
    let w = compute_skinning_weights(&rest, &fit.skeleton, None, temperature)?;
    let mut hits = 0usize;
    for f in 0..frames {
        let cam = &gt.frames.cameras[f];
        let th = KEYPOINT_THRESHOLD * gt.frames.silhouettes[f].area().sqrt();
        let moved = blend_skin(&rest, &w, &fit.poses[f])?;
        for ((p, b), q) in kps.iter().zip(&moved) {
            let truth = cam.project(&gt.poses[f].composite(*b).apply(p))?;
            let guess = cam.project(q)?;
            if (truth - guess).norm() <= th {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (frames * kps.len()) as f64)
}

pub fn evaluate(fit: &RunArtifacts, gt: &Dataset, temperature: f64) -> Result<EvalMetrics> {
    let rest = gt.mesh.vertices();
    if fit.weights.num_vertices() != rest.len() || fit.weights.num_bones() != fit.skeleton.num_bones() {
        return Err(Error::SizeMismatch("run weights do not match mesh and skeleton".into()));
    }
    let diag = gt.mesh.bbox_diagonal();
    let fit_joints: Vec<Vec3> = fit.skeleton.joints.iter().map(|j| j.position).collect();
    let gt_joints: Vec<Vec3> = gt.skeleton.joints.iter().map(|j| j.position).collect();
    let mut rms = Vec::with_capacity(fit.poses.len());
    let mut cham = 0.0;
    for (pose, target) in fit.poses.iter().zip(&gt.frames.targets) {
        let posed = blend_skin(rest, &fit.weights, pose)?;
        rms.push(vertex_rms(&posed, target)?);
        cham += chamfer(&posed, target)?;
    }
    if rms.is_empty() {
        return Err(Error::SizeMismatch("no frames to evaluate".into()));
    }
    let parts = one_hot_parts(&fit.weights);
    let metrics = EvalMetrics {
        bones: fit.skeleton.num_bones(),
        gt_bones: gt.skeleton.num_bones(),
        bone_count_error: fit.skeleton.num_bones().abs_diff(gt.skeleton.num_bones()),
        joint_error: joint_error(&fit_joints, &gt_joints, diag),
        mean_vertex_rms: rms.iter().sum::<f64>() / rms.len() as f64,
        vertex_rms: rms,
        chamfer: cham / fit.poses.len() as f64,
        part_agreement: part_agreement(&parts.labels, fit.skeleton.num_bones(), &gt.labels, gt.skeleton.num_bones())?,
        keypoint_transfer: keypoint_transfer(fit, gt, temperature)?,
    };
    if !metrics.joint_error.is_finite() || !metrics.chamfer.is_finite() {
        return Err(Error::NonFinite("evaluation metrics".into()));
    }
    Ok(metrics)
}

/// Evaluates `run_dir` against the dataset in `gt_dir` and writes
/// `run_dir/metrics.json`.
pub fn eval_dirs(run_dir: &Path, gt_dir: &Path, temperature: f64) -> Result<EvalMetrics> {
    let fit = RunArtifacts::load(run_dir)?;
    let gt = read_dataset(gt_dir)?;
    let m = evaluate(&fit, &gt, temperature)?;
    write_json(&m, run_dir.join("metrics.json"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::RigidTransform;
    use crate::synth::{generate, preset, FrameData};
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn dataset(name: &str) -> Dataset {
        let (mesh, gt) = generate(&preset(name).unwrap()).unwrap();
        Dataset {
            frames: FrameData::from_ground_truth(&gt),
            skeleton: gt.skeleton.clone(),
            labels: gt.labels.clone(),
            poses: gt.poses.clone(),
            mesh,
        }
    }

    fn perfect(gt: &Dataset) -> RunArtifacts {
        RunArtifacts {
            skeleton: gt.skeleton.clone(),
            weights: SkinningWeights::from_labels(&gt.labels, gt.skeleton.num_bones()).unwrap(),
            poses: gt.poses.clone(),
        }
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let gt = dataset("arm3");
        let m = evaluate(&perfect(&gt), &gt, 1.0).unwrap();
        assert_eq!(m.bone_count_error, 0);
        assert!(m.joint_error.abs() < 1e-15);
        assert!(m.mean_vertex_rms < 1e-12);
        assert!(m.chamfer < 1e-12);
        assert_eq!(m.part_agreement, 1.0);
        assert_eq!(m.keypoint_transfer, 1.0);
    }

    #[test]
    fn extra_bone_counts_once() {
        let gt = dataset("arm3");
        let mut fit = perfect(&gt);
        let mut bones = fit.skeleton.bones.clone();
        let extra = crate::skeleton::Bone::along(Vec3::new(3.2, 0.0, 0.0), &Vec3::x(), 0.2, 0.1);
        bones.push(extra);
        let mut joints = fit.skeleton.joints.clone();
        joints.push(crate::skeleton::Joint::new(2, 3, Vec3::new(3.1, 0.0, 0.0)));
        fit.skeleton = Skeleton::new(bones, joints).unwrap();
        let labels: Vec<usize> = gt.labels.clone();
        fit.weights = SkinningWeights::from_labels(&labels, 4).unwrap();
        for p in &mut fit.poses {
            p.per_bone.push(p.per_bone[2].clone());
        }
        let m = evaluate(&fit, &gt, 1.0).unwrap();
        assert_eq!(m.bone_count_error, 1);
        assert!(m.joint_error < 1e-15);
    }

    #[test]
    fn small_pose_perturbation_keeps_keypoints() {
        let gt = dataset("arm3");
        let mut fit = perfect(&gt);
        let one_degree = 1f64.to_radians();
        for p in &mut fit.poses {
            for (b, t) in p.per_bone.iter_mut().enumerate().skip(1) {
                let pivot = gt.skeleton.joints[b - 1].position;
                let wobble = RigidTransform::about(pivot, &Vec3::z(), one_degree);
                *t = t.compose(&wobble);
            }
        }
        let pck = keypoint_transfer(&fit, &gt, 1.0).unwrap();
        assert!(pck >= 0.95, "{pck}");
    }

    #[test]
    fn matching_examples() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]];
        assert_eq!(min_cost_matching(&cost, 3), vec![(0, 1), (1, 0)]);
        let tall = vec![vec![1.0], vec![0.5], vec![2.0]];
        assert_eq!(min_cost_matching(&tall, 1), vec![(1, 0)]);
        let a = [Vec3::zeros(), Vec3::x()];
        let b = [Vec3::x() * 1.1, Vec3::zeros()];
        assert!((joint_error(&a, &b, 2.0) - 0.025).abs() < 1e-12);
        assert_eq!(joint_error(&[], &[], 1.0), 0.0);
        assert_eq!(joint_error(&a, &[], 1.0), 1.0);
    }

    #[test]
    fn agreement_examples() {
        assert_eq!(part_agreement(&[1, 1, 0, 0], 2, &[0, 0, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(part_agreement(&[0, 0, 0, 0], 1, &[0, 0, 1, 1], 2).unwrap(), 0.5);
        assert!(part_agreement(&[0], 1, &[0, 1], 2).is_err());
    }

    proptest! {
        #[test]
        fn chamfer_properties(
            pts in proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), 1..30),
            angle in 0.0f64..6.0,
        ) {
            let a: Vec<Vec3> = pts.iter().map(|p| Vec3::from(*p)).collect();
            prop_assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
            let r = UnitQuaternion::from_scaled_axis(Vec3::z() * angle);
            let b: Vec<Vec3> = a.iter().map(|p| r * p).collect();
            let ab = chamfer(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - chamfer(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
