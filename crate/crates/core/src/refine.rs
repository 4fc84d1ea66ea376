//! Joint localization, bone-length tracking, merge/split skeleton refinement
//! and the alternating shape/skeleton optimization loop.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contraction::{
    coarsen_chains, connectivity_surgery, contract, edge_partition, ContractionConfig, SurgeryConfig,
};
use crate::error::{Error, Result};
use crate::flowwarp::{bone_flow, cosine_similarity, sample_surface_flow, BoneFlow};
use crate::geometry::TriMesh;
use crate::io::{create_dir, save_weights, write_text};
use crate::kinematics::{blend_skin, fit_pose_procrustes, weighted_procrustes, PoseFrame, RigidTransform};
use crate::losses::{
    dr_loss, flow_loss, rgb_loss, shape_loss_of, silhouette_loss, FrameLosses, LossReport, LossWeights,
};
use crate::rendering::{
    flow_from_correspondence, rasterize_silhouette, render_vertex_colors, visibility, Camera,
};
use crate::skeleton::{skeleton_from_graph, Bone, Joint, Skeleton, RADIAL_FLOOR};
use crate::skinning::{
    compute_skinning_weights, one_hot_parts, rigidity_coefficients, PartAssignment, RigidityCoeffs, SkinningWeights,
};
use crate::synth::FrameData;
use crate::{Mat3, Vec2, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Both weights of a vertex must reach this for it to support a joint.
    pub t_r: f64,
    /// Merge when the minimum flow cosine exceeds this; values ≥ 1 disable merging.
    pub t_o: f64,
    /// Split when a bone's length range exceeds `t_d ×` its mean length;
    /// infinity disables splitting.
    pub t_d: f64,
    /// Absolute split threshold; overrides `t_d` when set.
    pub t_d_absolute: Option<f64>,
    /// Frames sampled per M-step; `None` means `min(8, available)`.
    pub frames_per_step: Option<usize>,
    /// Use this lower percentile of per-frame similarities instead of the minimum.
    pub merge_percentile: Option<f64>,
    pub seed: u64,
    pub max_outer_iters: usize,
    /// Stop after this many consecutive iterations without a merge or split.
    pub quiet_iters: usize,
    pub temperature: f64,
    pub lambda: f64,
    /// Bones whose hard part has fewer vertices are pruned in the E-step.
    pub min_part_vertices: usize,
    /// Initial chains are coarsened until bones are about this fraction of
    /// the bounding-box diagonal; zero keeps the surgery graph as is.
    pub min_bone_fraction: f64,
    /// Move vertices to the adjacent bone whose rigid motion best explains
    /// their tracked trajectory before refitting bones.
    pub motion_reassign: bool,
    pub losses: LossWeights,
    pub contraction: ContractionConfig,
    pub surgery: SurgeryConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            t_r: 0.4,
            t_o: 0.9,
            t_d: 0.5,
            t_d_absolute: None,
            frames_per_step: None,
            merge_percentile: None,
            seed: 0,
            max_outer_iters: 20,
            quiet_iters: 2,
            temperature: 1.0,
            lambda: crate::skinning::DEFAULT_LAMBDA,
            min_part_vertices: 8,
            min_bone_fraction: 0.06,
            motion_reassign: true,
            losses: LossWeights::default(),
            contraction: ContractionConfig::default(),
            surgery: SurgeryConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.t_r > 0.0 && self.t_r < 1.0) {
            return bad("t_r must lie in (0, 1)");
        }
        if !(self.t_o > -1.0) {
            return bad("t_o must exceed -1");
        }
        if !(self.t_d > 0.0) {
            return bad("t_d must be positive");
        }
        if self.t_d_absolute.is_some_and(|t| !(t > 0.0)) {
            return bad("t_d_absolute must be positive");
        }
        if self.frames_per_step.is_some_and(|h| h < 2) {
            return bad("frames_per_step must be at least 2");
        }
        if self.merge_percentile.is_some_and(|p| !(0.0..=100.0).contains(&p)) {
            return bad("merge_percentile must lie in [0, 100]");
        }
        if self.max_outer_iters == 0 || self.quiet_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.min_bone_fraction >= 0.0 && self.min_bone_fraction < 1.0) {
            return bad("min_bone_fraction must lie in [0, 1)");
        }
        if !(self.temperature > 0.0 && self.lambda > 0.0) {
            return bad("temperature and lambda must be positive");
        }
        self.losses.validate()?;
        self.contraction.validate()
    }

    fn split_threshold(&self, mean_length: f64) -> f64 {
        self.t_d_absolute.unwrap_or(self.t_d * mean_length)
    }
}

/// Joint coordinates with the indices of joints that had no support.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizedJoints {
    pub positions: Vec<Vec3>,
    pub unsupported: Vec<usize>,
}

/// Mean of the vertices whose weights on both bones reach `t_r`; joints
/// without support take the matching `fallback` position.
pub fn joint_positions(
    positions: &[Vec3],
    w: &SkinningWeights,
    skel: &Skeleton,
    t_r: f64,
    fallback: &[Vec3],
) -> LocalizedJoints {
    let mut out = LocalizedJoints {
        positions: Vec::with_capacity(skel.num_joints()),
        unsupported: Vec::new(),
    };
    for (j, joint) in skel.joints.iter().enumerate() {
        let (mut sum, mut count) = (Vec3::zeros(), 0usize);
        for (n, p) in positions.iter().enumerate() {
            if w.w[(n, joint.bone_a)] >= t_r && w.w[(n, joint.bone_b)] >= t_r {
                sum += p;
                count += 1;
            }
        }
        if count > 0 {
            out.positions.push(sum / count as f64);
        } else {
            out.positions.push(fallback[j]);
            out.unsupported.push(j);
        }
    }
    out
}

/// Rest-space joint localization; unsupported joints keep their position.
pub fn localize_joints(positions: &[Vec3], w: &SkinningWeights, skel: &Skeleton, t_r: f64) -> (Skeleton, Vec<usize>) {
    let prev: Vec<Vec3> = skel.joints.iter().map(|j| j.position).collect();
    let found = joint_positions(positions, w, skel, t_r, &prev);
    let mut out = skel.clone();
    for (j, p) in out.joints.iter_mut().zip(found.positions) {
        j.position = p;
    }
    (out, found.unsupported)
}

/// What a bone's length is measured between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoneSpan {
    /// The two of its joints farthest apart at rest.
    Joints(usize, usize),
    /// Its only joint and its rest end farthest from that joint.
    Terminal { joint: usize, far: Vec3 },
    /// No joints: length frozen.
    Free,
}

pub fn bone_spans(skel: &Skeleton) -> Vec<BoneSpan> {
    (0..skel.num_bones())
        .map(|b| {
            let js = skel.joints_of(b);
            match js.len() {
                0 => BoneSpan::Free,
                1 => {
                    let p = skel.joints[js[0]].position;
                    let [e0, e1] = skel.bones[b].endpoints();
                    let far = if (e1 - p).norm() > (e0 - p).norm() { e1 } else { e0 };
                    BoneSpan::Terminal { joint: js[0], far }
                }
                _ => {
                    let mut best = (js[0], js[1], -1.0);
                    for (i, &a) in js.iter().enumerate() {
                        for &c in &js[i + 1..] {
                            let d = (skel.joints[a].position - skel.joints[c].position).norm();
                            if d > best.2 {
                                best = (a, c, d);
                            }
                        }
                    }
                    BoneSpan::Joints(best.0, best.1)
                }
            }
        })
        .collect()
}

/// Per-frame bone lengths (`per_frame[f][b]`) and bones whose length is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneLengths {
    pub per_frame: Vec<Vec<f64>>,
    pub frozen: Vec<bool>,
}

/// Distances between each bone's span points in every frame. Terminal far
/// ends move with the bone's full transform in `poses` (rest if absent).
pub fn bone_lengths(skel: &Skeleton, joints_per_frame: &[Vec<Vec3>], poses: &[PoseFrame]) -> BoneLengths {
    let spans = bone_spans(skel);
    let frozen = spans.iter().map(|s| matches!(s, BoneSpan::Free)).collect();
    let per_frame = joints_per_frame
        .iter()
        .enumerate()
        .map(|(f, joints)| {
            spans
                .iter()
                .enumerate()
                .map(|(b, span)| match *span {
                    BoneSpan::Joints(a, c) => (joints[a] - joints[c]).norm(),
                    BoneSpan::Terminal { joint, far } => {
                        let far = poses.get(f).map_or(far, |p| p.composite(b).apply(&far));
                        (joints[joint] - far).norm()
                    }
                    BoneSpan::Free => skel.bones[b].length,
                })
                .collect()
        })
        .collect();
    BoneLengths { per_frame, frozen }
}

/// Minimum (or robust lower percentile) flow similarity of a joint-connected pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSimilarity {
    pub bones: (usize, usize),
    /// `None` when the pair has no usable evidence this step.
    pub similarity: Option<f64>,
}

/// Statistics over the sampled frames that drive one refinement step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepStats {
    pub frames: Vec<usize>,
    /// `flows[i][b]`: bone flow of `b` in sampled frame `i`.
    pub flows: Vec<Vec<Vec2>>,
    pub observed: Vec<Vec<bool>>,
    pub lengths: Vec<Vec<f64>>,
    pub min_length: Vec<f64>,
    pub max_length: Vec<f64>,
    pub mean_length: Vec<f64>,
    pub frozen: Vec<bool>,
    pub pairs: Vec<PairSimilarity>,
}

fn lower_percentile(mut v: Vec<f64>, p: Option<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    match p {
        None => v[0],
        Some(p) => {
            let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
            v[rank.clamp(1, v.len()) - 1]
        }
    }
}

impl MStepStats {
    /// Pairs with an unobserved bone in any sampled frame are skipped; a
    /// frame in which either flow vanishes carries no evidence.
    pub fn new(
        skel: &Skeleton,
        frames: Vec<usize>,
        bone_flows: &[BoneFlow],
        lengths: &BoneLengths,
        percentile: Option<f64>,
    ) -> Result<Self> {
        let nb = skel.num_bones();
        if frames.len() != bone_flows.len() || frames.len() != lengths.per_frame.len() {
            return Err(Error::SizeMismatch("one flow and length set per sampled frame".into()));
        }
        if frames.len() < 2 {
            return Err(Error::Config("statistics need at least two frames".into()));
        }
        if bone_flows.iter().any(|f| f.flow.len() != nb) || lengths.per_frame.iter().any(|l| l.len() != nb) {
            return Err(Error::SizeMismatch("flows and lengths must cover every bone".into()));
        }
        let col = |b: usize| lengths.per_frame.iter().map(move |l| l[b]);
        let min_length = (0..nb).map(|b| col(b).fold(f64::INFINITY, f64::min)).collect();
        let max_length = (0..nb).map(|b| col(b).fold(f64::NEG_INFINITY, f64::max)).collect();
        let mean_length = (0..nb).map(|b| col(b).sum::<f64>() / frames.len() as f64).collect();
        let mut pairs = Vec::new();
        let mut seen = BTreeSet::new();
        for j in &skel.joints {
            let (a, b) = (j.bone_a, j.bone_b);
            if !seen.insert((a, b)) {
                continue;
            }
            let similarity = if bone_flows.iter().any(|f| !f.observed[a] || !f.observed[b]) {
                None
            } else {
                let sims: Vec<f64> = bone_flows
                    .iter()
                    .filter_map(|f| cosine_similarity(&f.flow[a], &f.flow[b]).ok())
                    .collect();
                (!sims.is_empty()).then(|| lower_percentile(sims, percentile))
            };
            pairs.push(PairSimilarity {
                bones: (a, b),
                similarity,
            });
        }
        Ok(MStepStats {
            frames,
            flows: bone_flows.iter().map(|f| f.flow.clone()).collect(),
            observed: bone_flows.iter().map(|f| f.observed.clone()).collect(),
            lengths: lengths.per_frame.clone(),
            min_length,
            max_length,
            mean_length,
            frozen: lengths.frozen.clone(),
            pairs,
        })
    }
}

/// Result of one refinement step. `merges` and `splits` use the input
/// bone indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub skeleton: Skeleton,
    pub weights: SkinningWeights,
    pub merges: Vec<(usize, usize)>,
    pub splits: Vec<usize>,
}

impl RefineOutcome {
    pub fn changed(&self) -> bool {
        !self.merges.is_empty() || !self.splits.is_empty()
    }
}

fn clamp_spd(q: &Mat3, floor: f64) -> Mat3 {
    let sym = (q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.max().max(floor);
    let lam = eig.eigenvalues.map(|l| l.max(1e-12 * top).max(floor));
    eig.eigenvectors * Mat3::from_diagonal(&lam) * eig.eigenvectors.transpose()
}

/// Far end of bone `b` as seen from joint `shared`: its joint farthest from
/// `shared`, or its ellipsoid end farthest from it when it has no other joint.
fn far_end(skel: &Skeleton, b: usize, shared: usize) -> Vec3 {
    let at = skel.joints[shared].position;
    let others: Vec<usize> = skel.joints_of(b).into_iter().filter(|&j| j != shared).collect();
    let cands: Vec<Vec3> = if others.is_empty() {
        skel.bones[b].endpoints().to_vec()
    } else {
        others.iter().map(|&j| skel.joints[j].position).collect()
    };
    cands
        .into_iter()
        .max_by(|p, q| (p - at).norm().total_cmp(&(q - at).norm()))
        .expect("at least one candidate")
}

/// Drop bone `b`, routing its joints to `into` (or to each other when
/// `into` is `None`) and dropping duplicate or self connections.
fn rewire_without(skel: &Skeleton, b: usize, into: Option<usize>) -> Vec<Joint> {
    let neighbors = skel.neighbors(b);
    let center = skel.bones[b].center;
    let mut joints: Vec<Joint> = Vec::new();
    let push = |a: usize, c: usize, p: Vec3, joints: &mut Vec<Joint>| {
        if a != c && !joints.iter().any(|j| j.connects(a) && j.connects(c)) {
            joints.push(Joint::new(a, c, p));
        }
    };
    for j in &skel.joints {
        if !j.connects(b) {
            push(j.bone_a, j.bone_b, j.position, &mut joints);
        } else if let Some(t) = into {
            let o = j.other(b);
            push(t, o, j.position, &mut joints);
        }
    }
    if into.is_none() {
        if let Some((&hub, rest)) = neighbors.split_first() {
            for &o in rest {
                push(hub, o, center, &mut joints);
            }
        }
    }
    // re-index bones above `b`
    for j in &mut joints {
        let f = |x: usize| if x > b { x - 1 } else { x };
        *j = Joint::new(f(j.bone_a), f(j.bone_b), j.position);
    }
    joints
}

fn remove_column(w: &DMatrix<f64>, c: usize) -> DMatrix<f64> {
    w.clone().remove_column(c)
}

fn normalize_rows(w: &mut DMatrix<f64>) {
    for mut row in w.row_iter_mut() {
        let s: f64 = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / row.len() as f64);
        }
    }
}

/// Remove bones (descending order keeps indices valid), dropping their
/// weight columns and renormalizing rows.
fn prune_bones(skel: &Skeleton, w: &SkinningWeights, bones: &BTreeSet<usize>) -> Result<(Skeleton, SkinningWeights)> {
    let mut s = skel.clone();
    let mut m = w.w.clone();
    for &b in bones.iter().rev() {
        let joints = rewire_without(&s, b, None);
        let mut bones = s.bones.clone();
        bones.remove(b);
        s = Skeleton::new(bones, joints)?;
        m = remove_column(&m, b);
    }
    normalize_rows(&mut m);
    Ok((s, SkinningWeights { w: m }))
}

/// Merge rule (greedy by similarity, one merge per bone) then split rule on
/// the bones untouched by merges.
pub fn refine_skeleton(
    skel: &Skeleton,
    stats: &MStepStats,
    cfg: &RefineConfig,
    w: &SkinningWeights,
    rest: &[Vec3],
) -> Result<RefineOutcome> {
    let nb = skel.num_bones();
    if stats.min_length.len() != nb || w.num_bones() != nb || w.num_vertices() != rest.len() {
        return Err(Error::SizeMismatch("statistics, weights and skeleton disagree".into()));
    }
    let mut cands: Vec<(f64, usize, usize)> = stats
        .pairs
        .iter()
        .filter_map(|p| p.similarity.filter(|&s| s > cfg.t_o).map(|s| (s, p.bones.0, p.bones.1)))
        .collect();
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut taken = vec![false; nb];
    let mut merges = Vec::new();
    for (_, a, b) in cands {
        if !taken[a] && !taken[b] {
            taken[a] = true;
            taken[b] = true;
            merges.push((a.min(b), a.max(b)));
        }
    }
    // merged bones are built on the pre-merge skeleton, then applied
    let mut bones = skel.bones.clone();
    let mut m = w.w.clone();
    let mass: Vec<f64> = (0..nb).map(|b| w.w.column(b).sum()).collect();
    for &(a, b) in &merges {
        let shared = skel.joint_between(a, b).expect("merge pairs are joint-connected");
        // softmax of summed weights, computed stably
        let wa = 1.0 / (1.0 + (mass[b] - mass[a]).exp());
        let wb = 1.0 - wa;
        let (ba, bb) = (&skel.bones[a], &skel.bones[b]);
        let floor = 1e-12 * ba.q.norm().max(bb.q.norm());
        bones[a] = Bone {
            center: ba.center * wa + bb.center * wb,
            q: clamp_spd(&(ba.q * wa + bb.q * wb), floor),
            length: (far_end(skel, a, shared) - far_end(skel, b, shared)).norm(),
        };
        let col_b = m.column(b).clone_owned();
        let mut col_a = m.column_mut(a);
        col_a += col_b;
    }
    let removed: BTreeSet<usize> = merges.iter().map(|&(_, b)| b).collect();
    let mut target: Vec<usize> = (0..nb).collect();
    for &(a, b) in &merges {
        target[b] = a;
    }
    let mut index = vec![usize::MAX; nb];
    let mut next = 0;
    for (b, slot) in index.iter_mut().enumerate() {
        if !removed.contains(&b) {
            *slot = next;
            next += 1;
        }
    }
    let mut joints: Vec<Joint> = Vec::new();
    for j in &skel.joints {
        let (a, c) = (index[target[j.bone_a]], index[target[j.bone_b]]);
        if a != c && !joints.iter().any(|k| k.connects(a) && k.connects(c)) {
            joints.push(Joint::new(a, c, j.position));
        }
    }
    let kept: Vec<usize> = (0..nb).filter(|b| !removed.contains(b)).collect();
    let mut bones: Vec<Bone> = kept.iter().map(|&b| bones[b].clone()).collect();
    let mut wcols = DMatrix::from_fn(rest.len(), kept.len(), |r, c| m[(r, kept[c])]);
    let merged_skel = Skeleton::new(bones.clone(), joints.clone())?;

    // splits on bones not involved in a merge
    let spans = bone_spans(skel);
    let mut splits = Vec::new();
    for b in 0..nb {
        if taken[b] || stats.frozen[b] {
            continue;
        }
        let range = stats.max_length[b] - stats.min_length[b];
        if !(range > cfg.split_threshold(stats.mean_length[b])) {
            continue;
        }
        let (p1, p2) = match spans[b] {
            BoneSpan::Joints(x, y) => (skel.joints[x].position, skel.joints[y].position),
            BoneSpan::Terminal { joint, far } => (skel.joints[joint].position, far),
            BoneSpan::Free => continue,
        };
        let Some(n) = (p2 - p1).try_normalize(1e-12) else { continue };
        splits.push(b);
        let nbi = index[b];
        let mid = (p1 + p2) * 0.5;
        let (_, lam) = skel.bones[b].axes();
        let radius = (1.0 / lam[1].max(lam[2]).sqrt()).max(1e-9);
        let half = 0.5 * (p2 - p1).norm();
        bones[nbi] = Bone::along((p1 + mid) * 0.5, &n, half, radius.min(half.max(1e-9)));
        let new = bones.len();
        bones.push(Bone::along((mid + p2) * 0.5, &n, half, radius.min(half.max(1e-9))));
        let mut col = DMatrix::zeros(rest.len(), 1);
        for (v, x) in rest.iter().enumerate() {
            if (x - mid).dot(&n) > 0.0 {
                col[(v, 0)] = wcols[(v, nbi)];
                wcols[(v, nbi)] = 0.0;
            }
        }
        wcols = wcols.insert_column(new, 0.0);
        wcols.set_column(new, &col.column(0));
        for j in &mut joints {
            if j.connects(nbi) && (j.position - mid).dot(&n) > 0.0 {
                *j = Joint::new(j.other(nbi), new, j.position);
            }
        }
        joints.push(Joint::new(nbi, new, mid));
    }
    let skeleton = if splits.is_empty() { merged_skel } else { Skeleton::new(bones, joints)? };
    Ok(RefineOutcome {
        skeleton,
        weights: SkinningWeights { w: wcols },
        merges,
        splits,
    })
}

/// Contraction, surgery and conversion to bones; disconnected pieces are
/// then joined at their closest bone ends so the skeleton is one tree.
pub fn initial_skeleton(mesh: &TriMesh, cfg: &RefineConfig) -> Result<Skeleton> {
    let contracted = contract(mesh, &cfg.contraction)?;
    let mut graph = connectivity_surgery(&contracted, &cfg.surgery)?;
    if cfg.min_bone_fraction > 0.0 {
        graph = coarsen_chains(&graph, cfg.min_bone_fraction * mesh.bbox_diagonal());
    }
    graph.absorbed = edge_partition(&graph.nodes, &graph.edges, &graph.node_absorbed, contracted.vertices());
    let skel = skeleton_from_graph(&graph, mesh)?;
    bridge_components(skel)
}

fn bone_components(skel: &Skeleton) -> Vec<usize> {
    let nb = skel.num_bones();
    let mut label: Vec<usize> = (0..nb).collect();
    fn find(l: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while l[r] != r {
            r = l[r];
        }
        l[x] = r;
        r
    }
    for j in &skel.joints {
        let (a, b) = (find(&mut label, j.bone_a), find(&mut label, j.bone_b));
        label[a.max(b)] = a.min(b);
    }
    (0..nb).map(|b| find(&mut label, b)).collect()
}

/// Repeatedly join the two closest components (by bone end points) with a
/// joint at the midpoint of the closest ends.
pub fn bridge_components(mut skel: Skeleton) -> Result<Skeleton> {
    loop {
        let comp = bone_components(&skel);
        let mut best: Option<(f64, usize, usize, Vec3)> = None;
        let ends: Vec<[Vec3; 2]> = skel.bones.iter().map(Bone::endpoints).collect();
        for a in 0..skel.num_bones() {
            for b in a + 1..skel.num_bones() {
                if comp[a] == comp[b] {
                    continue;
                }
                for pa in &ends[a] {
                    for pb in &ends[b] {
                        let d = (pa - pb).norm();
                        if best.as_ref().is_none_or(|x| d < x.0) {
                            best = Some((d, a, b, (pa + pb) * 0.5));
                        }
                    }
                }
            }
        }
        match best {
            None => return Ok(skel),
            Some((_, a, b, p)) => {
                let mut joints = skel.joints.clone();
                joints.push(Joint::new(a, b, p));
                skel = Skeleton::new(skel.bones, joints)?;
            }
        }
    }
}

/// Moment-matched capsule for a set of points: the axis is the principal
/// direction closest to `prev`'s axis; the axial semi-axis is `√3·σ`
/// (uniform segment) but at least half the bone length, radial semi-axes
/// `√2·σ` (points on a circle) with floors.
pub fn fit_bone(points: &[Vec3], prev: &Bone, floor: f64) -> Bone {
    let n = points.len().max(1) as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let axis_prev = prev.axis();
    let ai = (0..3)
        .max_by(|&i, &j| {
            let di = eig.eigenvectors.column(i).dot(&axis_prev).abs();
            let dj = eig.eigenvectors.column(j).dot(&axis_prev).abs();
            di.total_cmp(&dj).then(j.cmp(&i))
        })
        .expect("three eigenvectors");
    let axis: Vec3 = eig.eigenvectors.column(ai).into_owned();
    let others: Vec<usize> = (0..3).filter(|&i| i != ai).collect();
    let half = (3.0 * eig.eigenvalues[ai].max(0.0)).sqrt().max(0.5 * prev.length).max(floor);
    let radial_floor = (RADIAL_FLOOR * prev.length).max(floor);
    let r: Vec<f64> = others
        .iter()
        .map(|&i| (2.0 * eig.eigenvalues[i].max(0.0)).sqrt().max(radial_floor))
        .collect();
    let v = Mat3::from_rows(&[
        axis.transpose(),
        eig.eigenvectors.column(others[0]).transpose(),
        eig.eigenvectors.column(others[1]).transpose(),
    ]);
    Bone::from_axes(
        c,
        &v,
        &Vec3::new(1.0 / (half * half), 1.0 / (r[0] * r[0]), 1.0 / (r[1] * r[1])),
        prev.length,
    )
}

/// E-step output: the (possibly pruned and refitted) skeleton with its
/// weights, rigidity, fitted poses and losses.
#[derive(Debug, Clone)]
pub struct EStep {
    pub skeleton: Skeleton,
    pub weights: SkinningWeights,
    pub rigidity: RigidityCoeffs,
    pub poses: Vec<PoseFrame>,
    pub posed: Vec<Vec<Vec3>>,
    pub losses: LossReport,
    pub pruned: usize,
}

fn small_parts(w: &SkinningWeights, min: usize) -> BTreeSet<usize> {
    let parts = one_hot_parts(w);
    let mut small: BTreeSet<usize> = (0..parts.counts.len()).filter(|&b| parts.counts[b] < min).collect();
    if small.len() == parts.counts.len() {
        // keep the largest part
        let keep = (0..parts.counts.len()).max_by_key(|&b| (parts.counts[b], std::cmp::Reverse(b))).unwrap();
        small.remove(&keep);
    }
    small
}

/// Hard labels after moving each vertex to the bone, among its own and the
/// joint-adjacent ones, whose per-frame rigid fit gives the smallest
/// trajectory residual. A vertex only moves when its own residual exceeds
/// `tolerance²` per frame and the neighbour's is at most a quarter of it.
pub fn reassign_by_motion(
    rest: &[Vec3],
    targets: &[Vec<Vec3>],
    skel: &Skeleton,
    labels: &[usize],
    tolerance: f64,
) -> Vec<usize> {
    let nb = skel.num_bones();
    let mut members = vec![Vec::new(); nb];
    for (n, &l) in labels.iter().enumerate() {
        members[l].push(n);
    }
    let fits: Vec<Option<Vec<RigidTransform>>> = members
        .iter()
        .map(|m| {
            let src: Vec<Vec3> = m.iter().map(|&n| rest[n]).collect();
            let ones = vec![1.0; m.len()];
            targets
                .iter()
                .map(|t| {
                    let dst: Vec<Vec3> = m.iter().map(|&n| t[n]).collect();
                    weighted_procrustes(&src, &dst, &ones)
                })
                .collect()
        })
        .collect();
    let mut adjacent = vec![BTreeSet::new(); nb];
    for j in &skel.joints {
        adjacent[j.bone_a].insert(j.bone_b);
        adjacent[j.bone_b].insert(j.bone_a);
    }
    let residual = |b: usize, n: usize| -> Option<f64> {
        let f = fits[b].as_ref()?;
        Some(f.iter().zip(targets).map(|(t, y)| (t.apply(&rest[n]) - y[n]).norm_squared()).sum())
    };
    let floor = tolerance * tolerance * targets.len() as f64;
    labels
        .iter()
        .enumerate()
        .map(|(n, &l)| {
            let own = residual(l, n).unwrap_or(f64::INFINITY);
            if own <= floor {
                return l;
            }
            let mut best = (0.25 * own, l);
            for &b in &adjacent[l] {
                if let Some(r) = residual(b, n) {
                    if r < best.0 {
                        best = (r, b);
                    }
                }
            }
            best.1
        })
        .collect()
}

fn refit_from_parts(skel: &Skeleton, w: &SkinningWeights, rest: &[Vec3], floor: f64) -> Result<Skeleton> {
    refit_from_labels(skel, &one_hot_parts(w), rest, floor)
}

fn refit_from_labels(skel: &Skeleton, parts: &PartAssignment, rest: &[Vec3], floor: f64) -> Result<Skeleton> {
    let bones = (0..skel.num_bones())
        .map(|b| {
            let pts: Vec<Vec3> = parts.members(b).iter().map(|&n| rest[n]).collect();
            if pts.is_empty() {
                skel.bones[b].clone()
            } else {
                fit_bone(&pts, &skel.bones[b], floor)
            }
        })
        .collect();
    Skeleton::new(bones, skel.joints.clone())
}

fn vertex_colors(rest: &[Vec3]) -> Vec<Vec3> {
    let (lo, hi) = crate::geometry::bounding_box(rest);
    let ext = (hi - lo).map(|e| if e > 0.0 { e } else { 1.0 });
    rest.iter().map(|p| (p - lo).component_div(&ext)).collect()
}

/// Losses of fitted posed frames against the observations.
pub fn evaluate_losses(
    mesh: &TriMesh,
    frames: &FrameData,
    posed: &[Vec<Vec3>],
    rigidity: &RigidityCoeffs,
    weights: &LossWeights,
) -> Result<LossReport> {
    let faces = mesh.faces();
    let colors = vertex_colors(mesh.vertices());
    let neighbors = mesh.neighbors();
    let mut report = LossReport::default();
    for f in 0..posed.len() {
        let cam: &Camera = &frames.cameras[f];
        let mut l = FrameLosses::default();
        if let Some(target) = frames.silhouettes.get(f) {
            l.silhouette = silhouette_loss(&rasterize_silhouette(&posed[f], faces, cam), target)?;
        }
        let rendered = render_vertex_colors(&posed[f], faces, &colors, cam);
        let observed = render_vertex_colors(&frames.targets[f], faces, &colors, cam);
        l.rgb = rgb_loss(&rendered, &observed)?;
        if let (Some(target), Some(next)) = (frames.flows.get(f), posed.get(f + 1)) {
            let r = flow_from_correspondence(&posed[f], next, cam, &frames.cameras[f + 1], faces)?;
            l.flow = flow_loss(&r, target)?;
            l.dr = dr_loss(&posed[f], next, mesh.edges(), rigidity)?;
        }
        l.shape = shape_loss_of(&posed[f], &neighbors).0;
        l.weighted_total(weights);
        report.frames.push(l);
    }
    report.validate()?;
    Ok(report)
}

/// Refit bones from the incoming hard parts, prune bones with too few
/// vertices, recompute weights, rigidity and poses, and evaluate losses.
pub fn e_step(
    mesh: &TriMesh,
    frames: &FrameData,
    skel: &Skeleton,
    incoming: &SkinningWeights,
    cfg: &RefineConfig,
) -> Result<EStep> {
    let rest = mesh.vertices();
    let floor = 1e-3 * mesh.bbox_diagonal().max(f64::MIN_POSITIVE);
    let mut skel = skel.clone();
    let mut w = incoming.clone();
    let mut pruned = 0;
    for _ in 0..8 {
        let small = small_parts(&w, cfg.min_part_vertices);
        if !small.is_empty() {
            pruned += small.len();
            (skel, w) = prune_bones(&skel, &w, &small)?;
        }
        skel = if cfg.motion_reassign && !frames.targets.is_empty() {
            let labels = reassign_by_motion(rest, &frames.targets, &skel, &one_hot_parts(&w).labels, floor);
            refit_from_labels(&skel, &PartAssignment::from_labels(labels, skel.num_bones()), rest, floor)?
        } else {
            refit_from_parts(&skel, &w, rest, floor)?
        };
        w = compute_skinning_weights(rest, &skel, None, cfg.temperature)?;
        if small_parts(&w, cfg.min_part_vertices).is_empty() {
            break;
        }
    }
    let rigidity = rigidity_coefficients(&w, mesh.edges(), cfg.lambda)?;
    let poses = frames
        .targets
        .iter()
        .map(|t| fit_pose_procrustes(rest, &w, t))
        .collect::<Result<Vec<_>>>()?;
    let posed = poses.iter().map(|p| blend_skin(rest, &w, p)).collect::<Result<Vec<_>>>()?;
    let losses = evaluate_losses(mesh, frames, &posed, &rigidity, &cfg.losses)?;
    Ok(EStep {
        skeleton: skel,
        weights: w,
        rigidity,
        poses,
        posed,
        losses,
        pruned,
    })
}

/// Frames sampled for an M-step: `h` distinct indices below `available`,
/// sorted, from a generator seeded by `seed` and the iteration.
pub fn sample_frames(available: usize, h: usize, seed: u64, iteration: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut v = rand::seq::index::sample(&mut rng, available, h.min(available)).into_vec();
    v.sort_unstable();
    v
}

/// M-step: bone flows and lengths on sampled frames, then refinement.
pub fn m_step(
    mesh: &TriMesh,
    frames: &FrameData,
    e: &EStep,
    cfg: &RefineConfig,
    iteration: usize,
) -> Result<(MStepStats, RefineOutcome)> {
    let rest = mesh.vertices();
    let available = frames.flows.len();
    let h = cfg.frames_per_step.unwrap_or(8).min(available);
    if h < 2 {
        return Err(Error::Config("refinement needs at least two flow frames".into()));
    }
    let sampled = sample_frames(available, h, cfg.seed, iteration);
    let (skel, _unsupported) = localize_joints(rest, &e.weights, &e.skeleton, cfg.t_r);
    // a part's motion is attributed to its highest-weight bone only
    let hard = one_hot_parts(&e.weights).one_hot();
    let mut flows = Vec::with_capacity(h);
    let mut joints = Vec::with_capacity(h);
    let mut poses = Vec::with_capacity(h);
    for &f in &sampled {
        let posed = &e.posed[f];
        let cam = &frames.cameras[f];
        let vis = visibility(posed, mesh.faces(), cam);
        let proj: Vec<Option<Vec2>> = posed.iter().map(|p| cam.project(p).ok()).collect();
        let surface = sample_surface_flow(&frames.flows[f], &proj, &vis)?;
        flows.push(bone_flow(&surface, &hard)?);
        let pose = &e.poses[f];
        let fallback: Vec<Vec3> = skel.joints.iter().map(|j| pose.composite(j.bone_a).apply(&j.position)).collect();
        joints.push(joint_positions(posed, &e.weights, &skel, cfg.t_r, &fallback).positions);
        poses.push(pose.clone());
    }
    let lengths = bone_lengths(&skel, &joints, &poses);
    let stats = MStepStats::new(&skel, sampled, &flows, &lengths, cfg.merge_percentile)?;
    let outcome = refine_skeleton(&skel, &stats, cfg, &e.weights, rest)?;
    Ok((stats, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub bones: usize,
    pub joints: usize,
    pub pruned: usize,
    pub merges: Vec<(usize, usize)>,
    pub splits: Vec<usize>,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct Sios2Result {
    pub skeleton: Skeleton,
    pub weights: SkinningWeights,
    pub poses: Vec<PoseFrame>,
    pub losses: LossReport,
    pub initial_bones: usize,
    pub history: Vec<IterationLog>,
}

/// Fill in silhouettes and flows rendered from the targets when absent.
pub fn complete_frames(mesh: &TriMesh, frames: &FrameData) -> Result<FrameData> {
    frames.validate(mesh.num_vertices())?;
    let mut out = frames.clone();
    let faces = mesh.faces();
    if out.silhouettes.is_empty() {
        out.silhouettes = out
            .targets
            .iter()
            .zip(&out.cameras)
            .map(|(t, c)| rasterize_silhouette(t, faces, c))
            .collect();
    }
    if out.flows.is_empty() {
        out.flows = (0..out.targets.len().saturating_sub(1))
            .map(|f| flow_from_correspondence(&out.targets[f], &out.targets[f + 1], &out.cameras[f], &out.cameras[f + 1], faces))
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

fn checkpoint(dir: &Path, iteration: usize, e: &EStep) -> Result<()> {
    let d = dir.join(format!("iter_{iteration}"));
    create_dir(&d)?;
    e.skeleton.save(d.join("skeleton.json"))?;
    save_weights(&e.weights, d.join("weights.bin"))?;
    write_text(&e.losses.to_csv(), d.join("losses.csv"))
}

/// The alternating loop from an initial skeleton (contraction + surgery
/// when `init` is `None`). Per-iteration checkpoints go to `checkpoints`.
pub fn sios2_from(
    mesh: &TriMesh,
    frames: &FrameData,
    cfg: &RefineConfig,
    init: Option<Skeleton>,
    checkpoints: Option<&Path>,
) -> Result<Sios2Result> {
    cfg.validate()?;
    if frames.num_frames() < 2 {
        return Err(Error::Config("at least two frames are required".into()));
    }
    let frames = complete_frames(mesh, frames)?;
    let mut skel = match init {
        Some(s) => s,
        None => initial_skeleton(mesh, cfg)?,
    };
    let initial_bones = skel.num_bones();
    let rest = mesh.vertices();
    let mut w = compute_skinning_weights(rest, &skel, None, cfg.temperature)?;
    let mut history = Vec::new();
    let mut quiet = 0;
    for it in 0..cfg.max_outer_iters {
        let e = e_step(mesh, &frames, &skel, &w, cfg)?;
        if let Some(dir) = checkpoints {
            checkpoint(dir, it, &e)?;
        }
        let (_, outcome) = m_step(mesh, &frames, &e, cfg, it)?;
        history.push(IterationLog {
            iteration: it,
            bones: e.skeleton.num_bones(),
            joints: e.skeleton.num_joints(),
            pruned: e.pruned,
            merges: outcome.merges.clone(),
            splits: outcome.splits.clone(),
            loss: e.losses.totals().total,
        });
        quiet = if outcome.changed() || e.pruned > 0 { 0 } else { quiet + 1 };
        skel = outcome.skeleton;
        w = outcome.weights;
        if quiet >= cfg.quiet_iters {
            break;
        }
    }
    let e = e_step(mesh, &frames, &skel, &w, cfg)?;
    // final joint positions from the final weights
    let (skeleton, _) = localize_joints(rest, &e.weights, &e.skeleton, cfg.t_r);
    Ok(Sios2Result {
        skeleton,
        weights: e.weights,
        poses: e.poses,
        losses: e.losses,
        initial_bones,
        history,
    })
}

pub fn sios2(mesh: &TriMesh, frames: &FrameData, cfg: &RefineConfig) -> Result<Sios2Result> {
    sios2_from(mesh, frames, cfg, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `k` unit bones along x with joints at the integer points and ten
    /// rest vertices per bone.
    fn chain(k: usize) -> (Skeleton, Vec<Vec3>, SkinningWeights) {
        let bones = (0..k)
            .map(|b| Bone::along(Vec3::new(b as f64 + 0.5, 0.0, 0.0), &Vec3::x(), 1.0, 0.1))
            .collect();
        let joints = (1..k).map(|j| Joint::new(j - 1, j, Vec3::new(j as f64, 0.0, 0.0))).collect();
        let rest: Vec<Vec3> = (0..10 * k).map(|i| Vec3::new((i as f64 + 0.5) / 10.0, 0.0, 0.0)).collect();
        let labels: Vec<usize> = (0..10 * k).map(|i| i / 10).collect();
        let w = SkinningWeights::from_labels(&labels, k).unwrap();
        (Skeleton::new(bones, joints).unwrap(), rest, w)
    }

    fn flows(per_frame: &[Vec<Vec2>]) -> Vec<BoneFlow> {
        per_frame
            .iter()
            .map(|f| BoneFlow {
                flow: f.clone(),
                mass: vec![10.0; f.len()],
                observed: vec![true; f.len()],
            })
            .collect()
    }

    fn constant_lengths(frames: usize, k: usize) -> BoneLengths {
        BoneLengths {
            per_frame: vec![vec![1.0; k]; frames],
            frozen: vec![false; k],
        }
    }

    fn rows_sum_to_one(w: &SkinningWeights) -> bool {
        w.w.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12)
    }

    #[test]
    fn joint_at_centroid_of_supporting_vertices() {
        let (skel, _, _) = chain(2);
        let pts = [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (5.0, 5.0)]
            .map(|(x, y)| Vec3::new(x, y, 0.0));
        let w = SkinningWeights::new(DMatrix::from_row_slice(
            5,
            2,
            &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.35, 0.65],
        ))
        .unwrap();
        let found = joint_positions(&pts, &w, &skel, 0.4, &[Vec3::new(9.0, 9.0, 9.0)]);
        assert!(found.positions[0].norm() < 1e-15);
        assert!(found.unsupported.is_empty());
        // lowering the threshold admits the 0.35/0.65 vertex
        let found = joint_positions(&pts, &w, &skel, 0.3, &[Vec3::zeros()]);
        assert!((found.positions[0] - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn unsupported_joint_is_flagged_and_kept() {
        let (skel, rest, w) = chain(2);
        let (out, unsupported) = localize_joints(&rest, &w, &skel, 0.4);
        assert_eq!(unsupported, vec![0]);
        assert_eq!(out.joints[0].position, skel.joints[0].position);
    }

    #[test]
    fn terminal_bone_length() {
        let bones = vec![
            Bone::along(Vec3::new(1.5, 2.0, 0.0), &Vec3::new(3.0, 4.0, 0.0).normalize(), 5.0, 0.1),
            Bone::along(Vec3::new(-0.5, 0.0, 0.0), &Vec3::x(), 1.0, 0.1),
        ];
        let skel = Skeleton::new(bones, vec![Joint::new(0, 1, Vec3::zeros())]).unwrap();
        let l = bone_lengths(&skel, &[vec![Vec3::zeros()]], &[]);
        assert!((l.per_frame[0][0] - 5.0).abs() < 1e-12);
        assert!((l.per_frame[0][1] - 1.0).abs() < 1e-12);
        assert_eq!(l.frozen, vec![false, false]);
    }

    #[test]
    fn identical_flows_merge_orthogonal_do_not() {
        let (skel, rest, w) = chain(2);
        let cfg = RefineConfig::default();
        let same = flows(&[vec![Vec2::new(1.0, 0.5); 2], vec![Vec2::new(-0.3, 2.0); 2]]);
        let stats = MStepStats::new(&skel, vec![0, 1], &same, &constant_lengths(2, 2), None).unwrap();
        assert!((stats.pairs[0].similarity.unwrap() - 1.0).abs() < 1e-12);
        let out = refine_skeleton(&skel, &stats, &cfg, &w, &rest).unwrap();
        assert_eq!(out.merges, vec![(0, 1)]);
        assert_eq!(out.skeleton.num_bones(), 1);
        assert_eq!(out.skeleton.num_joints(), 0);
        assert!((out.skeleton.bones[0].length - 2.0).abs() < 1e-12);
        assert!(rows_sum_to_one(&out.weights));

        let ortho = flows(&[vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)], vec![Vec2::new(1.0, 0.0); 2]]);
        let stats = MStepStats::new(&skel, vec![0, 1], &ortho, &constant_lengths(2, 2), None).unwrap();
        assert!(stats.pairs[0].similarity.unwrap().abs() < 1e-12);
        assert!(!refine_skeleton(&skel, &stats, &cfg, &w, &rest).unwrap().changed());
    }

    #[test]
    fn zero_flow_and_unobserved_give_no_evidence() {
        let (skel, _, _) = chain(2);
        let mut f = flows(&[vec![Vec2::zeros(), Vec2::new(1.0, 0.0)], vec![Vec2::new(1.0, 0.0); 2]]);
        let stats = MStepStats::new(&skel, vec![0, 1], &f, &constant_lengths(2, 2), None).unwrap();
        assert_eq!(stats.pairs[0].similarity, Some(1.0));
        f[1].observed[0] = false;
        let stats = MStepStats::new(&skel, vec![0, 1], &f, &constant_lengths(2, 2), None).unwrap();
        assert_eq!(stats.pairs[0].similarity, None);
    }

    #[test]
    fn one_merge_per_bone_greedy_by_similarity() {
        let (skel, rest, w) = chain(3);
        let a = Vec2::new(1.0, 0.0);
        let b = Vec2::new(1.0, 0.05);
        let c = Vec2::new(1.0, 0.2);
        let f = flows(&[vec![a, b, c], vec![a, b, c]]);
        let stats = MStepStats::new(&skel, vec![0, 1], &f, &constant_lengths(2, 3), None).unwrap();
        let out = refine_skeleton(&skel, &stats, &RefineConfig::default(), &w, &rest).unwrap();
        assert_eq!(out.merges, vec![(0, 1)]);
        assert_eq!(out.skeleton.num_bones(), 2);
        assert_eq!(out.skeleton.num_joints(), 1);
        assert!(rows_sum_to_one(&out.weights));
    }

    fn fluctuating(k: usize, b: usize, lo: f64, hi: f64) -> BoneLengths {
        let mut l = constant_lengths(2, k);
        l.per_frame[0][b] = lo;
        l.per_frame[1][b] = hi;
        l
    }

    #[test]
    fn split_threshold_scales_with_mean_length() {
        let (skel, rest, w) = chain(2);
        let f = flows(&vec![vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]; 2]);
        // range 0.6 around a mean of 1.0
        let stats = MStepStats::new(&skel, vec![0, 1], &f, &fluctuating(2, 1, 0.7, 1.3), None).unwrap();
        let out = refine_skeleton(&skel, &stats, &RefineConfig::default(), &w, &rest).unwrap();
        assert_eq!(out.splits, vec![1]);
        assert_eq!(out.skeleton.num_bones(), 3);
        assert_eq!(out.skeleton.num_joints(), 2);
        let new_joint = out.skeleton.joints.last().unwrap().position;
        assert!((new_joint - Vec3::new(1.5, 0.0, 0.0)).norm() < 1e-12);
        assert!(rows_sum_to_one(&out.weights));
        let calm = RefineConfig { t_d: 1.0, ..RefineConfig::default() };
        assert!(!refine_skeleton(&skel, &stats, &calm, &w, &rest).unwrap().changed());
    }

    #[test]
    fn rules_can_be_disabled() {
        let (skel, rest, w) = chain(2);
        let f = flows(&vec![vec![Vec2::new(1.0, 0.0); 2]; 2]);
        let stats = MStepStats::new(&skel, vec![0, 1], &f, &fluctuating(2, 1, 0.5, 1.5), None).unwrap();
        let off = RefineConfig { t_o: 1.5, t_d: f64::INFINITY, ..RefineConfig::default() };
        off.validate().unwrap();
        let out = refine_skeleton(&skel, &stats, &off, &w, &rest).unwrap();
        assert!(!out.changed());
        assert_eq!(out.skeleton, skel);
        // merged bones are not split in the same step
        let out = refine_skeleton(&skel, &stats, &RefineConfig::default(), &w, &rest).unwrap();
        assert_eq!((out.merges.len(), out.splits.len()), (1, 0));
    }

    #[test]
    fn coarsening_joins_short_chain_edges() {
        use crate::contraction::SkeletonGraph;
        let nodes: Vec<Vec3> = (0..7).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let edges: Vec<[usize; 2]> = (0..6).map(|i| [i, i + 1]).collect();
        let g = SkeletonGraph {
            node_absorbed: (0..7).map(|i| vec![i]).collect(),
            absorbed: vec![Vec::new(); 6],
            nodes,
            edges,
        };
        let c = coarsen_chains(&g, 0.25);
        assert!(c.num_edges() < 6 && c.num_edges() >= 3);
        assert_eq!(c.num_components(), 1);
        for &[a, b] in &c.edges {
            assert!((c.nodes[a] - c.nodes[b]).norm() <= 0.25 + 1e-12);
        }
        let mut all: Vec<usize> = c.node_absorbed.concat();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert_eq!(coarsen_chains(&g, 0.0).num_edges(), 6);
    }

    #[test]
    fn motion_reassignment_moves_misassigned_vertices() {
        let (skel, axis_pts, _) = chain(2);
        // two offset rows so each part's rigid fit is well posed
        let rest: Vec<Vec3> = axis_pts
            .iter()
            .flat_map(|p| [*p, p + Vec3::new(0.0, 0.1, 0.05)])
            .collect();
        // everything past x = 0.5 swings about the z axis through (0.5, 0, 0)
        let targets: Vec<Vec<Vec3>> = (0..3)
            .map(|f| {
                let t = RigidTransform::about(Vec3::new(0.5, 0.0, 0.0), &Vec3::z(), 0.2 * f as f64);
                rest.iter().map(|p| if p.x > 0.5 { t.apply(p) } else { *p }).collect()
            })
            .collect();
        let mut labels: Vec<usize> = rest.iter().map(|p| usize::from(p.x > 1.0)).collect();
        for _ in 0..4 {
            labels = reassign_by_motion(&rest, &targets, &skel, &labels, 1e-6);
        }
        for (p, l) in rest.iter().zip(&labels) {
            assert_eq!(*l, usize::from(p.x > 0.5), "vertex at {p:?}");
        }
    }

    proptest! {
        #[test]
        fn counts_and_rows_are_consistent(
            k in 2usize..6,
            dirs in proptest::collection::vec(0.0f64..std::f64::consts::TAU, 12),
            spread in proptest::collection::vec(0.5f64..1.5, 6),
        ) {
            let (skel, rest, w) = chain(k);
            let per_frame: Vec<Vec<Vec2>> = (0..2)
                .map(|f| (0..k).map(|b| { let a = dirs[f * 6 + b]; Vec2::new(a.cos(), a.sin()) }).collect())
                .collect();
            let mut lengths = constant_lengths(2, k);
            for b in 0..k {
                lengths.per_frame[1][b] = spread[b];
            }
            let stats = MStepStats::new(&skel, vec![0, 1], &flows(&per_frame), &lengths, None).unwrap();
            let out = refine_skeleton(&skel, &stats, &RefineConfig::default(), &w, &rest).unwrap();
            prop_assert_eq!(out.skeleton.num_bones(), k - out.merges.len() + out.splits.len());
            prop_assert_eq!(out.skeleton.num_joints(), out.skeleton.num_bones() - 1);
            prop_assert_eq!(out.weights.num_bones(), out.skeleton.num_bones());
            prop_assert!(rows_sum_to_one(&out.weights));
            let mut touched = BTreeSet::new();
            for &(a, b) in &out.merges {
                prop_assert!(touched.insert(a) && touched.insert(b));
            }
            for s in &out.splits {
                prop_assert!(!touched.contains(s));
            }
        }
    }
}
