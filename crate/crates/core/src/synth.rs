//! Procedural articulated capsule chains with full ground truth.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_diagonal, bounding_box, load_mesh, save_obj, TriMesh};
use crate::io::{create_dir, read_json, write_json};
use crate::kinematics::{blend_skin, load_poses, save_poses, PoseFrame, RigidTransform};
use crate::rendering::{
    flow_from_correspondence, rasterize_silhouette, visibility, Camera, FlowRaster, SilhouetteRaster,
};
use crate::skeleton::{Bone, Joint, Skeleton};
use crate::skinning::SkinningWeights;
use crate::Vec3;

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn default_attach() -> f64 {
    1.0
}

/// One rigid segment. Segment 0 is the root and starts at the origin; every
/// other segment hangs off `parent` at fraction `attach` of its length and
/// rotates about `axis` through that point by `angles[f]` in frame `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    #[serde(default)]
    pub parent: Option<usize>,
    #[serde(default = "default_attach")]
    pub attach: f64,
    pub direction: [f64; 3],
    pub length: f64,
    pub radius: f64,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    /// Per-frame hinge angle in radians; empty means frozen at 0.
    #[serde(default)]
    pub angles: Vec<f64>,
}

/// Whole-object motion applied per frame: after `f` frames the object is
/// rotated by `f·rotation` (rotation vector, about the rest centroid) and
/// translated by `f·translation`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RootMotion {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Distance from the sequence's bounding-box centre in units of its diagonal.
    pub distance: f64,
    /// Viewing direction (camera → object) at frame 0.
    pub view: [f64; 3],
    pub up: [f64; 3],
    /// Orbit about `up` through the centre, degrees per frame.
    pub orbit_degrees: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            width: 128,
            height: 128,
            focal: 300.0,
            distance: 3.0,
            view: [0.0, 0.0, 1.0],
            up: [0.0, 1.0, 0.0],
            orbit_degrees: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub segments: Vec<SegmentSpec>,
    pub frames: usize,
    #[serde(default)]
    pub root_motion: RootMotion,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default = "default_ring")]
    pub ring_vertices: usize,
    #[serde(default = "default_rings_per_unit")]
    pub rings_per_unit: f64,
    #[serde(default = "default_cap_rings")]
    pub cap_rings: usize,
    /// Radial vertex jitter as a fraction of the segment radius.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_ring() -> usize {
    16
}

fn default_rings_per_unit() -> f64 {
    20.0
}

fn default_cap_rings() -> usize {
    3
}

/// Everything the generator knows about the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub skeleton: Skeleton,
    /// Segment index of every rest vertex.
    pub labels: Vec<usize>,
    pub poses: Vec<PoseFrame>,
    pub positions: Vec<Vec<Vec3>>,
    pub cameras: Vec<Camera>,
    pub silhouettes: Vec<SilhouetteRaster>,
    /// `flows[f]` maps frame `f` to `f + 1`.
    pub flows: Vec<FlowRaster>,
    pub visibility: Vec<Vec<bool>>,
}

impl GroundTruth {
    pub fn one_hot(&self) -> SkinningWeights {
        SkinningWeights::from_labels(&self.labels, self.skeleton.num_bones()).expect("labels in range")
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.segments.is_empty() {
            return bad("at least one segment is required".into());
        }
        if self.frames == 0 {
            return bad("at least one frame is required".into());
        }
        if self.ring_vertices < 3 || self.cap_rings == 0 || !(self.rings_per_unit > 0.0) {
            return bad("mesh resolution too low".into());
        }
        if !(self.jitter >= 0.0 && self.jitter < 0.5) {
            return bad("jitter must be in [0, 0.5)".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            match (i, s.parent) {
                (0, None) => {}
                (0, Some(_)) => return bad("segment 0 is the root and has no parent".into()),
                (_, None) => return bad(format!("segment {i} needs a parent")),
                (_, Some(p)) if p >= i => return bad(format!("segment {i}: parent must precede it")),
                _ => {}
            }
            if !(s.length > 0.0 && s.radius > 0.0) || !s.length.is_finite() || !s.radius.is_finite() {
                return bad(format!("segment {i}: length and radius must be positive"));
            }
            if s.radius > s.length {
                return bad(format!("segment {i}: radius exceeds length (self-intersecting capsule)"));
            }
            if !(0.0..=1.0).contains(&s.attach) {
                return bad(format!("segment {i}: attach must be in [0, 1]"));
            }
            if v3(s.direction).norm() < 1e-12 || v3(s.axis).norm() < 1e-12 {
                return bad(format!("segment {i}: zero direction or axis"));
            }
            if !s.angles.is_empty() && s.angles.len() != self.frames {
                return bad(format!("segment {i}: {} angles for {} frames", s.angles.len(), self.frames));
            }
            if s.angles.iter().any(|a| !a.is_finite()) {
                return bad(format!("segment {i}: non-finite angle"));
            }
        }
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || !(c.focal > 0.0) || !(c.distance > 0.0) {
            return bad("camera parameters must be positive".into());
        }
        Ok(())
    }

    fn angle(&self, seg: usize, frame: usize) -> f64 {
        self.segments[seg].angles.get(frame).copied().unwrap_or(0.0)
    }

    /// Rest start point of every segment.
    fn starts(&self) -> Vec<Vec3> {
        let mut starts: Vec<Vec3> = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            let p = match s.parent {
                None => Vec3::zeros(),
                Some(p) => {
                    let ps = &self.segments[p];
                    starts[p] + v3(ps.direction).normalize() * (ps.length * s.attach)
                }
            };
            starts.push(p);
        }
        starts
    }
}

/// Segment chains sharing one tube: a segment continues its parent's tube
/// when it is the parent's first child attached at the far end.
fn chains(spec: &SynthSpec) -> Vec<Vec<usize>> {
    let n = spec.segments.len();
    let mut continuation = vec![None; n];
    for (i, s) in spec.segments.iter().enumerate() {
        if let Some(p) = s.parent {
            if s.attach == 1.0 && continuation[p].is_none() {
                continuation[p] = Some(i);
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        let starts_chain = match spec.segments[i].parent {
            None => true,
            Some(p) => continuation[p] != Some(i),
        };
        if starts_chain {
            let mut chain = vec![i];
            while let Some(c) = continuation[*chain.last().unwrap()] {
                chain.push(c);
            }
            out.push(chain);
        }
    }
    out
}

fn perpendicular(d: &Vec3) -> Vec3 {
    let helper = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    d.cross(&helper).normalize()
}

struct TubeBuilder<'a> {
    spec: &'a SynthSpec,
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    labels: Vec<usize>,
    rng: ChaCha8Rng,
}

impl TubeBuilder<'_> {
    fn ring(&mut self, c: Vec3, d: &Vec3, u: &Vec3, radius: f64, seg: usize) -> usize {
        let v = d.cross(u);
        let first = self.vertices.len();
        let m = self.spec.ring_vertices;
        for k in 0..m {
            let t = TAU * k as f64 / m as f64;
            let r = if self.spec.jitter > 0.0 {
                use rand::Rng;
                radius * (1.0 + self.rng.random_range(-self.spec.jitter..=self.spec.jitter))
            } else {
                radius
            };
            self.vertices.push(c + (u * t.cos() + v * t.sin()) * r);
            self.labels.push(seg);
        }
        first
    }

    fn bridge(&mut self, a: usize, b: usize) {
        let m = self.spec.ring_vertices;
        for k in 0..m {
            let k1 = (k + 1) % m;
            self.faces.push([a + k, a + k1, b + k1]);
            self.faces.push([a + k, b + k1, b + k]);
        }
    }

    /// Pole vertex fanned to a ring; `outward` says whether the pole lies
    /// along `+d` of the ring frame.
    fn pole(&mut self, p: Vec3, ring: usize, outward: bool, seg: usize) {
        let m = self.spec.ring_vertices;
        let pi = self.vertices.len();
        self.vertices.push(p);
        self.labels.push(seg);
        for k in 0..m {
            let k1 = (k + 1) % m;
            if outward {
                self.faces.push([ring + k, ring + k1, pi]);
            } else {
                self.faces.push([ring + k1, ring + k, pi]);
            }
        }
    }

    fn tube(&mut self, chain: &[usize], starts: &[Vec3]) {
        let segs = &self.spec.segments;
        let cr = self.spec.cap_rings;
        let d0 = v3(segs[chain[0]].direction).normalize();
        let mut u = perpendicular(&d0);
        // start cap, pole first
        let (s0, r0) = (starts[chain[0]], segs[chain[0]].radius);
        let mut cap = Vec::new();
        for q in (1..=cr).rev() {
            let phi = FRAC_PI_2 * q as f64 / (cr + 1) as f64;
            cap.push(self.ring(s0 - d0 * (r0 * phi.sin()), &d0, &u, r0 * phi.cos(), chain[0]));
        }
        self.pole(s0 - d0 * r0, cap[0], false, chain[0]);
        for w in cap.windows(2) {
            self.bridge(w[0], w[1]);
        }
        let mut prev = cap.last().copied();
        for &s in chain {
            let seg = &segs[s];
            let d = v3(seg.direction).normalize();
            u = (u - d * u.dot(&d)).try_normalize(1e-9).unwrap_or_else(|| perpendicular(&d));
            let k = ((seg.length * self.spec.rings_per_unit).ceil() as usize).max(2);
            for j in 0..k {
                let t = (j as f64 + 0.5) / k as f64;
                let r = self.ring(starts[s] + d * (t * seg.length), &d, &u, seg.radius, s);
                if let Some(p) = prev {
                    self.bridge(p, r);
                }
                prev = Some(r);
            }
        }
        let last = *chain.last().unwrap();
        let (dl, rl) = (v3(segs[last].direction).normalize(), segs[last].radius);
        let end = starts[last] + dl * segs[last].length;
        for q in 1..=cr {
            let phi = FRAC_PI_2 * q as f64 / (cr + 1) as f64;
            let r = self.ring(end + dl * (rl * phi.sin()), &dl, &u, rl * phi.cos(), last);
            self.bridge(prev.unwrap(), r);
            prev = Some(r);
        }
        self.pole(end + dl * rl, prev.unwrap(), true, last);
    }
}

/// Rest mesh (one capsule tube per chain) and per-vertex segment labels.
pub fn build_mesh(spec: &SynthSpec) -> Result<(TriMesh, Vec<usize>)> {
    spec.validate()?;
    let starts = spec.starts();
    let mut b = TubeBuilder {
        spec,
        vertices: Vec::new(),
        faces: Vec::new(),
        labels: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    for chain in chains(spec) {
        b.tube(&chain, &starts);
    }
    Ok((TriMesh::new(b.vertices, b.faces)?, b.labels))
}

/// Ground-truth skeleton: one capsule bone per segment, one joint per
/// parent link at the attachment point.
pub fn rest_skeleton(spec: &SynthSpec) -> Result<Skeleton> {
    spec.validate()?;
    let starts = spec.starts();
    let bones = spec
        .segments
        .iter()
        .zip(&starts)
        .map(|(s, p)| {
            let d = v3(s.direction).normalize();
            Bone::along(p + d * (0.5 * s.length), &d, s.length, s.radius)
        })
        .collect();
    let joints = spec
        .segments
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.parent.map(|p| Joint::new(p, i, starts[i])))
        .collect();
    Skeleton::new(bones, joints)
}

/// Forward kinematics for one frame.
pub fn pose_at(spec: &SynthSpec, frame: usize, rest_centroid: &Vec3) -> PoseFrame {
    let starts = spec.starts();
    let mut per_bone: Vec<RigidTransform> = Vec::with_capacity(spec.segments.len());
    for (i, s) in spec.segments.iter().enumerate() {
        let t = match s.parent {
            None => RigidTransform::identity(),
            Some(p) => per_bone[p].compose(&RigidTransform::about(starts[i], &v3(s.axis), spec.angle(i, frame))),
        };
        per_bone.push(t);
    }
    let f = frame as f64;
    let rm = &spec.root_motion;
    let spin = v3(rm.rotation) * f;
    let rot = RigidTransform::about(*rest_centroid, &spin.try_normalize(1e-300).unwrap_or(Vec3::z()), spin.norm());
    PoseFrame {
        root: RigidTransform::translation(v3(rm.translation) * f).compose(&rot),
        per_bone,
        camera: None,
    }
}

fn cameras(spec: &SynthSpec, positions: &[Vec<Vec3>]) -> Result<Vec<Camera>> {
    let all: Vec<Vec3> = positions.iter().flatten().copied().collect();
    let (lo, hi) = bounding_box(&all);
    let center = (lo + hi) * 0.5;
    let dist = spec.camera.distance * bbox_diagonal(&all).max(1e-9);
    let c = &spec.camera;
    let up = v3(c.up);
    let view = v3(c.view).try_normalize(1e-12).ok_or(Error::ZeroVector)?;
    let axis = up.try_normalize(1e-12).ok_or(Error::ZeroVector)?;
    (0..spec.frames)
        .map(|f| {
            let orbit = nalgebra::UnitQuaternion::from_axis_angle(
                &nalgebra::Unit::new_normalize(axis),
                (c.orbit_degrees * f as f64).to_radians(),
            );
            let eye = center - orbit * view * dist;
            Camera::look_at(eye, center, up, c.focal, c.width, c.height)
        })
        .collect()
}

/// Mesh plus ground truth, rendered with the in-crate rasterizer.
pub fn generate(spec: &SynthSpec) -> Result<(TriMesh, GroundTruth)> {
    let (mesh, labels) = build_mesh(spec)?;
    let skeleton = rest_skeleton(spec)?;
    let w = SkinningWeights::from_labels(&labels, skeleton.num_bones())?;
    let centroid = mesh.vertices().iter().sum::<Vec3>() / mesh.num_vertices() as f64;
    let poses: Vec<PoseFrame> = (0..spec.frames).map(|f| pose_at(spec, f, &centroid)).collect();
    let positions = poses
        .iter()
        .map(|p| blend_skin(mesh.vertices(), &w, p))
        .collect::<Result<Vec<_>>>()?;
    let cameras = cameras(spec, &positions)?;
    let faces = mesh.faces();
    let silhouettes = positions
        .iter()
        .zip(&cameras)
        .map(|(p, c)| rasterize_silhouette(p, faces, c))
        .collect();
    let visibility = positions.iter().zip(&cameras).map(|(p, c)| visibility(p, faces, c)).collect();
    let flows = (0..spec.frames.saturating_sub(1))
        .map(|f| flow_from_correspondence(&positions[f], &positions[f + 1], &cameras[f], &cameras[f + 1], faces))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        mesh,
        GroundTruth {
            skeleton,
            labels,
            poses,
            positions,
            cameras,
            silhouettes,
            flows,
            visibility,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub position_sigma: f64,
    pub flow_sigma: f64,
    pub seed: u64,
}

/// Seeded Gaussian noise on target positions and/or flow vectors.
pub fn corrupt(gt: &GroundTruth, noise: &NoiseSpec) -> Result<GroundTruth> {
    let check = |s: f64, name: &str| {
        if s >= 0.0 && s.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("{name} must be a non-negative number")))
        }
    };
    check(noise.position_sigma, "position_sigma")?;
    check(noise.flow_sigma, "flow_sigma")?;
    let mut out = gt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    if noise.position_sigma > 0.0 {
        let n = Normal::new(0.0, noise.position_sigma).expect("valid sigma");
        for p in out.positions.iter_mut().flatten() {
            *p += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        }
    }
    if noise.flow_sigma > 0.0 {
        let n = Normal::new(0.0, noise.flow_sigma).expect("valid sigma");
        for f in out.flows.iter_mut().flat_map(|r| r.flow.iter_mut()) {
            f[0] += n.sample(&mut rng) as f32;
            f[1] += n.sample(&mut rng) as f32;
        }
    }
    Ok(out)
}

fn seg(parent: Option<usize>, direction: [f64; 3], length: f64, radius: f64, angles: Vec<f64>) -> SegmentSpec {
    SegmentSpec {
        parent,
        attach: 1.0,
        direction,
        length,
        radius,
        axis: default_axis(),
        angles,
    }
}

/// Hinge `k` of `hinges` sweeps in alternate blocks of `block` frames,
/// moving `step` radians per frame and reversing each time it is active.
fn alternating(frames: usize, hinges: usize, k: usize, block: usize, step: f64) -> Vec<f64> {
    let mut a = 0.0;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        out.push(a);
        let b = f / block;
        if b % hinges == k {
            let sign = if (b / hinges) % 2 == 0 { 1.0 } else { -1.0 };
            a += sign * step;
        }
    }
    out
}

pub const PRESETS: &[&str] = &["tube", "hinge2", "arm3", "arm3_frozen", "quadruped"];

/// Named specs used by the examples, tests and CLI.
pub fn preset(name: &str) -> Result<SynthSpec> {
    let base = |segments: Vec<SegmentSpec>, frames: usize, translation: [f64; 3]| SynthSpec {
        segments,
        frames,
        root_motion: RootMotion {
            translation,
            rotation: [0.0; 3],
        },
        camera: CameraSpec::default(),
        ring_vertices: default_ring(),
        rings_per_unit: default_rings_per_unit(),
        cap_rings: default_cap_rings(),
        jitter: 0.0,
        seed: 0,
    };
    let x = [1.0, 0.0, 0.0];
    Ok(match name {
        "tube" => base(vec![seg(None, x, 3.0, 0.2, vec![])], 12, [0.03, 0.015, 0.0]),
        "hinge2" => {
            let angles = (0..10).map(|f| std::f64::consts::FRAC_PI_4 * f as f64 / 9.0).collect();
            base(vec![seg(None, x, 1.0, 0.15, vec![]), seg(Some(0), x, 1.0, 0.15, angles)], 10, [0.0; 3])
        }
        "arm3" | "arm3_frozen" => {
            let frames = 25;
            let (h1, h2) = if name == "arm3" {
                (alternating(frames, 2, 0, 3, 0.3), alternating(frames, 2, 1, 3, 0.3))
            } else {
                (vec![], alternating(frames, 1, 0, 3, 0.3))
            };
            let mut spec = base(
                vec![seg(None, x, 1.0, 0.15, vec![]), seg(Some(0), x, 1.0, 0.15, h1), seg(Some(1), x, 1.0, 0.15, h2)],
                frames,
                [0.003, 0.0, 0.0],
            );
            spec.camera.width = 256;
            spec.camera.height = 256;
            spec.camera.focal = 600.0;
            spec
        }
        "quadruped" => {
            let frames = 17;
            let swing = |phase: f64| (0..frames).map(|f| 0.4 * (f as f64 * 0.5 + phase).sin()).collect::<Vec<_>>();
            let down = [0.0, -1.0, 0.0];
            let mut segs = vec![seg(None, x, 2.0, 0.3, vec![])];
            for (i, (attach, phase)) in [(0.1, 0.0), (0.1, 1.5), (0.9, 3.0), (0.9, 4.5)].into_iter().enumerate() {
                let mut upper = seg(Some(0), down, 0.8, 0.12, swing(phase));
                upper.attach = attach;
                upper.direction = [0.0, -1.0, if i % 2 == 0 { 0.35 } else { -0.35 }];
                segs.push(upper);
                let p = segs.len() - 1;
                segs.push(seg(Some(p), down, 0.7, 0.1, swing(phase + 1.0).iter().map(|a| 0.5 * a.abs()).collect()));
            }
            segs.push(seg(Some(0), [0.6, 0.8, 0.0], 0.7, 0.15, swing(0.7).iter().map(|a| 0.5 * a).collect()));
            base(segs, frames, [0.02, 0.0, 0.0])
        }
        other => {
            return Err(Error::InvalidSpec(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    })
}

/// Per-frame camera and relative paths of the rasters, plus the name of
/// the target-position file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesManifest {
    pub targets: String,
    pub cameras: Vec<Camera>,
    pub silhouettes: Vec<String>,
    pub flows: Vec<String>,
}

/// Observations consumed by refinement: targets, cameras and rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub targets: Vec<Vec<Vec3>>,
    pub cameras: Vec<Camera>,
    pub silhouettes: Vec<SilhouetteRaster>,
    pub flows: Vec<FlowRaster>,
}

impl FrameData {
    pub fn from_ground_truth(gt: &GroundTruth) -> Self {
        FrameData {
            targets: gt.positions.clone(),
            cameras: gt.cameras.clone(),
            silhouettes: gt.silhouettes.clone(),
            flows: gt.flows.clone(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.targets.len()
    }

    pub fn validate(&self, vertices: usize) -> Result<()> {
        let f = self.targets.len();
        if self.cameras.len() != f {
            return Err(Error::SizeMismatch(format!("{} cameras for {f} frames", self.cameras.len())));
        }
        if !self.silhouettes.is_empty() && self.silhouettes.len() != f {
            return Err(Error::SizeMismatch("one silhouette per frame expected".into()));
        }
        if !self.flows.is_empty() && self.flows.len() + 1 != f {
            return Err(Error::SizeMismatch("one flow per consecutive frame pair expected".into()));
        }
        if let Some(t) = self.targets.iter().find(|t| t.len() != vertices) {
            return Err(Error::SizeMismatch(format!("target frame has {} vertices, mesh has {vertices}", t.len())));
        }
        for (i, c) in self.cameras.iter().enumerate() {
            c.validate()?;
            let sized = |w: usize, h: usize| w == c.width && h == c.height;
            if self.silhouettes.get(i).is_some_and(|s| !sized(s.width, s.height))
                || self.flows.get(i).is_some_and(|r| !sized(r.width, r.height))
            {
                return Err(Error::SizeMismatch(format!("frame {i}: raster size differs from camera")));
            }
        }
        Ok(())
    }

    /// Write targets, rasters and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        create_dir(dir.join("frames"))?;
        create_dir(dir.join("flows"))?;
        let mut manifest = FramesManifest {
            targets: "targets.json".into(),
            cameras: self.cameras.clone(),
            silhouettes: Vec::new(),
            flows: Vec::new(),
        };
        for (i, s) in self.silhouettes.iter().enumerate() {
            let name = format!("frames/{i:04}.pgm");
            s.save(dir.join(&name))?;
            manifest.silhouettes.push(name);
        }
        for (i, r) in self.flows.iter().enumerate() {
            let name = format!("flows/{i:04}.bin");
            r.save(dir.join(&name))?;
            manifest.flows.push(name);
        }
        let targets: Vec<Vec<[f64; 3]>> = self
            .targets
            .iter()
            .map(|t| t.iter().map(|p| [p.x, p.y, p.z]).collect())
            .collect();
        write_json(&targets, dir.join(&manifest.targets))?;
        write_json(&manifest, dir.join("frames.json"))
    }

    /// Load from a manifest; relative paths resolve against its directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: FramesManifest = read_json(manifest_path)?;
        let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let targets: Vec<Vec<[f64; 3]>> = read_json(base.join(&manifest.targets))?;
        Ok(FrameData {
            targets: targets.into_iter().map(|t| t.into_iter().map(v3).collect()).collect(),
            cameras: manifest.cameras,
            silhouettes: manifest
                .silhouettes
                .iter()
                .map(|p| SilhouetteRaster::load(base.join(p)))
                .collect::<Result<_>>()?,
            flows: manifest.flows.iter().map(|p| FlowRaster::load(base.join(p))).collect::<Result<_>>()?,
        })
    }
}

/// A synthetic dataset directory as read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub mesh: TriMesh,
    pub skeleton: Skeleton,
    pub labels: Vec<usize>,
    pub poses: Vec<PoseFrame>,
    pub frames: FrameData,
}

pub fn write_dataset(dir: &Path, mesh: &TriMesh, gt: &GroundTruth) -> Result<()> {
    create_dir(dir)?;
    save_obj(mesh, dir.join("mesh.obj"))?;
    gt.skeleton.save(dir.join("gt_skeleton.json"))?;
    write_json(&gt.labels, dir.join("gt_labels.json"))?;
    save_poses(&gt.poses, dir.join("poses.json"))?;
    FrameData::from_ground_truth(gt).save(dir)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let need = |name: &str| {
        let p = dir.join(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    };
    Ok(Dataset {
        mesh: load_mesh(need("mesh.obj")?)?,
        skeleton: Skeleton::load(need("gt_skeleton.json")?)?,
        labels: read_json(need("gt_labels.json")?)?,
        poses: load_poses(need("poses.json")?)?,
        frames: FrameData::load(&need("frames.json")?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::signed_volume;

    #[test]
    fn static_single_segment_has_zero_flow() {
        let mut spec = preset("tube").unwrap();
        spec.root_motion = RootMotion::default();
        spec.frames = 3;
        let (mesh, gt) = generate(&spec).unwrap();
        assert_eq!(gt.positions[0], gt.positions[2]);
        assert_eq!(gt.positions[0], mesh.vertices());
        for f in &gt.flows {
            assert!(f.flow.iter().all(|v| *v == [0.0, 0.0]));
            assert!(f.confidence.iter().any(|&c| c == 1.0));
        }
    }

    #[test]
    fn capsule_is_closed_and_outward() {
        let spec = preset("tube").unwrap();
        let (mesh, labels) = build_mesh(&spec).unwrap();
        assert_eq!(mesh.num_components(), 1);
        // closed 2-manifold: every edge borders two faces, χ = 2
        let (v, e, f) = (mesh.num_vertices() as i64, mesh.num_edges() as i64, mesh.num_faces() as i64);
        assert_eq!(v - e + f, 2);
        assert_eq!(2 * e, 3 * f);
        // polygonal capsule volume is a bit under the smooth one
        let (r, l) = (0.2f64, 3.0f64);
        let smooth = std::f64::consts::PI * r * r * l + 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        let vol = signed_volume(&mesh);
        assert!(vol > 0.85 * smooth && vol < smooth, "{vol} vs {smooth}");
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn hinge_distal_vertices_trace_arcs() {
        let spec = preset("hinge2").unwrap();
        let (mesh, gt) = generate(&spec).unwrap();
        let pivot = Vec3::new(1.0, 0.0, 0.0);
        for (n, rest) in mesh.vertices().iter().enumerate() {
            for f in [0, 4, 9] {
                let p = gt.positions[f][n];
                if gt.labels[n] == 0 {
                    assert_eq!(p, *rest);
                    continue;
                }
                // rotation about z through the pivot, closed form
                let th = std::f64::consts::FRAC_PI_4 * f as f64 / 9.0;
                let d = rest - pivot;
                let expect = pivot + Vec3::new(th.cos() * d.x - th.sin() * d.y, th.sin() * d.x + th.cos() * d.y, d.z);
                assert!((p - expect).norm() < 1e-12);
                assert!(((p - pivot).xy().norm() - d.xy().norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn arm_ground_truth_counts_and_lbs_consistency() {
        let spec = preset("arm3").unwrap();
        let (mesh, gt) = generate(&spec).unwrap();
        assert_eq!(gt.skeleton.num_bones(), 3);
        assert_eq!(gt.skeleton.num_joints(), 2);
        assert_eq!(gt.flows.len(), spec.frames - 1);
        let w = gt.one_hot();
        for (pose, pos) in gt.poses.iter().zip(&gt.positions) {
            assert_eq!(&blend_skin(mesh.vertices(), &w, pose).unwrap(), pos);
        }
        // object stays in view
        for (s, c) in gt.silhouettes.iter().zip(&gt.cameras) {
            let border = (0..c.width).any(|x| s.get(x, 0) > 0.0 || s.get(x, c.height - 1) > 0.0);
            assert!(!border && s.area() > 200.0);
        }
    }

    #[test]
    fn flow_matches_projected_displacement() {
        let spec = preset("arm3").unwrap();
        let (_mesh, gt) = generate(&spec).unwrap();
        let f = 1;
        let (c0, c1) = (&gt.cameras[f], &gt.cameras[f + 1]);
        let mut checked = 0;
        for (n, vis) in gt.visibility[f].iter().enumerate() {
            if !vis {
                continue;
            }
            let a = c0.project(&gt.positions[f][n]).unwrap();
            let b = c1.project(&gt.positions[f + 1][n]).unwrap();
            let (x, y) = (a.x.floor() as usize, a.y.floor() as usize);
            let r = &gt.flows[f];
            if r.confidence[y * r.width + x] == 0.0 {
                continue;
            }
            let fl = r.at(x, y);
            // the pixel's own surface point is within half a pixel diagonal of
            // the vertex; flow is smooth, so this bounds the difference
            let err = ((fl[0] as f64 - (b - a).x).powi(2) + (fl[1] as f64 - (b - a).y).powi(2)).sqrt();
            assert!(err < 0.51, "vertex {n}: {err}");
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn presets_validate_and_reject_bad_specs() {
        for p in PRESETS {
            preset(p).unwrap().validate().unwrap();
        }
        assert!(preset("nope").is_err());
        let mut s = preset("tube").unwrap();
        s.segments[0].radius = 4.0;
        assert!(matches!(generate(&s), Err(Error::InvalidSpec(_))));
        let mut s = preset("arm3").unwrap();
        s.segments[1].angles.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn quadruped_has_five_tubes_and_ten_bones() {
        let spec = preset("quadruped").unwrap();
        let (mesh, labels) = build_mesh(&spec).unwrap();
        assert_eq!(mesh.num_components(), 5);
        assert_eq!(rest_skeleton(&spec).unwrap().num_bones(), 10);
        assert_eq!(labels.iter().max(), Some(&9));
    }

    #[test]
    fn corrupt_statistics() {
        let spec = preset("tube").unwrap();
        let (_m, gt) = generate(&spec).unwrap();
        assert_eq!(corrupt(&gt, &NoiseSpec::default()).unwrap(), gt);
        let sigma = 0.01;
        let noisy = corrupt(&gt, &NoiseSpec { position_sigma: sigma, flow_sigma: 0.0, seed: 3 }).unwrap();
        let d: Vec<f64> = noisy.positions[0]
            .iter()
            .zip(&gt.positions[0])
            .take(1000)
            .map(|(a, b)| (a - b).norm_squared())
            .collect();
        assert_eq!(d.len(), 1000);
        let rms = (d.iter().sum::<f64>() / d.len() as f64).sqrt();
        assert!((rms / (sigma * 3f64.sqrt()) - 1.0).abs() < 0.1, "{rms}");
        assert!(corrupt(&gt, &NoiseSpec { position_sigma: -1.0, ..Default::default() }).is_err());
        assert_eq!(noisy, corrupt(&gt, &NoiseSpec { position_sigma: sigma, flow_sigma: 0.0, seed: 3 }).unwrap());
    }

    #[test]
    fn dataset_round_trip() {
        let mut spec = preset("hinge2").unwrap();
        spec.frames = 3;
        for s in &mut spec.segments {
            s.angles.truncate(3);
        }
        let (mesh, gt) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &mesh, &gt).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.mesh, mesh);
        assert_eq!(ds.skeleton, gt.skeleton);
        assert_eq!(ds.labels, gt.labels);
        assert_eq!(ds.poses, gt.poses);
        assert_eq!(ds.frames.targets, gt.positions);
        assert_eq!(ds.frames.flows, gt.flows);
        assert_eq!(ds.frames.silhouettes, gt.silhouettes);
        std::fs::remove_file(dir.path().join("gt_labels.json")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::MissingArtifact(_))));
    }
}
