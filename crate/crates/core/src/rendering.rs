//! Pinhole camera, z-buffer rasterization, ray-cast visibility and flow
//! rasters.
//!
//! Camera axes follow the computer-vision convention: x right, y down,
//! z forward. Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`; its centre is at
//! `(i + 0.5, j + 0.5)`.

use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::bbox_diagonal;
use crate::kinematics::RigidTransform;
use crate::{Mat3, Vec2, Vec3};

/// Points closer than this to the image plane count as behind the camera.
pub const NEAR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World → camera.
    pub extrinsic: RigidTransform,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let c = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic: RigidTransform::identity(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidSpec("focal lengths must be positive".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidSpec("principal point outside the image".into()));
        }
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(Error::InvalidSpec("image too large".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` mapped to image-up.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let z = (target - eye).try_normalize(1e-12).ok_or(Error::ZeroVector)?;
        let y = -(up - z * up.dot(&z)).try_normalize(1e-12).ok_or(Error::ZeroVector)?;
        let x = y.cross(&z);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        let mut cam = Camera::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)?;
        cam.extrinsic = RigidTransform::new(rot, -(rot * eye));
        Ok(cam)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.extrinsic.apply(p)
    }

    /// World position of the optical centre.
    pub fn center(&self) -> Vec3 {
        self.extrinsic.inverse().translation
    }

    /// Projection of a camera-frame point.
    pub fn project_camera(&self, pc: &Vec3) -> Result<Vec2> {
        if !(pc.z > NEAR) {
            return Err(Error::BehindCamera { z: pc.z });
        }
        Ok(Vec2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    pub fn project(&self, p: &Vec3) -> Result<Vec2> {
        self.project_camera(&self.to_camera(p))
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl SilhouetteRaster {
    pub fn zeros(width: usize, height: usize) -> Self {
        SilhouetteRaster {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn area(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Binary PGM (P5), 255 for coverage.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Schema(format!("pgm: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(bad("not P5"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if max == 0 || max > 255 {
            return Err(bad("unsupported maxval"));
        }
        let body = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated data"))?;
        Ok(SilhouetteRaster {
            width: w,
            height: h,
            data: body.iter().map(|&b| b as f32 / max as f32).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Dense flow (pixels, frame t → t+1) with per-pixel confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRaster {
    pub width: usize,
    pub height: usize,
    pub flow: Vec<[f32; 2]>,
    pub confidence: Vec<f32>,
}

pub const FLOW_MAGIC: &[u8; 4] = b"SKFL";

impl FlowRaster {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowRaster {
            width,
            height,
            flow: vec![[0.0; 2]; width * height],
            confidence: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> [f32; 2] {
        self.flow[y * self.width + x]
    }

    /// Little-endian: magic, `H` u16, `W` u16, `H·W·2` f32 flow, `H·W` f32
    /// confidence.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.flow.len() * 12);
        out.extend_from_slice(FLOW_MAGIC);
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        for f in &self.flow {
            out.extend_from_slice(&f[0].to_le_bytes());
            out.extend_from_slice(&f[1].to_le_bytes());
        }
        for c in &self.confidence {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != FLOW_MAGIC {
            return Err(Error::Schema("flow: bad magic".into()));
        }
        let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        if bytes.len() != 8 + h * w * 12 {
            return Err(Error::Schema("flow: size does not match header".into()));
        }
        let f = |k: usize| {
            let o = 8 + 4 * k;
            f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
        };
        let flow = (0..h * w).map(|p| [f(2 * p), f(2 * p + 1)]).collect();
        let confidence = (0..h * w).map(|p| f(2 * h * w + p)).collect();
        Ok(FlowRaster {
            width: w,
            height: h,
            flow,
            confidence,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Per-pixel z-buffer result: winning face and its perspective-correct
/// barycentric coordinates.
#[derive(Debug, Clone)]
pub struct Fragments {
    pub width: usize,
    pub height: usize,
    pub face: Vec<Option<usize>>,
    pub depth: Vec<f64>,
    pub bary: Vec<[f64; 3]>,
}

/// Z-buffered rasterization sampling pixel centres. Faces with a vertex
/// behind the near plane are skipped. Nearest depth wins; exact depth ties go
/// to the lowest face index.
pub fn rasterize(positions: &[Vec3], faces: &[[usize; 3]], camera: &Camera) -> Fragments {
    let (w, h) = (camera.width, camera.height);
    let mut frag = Fragments {
        width: w,
        height: h,
        face: vec![None; w * h],
        depth: vec![f64::INFINITY; w * h],
        bary: vec![[0.0; 3]; w * h],
    };
    let cam: Vec<Vec3> = positions.iter().map(|p| camera.to_camera(p)).collect();
    for (fi, f) in faces.iter().enumerate() {
        let pc = [cam[f[0]], cam[f[1]], cam[f[2]]];
        if pc.iter().any(|p| !(p.z > NEAR)) {
            continue;
        }
        let s: Vec<Vec2> = pc
            .iter()
            .map(|p| camera.project_camera(p).expect("in front"))
            .collect();
        let area = (s[1] - s[0]).perp(&(s[2] - s[0]));
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let lo_x = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let hi_x = s.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let hi_y = s.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (lo_x - 0.5).ceil().max(0.0);
        let x1 = (hi_x - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (lo_y - 0.5).ceil().max(0.0);
        let y1 = (hi_y - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let p = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
                let l0 = (s[2] - s[1]).perp(&(p - s[1])) / area;
                let l1 = (s[0] - s[2]).perp(&(p - s[2])) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                let inv = [l0 / pc[0].z, l1 / pc[1].z, l2 / pc[2].z];
                let inv_z = inv[0] + inv[1] + inv[2];
                let z = 1.0 / inv_z;
                let idx = y * w + x;
                if z < frag.depth[idx] {
                    frag.depth[idx] = z;
                    frag.face[idx] = Some(fi);
                    frag.bary[idx] = [inv[0] * z, inv[1] * z, inv[2] * z];
                }
            }
        }
    }
    frag
}

pub fn rasterize_silhouette(positions: &[Vec3], faces: &[[usize; 3]], camera: &Camera) -> SilhouetteRaster {
    let frag = rasterize(positions, faces, camera);
    SilhouetteRaster {
        width: camera.width,
        height: camera.height,
        data: frag.face.iter().map(|f| if f.is_some() { 1.0 } else { 0.0 }).collect(),
    }
}

/// Flat-interpolated vertex colours; background is black.
pub fn render_vertex_colors(
    positions: &[Vec3],
    faces: &[[usize; 3]],
    colors: &[Vec3],
    camera: &Camera,
) -> Vec<[f32; 3]> {
    let frag = rasterize(positions, faces, camera);
    frag.face
        .iter()
        .zip(&frag.bary)
        .map(|(f, b)| match f {
            Some(fi) => {
                let c = faces[*fi].iter().zip(b).fold(Vec3::zeros(), |a, (&v, &w)| a + colors[v] * w);
                [c.x as f32, c.y as f32, c.z as f32]
            }
            None => [0.0; 3],
        })
        .collect()
}

/// Flow of the surface point rasterized at each pixel of frame `t`:
/// `project_{t+1}(X_{t+1}) − project_t(X_t)`. Confidence is 1 on covered
/// pixels whose point stays in front of the camera at `t+1`, else 0.
pub fn flow_from_correspondence(
    pos_t: &[Vec3],
    pos_t1: &[Vec3],
    camera_t: &Camera,
    camera_t1: &Camera,
    faces: &[[usize; 3]],
) -> Result<FlowRaster> {
    if pos_t.len() != pos_t1.len() {
        return Err(Error::SizeMismatch("frames must share topology".into()));
    }
    let frag = rasterize(pos_t, faces, camera_t);
    let mut out = FlowRaster::zeros(camera_t.width, camera_t.height);
    for (idx, (f, b)) in frag.face.iter().zip(&frag.bary).enumerate() {
        let Some(fi) = f else { continue };
        let tri = faces[*fi];
        let interp = |pos: &[Vec3]| tri.iter().zip(b).fold(Vec3::zeros(), |a, (&v, &w)| a + pos[v] * w);
        let (Ok(a), Ok(c)) = (camera_t.project(&interp(pos_t)), camera_t1.project(&interp(pos_t1))) else {
            continue;
        };
        let d = c - a;
        out.flow[idx] = [d.x as f32, d.y as f32];
        out.confidence[idx] = 1.0;
    }
    Ok(out)
}

/// Möller–Trumbore: parameter `t` along `orig + t·dir`, if the ray hits.
pub fn ray_triangle(orig: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = orig - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Whether the segment from `origin` to vertex `v` is blocked by face `f`.
pub fn occludes(
    origin: &Vec3,
    positions: &[Vec3],
    face: [usize; 3],
    v: usize,
    eps: f64,
) -> bool {
    if face.contains(&v) {
        return false;
    }
    let dir = positions[v] - origin;
    let dist = dir.norm();
    if dist == 0.0 {
        return false;
    }
    match ray_triangle(origin, &dir, &positions[face[0]], &positions[face[1]], &positions[face[2]]) {
        Some(t) => t > 0.0 && t * dist < dist - eps,
        None => false,
    }
}

/// Screen-space bins of faces used to limit ray tests. Every point on the
/// ray from the optical centre to a vertex projects onto that vertex's image
/// point, so only faces whose projection covers it can block the ray; faces
/// not fully in front of the camera are always tested.
struct FaceBins {
    lo: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<usize>>,
    always: Vec<usize>,
}

impl FaceBins {
    fn new(proj: &[Option<Vec2>], faces: &[[usize; 3]]) -> Self {
        let pts: Vec<Vec2> = proj.iter().flatten().copied().collect();
        let mut lo = Vec2::repeat(f64::INFINITY);
        let mut hi = Vec2::repeat(f64::NEG_INFINITY);
        for p in &pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if pts.is_empty() {
            lo = Vec2::zeros();
            hi = Vec2::zeros();
        }
        let extent = (hi - lo).amax().max(1e-12);
        let side = ((faces.len() as f64).sqrt().ceil() as usize).clamp(1, 256);
        let cell = extent / side as f64;
        let margin = 1e-6 * extent;
        let mut bins = vec![Vec::new(); side * side];
        let mut always = Vec::new();
        let clamp = |x: f64| ((x / cell).floor().max(0.0) as usize).min(side - 1);
        for (fi, f) in faces.iter().enumerate() {
            let (Some(a), Some(b), Some(c)) = (proj[f[0]], proj[f[1]], proj[f[2]]) else {
                always.push(fi);
                continue;
            };
            let flo = a.inf(&b).inf(&c) - lo - Vec2::repeat(margin);
            let fhi = a.sup(&b).sup(&c) - lo + Vec2::repeat(margin);
            for iy in clamp(flo.y)..=clamp(fhi.y) {
                for ix in clamp(flo.x)..=clamp(fhi.x) {
                    bins[iy * side + ix].push(fi);
                }
            }
        }
        FaceBins {
            lo,
            cell,
            nx: side,
            ny: side,
            bins,
            always,
        }
    }

    fn candidates(&self, p: &Vec2) -> impl Iterator<Item = usize> + '_ {
        let d = p - self.lo;
        let ix = ((d.x / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = ((d.y / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        self.bins[iy * self.nx + ix].iter().chain(&self.always).copied()
    }
}

/// Per-vertex visibility by ray casting from the optical centre: a vertex is
/// visible iff it is in front of the camera and no triangle not containing
/// it intersects the segment strictly nearer than the vertex by more than
/// `1e-6 × bbox diagonal`.
pub fn visibility(positions: &[Vec3], faces: &[[usize; 3]], camera: &Camera) -> Vec<bool> {
    let eps = 1e-6 * bbox_diagonal(positions);
    let origin = camera.center();
    let proj: Vec<Option<Vec2>> = positions.iter().map(|p| camera.project(p).ok()).collect();
    let bins = FaceBins::new(&proj, faces);
    (0..positions.len())
        .map(|v| match &proj[v] {
            None => false,
            Some(p) => !bins
                .candidates(p)
                .any(|fi| occludes(&origin, positions, faces[fi], v, eps)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;

    fn cam(w: usize, h: usize, f: f64) -> Camera {
        Camera::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    #[test]
    fn projection_examples() {
        let c = Camera::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        assert_eq!(c.project(&Vec3::new(1.0, 0.0, 10.0)).unwrap(), Vec2::new(60.0, 50.0));
        assert_eq!(c.project(&Vec3::new(0.0, 0.0, 3.0)).unwrap(), Vec2::new(50.0, 50.0));
        assert!(matches!(c.project(&Vec3::new(0.0, 0.0, -1.0)), Err(Error::BehindCamera { .. })));
        assert!(Camera::new(-1.0, 1.0, 1.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn look_at_maps_up_to_image_up() {
        let c = Camera::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y(), 100.0, 64, 64).unwrap();
        let o = c.project(&Vec3::zeros()).unwrap();
        assert!((o - Vec2::new(32.0, 32.0)).norm() < 1e-12);
        let up = c.project(&Vec3::y()).unwrap();
        let right = c.project(&Vec3::x()).unwrap();
        assert!(up.y < o.y && right.x > o.x);
        assert!((c.center() - Vec3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn silhouette_empty_and_full() {
        let c = cam(16, 12, 10.0);
        let empty = rasterize_silhouette(&[], &[], &c);
        assert!(empty.data.iter().all(|&v| v == 0.0));
        let q = primitives::quad(-10.0, 10.0, -10.0, 10.0, 1.0);
        let full = rasterize_silhouette(q.vertices(), q.faces(), &c);
        assert!(full.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sphere_coverage_matches_disk_area() {
        let s = primitives::icosphere(4, 1.0);
        let moved: Vec<Vec3> = s.vertices().iter().map(|p| p + Vec3::new(0.0, 0.0, 10.0)).collect();
        let c = cam(200, 200, 500.0);
        let sil = rasterize_silhouette(&moved, s.faces(), &c);
        // tangent cone of a sphere: projected radius f·r/√(z²−r²)
        let r = 500.0 / (100f64 - 1.0).sqrt();
        let disk = std::f64::consts::PI * r * r;
        assert!((sil.area() - disk).abs() / disk < 0.03, "{} vs {disk}", sil.area());
    }

    #[test]
    fn flow_of_translated_quad() {
        let c = cam(64, 64, 100.0);
        let q = primitives::quad(-0.5, 0.5, -0.5, 0.5, 5.0);
        // (5 px)·z/f in world units
        let shift = Vec3::new(5.0 * 5.0 / 100.0, 0.0, 0.0);
        let moved: Vec<Vec3> = q.vertices().iter().map(|p| p + shift).collect();
        let f = flow_from_correspondence(q.vertices(), &moved, &c, &c, q.faces()).unwrap();
        let mut covered = 0;
        for (fl, &conf) in f.flow.iter().zip(&f.confidence) {
            if conf > 0.0 {
                covered += 1;
                assert!((fl[0] - 5.0).abs() < 1e-4 && fl[1].abs() < 1e-4);
            } else {
                assert_eq!(*fl, [0.0, 0.0]);
            }
        }
        assert!(covered > 0);
        let stat = flow_from_correspondence(q.vertices(), q.vertices(), &c, &c, q.faces()).unwrap();
        assert!(stat.flow.iter().all(|f| f[0].abs() < 1e-4 && f[1].abs() < 1e-4));
        assert_eq!(stat, flow_from_correspondence(q.vertices(), q.vertices(), &c, &c, q.faces()).unwrap());
    }

    #[test]
    fn flow_file_round_trip() {
        let mut f = FlowRaster::zeros(3, 2);
        f.flow[4] = [1.5, -2.25];
        f.confidence[4] = 1.0;
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..8], b"SKFL\x02\x00\x03\x00");
        assert_eq!(FlowRaster::from_bytes(&bytes).unwrap(), f);
        assert!(FlowRaster::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let mut s = SilhouetteRaster::zeros(5, 3);
        s.data[7] = 1.0;
        assert_eq!(SilhouetteRaster::from_pgm(&s.to_pgm()).unwrap(), s);
    }

    #[test]
    fn visibility_cases() {
        let c = cam(64, 64, 50.0);
        let tri = vec![Vec3::new(-1.0, -1.0, 5.0), Vec3::new(1.0, -1.0, 5.0), Vec3::new(0.0, 1.0, 5.0)];
        assert_eq!(visibility(&tri, &[[0, 1, 2]], &c), vec![true; 3]);

        // small triangle centred behind a larger one
        let mut pts = vec![Vec3::new(-2.0, -2.0, 4.0), Vec3::new(2.0, -2.0, 4.0), Vec3::new(0.0, 2.0, 4.0)];
        pts.extend([Vec3::new(-0.1, -0.1, 8.0), Vec3::new(0.1, -0.1, 8.0), Vec3::new(0.0, 0.1, 8.0)]);
        let vis = visibility(&pts, &[[0, 1, 2], [3, 4, 5]], &c);
        assert_eq!(vis, vec![true, true, true, false, false, false]);

        let s = primitives::icosphere(2, 1.0);
        let moved: Vec<Vec3> = s.vertices().iter().map(|p| p + Vec3::new(0.0, 0.0, 6.0)).collect();
        let vis = visibility(&moved, s.faces(), &c);
        let front = (0..moved.len()).min_by(|&a, &b| moved[a].z.total_cmp(&moved[b].z)).unwrap();
        let back = (0..moved.len()).max_by(|&a, &b| moved[a].z.total_cmp(&moved[b].z)).unwrap();
        assert!(vis[front] && !vis[back]);
    }
}
