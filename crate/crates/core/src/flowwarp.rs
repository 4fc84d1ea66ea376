//! Optical flow → per-vertex surface flow → per-bone motion direction.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rendering::FlowRaster;
use crate::skinning::SkinningWeights;
use crate::Vec2;

/// Bones whose visible weight mass is below this fraction of `N` are
/// unobserved in a frame.
pub const UNOBSERVED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFlow {
    pub flow: Vec<Vec2>,
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoneFlow {
    pub flow: Vec<Vec2>,
    /// `Σ_n W_{n,b} 𝒱_n`.
    pub mass: Vec<f64>,
    pub observed: Vec<bool>,
}

fn bilinear(raster: &FlowRaster, p: &Vec2) -> Option<Vec2> {
    let (w, h) = (raster.width as f64, raster.height as f64);
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x < w && p.y < h) {
        return None;
    }
    // pixel centres sit at integer + 0.5; the outer half pixel clamps
    let x = (p.x - 0.5).clamp(0.0, w - 1.0);
    let y = (p.y - 0.5).clamp(0.0, h - 1.0);
    let x0 = (x.floor() as usize).min(raster.width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(raster.height.saturating_sub(2));
    let x1 = (x0 + 1).min(raster.width - 1);
    let y1 = (y0 + 1).min(raster.height - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let f = |xi: usize, yi: usize| {
        let v = raster.at(xi, yi);
        Vec2::new(v[0] as f64, v[1] as f64)
    };
    Some(
        f(x0, y0) * ((1.0 - fx) * (1.0 - fy))
            + f(x1, y0) * (fx * (1.0 - fy))
            + f(x0, y1) * ((1.0 - fx) * fy)
            + f(x1, y1) * (fx * fy),
    )
}

/// Bilinear flow at each projected vertex; invisible or out-of-frame
/// vertices get zero flow and are marked invisible.
pub fn sample_surface_flow(raster: &FlowRaster, projected: &[Option<Vec2>], visible: &[bool]) -> Result<SurfaceFlow> {
    if projected.len() != visible.len() {
        return Err(Error::SizeMismatch("projections and visibility differ in length".into()));
    }
    let mut flow = Vec::with_capacity(projected.len());
    let mut vis = Vec::with_capacity(projected.len());
    for (p, &v) in projected.iter().zip(visible) {
        let sample = match p {
            Some(p) if v => bilinear(raster, p),
            _ => None,
        };
        match sample {
            Some(f) => {
                flow.push(f);
                vis.push(true);
            }
            None => {
                flow.push(Vec2::zeros());
                vis.push(false);
            }
        }
    }
    Ok(SurfaceFlow { flow, visible: vis })
}

/// `F_b = Σ_n W_{n,b} F^S_n 𝒱_n` (unnormalized).
pub fn bone_flow(surface: &SurfaceFlow, w: &SkinningWeights) -> Result<BoneFlow> {
    let n = surface.flow.len();
    if w.num_vertices() != n || surface.visible.len() != n {
        return Err(Error::SizeMismatch("surface flow and weights differ".into()));
    }
    let nb = w.num_bones();
    let mut flow = vec![Vec2::zeros(); nb];
    let mut mass = vec![0.0; nb];
    for v in 0..n {
        if !surface.visible[v] {
            continue;
        }
        let f = surface.flow[v];
        for b in 0..nb {
            let wb = w.w[(v, b)];
            flow[b] += f * wb;
            mass[b] += wb;
        }
    }
    let floor = UNOBSERVED_FRACTION * n as f64;
    let observed = mass.iter().map(|&m| m >= floor && m > 0.0).collect();
    Ok(BoneFlow { flow, mass, observed })
}

impl BoneFlow {
    /// Mass-normalized flows (mean visible flow per bone); zero when unobserved.
    pub fn normalized(&self) -> Vec<Vec2> {
        self.flow
            .iter()
            .zip(&self.mass)
            .map(|(f, &m)| if m > 0.0 { f / m } else { Vec2::zeros() })
            .collect()
    }
}

pub fn cosine_similarity(a: &Vec2, b: &Vec2) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na <= 1e-12 || nb <= 1e-12 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `frame,bone,u,v,mass` rows.
pub fn bone_flows_csv(frames: &[(usize, BoneFlow)]) -> String {
    let mut out = String::from("frame,bone,u,v,mass\n");
    for (f, bf) in frames {
        for (b, (fl, m)) in bf.flow.iter().zip(&bf.mass).enumerate() {
            let _ = writeln!(out, "{f},{b},{:?},{:?},{:?}", fl.x, fl.y, m);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn raster_with(w: usize, h: usize, f: impl Fn(usize, usize) -> [f32; 2]) -> FlowRaster {
        let mut r = FlowRaster::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                r.flow[y * w + x] = f(x, y);
                r.confidence[y * w + x] = 1.0;
            }
        }
        r
    }

    #[test]
    fn sampling_examples() {
        let r = raster_with(4, 3, |x, _| [2.0 * (x as f32 + 1.0), 0.0]);
        let s = sample_surface_flow(
            &r,
            &[Some(Vec2::new(1.5, 1.5)), Some(Vec2::new(1.0, 1.5)), Some(Vec2::new(2.5, 0.5)), Some(Vec2::new(-3.0, 1.0)), None],
            &[true, true, false, true, true],
        )
        .unwrap();
        assert_eq!(s.flow[0], Vec2::new(4.0, 0.0));
        // midway between pixels with flows 2 and 4
        assert!((s.flow[1] - Vec2::new(3.0, 0.0)).norm() < 1e-12);
        assert_eq!(s.flow[2], Vec2::zeros());
        assert_eq!(s.visible, vec![true, true, false, false, false]);
    }

    #[test]
    fn bone_flow_examples() {
        let surf = SurfaceFlow {
            flow: vec![Vec2::new(1.0, 2.0); 4],
            visible: vec![true; 4],
        };
        let w = SkinningWeights::new(DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 1.0, 0.0])).unwrap();
        let bf = bone_flow(&surf, &w).unwrap();
        for f in &bf.flow {
            assert!((cosine_similarity(f, &Vec2::new(1.0, 2.0)).unwrap() - 1.0).abs() < 1e-12);
        }
        let hidden = SurfaceFlow {
            visible: vec![false; 4],
            ..surf
        };
        let bf = bone_flow(&hidden, &w).unwrap();
        assert!(bf.flow.iter().all(|f| *f == Vec2::zeros()));
        assert!(bf.observed.iter().all(|o| !o));
    }

    #[test]
    fn hinge_parts_are_dissimilar() {
        let n = 40;
        let mut flow = Vec::new();
        let mut w = DMatrix::zeros(n, 2);
        for v in 0..n {
            let part = v % 2;
            flow.push(if part == 0 { Vec2::new(1.0, 0.0) } else { Vec2::new(0.0, 1.0) });
            w[(v, part)] = 0.99;
            w[(v, 1 - part)] = 0.01;
        }
        let bf = bone_flow(
            &SurfaceFlow { flow, visible: vec![true; n] },
            &SkinningWeights::new(w).unwrap(),
        )
        .unwrap();
        assert!(cosine_similarity(&bf.flow[0], &bf.flow[1]).unwrap() < 0.05);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&Vec2::new(1.0, 0.0), &Vec2::new(2.0, 0.0)).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&Vec2::new(1.0, 0.0), &Vec2::new(0.0, 3.0)).unwrap(), 0.0);
        assert!((cosine_similarity(&Vec2::new(1.0, 1.0), &Vec2::new(1.0, 0.0)).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&Vec2::zeros(), &Vec2::x()), Err(Error::ZeroVector)));
    }

    proptest! {
        #[test]
        fn linear_and_scale_invariant(
            f1 in proptest::collection::vec(proptest::array::uniform2(-3.0f64..3.0), 12),
            f2 in proptest::collection::vec(proptest::array::uniform2(-3.0f64..3.0), 12),
            raw in proptest::collection::vec(0.01f64..1.0, 36),
            vis in proptest::collection::vec(any::<bool>(), 12),
            a in -2.0f64..2.0, scales in proptest::array::uniform3(0.1f64..10.0),
        ) {
            let w = DMatrix::from_fn(12, 3, |r, c| raw[3 * r + c]);
            let w = SkinningWeights { w: DMatrix::from_fn(12, 3, |r, c| w[(r, c)] / w.row(r).sum()) };
            let s1 = SurfaceFlow { flow: f1.iter().map(|x| Vec2::from(*x)).collect(), visible: vis.clone() };
            let s2 = SurfaceFlow { flow: f2.iter().map(|x| Vec2::from(*x)).collect(), visible: vis.clone() };
            let mix = SurfaceFlow {
                flow: s1.flow.iter().zip(&s2.flow).map(|(p, q)| p * a + q).collect(),
                visible: vis.clone(),
            };
            let (b1, b2, bm) = (bone_flow(&s1, &w).unwrap(), bone_flow(&s2, &w).unwrap(), bone_flow(&mix, &w).unwrap());
            for b in 0..3 {
                prop_assert!((bm.flow[b] - (b1.flow[b] * a + b2.flow[b])).norm() < 1e-10);
            }
            let scaled = SkinningWeights { w: DMatrix::from_fn(12, 3, |r, c| w.w[(r, c)] * scales[c]) };
            let bs = bone_flow(&s1, &scaled).unwrap();
            for b in 0..3 {
                if b1.flow[b].norm() > 1e-9 {
                    prop_assert!((cosine_similarity(&b1.flow[b], &bs.flow[b]).unwrap() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
