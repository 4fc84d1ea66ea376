//! Reconstruction losses and regularizers, evaluated on given states.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriMesh;
use crate::rendering::{FlowRaster, SilhouetteRaster};
use crate::skinning::RigidityCoeffs;
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub silhouette: f64,
    pub rgb: f64,
    pub flow: f64,
    /// Perceptual slot; always zero here.
    pub perceptual: f64,
    pub shape: f64,
    pub dr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            silhouette: 1.0,
            rgb: 0.1,
            flow: 0.5,
            perceptual: 0.0,
            shape: 0.1,
            dr: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.silhouette, self.rgb, self.flow, self.perceptual, self.shape, self.dr];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.perceptual != 0.0 {
            return Err(Error::Config("perceptual loss is not available".into()));
        }
        Ok(())
    }
}

fn check_pair(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(format!("{} vs {} vertices", a.len(), b.len())));
    }
    Ok(())
}

/// `Σ_{(i,j)} R_ij · | ‖X_i^t − X_j^t‖ − ‖X_i^{t+1} − X_j^{t+1}‖ |`.
pub fn dr_loss(pos_t: &[Vec3], pos_t1: &[Vec3], edges: &[[usize; 2]], r: &RigidityCoeffs) -> Result<f64> {
    check_pair(pos_t, pos_t1)?;
    if r.r.len() != edges.len() {
        return Err(Error::SizeMismatch("one rigidity coefficient per edge".into()));
    }
    Ok(edges
        .iter()
        .zip(&r.r)
        .map(|(&[i, j], &rij)| {
            rij * ((pos_t[i] - pos_t[j]).norm() - (pos_t1[i] - pos_t1[j]).norm()).abs()
        })
        .sum())
}

/// [`dr_loss`] with unit rigidity.
pub fn arap_loss(pos_t: &[Vec3], pos_t1: &[Vec3], edges: &[[usize; 2]]) -> Result<f64> {
    check_pair(pos_t, pos_t1)?;
    Ok(edges
        .iter()
        .map(|&[i, j]| ((pos_t[i] - pos_t[j]).norm() - (pos_t1[i] - pos_t1[j]).norm()).abs())
        .sum())
}

/// Uniform Laplacian smoothness `Σ_i ‖X_i − mean(X_N(i))‖²` plus the indices
/// of isolated vertices, which are excluded.
pub fn shape_loss(mesh: &TriMesh) -> (f64, Vec<usize>) {
    shape_loss_of(mesh.vertices(), &mesh.neighbors())
}

pub fn shape_loss_of(positions: &[Vec3], neighbors: &[Vec<usize>]) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut isolated = Vec::new();
    for (i, nb) in neighbors.iter().enumerate() {
        if nb.is_empty() {
            isolated.push(i);
            continue;
        }
        let mean = nb.iter().map(|&j| positions[j]).sum::<Vec3>() / nb.len() as f64;
        total += (positions[i] - mean).norm_squared();
    }
    (total, isolated)
}

pub fn silhouette_loss(rendered: &SilhouetteRaster, target: &SilhouetteRaster) -> Result<f64> {
    if (rendered.width, rendered.height) != (target.width, target.height) {
        return Err(Error::SizeMismatch("silhouette rasters differ in size".into()));
    }
    let n = rendered.data.len().max(1) as f64;
    Ok(rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// Mean over pixels of `σ · ‖F − F̂‖²`, with `σ` the target confidence.
pub fn flow_loss(rendered: &FlowRaster, target: &FlowRaster) -> Result<f64> {
    if (rendered.width, rendered.height) != (target.width, target.height) {
        return Err(Error::SizeMismatch("flow rasters differ in size".into()));
    }
    let n = rendered.flow.len().max(1) as f64;
    Ok(rendered
        .flow
        .iter()
        .zip(&target.flow)
        .zip(&target.confidence)
        .map(|((a, b), &s)| {
            let du = a[0] as f64 - b[0] as f64;
            let dv = a[1] as f64 - b[1] as f64;
            s as f64 * (du * du + dv * dv)
        })
        .sum::<f64>()
        / n)
}

/// Mean squared per-channel difference of two colour images.
pub fn rgb_loss(rendered: &[[f32; 3]], target: &[[f32; 3]]) -> Result<f64> {
    if rendered.len() != target.len() {
        return Err(Error::SizeMismatch("colour images differ in size".into()));
    }
    let n = (rendered.len() * 3).max(1) as f64;
    Ok(rendered
        .iter()
        .zip(target)
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] as f64 - b[c] as f64).powi(2)))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameLosses {
    pub silhouette: f64,
    pub rgb: f64,
    pub flow: f64,
    pub shape: f64,
    pub dr: f64,
    pub total: f64,
}

impl FrameLosses {
    pub fn weighted_total(&mut self, w: &LossWeights) {
        self.total = w.silhouette * self.silhouette
            + w.rgb * self.rgb
            + w.flow * self.flow
            + w.shape * self.shape
            + w.dr * self.dr;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub frames: Vec<FrameLosses>,
}

impl LossReport {
    pub fn totals(&self) -> FrameLosses {
        let mut t = FrameLosses::default();
        for f in &self.frames {
            t.silhouette += f.silhouette;
            t.rgb += f.rgb;
            t.flow += f.flow;
            t.shape += f.shape;
            t.dr += f.dr;
            t.total += f.total;
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        for (k, f) in self.frames.iter().enumerate() {
            let v = [f.silhouette, f.rgb, f.flow, f.shape, f.dr, f.total];
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("losses of frame {k}")));
            }
        }
        Ok(())
    }

    /// `frame,silhouette,rgb,flow,shape,dr,total`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,silhouette,rgb,flow,shape,dr,total\n");
        for (k, f) in self.frames.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k},{:?},{:?},{:?},{:?},{:?},{:?}",
                f.silhouette, f.rgb, f.flow, f.shape, f.dr, f.total
            );
        }
        out
    }
}
