use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{signed_volume_of, CotanLaplacian, DegenerateFaces, TriMesh, VertexAreas};
use crate::Vec3;

/// Contraction parameters.
///
/// The initial contraction weight defaults to `contraction_gain / sqrt(A)`
/// with `A` the average face area; `wc0` overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContractionConfig {
    /// Contraction weight growth per iteration (`W_C ← s_L · W_C`).
    pub sl: f64,
    /// Stop once `|volume| < vol_eps · |volume₀|`.
    pub vol_eps: f64,
    pub max_iters: usize,
    /// Initial attraction weight for every vertex.
    pub wa0: f64,
    pub contraction_gain: f64,
    pub wc0: Option<f64>,
    /// Upper bound on `W_A,i / W_A,i⁰` once one-ring areas collapse.
    pub max_attraction_ratio: f64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            sl: 2.0,
            vol_eps: 1e-3,
            max_iters: 10,
            wa0: 1.0,
            contraction_gain: 1.0,
            wc0: None,
            max_attraction_ratio: 1e4,
        }
    }
}

impl ContractionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.sl > 0.0 && self.sl.is_finite()) {
            return bad("sl must be positive");
        }
        if !(self.vol_eps > 0.0) {
            return bad("vol_eps must be positive");
        }
        if !(self.wa0 > 0.0) {
            return bad("wa0 must be positive");
        }
        if !(self.contraction_gain > 0.0) {
            return bad("contraction_gain must be positive");
        }
        if matches!(self.wc0, Some(w) if !(w > 0.0)) {
            return bad("wc0 must be positive");
        }
        if !(self.max_attraction_ratio >= 1.0) {
            return bad("max_attraction_ratio must be >= 1");
        }
        Ok(())
    }
}

/// Positions and weights carried between contraction iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionState {
    pub positions: Vec<Vec3>,
    pub wc: f64,
    pub wa: Vec<f64>,
    pub wa0: Vec<f64>,
    pub areas0: Vec<f64>,
    pub sl: f64,
    pub max_attraction_ratio: f64,
    pub iteration: usize,
}

impl ContractionState {
    pub fn new(mesh: &TriMesh, cfg: &ContractionConfig) -> Self {
        let n = mesh.num_vertices();
        let avg = mesh.average_face_area();
        let wc = cfg.wc0.unwrap_or(if avg > 0.0 {
            cfg.contraction_gain / avg.sqrt()
        } else {
            cfg.contraction_gain
        });
        ContractionState {
            positions: mesh.vertices().to_vec(),
            wc,
            wa: vec![cfg.wa0; n],
            wa0: vec![cfg.wa0; n],
            areas0: VertexAreas::of(mesh).0,
            sl: cfg.sl,
            max_attraction_ratio: cfg.max_attraction_ratio,
            iteration: 0,
        }
    }
}

/// Assembles `(W_C² LᵀL + W_A²)` for the current positions.
pub fn contraction_system(
    positions: &[Vec3],
    faces: &[[usize; 3]],
    wc: f64,
    wa: &[f64],
) -> Result<CscMatrix<f64>> {
    let n = positions.len();
    let lap = CotanLaplacian::assemble(positions, faces, DegenerateFaces::Skip)?;
    let l = lap.matrix();
    let ltl = l.transpose() * l;
    let mut coo = CooMatrix::new(n, n);
    let wc2 = wc * wc;
    for (i, j, v) in ltl.triplet_iter() {
        coo.push(i, j, wc2 * v);
    }
    for (i, w) in wa.iter().enumerate() {
        coo.push(i, i, w * w);
    }
    Ok(CscMatrix::from(&coo))
}

fn condition_estimate(a: &CscMatrix<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (i, j, v) in a.triplet_iter() {
        if i == j {
            lo = lo.min(v.abs());
            hi = hi.max(v.abs());
        }
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// One implicit contraction iteration:
/// `X' = argmin ‖W_C L X'‖² + Σ W_A,i² ‖X'_i − X_i‖²`, followed by the
/// weight updates `W_C ← s_L W_C` and `W_A,i ← W_A,i⁰ √(A_i⁰ / A_i)`.
pub fn contract_step(mesh: &TriMesh, state: &ContractionState) -> Result<ContractionState> {
    let n = mesh.num_vertices();
    if state.positions.len() != n || state.wa.len() != n {
        return Err(Error::SizeMismatch(
            "contraction state does not match mesh".into(),
        ));
    }
    let system = contraction_system(&state.positions, mesh.faces(), state.wc, &state.wa)?;
    let chol = CscCholesky::factor(&system).map_err(|_| Error::SingularSystem {
        condition: condition_estimate(&system),
    })?;
    let mut rhs = DMatrix::zeros(n, 3);
    for (i, p) in state.positions.iter().enumerate() {
        let w2 = state.wa[i] * state.wa[i];
        for k in 0..3 {
            rhs[(i, k)] = w2 * p[k];
        }
    }
    let sol = chol.solve(&rhs);
    let positions: Vec<Vec3> = (0..n)
        .map(|i| Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]))
        .collect();
    if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite(format!("contracted position of vertex {i}")));
    }
    let areas = VertexAreas::compute(&positions, mesh.faces()).0;
    let wa = (0..n)
        .map(|i| {
            let a0 = state.areas0[i];
            if a0 <= 0.0 {
                return state.wa0[i];
            }
            let ratio = (a0 / areas[i].max(0.0)).sqrt();
            let ratio = if ratio.is_finite() {
                ratio.min(state.max_attraction_ratio)
            } else {
                state.max_attraction_ratio
            };
            state.wa0[i] * ratio
        })
        .collect();
    Ok(ContractionState {
        positions,
        wc: state.wc * state.sl,
        wa,
        wa0: state.wa0.clone(),
        areas0: state.areas0.clone(),
        sl: state.sl,
        max_attraction_ratio: state.max_attraction_ratio,
        iteration: state.iteration + 1,
    })
}

/// Contracted mesh plus the per-iteration volume history.
#[derive(Debug, Clone)]
pub struct ContractionOutcome {
    pub mesh: TriMesh,
    /// `volumes[0]` is the input volume; one more entry per step taken.
    pub volumes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn contract(mesh: &TriMesh, cfg: &ContractionConfig) -> Result<TriMesh> {
    Ok(contract_with_history(mesh, cfg)?.mesh)
}

pub fn contract_with_history(mesh: &TriMesh, cfg: &ContractionConfig) -> Result<ContractionOutcome> {
    cfg.validate()?;
    let v0 = signed_volume_of(mesh.vertices(), mesh.faces()).abs();
    let mut volumes = vec![v0];
    let scale = mesh.bbox_diagonal();
    if v0 <= 1e-15 * scale * scale * scale {
        return Ok(ContractionOutcome {
            mesh: mesh.clone(),
            volumes,
            iterations: 0,
            converged: true,
        });
    }
    let mut state = ContractionState::new(mesh, cfg);
    let mut converged = false;
    while state.iteration < cfg.max_iters {
        state = contract_step(mesh, &state)?;
        let v = signed_volume_of(&state.positions, mesh.faces()).abs();
        volumes.push(v);
        if v < cfg.vol_eps * v0 {
            converged = true;
            break;
        }
    }
    Ok(ContractionOutcome {
        mesh: mesh.with_positions(state.positions)?,
        volumes,
        iterations: state.iteration,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cotan_laplacian, primitives, signed_volume};

    #[test]
    fn collinear_input_is_a_fixed_point() {
        let v: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let m = TriMesh::new(v, vec![[0, 1, 2], [1, 2, 3]]).unwrap();
        let s0 = ContractionState::new(&m, &ContractionConfig::default());
        let s1 = contract_step(&m, &s0).unwrap();
        for (a, b) in s0.positions.iter().zip(&s1.positions) {
            assert!((a - b).norm() < 1e-6);
        }
        let out = contract_with_history(&m, &ContractionConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.mesh, m);
    }

    #[test]
    fn step_matches_dense_solve() {
        let m = primitives::icosphere(2, 1.0);
        let s0 = ContractionState::new(&m, &ContractionConfig::default());
        let s1 = contract_step(&m, &s0).unwrap();
        let n = m.num_vertices();
        let l = cotan_laplacian(&m).unwrap();
        let mut ld = DMatrix::<f64>::zeros(n, n);
        for (i, j, v) in l.matrix().triplet_iter() {
            ld[(i, j)] = *v;
        }
        let mut a = ld.transpose() * &ld * (s0.wc * s0.wc);
        let mut rhs = DMatrix::<f64>::zeros(n, 3);
        for i in 0..n {
            a[(i, i)] += s0.wa[i] * s0.wa[i];
            for k in 0..3 {
                rhs[(i, k)] = s0.wa[i] * s0.wa[i] * m.vertices()[i][k];
            }
        }
        let x = a.lu().solve(&rhs).unwrap();
        let mut err: f64 = 0.0;
        for i in 0..n {
            for k in 0..3 {
                err = err.max((x[(i, k)] - s1.positions[i][k]).abs());
            }
        }
        assert!(err < 1e-8, "max diff {err}");
    }

    #[test]
    fn icosphere_budget_and_monotone_volume() {
        let m = primitives::icosphere(2, 1.0);
        let out = contract_with_history(&m, &ContractionConfig::default()).unwrap();
        assert!(out.converged && out.iterations <= 10);
        assert!(signed_volume(&out.mesh).abs() < 1e-3 * signed_volume(&m).abs());
        assert!(out.volumes.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.mesh.faces(), m.faces());
        assert_eq!(out.mesh.edges(), m.edges());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = ContractionConfig {
            sl: -1.0,
            ..Default::default()
        };
        assert!(contract(&primitives::tetrahedron(), &cfg).is_err());
    }
}
