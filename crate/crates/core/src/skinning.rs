//! Skinning weights, rigidity coefficients and part assignments.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Skeleton;
use crate::Vec3;

/// Default entropy stabilizer for rigidity coefficients.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Row-stochastic `N × B` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningWeights {
    pub w: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    n: usize,
    b: usize,
    w: Vec<Vec<f64>>,
}

impl SkinningWeights {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let s = SkinningWeights { w };
        s.validate(1e-6)?;
        Ok(s)
    }

    /// One-hot weights from integer labels.
    pub fn from_labels(labels: &[usize], bones: usize) -> Result<Self> {
        let mut w = DMatrix::zeros(labels.len(), bones);
        for (n, &l) in labels.iter().enumerate() {
            if l >= bones {
                return Err(Error::SizeMismatch(format!("label {l} for {bones} bones")));
            }
            w[(n, l)] = 1.0;
        }
        Ok(SkinningWeights { w })
    }

    pub fn num_vertices(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_bones(&self) -> usize {
        self.w.ncols()
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        for n in 0..self.w.nrows() {
            let row = self.w.row(n);
            if row.iter().any(|&x| !(-tol..=1.0 + tol).contains(&x)) {
                return Err(Error::InvalidSpec(format!("weight row {n} leaves [0,1]")));
            }
            if (row.sum() - 1.0).abs() > tol {
                return Err(Error::InvalidSpec(format!("weight row {n} does not sum to 1")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = WeightsDoc {
            n: self.w.nrows(),
            b: self.w.ncols(),
            w: (0..self.w.nrows())
                .map(|r| self.w.row(r).iter().copied().collect())
                .collect(),
        };
        serde_json::to_string(&doc).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: WeightsDoc =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("weights: {e}")))?;
        if doc.w.len() != doc.n || doc.w.iter().any(|r| r.len() != doc.b) {
            return Err(Error::Schema("weights: shape does not match n, b".into()));
        }
        let w = DMatrix::from_fn(doc.n, doc.b, |r, c| doc.w[r][c]);
        Ok(SkinningWeights { w })
    }
}

/// `W_{n,b} = softmax_b(−d_b(X_n)/τ + φ_{n,b})` with `d_b` the squared
/// Mahalanobis distance to bone `b`.
pub fn compute_skinning_weights(
    vertices: &[Vec3],
    skel: &Skeleton,
    bias: Option<&DMatrix<f64>>,
    temperature: f64,
) -> Result<SkinningWeights> {
    let nb = skel.num_bones();
    if nb == 0 {
        return Err(Error::InvalidSpec("skeleton has no bones".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if let Some(phi) = bias {
        if phi.nrows() != vertices.len() || phi.ncols() != nb {
            return Err(Error::SizeMismatch("bias shape must be N × B".into()));
        }
    }
    let mut w = DMatrix::zeros(vertices.len(), nb);
    let mut logits = vec![0.0; nb];
    for (n, x) in vertices.iter().enumerate() {
        for (b, bone) in skel.bones.iter().enumerate() {
            logits[b] = -bone.mahalanobis(x) / temperature + bias.map_or(0.0, |p| p[(n, b)]);
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (b, &l) in logits.iter().enumerate() {
            let e = (l - m).exp();
            w[(n, b)] = e;
            total += e;
        }
        for b in 0..nb {
            w[(n, b)] /= total;
        }
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("skinning weights".into()));
    }
    Ok(SkinningWeights { w })
}

/// `H = −Σ w log₂ w` with `0 log 0 = 0`.
pub fn entropy(row: impl IntoIterator<Item = f64>) -> f64 {
    row.into_iter()
        .filter(|&w| w > 0.0)
        .map(|w| -w * w.log2())
        .sum::<f64>()
        .max(0.0)
}

/// Per-edge rigidity `R_ij = 1 / ((H_i + λ)(H_j + λ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidityCoeffs {
    pub r: Vec<f64>,
    pub lambda: f64,
}

impl RigidityCoeffs {
    pub fn uniform(edges: usize, value: f64) -> Self {
        RigidityCoeffs {
            r: vec![value; edges],
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.r.is_empty() {
            0.0
        } else {
            self.r.iter().sum::<f64>() / self.r.len() as f64
        }
    }
}

pub fn vertex_entropies(w: &SkinningWeights) -> Vec<f64> {
    (0..w.num_vertices())
        .map(|n| entropy(w.w.row(n).iter().copied()))
        .collect()
}

pub fn rigidity_coefficients(
    w: &SkinningWeights,
    edges: &[[usize; 2]],
    lambda: f64,
) -> Result<RigidityCoeffs> {
    if !(lambda > 0.0) {
        return Err(Error::Config("rigidity lambda must be positive".into()));
    }
    let h = vertex_entropies(w);
    let mut r = Vec::with_capacity(edges.len());
    for &[i, j] in edges {
        if i >= h.len() || j >= h.len() {
            return Err(Error::SizeMismatch(format!("edge ({i},{j}) outside weights")));
        }
        // product of reciprocals: one-hot endpoints give exactly (1/λ)²
        r.push((1.0 / (h[i] + lambda)) * (1.0 / (h[j] + lambda)));
    }
    Ok(RigidityCoeffs { r, lambda })
}

/// Hard part labels (argmax, lowest index on ties) with per-part counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PartAssignment {
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
}

impl PartAssignment {
    pub fn from_labels(labels: Vec<usize>, parts: usize) -> Self {
        let mut counts = vec![0; parts];
        for &l in &labels {
            counts[l] += 1;
        }
        PartAssignment { labels, counts }
    }

    pub fn one_hot(&self) -> SkinningWeights {
        SkinningWeights::from_labels(&self.labels, self.counts.len()).expect("labels in range")
    }

    pub fn members(&self, part: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&n| self.labels[n] == part)
            .collect()
    }
}

pub fn one_hot_parts(w: &SkinningWeights) -> PartAssignment {
    let labels = (0..w.num_vertices())
        .map(|n| {
            let row = w.w.row(n);
            let mut best = 0;
            for b in 1..row.len() {
                if row[b] > row[best] {
                    best = b;
                }
            }
            best
        })
        .collect();
    PartAssignment::from_labels(labels, w.num_bones())
}

/// Parts whose size is below `fraction × median` part size.
pub fn select_small_parts(parts: &PartAssignment, fraction: f64) -> BTreeSet<usize> {
    if parts.counts.is_empty() {
        return BTreeSet::new();
    }
    let mut sorted = parts.counts.clone();
    sorted.sort_unstable();
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2] as f64
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2]) as f64
    };
    let threshold = fraction * median;
    (0..k)
        .filter(|&b| (parts.counts[b] as f64) < threshold)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Bone;
    use proptest::prelude::*;

    fn two_blobs(a: Vec3, b: Vec3) -> Skeleton {
        Skeleton::new(vec![Bone::blob(a, 1.0), Bone::blob(b, 1.0)], vec![]).unwrap()
    }

    #[test]
    fn single_bone_weights_are_one() {
        let s = Skeleton::new(vec![Bone::blob(Vec3::zeros(), 0.3)], vec![]).unwrap();
        let w = compute_skinning_weights(&[Vec3::x(), Vec3::new(5.0, 1.0, 2.0)], &s, None, 1.0).unwrap();
        assert!(w.w.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn symmetric_and_hand_values() {
        let s = two_blobs(Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        let w = compute_skinning_weights(&[Vec3::zeros()], &s, None, 1.0).unwrap();
        assert!((w.w[(0, 0)] - 0.5).abs() < 1e-15);

        // other bone at Mahalanobis distance 10
        let s = two_blobs(Vec3::zeros(), Vec3::new(10f64.sqrt(), 0.0, 0.0));
        let w = compute_skinning_weights(&[Vec3::zeros()], &s, None, 1.0).unwrap();
        let expect = 1.0 / (1.0 + (-10f64).exp());
        assert!((w.w[(0, 0)] - expect).abs() < 1e-12);
        assert!(w.w[(0, 0)] > 0.99995 - 1e-6);
    }

    #[test]
    fn bias_shifts_logits() {
        let s = two_blobs(Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        let phi = DMatrix::from_row_slice(1, 2, &[2f64.ln(), 0.0]);
        let w = compute_skinning_weights(&[Vec3::zeros()], &s, Some(&phi), 1.0).unwrap();
        assert!((w.w[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rigidity_hand_values() {
        let w = SkinningWeights::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.5, 0.5])).unwrap();
        let r = rigidity_coefficients(&w, &[[0, 1], [2, 2], [0, 2]], 0.1).unwrap();
        assert!((r.r[0] - 100.0).abs() < 1e-9);
        assert!((r.r[1] - 1.0 / 1.21).abs() < 1e-12);
        assert!((r.r[2] - 1.0 / 0.11).abs() < 1e-9);
    }

    #[test]
    fn one_hot_tie_and_counts() {
        let w = SkinningWeights::new(DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.5, 0.5])).unwrap();
        let p = one_hot_parts(&w);
        assert_eq!(p.labels, vec![0, 0]);
        assert_eq!(p.counts, vec![2, 0]);
    }

    #[test]
    fn small_parts() {
        let p = |c: Vec<usize>| PartAssignment {
            labels: vec![],
            counts: c,
        };
        assert!(select_small_parts(&p(vec![5, 5, 5]), 0.5).is_empty());
        assert_eq!(select_small_parts(&p(vec![100, 100, 100, 10]), 0.5), BTreeSet::from([3]));
        assert!(select_small_parts(&p(vec![7]), 0.5).is_empty());
    }

    #[test]
    fn json_round_trip() {
        let w = SkinningWeights::new(DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.7, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])).unwrap();
        assert_eq!(SkinningWeights::from_json(&w.to_json()).unwrap(), w);
    }

    fn row_strategy(b: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, b).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn rows_sum_to_one(
            pts in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 1..20),
            centers in proptest::collection::vec(proptest::array::uniform3(-5.0f64..5.0), 1..6),
            tau in 0.05f64..5.0,
        ) {
            let bones = centers.iter().map(|c| Bone::blob(Vec3::from(*c), 0.2)).collect();
            let s = Skeleton::new(bones, vec![]).unwrap();
            let v: Vec<Vec3> = pts.iter().map(|p| Vec3::from(*p)).collect();
            let w = compute_skinning_weights(&v, &s, None, tau).unwrap();
            prop_assert!(w.validate(1e-6).is_ok());
        }

        #[test]
        fn rigidity_permutation_invariant_and_decreasing(
            a in row_strategy(4), b in row_strategy(4), shift in 1usize..4,
        ) {
            let m = DMatrix::from_fn(2, 4, |r, c| if r == 0 { a[c] } else { b[c] });
            let p = DMatrix::from_fn(2, 4, |r, c| m[(r, (c + shift) % 4)]);
            let r1 = rigidity_coefficients(&SkinningWeights { w: m }, &[[0, 1]], 0.1).unwrap();
            let r2 = rigidity_coefficients(&SkinningWeights { w: p }, &[[0, 1]], 0.1).unwrap();
            prop_assert!((r1.r[0] - r2.r[0]).abs() <= 1e-12 * r1.r[0]);
            prop_assert!(r1.r[0] > 0.0 && r1.r[0] <= 100.0 + 1e-9);
            // mixing b toward uniform raises its entropy and must lower R
            let mixed: Vec<f64> = b.iter().map(|x| 0.5 * x + 0.125).collect();
            prop_assume!(entropy(mixed.iter().copied()) > entropy(b.iter().copied()) + 1e-9);
            let m2 = DMatrix::from_fn(2, 4, |r, c| if r == 0 { a[c] } else { mixed[c] });
            let r3 = rigidity_coefficients(&SkinningWeights { w: m2 }, &[[0, 1]], 0.1).unwrap();
            prop_assert!(r3.r[0] < r1.r[0]);
        }

        #[test]
        fn argmax_invariant_under_monotone_logit_maps(
            logits in proptest::collection::vec(-5.0f64..5.0, 5),
            scale in 0.1f64..10.0, offset in -3.0f64..3.0,
        ) {
            let soft = |l: &[f64]| {
                let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = l.iter().map(|x| (x - m).exp()).collect();
                let s: f64 = e.iter().sum();
                DMatrix::from_fn(1, l.len(), |_, c| e[c] / s)
            };
            let mapped: Vec<f64> = logits.iter().map(|x| scale * x + offset).collect();
            let p1 = one_hot_parts(&SkinningWeights { w: soft(&logits) });
            let p2 = one_hot_parts(&SkinningWeights { w: soft(&mapped) });
            prop_assert_eq!(p1.labels, p2.labels);
        }
    }
}
