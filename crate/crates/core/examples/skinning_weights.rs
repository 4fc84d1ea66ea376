//! Soft skinning weights and per-edge rigidity for a two-segment hinge.

use skelkit::skinning::{compute_skinning_weights, one_hot_parts, rigidity_coefficients, DEFAULT_LAMBDA};
use skelkit::synth::{generate, preset};

fn main() -> skelkit::Result<()> {
    let (mesh, gt) = generate(&preset("hinge2")?)?;
    let w = compute_skinning_weights(mesh.vertices(), &gt.skeleton, None, 1.0)?;
    let r = rigidity_coefficients(&w, mesh.edges(), DEFAULT_LAMBDA)?;
    let parts = one_hot_parts(&w);
    println!("part sizes {:?}", parts.counts);
    let (lo, hi) = r.r.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    println!("rigidity over {} edges: min {lo:.3}, max {hi:.3}", r.r.len());
    // edges near the joint mix bones and get the lowest rigidity
    let joint = gt.skeleton.joints[0].position;
    let (i, _) = r.r.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let [a, b] = mesh.edges()[i];
    let mid = (mesh.vertices()[a] + mesh.vertices()[b]) * 0.5;
    println!("least rigid edge is {:.3} from the joint", (mid - joint).norm());
    Ok(())
}
