//! Forward and backward blend skinning, and pose recovery by weighted Procrustes.

use skelkit::kinematics::{backward_blend_skin, blend_skin, fit_pose_procrustes, BackwardMode};
use skelkit::skinning::compute_skinning_weights;
use skelkit::synth::{generate, preset};

fn main() -> skelkit::Result<()> {
    let (mesh, gt) = generate(&preset("hinge2")?)?;
    let rest = mesh.vertices();
    let w = compute_skinning_weights(rest, &gt.skeleton, None, 1.0)?;
    let pose = gt.poses.last().expect("frames");
    let posed = blend_skin(rest, &w, pose)?;
    let back = backward_blend_skin(&posed, &w, pose, BackwardMode::ExactInverse)?;
    let err = rest.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    println!("backward(forward(rest)) max error {err:.2e}");

    let fitted = fit_pose_procrustes(rest, &w, &posed)?;
    let refit = blend_skin(rest, &w, &fitted)?;
    let err = posed.iter().zip(&refit).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    println!("Procrustes fit reproduces the posed mesh to {err:.2e}");
    Ok(())
}
