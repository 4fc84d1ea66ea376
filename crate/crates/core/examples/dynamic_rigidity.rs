//! Rigidity-weighted edge loss against plain ARAP on a bending hinge.

use skelkit::losses::{arap_loss, dr_loss};
use skelkit::skinning::{compute_skinning_weights, rigidity_coefficients, DEFAULT_LAMBDA};
use skelkit::synth::{generate, preset};

fn main() -> skelkit::Result<()> {
    let (mesh, gt) = generate(&preset("hinge2")?)?;
    let w = compute_skinning_weights(mesh.vertices(), &gt.skeleton, None, 1.0)?;
    let r = rigidity_coefficients(&w, mesh.edges(), DEFAULT_LAMBDA)?;
    let mean_r = r.r.iter().sum::<f64>() / r.r.len() as f64;
    let (mut dr, mut arap) = (0.0, 0.0);
    for pair in gt.positions.windows(2) {
        dr += dr_loss(&pair[0], &pair[1], mesh.edges(), &r)?;
        arap += arap_loss(&pair[0], &pair[1], mesh.edges())?;
    }
    println!("dynamic rigidity loss {dr:.4e}");
    println!("ARAP loss × mean rigidity {:.4e}", arap * mean_r);
    Ok(())
}
