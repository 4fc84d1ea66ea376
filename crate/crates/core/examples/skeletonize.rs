//! Initial skeleton of a capsule arm: contraction, surgery, bones.

use skelkit::refine::{initial_skeleton, RefineConfig};
use skelkit::synth::{generate, preset};

fn main() -> skelkit::Result<()> {
    let (mesh, _) = generate(&preset("arm3")?)?;
    let skel = initial_skeleton(&mesh, &RefineConfig::default())?;
    println!("{} bones, {} joints", skel.num_bones(), skel.num_joints());
    for (b, bone) in skel.bones.iter().enumerate() {
        let c = bone.center;
        println!("bone {b:2}: centre ({:.3}, {:.3}, {:.3}) length {:.3}", c.x, c.y, c.z, bone.length);
    }
    Ok(())
}
