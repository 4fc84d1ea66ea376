//! Per-bone motion directions from optical flow on a bending hinge.

use skelkit::flowwarp::{bone_flow, cosine_similarity, sample_surface_flow};
use skelkit::rendering::visibility;
use skelkit::synth::{generate, preset};

fn main() -> skelkit::Result<()> {
    let (mesh, gt) = generate(&preset("hinge2")?)?;
    let parts = gt.one_hot();
    for (f, flow) in gt.flows.iter().enumerate() {
        let cam = &gt.cameras[f];
        let pos = &gt.positions[f];
        let projected: Vec<_> = pos.iter().map(|p| cam.project(p).ok()).collect();
        let visible = visibility(pos, mesh.faces(), cam);
        let surface = sample_surface_flow(flow, &projected, &visible)?;
        let bf = bone_flow(&surface, &parts)?;
        let sim = cosine_similarity(&bf.flow[0], &bf.flow[1]).ok();
        println!("frame {f}: bone flows {:?} similarity {sim:?}", bf.normalized());
    }
    Ok(())
}
