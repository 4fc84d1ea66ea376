//! Full alternating refinement on the three-segment arm, with and without
//! its second hinge actuated, scored against ground truth.

use skelkit::eval::{evaluate, RunArtifacts};
use skelkit::refine::{sios2, RefineConfig};
use skelkit::synth::{generate, preset, Dataset, FrameData};

fn main() -> skelkit::Result<()> {
    for name in ["arm3", "arm3_frozen"] {
        let (mesh, gt) = generate(&preset(name)?)?;
        let frames = FrameData::from_ground_truth(&gt);
        let result = sios2(&mesh, &frames, &RefineConfig::default())?;
        for h in &result.history {
            println!("{name} iteration {}: {} bones, merges {:?}, splits {:?}", h.iteration, h.bones, h.merges, h.splits);
        }
        let data = Dataset {
            mesh,
            skeleton: gt.skeleton.clone(),
            labels: gt.labels.clone(),
            poses: gt.poses.clone(),
            frames,
        };
        let fit = RunArtifacts {
            skeleton: result.skeleton,
            weights: result.weights,
            poses: result.poses,
        };
        let m = evaluate(&fit, &data, 1.0)?;
        println!(
            "{name}: {} bones (truth {}), joint error {:.4} of diagonal, keypoint transfer {:.3}, part agreement {:.3}",
            m.bones, m.gt_bones, m.joint_error, m.keypoint_transfer, m.part_agreement
        );
    }
    Ok(())
}
