//! Write a synthetic dataset (mesh, ground truth, silhouettes, flows).
//!
//! `cargo run --example synth_dataset -- arm3 out_dir`

use std::path::Path;

use skelkit::synth::{generate, preset, write_dataset, PRESETS};

fn main() -> skelkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "arm3".into());
    let dir = args.next().unwrap_or_else(|| format!("{name}_data"));
    let spec = preset(&name)?;
    let (mesh, gt) = generate(&spec)?;
    write_dataset(Path::new(&dir), &mesh, &gt)?;
    println!(
        "{name}: {} vertices, {} bones, {} frames → {dir} (presets: {})",
        mesh.num_vertices(),
        gt.skeleton.num_bones(),
        spec.frames,
        PRESETS.join(", ")
    );
    Ok(())
}
