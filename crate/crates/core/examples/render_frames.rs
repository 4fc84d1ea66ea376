//! Render silhouettes and dense flow of a synthetic sequence to PGM files.
//!
//! `cargo run --example render_frames -- out_dir`

use skelkit::rendering::{flow_from_correspondence, rasterize_silhouette};
use skelkit::synth::{generate, preset};

fn main() -> skelkit::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "render_out".into());
    std::fs::create_dir_all(&dir).expect("output directory");
    let (mesh, gt) = generate(&preset("hinge2")?)?;
    for (f, pos) in gt.positions.iter().enumerate() {
        let sil = rasterize_silhouette(pos, mesh.faces(), &gt.cameras[f]);
        std::fs::write(format!("{dir}/{f:04}.pgm"), sil.to_pgm()).expect("write pgm");
        if let Some(next) = gt.positions.get(f + 1) {
            let flow = flow_from_correspondence(pos, next, &gt.cameras[f], &gt.cameras[f + 1], mesh.faces())?;
            let peak = flow.flow.iter().map(|v| v[0].hypot(v[1])).fold(0.0f32, f32::max);
            println!("frame {f}: silhouette area {:.0} px, peak flow {peak:.2} px", sil.area());
        }
    }
    println!("wrote {} silhouettes to {dir}", gt.positions.len());
    Ok(())
}
