//! Contract an icosphere towards zero volume and print the volume history.

use skelkit::contraction::{contract_with_history, ContractionConfig};
use skelkit::geometry::primitives::icosphere;

fn main() -> skelkit::Result<()> {
    let sphere = icosphere(2, 1.0);
    let out = contract_with_history(&sphere, &ContractionConfig::default())?;
    println!("{} vertices, {} faces", sphere.num_vertices(), sphere.num_faces());
    for (i, v) in out.volumes.iter().enumerate() {
        println!("iteration {i:2}: volume {v:.3e}");
    }
    println!("converged: {} after {} iterations", out.converged, out.iterations);
    Ok(())
}
