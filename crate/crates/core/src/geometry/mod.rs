//! Triangle meshes, OBJ I/O and the differential-geometry pieces shared by
//! the rest of the crate.

mod laplacian;
mod mesh;
mod obj;
pub mod primitives;

pub use laplacian::{cotan_laplacian, CotanLaplacian, DegenerateFaces, COT_CLAMP, DEGENERATE_AREA};
pub use mesh::{
    bbox_diagonal, bounding_box, signed_volume, signed_volume_of, triangle_area, TriMesh,
    VertexAreas,
};
pub(crate) use mesh::component_labels;
pub use obj::{load_mesh, parse_obj, save_obj, write_obj};
