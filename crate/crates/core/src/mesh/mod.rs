//! Planar projection, triangulated meshes, finite elements and SPDE precisions.

pub mod export;
mod fem;
mod locate;
mod projection;
mod spde;
mod triangulate;

pub use export::{triangulation_geojson, write_triangles_csv, write_vertices_csv};
pub use fem::{assemble_fem, element_stiffness, FemMatrices};
pub use locate::{projection_matrix, Locator};
pub use projection::{project_coords, PlanarPoints, Projection, EARTH_RADIUS_M};
pub use spde::{bessel_k, matern_correlation, range_variance, spde_precision, SpdeParams, SpdeStructure};
pub use triangulate::{build_mesh, convex_hull, in_convex_polygon, Mesh, MeshOptions};
