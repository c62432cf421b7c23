//! Linear finite-element mass and stiffness matrices.

use crate::error::{Error, Result};
use crate::linalg::SymSparse;
use crate::mesh::Mesh;
use crate::scalar::Real;

/// Lumped mass diagonal and stiffness matrix of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FemMatrices<T> {
    pub c_lumped: Vec<T>,
    pub g: SymSparse<T>,
}

/// Stiffness of one triangle, `area · ∇ψ_k · ∇ψ_l`.
pub fn element_stiffness(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    // ∇ψ_k is the inward normal of the opposite edge divided by twice the signed area.
    let grad = |k: usize| {
        let a = p[(k + 1) % 3];
        let b = p[(k + 2) % 3];
        [(a[1] - b[1]) / area2, (b[0] - a[0]) / area2]
    };
    let g = [grad(0), grad(1), grad(2)];
    let area = area2.abs() / 2.0;
    let mut out = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            out[k][l] = area * (g[k][0] * g[l][0] + g[k][1] * g[l][1]);
        }
    }
    out
}

pub fn assemble_fem<T: Real>(mesh: &Mesh) -> Result<FemMatrices<T>> {
    let nv = mesh.n_vertices();
    let mut c = vec![0.0f64; nv];
    let mut triplets = Vec::with_capacity(6 * mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|v| mesh.vertices[v]);
        let area = mesh.triangle_area(t).abs();
        if !(area > 1e-6) {
            return Err(Error::invalid(format!("triangle {t} is degenerate (area {area})")));
        }
        let ke = element_stiffness(p);
        for k in 0..3 {
            c[tri[k]] += area / 3.0;
            for l in k..3 {
                let (i, j) = (tri[k].min(tri[l]), tri[k].max(tri[l]));
                triplets.push((i, j, ke[k][l]));
            }
        }
    }
    let g = SymSparse::from_triplets(nv, triplets)?.map_values(T::lit);
    if c.iter().any(|&ci| ci <= 0.0) {
        return Err(Error::invalid("mesh has a vertex not used by any triangle"));
    }
    Ok(FemMatrices {
        c_lumped: c.into_iter().map(T::lit).collect(),
        g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_right_triangle_stiffness() {
        let ke = element_stiffness([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for k in 0..3 {
            for l in 0..3 {
                assert!((ke[k][l] - expected[k][l]).abs() < 1e-15);
            }
        }
        // Orientation does not matter.
        let kr = element_stiffness([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        assert!((kr[0][0] - 1.0).abs() < 1e-15 && (kr[1][1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn square_mesh_properties() {
        let v = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0], [1.0, 0.5]];
        let t = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
        let mesh = Mesh::from_parts(v, t).unwrap();
        let fem = assemble_fem::<f64>(&mesh).unwrap();
        let total: f64 = fem.c_lumped.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        for r in fem.g.mul_vec(&[1.0; 5]) {
            assert!(r.abs() < 1e-10);
        }
        assert!(fem.g.is_symmetric());
        // Positive semidefinite: xᵀGx ≥ 0 for a few probes.
        for x in [[1.0, -1.0, 2.0, 0.5, 0.0], [0.3, 0.1, -0.2, 0.9, -1.0]] {
            assert!(fem.g.quad_form(&x) >= 0.0);
        }
    }
}
