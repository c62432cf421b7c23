//! Point location and the barycentric projection matrix.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::SparseRows;
use crate::mesh::Mesh;
use crate::scalar::Real;

const TOL: f64 = 1e-9;

/// Triangle adjacency for walking searches.
#[derive(Debug, Clone)]
pub struct Locator<'a> {
    mesh: &'a Mesh,
    /// `neighbours[t][k]` is the triangle across the edge opposite vertex `k`.
    neighbours: Vec<[Option<usize>; 3]>,
}

impl<'a> Locator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let mut owner: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        let mut neighbours = vec![[None; 3]; mesh.n_triangles()];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some((u, kk)) = owner.remove(&key) {
                    neighbours[t][k] = Some(u);
                    neighbours[u][kk] = Some(t);
                } else {
                    owner.insert(key, (t, k));
                }
            }
        }
        Self { mesh, neighbours }
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.mesh.triangles[t].map(|v| self.mesh.vertices[v]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let (dx, dy) = (p[0] - a[0], p[1] - a[1]);
        let l1 = (dx * (c[1] - a[1]) - dy * (c[0] - a[0])) / det;
        let l2 = ((b[0] - a[0]) * dy - (b[1] - a[1]) * dx) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    fn contains(&self, t: usize, p: [f64; 2]) -> Option<[f64; 3]> {
        let w = self.barycentric(t, p);
        w.iter().all(|&x| x >= -TOL).then_some(w)
    }

    /// Walks from `start` towards `p`; falls back to a scan when the walk leaves the mesh.
    pub fn locate(&self, p: [f64; 2], start: usize) -> Option<(usize, [f64; 3])> {
        let nt = self.mesh.n_triangles();
        if nt == 0 {
            return None;
        }
        let mut t = start.min(nt - 1);
        for _ in 0..nt {
            let w = self.barycentric(t, p);
            if w.iter().all(|&x| x >= -TOL) {
                return Some((t, w));
            }
            let k = (0..3)
                .min_by(|&i, &j| w[i].total_cmp(&w[j]))
                .expect("three coordinates");
            match self.neighbours[t][k] {
                Some(next) => t = next,
                None => break,
            }
        }
        (0..nt).find_map(|t| self.contains(t, p).map(|w| (t, w)))
    }
}

/// One row per location holding the barycentric weights of its containing triangle.
///
/// Weights within the boundary tolerance are clamped to zero and dropped; the rest
/// are renormalised so each row sums to one.
pub fn projection_matrix<T: Real>(mesh: &Mesh, locations: &[[f64; 2]]) -> Result<SparseRows<T>> {
    let locator = Locator::new(mesh);
    let mut out = SparseRows::new(mesh.n_vertices());
    let mut start = 0;
    for (i, &p) in locations.iter().enumerate() {
        let (t, w) = locator.locate(p, start).ok_or_else(|| {
            Error::invalid(format!(
                "location {i} at ({:.3}, {:.3}) lies outside the mesh",
                p[0], p[1]
            ))
        })?;
        start = t;
        let w = w.map(|x| x.max(0.0));
        let s: f64 = w.iter().sum();
        let tri = mesh.triangles[t];
        let mut row: Vec<(usize, T)> = (0..3)
            .filter(|&k| w[k] > 0.0)
            .map(|k| (tri[k], T::lit(w[k] / s)))
            .collect();
        row.sort_by_key(|&(j, _)| j);
        out.rows.push(row);
    }
    Ok(out)
}
