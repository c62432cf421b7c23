//! Delaunay mesh with a fine inner zone around the sites and a coarse extension zone.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};

/// Edge-length and merge settings for [`build_mesh`], in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshOptions {
    pub inner_edge: f64,
    pub outer_edge: f64,
    pub cutoff: f64,
    pub max_vertices: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            inner_edge: 200.0,
            outer_edge: 2000.0,
            cutoff: 100.0,
            max_vertices: 200_000,
        }
    }
}

/// Triangulated mesh in planar metres.
///
/// The first `n_sites` vertices are the merged input locations, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub n_sites: usize,
    /// For each input point, the site vertex it was merged into.
    pub site_of_input: Vec<usize>,
    /// Convex hull of the sites, counterclockwise. Inside it lies the inner domain.
    pub inner_hull: Vec<[f64; 2]>,
}

pub(crate) fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Andrew's monotone chain; counterclockwise, collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

/// Whether `p` lies in the counterclockwise convex polygon, allowing `tol` metres outside.
pub fn in_convex_polygon(poly: &[[f64; 2]], p: [f64; 2], tol: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        cross(a, b, p) >= -tol * dist(a, b)
    })
}

/// Greedy merge in index order: a point joins the first kept site within `cutoff`.
fn merge_sites(points: &[[f64; 2]], cutoff: f64) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut sites: Vec<[f64; 2]> = Vec::new();
    let mut owner = Vec::with_capacity(points.len());
    for &p in points {
        match sites.iter().position(|&s| dist(s, p) < cutoff) {
            Some(k) => owner.push(k),
            None => {
                owner.push(sites.len());
                sites.push(p);
            }
        }
    }
    (sites, owner)
}

/// Boundary of the hull dilated by `r`, sampled so consecutive points are at most `r` apart.
///
/// Straight stretches bow outward slightly so the sampled polygon stays strictly
/// convex; the extension triangles along it then never degenerate.
fn offset_boundary(hull: &[[f64; 2]], r: f64) -> Vec<[f64; 2]> {
    let n = hull.len();
    let normal = |a: [f64; 2], b: [f64; 2]| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = dx.hypot(dy);
        [dy / len, -dx / len]
    };
    let max_step = std::f64::consts::FRAC_PI_3 * 0.9;
    let mut out: Vec<[f64; 2]> = Vec::new();
    for i in 0..n {
        let prev = hull[(i + n - 1) % n];
        let cur = hull[i];
        let next = hull[(i + 1) % n];
        // Arc around `cur` from the normal of the incoming edge to that of the outgoing one.
        let n_in = normal(prev, cur);
        let n_out = normal(cur, next);
        let a0 = n_in[1].atan2(n_in[0]);
        let mut a1 = n_out[1].atan2(n_out[0]);
        while a1 < a0 {
            a1 += std::f64::consts::TAU;
        }
        let steps = ((a1 - a0) / max_step).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let a = a0 + (a1 - a0) * k as f64 / steps as f64;
            out.push([cur[0] + r * a.cos(), cur[1] + r * a.sin()]);
        }
        // Bowed stretch along the outgoing edge, excluding its end points.
        let s = [cur[0] + r * n_out[0], cur[1] + r * n_out[1]];
        let e = [next[0] + r * n_out[0], next[1] + r * n_out[1]];
        let len = dist(s, e);
        let pieces = (len / (0.95 * r)).ceil().max(1.0) as usize;
        let bow = 1e-3 * len;
        for k in 1..pieces {
            let t = k as f64 / pieces as f64;
            let lift = bow * 4.0 * t * (1.0 - t);
            out.push([
                s[0] + t * (e[0] - s[0]) + lift * n_out[0],
                s[1] + t * (e[1] - s[1]) + lift * n_out[1],
            ]);
        }
    }
    // Tiny corner arcs produce near-duplicates.
    let mut dedup: Vec<[f64; 2]> = Vec::with_capacity(out.len());
    for p in out {
        let close = |q: &[f64; 2]| dist(*q, p) < 1e-3 * r;
        if !dedup.last().is_some_and(close) && !(dedup.len() > 1 && close(&dedup[0])) {
            dedup.push(p);
        }
    }
    dedup
}

fn to_point(p: [f64; 2]) -> Point2<f64> {
    Point2::new(p[0], p[1])
}

fn insert(tri: &mut DelaunayTriangulation<Point2<f64>>, p: [f64; 2]) -> Result<()> {
    tri.insert(to_point(p))
        .map(|_| ())
        .map_err(|e| Error::numerical(format!("mesh insertion of ({}, {}) failed: {e:?}", p[0], p[1])))
}

/// Builds the mesh around `points` (planar metres).
pub fn build_mesh(points: &[[f64; 2]], opts: &MeshOptions) -> Result<Mesh> {
    if !(opts.inner_edge > 0.0 && opts.outer_edge > 0.0 && opts.cutoff >= 0.0) {
        return Err(Error::invalid("mesh edge lengths must be positive and cutoff non-negative"));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::invalid("mesh input contains non-finite coordinates"));
    }
    let (sites, site_of_input) = merge_sites(points, opts.cutoff);
    if sites.len() < 3 {
        return Err(Error::invalid(format!(
            "only {} site(s) remain after merging points closer than {} m; need at least 3",
            sites.len(),
            opts.cutoff
        )));
    }
    let inner_hull = convex_hull(&sites);
    if inner_hull.len() < 3 {
        return Err(Error::invalid("mesh sites are collinear"));
    }

    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    for &s in &sites {
        insert(&mut tri, s)?;
    }
    for p in offset_boundary(&inner_hull, opts.outer_edge) {
        insert(&mut tri, p)?;
    }

    let n_sites = sites.len();
    let hull_tol = 1e-9 * opts.inner_edge;
    loop {
        let mut splits: Vec<[f64; 2]> = Vec::new();
        for e in tri.undirected_edges() {
            let [a, b] = e.vertices();
            let (pa, pb) = (a.position(), b.position());
            let (pa, pb) = ([pa.x, pa.y], [pb.x, pb.y]);
            let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
            let near_site = a.fix().index() < n_sites || b.fix().index() < n_sites;
            let limit = if near_site || in_convex_polygon(&inner_hull, mid, hull_tol) {
                opts.inner_edge
            } else {
                opts.outer_edge
            };
            if dist(pa, pb) > limit {
                splits.push(mid);
            }
        }
        if splits.is_empty() {
            break;
        }
        if tri.num_vertices() + splits.len() > opts.max_vertices {
            return Err(Error::invalid(format!(
                "mesh refinement would exceed {} vertices; increase inner_edge",
                opts.max_vertices
            )));
        }
        for p in splits {
            insert(&mut tri, p)?;
        }
    }

    let vertices: Vec<[f64; 2]> = tri
        .vertices()
        .map(|v| {
            let p = v.position();
            [p.x, p.y]
        })
        .collect();
    let mut triangles: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| {
            let [a, b, c] = f.vertices().map(|v| v.fix().index());
            if cross(vertices[a], vertices[b], vertices[c]) > 0.0 {
                [a, b, c]
            } else {
                [a, c, b]
            }
        })
        .collect();
    triangles.sort_unstable();
    Mesh::from_parts_with_sites(vertices, triangles, n_sites, site_of_input, inner_hull)
}

impl Mesh {
    /// Wraps an externally built triangulation; every vertex counts as a site.
    pub fn from_parts(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        let hull = convex_hull(&vertices);
        Self::from_parts_with_sites(vertices, triangles, n, (0..n).collect(), hull)
    }

    fn from_parts_with_sites(
        vertices: Vec<[f64; 2]>,
        mut triangles: Vec<[usize; 3]>,
        n_sites: usize,
        site_of_input: Vec<usize>,
        inner_hull: Vec<[f64; 2]>,
    ) -> Result<Self> {
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::invalid(format!("triangle {t} references a missing vertex")));
            }
            let area2 = cross(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area2.abs() / 2.0 <= 1e-6 {
                return Err(Error::invalid(format!("triangle {t} is degenerate (area {})", area2 / 2.0)));
            }
            if area2 < 0.0 {
                tri.swap(1, 2);
            }
        }
        Ok(Self {
            vertices,
            triangles,
            n_sites,
            site_of_input,
            inner_hull,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        cross(self.vertices[a], self.vertices[b], self.vertices[c]) / 2.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                set.insert((a.min(b), a.max(b)));
            }
        }
        set.into_iter().collect()
    }

    pub fn edge_length(&self, (i, j): (usize, usize)) -> f64 {
        dist(self.vertices[i], self.vertices[j])
    }

    /// Whether an edge belongs to the inner domain (its midpoint lies in the site hull).
    pub fn is_inner_edge(&self, (i, j): (usize, usize)) -> bool {
        let (a, b) = (self.vertices[i], self.vertices[j]);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        in_convex_polygon(&self.inner_hull, mid, 1e-9)
    }

    pub fn is_inner_vertex(&self, v: usize) -> bool {
        in_convex_polygon(&self.inner_hull, self.vertices[v], 1e-9)
    }

    /// Longest edge in the inner domain and in the extension zone.
    pub fn max_edges(&self) -> (f64, f64) {
        let mut inner: f64 = 0.0;
        let mut outer: f64 = 0.0;
        for e in self.edges() {
            let l = self.edge_length(e);
            if self.is_inner_edge(e) {
                inner = inner.max(l);
            } else {
                outer = outer.max(l);
            }
        }
        (inner, outer)
    }

    /// Vertices on the outer boundary of the triangulation.
    pub fn boundary_vertices(&self) -> BTreeSet<usize> {
        let mut count: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .flat_map(|((a, b), _)| [a, b])
            .collect()
    }

    /// Largest violation of the empty-circumcircle property, relative to the circumradius.
    ///
    /// Brute force over all vertex/triangle pairs; intended for audits and tests.
    pub fn delaunay_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in &self.triangles {
            let [a, b, c] = t.map(|v| self.vertices[v]);
            let (ax, ay) = (a[0] - c[0], a[1] - c[1]);
            let (bx, by) = (b[0] - c[0], b[1] - c[1]);
            let d = 2.0 * (ax * by - ay * bx);
            let ux = (by * (ax * ax + ay * ay) - ay * (bx * bx + by * by)) / d;
            let uy = (ax * (bx * bx + by * by) - bx * (ax * ax + ay * ay)) / d;
            let centre = [c[0] + ux, c[1] + uy];
            let radius = ux.hypot(uy);
            for (v, &p) in self.vertices.iter().enumerate() {
                if t.contains(&v) {
                    continue;
                }
                let inside = (radius - dist(p, centre)) / radius;
                worst = worst.max(inside);
            }
        }
        worst
    }
}
