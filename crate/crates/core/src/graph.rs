//! Spatial neighbourhood graphs and the structure matrices of intrinsic GMRFs.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::SymSparse;
use crate::scalar::Real;

/// Undirected graph over planar nodes (coordinates in meters).
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph<T> {
    coords: Vec<[T; 2]>,
    /// Unordered edges stored as `(i, j)` with `i < j`.
    edges: BTreeSet<(usize, usize)>,
    /// Edges added by [`bridge_components`], in insertion order.
    bridges: Vec<(usize, usize)>,
}

impl<T: Real> AdjacencyGraph<T> {
    pub fn new(coords: Vec<[T; 2]>) -> Self {
        Self {
            coords,
            edges: BTreeSet::new(),
            bridges: Vec::new(),
        }
    }

    /// Adds the edge `{i, j}`; self loops are ignored.
    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i < self.n_nodes() && j < self.n_nodes(), "edge endpoint out of range");
        if i != j {
            self.edges.insert((i.min(j), i.max(j)));
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[T; 2]] {
        &self.coords
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn bridges(&self) -> &[(usize, usize)] {
        &self.bridges
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n_nodes()];
        for &(i, j) in &self.edges {
            nb[i].push(j);
            nb[j].push(i);
        }
        nb.iter_mut().for_each(|v| v.sort_unstable());
        nb
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes()];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    pub fn distance(&self, i: usize, j: usize) -> T {
        dist(self.coords[i], self.coords[j])
    }

    /// Component label per node (labels are the smallest node index of each component).
    pub fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.n_nodes());
        for &(i, j) in &self.edges {
            uf.union(i, j);
        }
        let mut root_min = vec![usize::MAX; self.n_nodes()];
        for i in 0..self.n_nodes() {
            let r = uf.find(i);
            root_min[r] = root_min[r].min(i);
        }
        (0..self.n_nodes()).map(|i| root_min[uf.find(i)]).collect()
    }

    pub fn n_components(&self) -> usize {
        self.components().into_iter().collect::<BTreeSet<_>>().len()
    }

    /// Edge list CSV with header `i,j,distance_m`.
    pub fn to_edge_csv(&self) -> String {
        let mut out = String::from("i,j,distance_m\n");
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i},{j},{}", self.distance(i, j).as_f64());
        }
        out
    }

    /// One line per node: `node: n1 n2 ...`.
    pub fn to_adjacency_text(&self) -> String {
        let mut out = String::new();
        for (i, nb) in self.neighbours().into_iter().enumerate() {
            let list: Vec<String> = nb.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "{i}: {}", list.join(" "));
        }
        out
    }
}

fn dist2<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn dist<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    dist2(a, b).sqrt()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Symmetrised k-nearest-neighbour graph.
///
/// Edge `{i, j}` exists when `j` is among the `k` nearest nodes of `i` or
/// vice versa. Distance ties go to the lower node index.
pub fn knn_graph<T: Real>(coords: &[[T; 2]], k: usize) -> Result<AdjacencyGraph<T>> {
    let n = coords.len();
    if n <= k {
        return Err(Error::invalid(format!("knn graph needs more than k = {k} nodes, got {n}")));
    }
    if coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::invalid("non-finite node coordinate"));
    }
    let mut g = AdjacencyGraph::new(coords.to_vec());
    for i in 0..n {
        let mut others: Vec<(T, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist2(coords[i], coords[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            g.add_edge(i, j);
        }
    }
    Ok(g)
}

/// Joins components by repeatedly adding the globally shortest edge between
/// two different components until the graph is connected.
pub fn bridge_components<T: Real>(graph: &AdjacencyGraph<T>) -> AdjacencyGraph<T> {
    let mut g = graph.clone();
    let n = g.n_nodes();
    loop {
        let comp = g.components();
        if comp.iter().collect::<BTreeSet<_>>().len() <= 1 {
            return g;
        }
        let mut best: Option<(T, usize, usize)> = None;
        for i in 0..n {
            for j in i + 1..n {
                if comp[i] == comp[j] {
                    continue;
                }
                let d = dist2(g.coords[i], g.coords[j]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("at least two components");
        g.add_edge(i, j);
        g.bridges.push((i, j));
    }
}

/// ICAR structure matrix `D − W` with binary weights.
///
/// The precision of the ICAR field is `τ (D − W)`. Rank deficiency 1, null
/// space spanned by the constant vector.
pub fn icar_structure<T: Real>(graph: &AdjacencyGraph<T>) -> Result<SymSparse<T>> {
    let n = graph.n_nodes();
    if n == 0 {
        return Err(Error::invalid("empty graph"));
    }
    if graph.n_components() != 1 {
        return Err(Error::invalid(
            "ICAR structure needs a connected graph; bridge first",
        ));
    }
    let deg = graph.degrees();
    let triplets = deg
        .iter()
        .enumerate()
        .map(|(i, &d)| (i, i, T::from_usize(d).expect("degree fits scalar")))
        .chain(graph.edges().map(|(i, j)| (i, j, -T::one())));
    Ok(SymSparse::from_triplets(n, triplets)?.with_null_basis(vec![vec![T::one(); n]]))
}

/// RW2 structure matrix `R = D₂ᵀ D₂` where `D₂` takes second differences.
///
/// Banded with bandwidth 2, rank deficiency 2, null space `span{1, t}`.
pub fn rw2_structure<T: Real>(n_t: usize) -> Result<SymSparse<T>> {
    if n_t < 3 {
        return Err(Error::invalid(format!("RW2 needs at least 3 time points, got {n_t}")));
    }
    let stencil = [T::one(), T::lit(-2.0), T::one()];
    let mut triplets = Vec::with_capacity(6 * (n_t - 2));
    for t in 0..n_t - 2 {
        for a in 0..3 {
            for b in a..3 {
                triplets.push((t + a, t + b, stencil[a] * stencil[b]));
            }
        }
    }
    let ones = vec![T::one(); n_t];
    let trend = (1..=n_t).map(|t| T::from_usize(t).expect("index fits scalar")).collect();
    Ok(SymSparse::from_triplets(n_t, triplets)?.with_null_basis(vec![ones, trend]))
}

/// Log-density of `θ = log τ` when `τ ~ Gamma(shape a, rate b)`.
pub fn log_gamma_prior_logdensity<T: Real>(theta: T, a: T, b: T) -> T {
    let lgamma_a = T::lit(statrs::function::gamma::ln_gamma(a.as_f64()));
    a * theta - b * theta.exp() - lgamma_a + a * b.ln()
}
