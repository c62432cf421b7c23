//! Fill-reducing orderings.

use std::collections::BTreeSet;

/// Minimum-degree ordering on the graph of a symmetric pattern.
///
/// `adjacency[i]` lists the neighbours of node `i` (self loops ignored).
/// Returns `perm` with `perm[k]` = original index eliminated at step `k`.
/// Degree ties go to the lowest index, so the result is deterministic.
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut adj: Vec<BTreeSet<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().copied().filter(|&j| j != i).collect())
        .collect();
    // Make symmetric in case the caller passed one triangle.
    for i in 0..n {
        let nbrs: Vec<usize> = adj[i].iter().copied().collect();
        for j in nbrs {
            adj[j].insert(i);
        }
    }

    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);

    while let Some(&(deg, v)) = queue.iter().next() {
        queue.remove(&(deg, v));
        eliminated[v] = true;
        perm.push(v);

        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        // Neighbours of v become a clique.
        for (a, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[a + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            debug_assert!(!eliminated[u]);
            queue.insert((adj[u].len(), u));
        }
    }
    perm
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}
