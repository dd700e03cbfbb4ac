//! Greedy normalized-cut matching (Graclus) with fake-node padding, so that
//! every coarsening level halves the node count and pooling reduces to a
//! fixed-stride max over adjacent pairs.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::laplacian::{estimate_lambda_max, normalized_laplacian, scale_laplacian};
use crate::error::{Error, Result};

/// One matching pass over a graph in its native node order.
#[derive(Debug, Clone)]
pub struct Matching {
    /// Coarse cluster id of every node.
    pub parent: Vec<usize>,
    /// Two children per cluster, ascending.
    pub children: Vec<[usize; 2]>,
}

/// Pairs every node of `w` (even size) with exactly one partner.
///
/// Nodes are visited in ascending index order. An unmarked node pairs with
/// the unmarked neighbour maximizing `w_ij (1/d_i + 1/d_j)`; nodes left
/// without a neighbour are paired afterwards, real nodes with fake ones
/// first, then leftovers consecutively.
pub fn match_level(w: &DMatrix<f64>, fake: &[bool]) -> Matching {
    let n = w.nrows();
    debug_assert!(n % 2 == 0);
    let degree: Vec<f64> = (0..n).map(|i| w.row(i).sum() - w[(i, i)]).collect();
    let mut marked = vec![false; n];
    let mut clusters: Vec<[usize; 2]> = Vec::with_capacity(n / 2);
    let mut singles = Vec::new();
    for i in 0..n {
        if marked[i] {
            continue;
        }
        marked[i] = true;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == i || marked[j] || w[(i, j)] <= 0.0 {
                continue;
            }
            let score = w[(i, j)] * (1.0 / degree[i] + 1.0 / degree[j]);
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        match best {
            Some((j, _)) => {
                marked[j] = true;
                clusters.push([i, j]);
            }
            None => singles.push(i),
        }
    }
    let (reals, fakes): (Vec<usize>, Vec<usize>) = singles.into_iter().partition(|&i| !fake[i]);
    let paired = reals.len().min(fakes.len());
    for k in 0..paired {
        clusters.push([reals[k], fakes[k]]);
    }
    let rest = if reals.len() > paired { &reals[paired..] } else { &fakes[paired..] };
    for pair in rest.chunks(2) {
        clusters.push([pair[0], pair[1]]);
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_unstable_by_key(|c| c[0]);
    let mut parent = vec![0; n];
    for (id, c) in clusters.iter().enumerate() {
        parent[c[0]] = id;
        parent[c[1]] = id;
    }
    Matching {
        parent,
        children: clusters,
    }
}

/// Sums edge weights between clusters; intra-cluster weight is dropped.
pub fn coarsen_adjacency(w: &DMatrix<f64>, parent: &[usize], clusters: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(clusters, clusters);
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let (p, q) = (parent[i], parent[j]);
            if p != q {
                out[(p, q)] += w[(i, j)];
            }
        }
    }
    out
}

/// Coarsening ladder of a graph, stored in pooled order: at every level the
/// two children of coarse node `j` sit at positions `2j` and `2j+1`.
#[derive(Debug, Clone)]
pub struct GraphHierarchy {
    /// Node count per level; `sizes[0]` is the padded finest size.
    pub sizes: Vec<usize>,
    /// Summed-weight adjacency per level, pooled order.
    pub adjacency: Vec<DMatrix<f64>>,
    /// Scaled Laplacian `2L/λ_max − I` per level, pooled order, row-major.
    pub laplacians: Vec<Arc<Vec<f64>>>,
    /// Fake-node flags per level, pooled order.
    pub fake: Vec<Vec<bool>>,
    /// Finest-level position → original node index (`None` for padding).
    pub permutation: Vec<Option<usize>>,
    /// Original node count.
    pub real_nodes: usize,
}

impl GraphHierarchy {
    pub fn levels(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Parent position (at `level + 1`) of every position at `level`.
    pub fn parents(&self, level: usize) -> Vec<usize> {
        (0..self.sizes[level]).map(|p| p / 2).collect()
    }

    /// Reorders a row of per-node values into pooled order, zero at fake
    /// positions.
    pub fn permute_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.real_nodes {
            return Err(Error::shape("permute_row", &[row.len()], &[self.real_nodes]));
        }
        Ok(self
            .permutation
            .iter()
            .map(|p| p.map_or(0.0, |i| row[i]))
            .collect())
    }
}

/// Builds `levels` coarsening levels of the graph with adjacency `a`.
pub fn graclus_coarsen(a: &DMatrix<f64>, levels: usize) -> Result<GraphHierarchy> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::shape("graclus_coarsen", &[a.nrows(), a.ncols()], &[]));
    }
    if levels == 0 {
        return Err(Error::Param("coarsening needs at least one level".into()));
    }
    let padded = n.next_power_of_two();
    if levels > padded.trailing_zeros() as usize {
        return Err(Error::Param(format!(
            "{levels} levels would coarsen {n} nodes (padded to {padded}) below one node"
        )));
    }
    if a.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Param("adjacency must be finite and non-negative".into()));
    }

    // Native-order ladder.
    let mut w = DMatrix::zeros(padded, padded);
    w.view_mut((0, 0), (n, n)).copy_from(a);
    w.fill_diagonal(0.0);
    let mut graphs = vec![w];
    let mut fakes = vec![(0..padded).map(|i| i >= n).collect::<Vec<bool>>()];
    let mut matchings = Vec::with_capacity(levels);
    for level in 0..levels {
        let m = match_level(&graphs[level], &fakes[level]);
        let size = m.children.len();
        let coarse = coarsen_adjacency(&graphs[level], &m.parent, size);
        let coarse_fake = m
            .children
            .iter()
            .map(|c| fakes[level][c[0]] && fakes[level][c[1]])
            .collect();
        graphs.push(coarse);
        fakes.push(coarse_fake);
        matchings.push(m);
    }

    // Pooled order, from the coarsest level outwards.
    let coarsest = graphs[levels].nrows();
    let mut orders: Vec<Vec<usize>> = vec![Vec::new(); levels + 1];
    orders[levels] = (0..coarsest).collect();
    for level in (0..levels).rev() {
        orders[level] = orders[level + 1]
            .iter()
            .flat_map(|&p| matchings[level].children[p])
            .collect();
    }

    let mut sizes = Vec::with_capacity(levels + 1);
    let mut adjacency = Vec::with_capacity(levels + 1);
    let mut laplacians = Vec::with_capacity(levels + 1);
    let mut fake = Vec::with_capacity(levels + 1);
    for level in 0..=levels {
        let order = &orders[level];
        let k = order.len();
        let g = &graphs[level];
        let permuted = DMatrix::from_fn(k, k, |i, j| g[(order[i], order[j])]);
        let (l, _) = normalized_laplacian(&permuted);
        let scaled = scale_laplacian(&l, estimate_lambda_max(&l))?;
        sizes.push(k);
        laplacians.push(Arc::new(row_major(&scaled)));
        adjacency.push(permuted);
        fake.push(order.iter().map(|&i| fakes[level][i]).collect());
    }
    let permutation = orders[0].iter().map(|&i| (i < n).then_some(i)).collect();
    Ok(GraphHierarchy {
        sizes,
        adjacency,
        laplacians,
        fake,
        permutation,
        real_nodes: n,
    })
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}
