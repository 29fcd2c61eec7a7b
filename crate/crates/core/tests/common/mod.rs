#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use structpen::tree::TreeStructure;
use structpen::{standardize, Dataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| r.sample(StandardNormal))
}

/// Gaussian blocks, a sparse coefficient matrix and noisy responses.
pub fn random_dataset(r: &mut ChaCha8Rng, n: usize, sizes: &[usize], m: usize, density: f64) -> Dataset {
    let p: usize = sizes.iter().sum();
    let x = normal_matrix(r, n, p);
    let b = Array2::from_shape_fn((p, m), |_| {
        if r.random::<f64>() < density {
            r.random_range(-1.5..1.5)
        } else {
            0.0
        }
    });
    let noise = normal_matrix(r, n, m) * 0.5;
    let y = x.dot(&b) + noise + 3.0;
    let mut blocks = Vec::new();
    let mut start = 0;
    for &s in sizes {
        blocks.push(x.slice(ndarray::s![.., start..start + s]).to_owned());
        start += s;
    }
    Dataset::new(y, blocks, None).unwrap()
}

/// Centered responses and unit-variance features.
pub fn standardized(ds: &Dataset) -> Dataset {
    standardize(ds, true, true).unwrap().0
}

pub fn centered(a: ArrayView2<f64>) -> Array2<f64> {
    let means = a.mean_axis(Axis(0)).unwrap();
    &a - &means.insert_axis(Axis(0))
}

pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Plain cyclic coordinate descent for
/// `1/(2mn)‖Y − XB‖² + Σ_j l1_j ‖b_j‖₁ + ½ l2_j ‖b_j‖²` on centered data,
/// one response at a time, run to a very tight tolerance.
pub fn weighted_cd_oracle(x: ArrayView2<f64>, y: ArrayView2<f64>, l1: &[f64], l2: &[f64]) -> Array2<f64> {
    let (n, p) = x.dim();
    let m = y.ncols();
    let scale = (m * n) as f64;
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).dot(&x.column(j)) / scale).collect();
    let mut b = Array2::zeros((p, m));
    for k in 0..m {
        let mut r: Array1<f64> = y.column(k).to_owned();
        for _ in 0..200_000 {
            let mut delta: f64 = 0.0;
            for j in 0..p {
                let old = b[[j, k]];
                let z = x.column(j).dot(&r) / scale + col_sq[j] * old;
                let new = if z > l1[j] {
                    (z - l1[j]) / (col_sq[j] + l2[j])
                } else if z < -l1[j] {
                    (z + l1[j]) / (col_sq[j] + l2[j])
                } else {
                    0.0
                };
                if new != old {
                    r.scaled_add(old - new, &x.column(j));
                    b[[j, k]] = new;
                    delta = delta.max((new - old).abs());
                }
            }
            if delta < 1e-14 {
                break;
            }
        }
    }
    b
}

/// Largest violation of the weighted elastic-net KKT conditions on centered data.
pub fn kkt_violation(x: ArrayView2<f64>, y: ArrayView2<f64>, b: ArrayView2<f64>, l1: &[f64], l2: &[f64]) -> f64 {
    let (n, _) = x.dim();
    let m = y.ncols();
    let r = &y - &x.dot(&b);
    let g = x.t().dot(&r) / (m * n) as f64;
    let mut worst: f64 = 0.0;
    for ((j, k), &gjk) in g.indexed_iter() {
        let bjk = b[[j, k]];
        let v = if bjk == 0.0 {
            (gjk.abs() - l1[j]).max(0.0)
        } else {
            (gjk - l2[j] * bjk - l1[j] * bjk.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Random binary merge list over `m` leaves whose depth is at most `max_depth`.
pub fn random_merges(r: &mut ChaCha8Rng, m: usize, max_depth: usize) -> Vec<(usize, usize, f64)> {
    loop {
        let mut active: Vec<(usize, usize)> = (0..m).map(|k| (k, 0)).collect();
        let mut merges = Vec::new();
        let mut height: f64 = 0.0;
        while active.len() > 1 {
            let i = r.random_range(0..active.len());
            let (a, da) = active.swap_remove(i);
            let j = r.random_range(0..active.len());
            let (b, db) = active.swap_remove(j);
            height += r.random_range(0.0..1.0);
            merges.push((a, b, height));
            active.push((m + merges.len() - 1, da.max(db) + 1));
        }
        if active[0].1 <= max_depth {
            return merges;
        }
    }
}

/// Nested tree penalty evaluated by recursion over the tree with pruned
/// nodes collapsed: `Σ_leaves |β| + Σ_ν E(ν)` with
/// `E(ν) = h_ν Σ_c G(c) + (1 − h_ν)‖β^{G_ν}‖`, `G(leaf) = |β|`, `G(c) = E(c)`.
pub fn recursive_tree_penalty(b: ArrayView2<f64>, tree: &TreeStructure, lambda: f64) -> f64 {
    let nodes = &tree.nodes;
    fn surviving_children(nodes: &[structpen::tree::TreeNode], v: usize, out: &mut Vec<usize>) {
        for &c in &nodes[v].children {
            if !nodes[c].is_leaf() && nodes[c].pruned {
                surviving_children(nodes, c, out);
            } else {
                out.push(c);
            }
        }
    }
    fn e(nodes: &[structpen::tree::TreeNode], v: usize, row: &[f64], sum: &mut f64) -> f64 {
        let mut kids = Vec::new();
        surviving_children(nodes, v, &mut kids);
        let mut inner = 0.0;
        for c in kids {
            inner += if nodes[c].is_leaf() {
                row[nodes[c].group[0]].abs()
            } else {
                e(nodes, c, row, sum)
            };
        }
        let h = nodes[v].height;
        let norm = nodes[v].group.iter().map(|&k| row[k] * row[k]).sum::<f64>().sqrt();
        let val = h * inner + (1.0 - h) * norm;
        *sum += val;
        val
    }
    // Top-level surviving internal nodes: the root if it survives, else the
    // highest surviving descendants.
    let mut tops = Vec::new();
    if !nodes[tree.root].is_leaf() {
        if nodes[tree.root].pruned {
            surviving_children(nodes, tree.root, &mut tops);
        } else {
            tops.push(tree.root);
        }
    }
    let mut total = 0.0;
    for row in b.outer_iter() {
        let row = row.to_vec();
        total += row.iter().map(|v| v.abs()).sum::<f64>();
        for &t in &tops {
            if !nodes[t].is_leaf() {
                let mut sum = 0.0;
                e(nodes, t, &row, &mut sum);
                total += sum;
            }
        }
    }
    lambda * total
}

/// Textbook O(m³) complete-linkage agglomeration on a full dissimilarity
/// matrix. Returns merges as sorted leaf sets with the merge height.
pub fn brute_force_complete_linkage(d: &Array2<f64>) -> Vec<(Vec<usize>, f64)> {
    let m = d.nrows();
    let mut clusters: Vec<Vec<usize>> = (0..m).map(|k| vec![k]).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut link: f64 = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        link = link.max(d[[i, j]]);
                    }
                }
                if link < best.2 {
                    best = (a, b, link);
                }
            }
        }
        let (a, b, h) = best;
        let mut merged = clusters[a].clone();
        merged.extend(clusters[b].iter().copied());
        merged.sort_unstable();
        clusters.remove(b);
        clusters.remove(a);
        clusters.push(merged.clone());
        out.push((merged, h));
    }
    out
}

/// `1 − Pearson correlation` between the columns of `y`, computed directly.
pub fn correlation_dissimilarity(y: ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = y.dim();
    let mut d = Array2::zeros((m, m));
    for a in 0..m {
        for b in 0..m {
            let (ca, cb) = (y.column(a), y.column(b));
            let (ma, mb) = (ca.sum() / n as f64, cb.sum() / n as f64);
            let mut sab = 0.0;
            let mut saa = 0.0;
            let mut sbb = 0.0;
            for i in 0..n {
                sab += (ca[i] - ma) * (cb[i] - mb);
                saa += (ca[i] - ma) * (ca[i] - ma);
                sbb += (cb[i] - mb) * (cb[i] - mb);
            }
            d[[a, b]] = 1.0 - sab / (saa * sbb).sqrt();
        }
    }
    d
}

pub fn temp_dir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}
