//! Response tree for the tree-lasso penalty.
//!
//! The tree is estimated by agglomerative clustering of the response columns.
//! Merge heights are normalized to `[0, 1]`; each surviving internal node `ν`
//! with height `h_ν` contributes `h_ν Σ_c W(c) + (1 − h_ν)‖β^{G_ν}‖` to the
//! penalty, where `W(c)` is the same expression for child `c` and `|β_k|`
//! for a leaf, and every leaf additionally contributes `|β_k|`. Expanding the
//! recursion gives one flat weight per node.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipf::{Group, GroupSpec, NormOrder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Complete,
    Average,
    Single,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissimilarity {
    /// `1 − r`
    Correlation,
    /// `1 − |r|`
    AbsCorrelation,
}

/// Which internal nodes lose their group term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRule {
    /// Drop nodes with `h > ρ*` (weakly correlated groups).
    AboveThreshold,
    /// Keep only nodes with `h > ρ*`.
    KeepAbove,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub rho_star: f64,
    pub linkage: Linkage,
    pub dissimilarity: Dissimilarity,
    pub prune_rule: PruneRule,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions {
            rho_star: 0.95,
            linkage: Linkage::Complete,
            dissimilarity: Dissimilarity::Correlation,
            prune_rule: PruneRule::AboveThreshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub children: Vec<usize>,
    /// Response indices covered by the node.
    pub group: Vec<usize>,
    pub height: f64,
    /// Flat penalty multiplier after expanding the recursion.
    pub weight: f64,
    pub pruned: bool,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Nodes `0..m` are the leaves (node `k` holds response `k`); internal nodes
/// follow in merge order, the root last.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeStructure {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub m: usize,
}

/// Pearson correlation matrix of the columns of `y`.
fn correlations(y: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, m) = y.dim();
    let mut z = y.to_owned();
    for k in 0..m {
        let mut col = z.column_mut(k);
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
        let norm = col.dot(&col).sqrt();
        if norm <= 1e-12 * (mean.abs().max(1.0)) * (n as f64).sqrt() {
            return Err(Error::invalid(format!(
                "response column {} is constant; its correlation is undefined",
                k + 1
            )));
        }
        col.mapv_inplace(|v| v / norm);
    }
    Ok(z.t().dot(&z))
}

/// Condensed (upper-triangle, row-major) dissimilarities between responses.
pub fn response_dissimilarities(y: ArrayView2<f64>, kind: Dissimilarity) -> Result<Vec<f64>> {
    let r = correlations(y)?;
    let m = r.nrows();
    let mut out = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let c = r[[i, j]].clamp(-1.0, 1.0);
            out.push(match kind {
                Dissimilarity::Correlation => 1.0 - c,
                Dissimilarity::AbsCorrelation => 1.0 - c.abs(),
            });
        }
    }
    Ok(out)
}

/// Cluster the response columns and prune with the default rule.
pub fn build_tree(y: ArrayView2<f64>, rho_star: f64) -> Result<TreeStructure> {
    build_tree_with(
        y,
        &TreeOptions {
            rho_star,
            ..TreeOptions::default()
        },
    )
}

pub fn build_tree_with(y: ArrayView2<f64>, opts: &TreeOptions) -> Result<TreeStructure> {
    let m = y.ncols();
    if m < 2 {
        return Err(Error::invalid(format!("a response tree needs at least 2 responses, got {m}")));
    }
    if !(0.0..=1.0).contains(&opts.rho_star) {
        return Err(Error::invalid(format!("rho_star must lie in [0, 1], got {}", opts.rho_star)));
    }
    let mut condensed = response_dissimilarities(y, opts.dissimilarity)?;
    let method = match opts.linkage {
        Linkage::Complete => kodama::Method::Complete,
        Linkage::Average => kodama::Method::Average,
        Linkage::Single => kodama::Method::Single,
    };
    let dendrogram = kodama::linkage(&mut condensed, m, method);
    let merges: Vec<(usize, usize, f64)> = dendrogram
        .steps()
        .iter()
        .map(|s| (s.cluster1, s.cluster2, s.dissimilarity))
        .collect();
    let mut tree = TreeStructure::from_merges(m, &merges)?;
    tree.prune(opts.rho_star, opts.prune_rule);
    Ok(tree)
}

impl TreeStructure {
    /// Tree from a merge list in the usual agglomerative labeling: cluster
    /// `m + t` is created by step `t`. Heights are divided by the largest
    /// merge height (all zero if every merge is at height zero).
    pub fn from_merges(m: usize, merges: &[(usize, usize, f64)]) -> Result<Self> {
        if merges.len() + 1 != m {
            return Err(Error::invalid(format!("{} merges cannot join {m} leaves", merges.len())));
        }
        let mut nodes: Vec<TreeNode> = (0..m)
            .map(|k| TreeNode {
                id: k,
                children: Vec::new(),
                group: vec![k],
                height: 0.0,
                weight: 1.0,
                pruned: false,
            })
            .collect();
        let max_h = merges.iter().fold(0.0f64, |a, &(_, _, h)| a.max(h));
        let mut used = vec![false; m + merges.len()];
        for (t, &(a, b, h)) in merges.iter().enumerate() {
            let id = m + t;
            if a >= id || b >= id || a == b || used[a] || used[b] {
                return Err(Error::invalid(format!("merge {t} joins invalid clusters {a} and {b}")));
            }
            used[a] = true;
            used[b] = true;
            let mut group: Vec<usize> = nodes[a].group.iter().chain(&nodes[b].group).copied().collect();
            group.sort_unstable();
            nodes.push(TreeNode {
                id,
                children: vec![a, b],
                group,
                height: if max_h > 0.0 { (h / max_h).clamp(0.0, 1.0) } else { 0.0 },
                weight: 0.0,
                pruned: false,
            });
        }
        let mut tree = TreeStructure {
            root: nodes.len() - 1,
            nodes,
            m,
        };
        tree.compute_weights()?;
        Ok(tree)
    }

    /// Leaves only: the tree-lasso penalty becomes the plain lasso.
    pub fn leaves_only(m: usize) -> Self {
        let nodes = (0..m)
            .map(|k| TreeNode {
                id: k,
                children: Vec::new(),
                group: vec![k],
                height: 0.0,
                weight: 1.0,
                pruned: false,
            })
            .collect();
        TreeStructure { nodes, root: 0, m }
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| !n.is_leaf())
    }

    /// Mark internal nodes as pruned according to `rule` and recompute weights.
    pub fn prune(&mut self, rho_star: f64, rule: PruneRule) {
        for node in self.nodes.iter_mut().filter(|n| !n.children.is_empty()) {
            node.pruned = match rule {
                PruneRule::AboveThreshold => node.height > rho_star,
                PruneRule::KeepAbove => node.height <= rho_star,
            };
        }
        self.compute_weights().expect("pruning keeps a valid tree");
    }

    fn parents(&self) -> Result<Vec<Option<usize>>> {
        let mut parent = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            for &c in &node.children {
                if c >= self.nodes.len() || parent[c].is_some() || c == i {
                    return Err(Error::invalid(format!("node {} has an invalid child {c}", node.id)));
                }
                parent[c] = Some(i);
            }
        }
        Ok(parent)
    }

    /// Order nodes so that every node precedes its children.
    fn top_down_order(&self) -> Result<Vec<usize>> {
        let parent = self.parents()?;
        let roots: Vec<usize> = (0..self.nodes.len()).filter(|&i| parent[i].is_none()).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = roots;
        let mut seen = vec![false; self.nodes.len()];
        while let Some(i) = stack.pop() {
            if seen[i] {
                return Err(Error::invalid("tree contains a cycle"));
            }
            seen[i] = true;
            order.push(i);
            stack.extend(self.nodes[i].children.iter().rev());
        }
        if order.len() != self.nodes.len() {
            return Err(Error::invalid("tree contains a cycle or unreachable nodes"));
        }
        Ok(order)
    }

    /// Expand the nested penalty into one flat weight per node.
    ///
    /// On the tree with pruned nodes removed (their children attached to the
    /// nearest surviving ancestor), each node gets an accumulated factor
    /// `A(root) = 1`, `A(c) = 1 + h_ν A(ν)` for a child `c` of `ν`. Leaves
    /// carry `A(leaf)`, surviving internal nodes `(1 − h_ν) A(ν)`, pruned
    /// nodes zero.
    pub fn compute_weights(&mut self) -> Result<()> {
        let order = self.top_down_order()?;
        let parent = self.parents()?;
        let mut acc = vec![1.0; self.nodes.len()];
        for &i in &order {
            let mut anc = parent[i];
            while let Some(a) = anc {
                if !self.nodes[a].pruned {
                    break;
                }
                anc = parent[a];
            }
            acc[i] = match anc {
                Some(a) => 1.0 + self.nodes[a].height * acc[a],
                None => 1.0,
            };
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            node.weight = if node.is_leaf() {
                acc[i]
            } else if node.pruned {
                0.0
            } else {
                (1.0 - node.height) * acc[i]
            };
        }
        Ok(())
    }

    /// Per-response leaf weights.
    pub fn leaf_weights(&self) -> Vec<f64> {
        let mut w = vec![1.0; self.m];
        for node in self.nodes.iter().filter(|n| n.is_leaf()) {
            w[node.group[0]] = node.weight;
        }
        w
    }

    /// Surviving internal groups with positive weight.
    pub fn internal_groups(&self) -> Vec<(Vec<usize>, f64)> {
        self.internal_nodes()
            .filter(|n| !n.pruned && n.weight > 0.0)
            .map(|n| (n.group.clone(), n.weight))
            .collect()
    }

    /// The flat penalty as a generic group list over a `p × m` coefficient grid.
    pub fn group_spec(&self, p: usize) -> GroupSpec {
        let leaf = self.leaf_weights();
        let internal = self.internal_groups();
        let mut groups = Vec::with_capacity(p * (self.m + internal.len()));
        for j in 0..p {
            for (k, &w) in leaf.iter().enumerate() {
                groups.push(Group {
                    rows: vec![j],
                    cols: vec![k],
                    weight: w,
                    q: NormOrder::L2,
                });
            }
            for (g, w) in &internal {
                groups.push(Group {
                    rows: vec![j],
                    cols: g.clone(),
                    weight: *w,
                    q: NormOrder::L2,
                });
            }
        }
        GroupSpec::new(groups)
    }

    /// Check the structural invariants of an imported tree.
    pub fn validate(&self) -> Result<()> {
        let order = self.top_down_order()?;
        let parent = self.parents()?;
        let roots = (0..self.nodes.len()).filter(|&i| parent[i].is_none()).count();
        if roots != 1 && self.nodes.iter().any(|n| !n.is_leaf()) {
            return Err(Error::invalid(format!("tree has {roots} roots")));
        }
        let mut leaves = BTreeSet::new();
        for &i in order.iter().rev() {
            let node = &self.nodes[i];
            if node.is_leaf() {
                if node.group.len() != 1 || node.group[0] >= self.m {
                    return Err(Error::invalid(format!("leaf {} must hold exactly one response", node.id)));
                }
                if node.height != 0.0 {
                    return Err(Error::invalid(format!("leaf {} has nonzero height", node.id)));
                }
                if !leaves.insert(node.group[0]) {
                    return Err(Error::invalid(format!("response {} has two leaves", node.group[0] + 1)));
                }
            } else {
                if node.children.len() < 2 {
                    return Err(Error::invalid(format!("internal node {} has fewer than 2 children", node.id)));
                }
                if !(0.0..=1.0).contains(&node.height) {
                    return Err(Error::invalid(format!("node {} height {} outside [0, 1]", node.id, node.height)));
                }
                let mut union: Vec<usize> = node
                    .children
                    .iter()
                    .flat_map(|&c| self.nodes[c].group.iter().copied())
                    .collect();
                union.sort_unstable();
                let mut g = node.group.clone();
                g.sort_unstable();
                if union != g {
                    return Err(Error::invalid(format!(
                        "group of node {} is not the union of its children",
                        node.id
                    )));
                }
            }
        }
        if leaves.len() != self.m {
            return Err(Error::invalid(format!("tree has {} leaves for {} responses", leaves.len(), self.m)));
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = TreeFile {
            m: self.m,
            nodes: self
                .nodes
                .iter()
                .map(|n| TreeNode {
                    group: n.group.iter().map(|k| k + 1).collect(),
                    ..n.clone()
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Import a tree; response indices in `group` are 1-based, node ids are
    /// arbitrary labels referenced by `children`. Weights are recomputed from
    /// heights and pruning flags.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TreeFile = serde_json::from_str(text)?;
        let mut index = HashMap::new();
        for (i, n) in file.nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::invalid(format!("duplicate node id {}", n.id)));
            }
        }
        let mut nodes = Vec::with_capacity(file.nodes.len());
        for n in &file.nodes {
            let children = n
                .children
                .iter()
                .map(|c| {
                    index
                        .get(c)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("node {} references unknown child {c}", n.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let group = n
                .group
                .iter()
                .map(|&k| k.checked_sub(1).ok_or_else(|| Error::invalid("tree response indices are 1-based")))
                .collect::<Result<Vec<_>>>()?;
            nodes.push(TreeNode {
                id: n.id,
                children,
                group,
                height: n.height,
                weight: 0.0,
                pruned: n.pruned && !n.children.is_empty(),
            });
        }
        let mut tree = TreeStructure {
            root: 0,
            nodes,
            m: file.m,
        };
        tree.validate()?;
        let parent = tree.parents()?;
        tree.root = (0..tree.nodes.len()).find(|&i| parent[i].is_none()).unwrap_or(0);
        tree.compute_weights()?;
        Ok(tree)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    m: usize,
    nodes: Vec<TreeNode>,
}

/// `λ Σ_j [Σ_leaves A(k)|β_jk| + Σ_ν ω_ν ‖β_j^{G_ν}‖]`.
pub fn tree_penalty(b: ArrayView2<f64>, tree: &TreeStructure, lambda: f64) -> Result<f64> {
    if b.ncols() != tree.m {
        return Err(Error::dims(format!(
            "coefficients have {} columns, tree has {} responses",
            b.ncols(),
            tree.m
        )));
    }
    let leaf = tree.leaf_weights();
    let internal = tree.internal_groups();
    let mut total = 0.0;
    for row in b.outer_iter() {
        for (k, w) in leaf.iter().enumerate() {
            total += w * row[k].abs();
        }
        for (g, w) in &internal {
            total += w * g.iter().map(|&k| row[k] * row[k]).sum::<f64>().sqrt();
        }
    }
    Ok(lambda * total)
}
