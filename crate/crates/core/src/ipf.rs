//! Integrative penalty factors.
//!
//! Every IPF-type problem is rewritten as its plain counterpart on a
//! transformed design: block `s` of the design is multiplied by a per-block
//! factor so that one global penalty level `λ₁` acts on all blocks, and the
//! fitted coefficients are mapped back by the same factors. The elastic-net
//! variants additionally append diagonal rows that carry the ridge part.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lasso,
    ElasticNet,
    IpfLasso,
    SipfElasticNet,
    IpfElasticNet,
    TreeLasso,
    IpfTreeLasso,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Lasso,
        Method::ElasticNet,
        Method::IpfLasso,
        Method::SipfElasticNet,
        Method::IpfElasticNet,
        Method::TreeLasso,
        Method::IpfTreeLasso,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lasso => "lasso",
            Method::ElasticNet => "elastic_net",
            Method::IpfLasso => "ipf_lasso",
            Method::SipfElasticNet => "sipf_elastic_net",
            Method::IpfElasticNet => "ipf_elastic_net",
            Method::TreeLasso => "tree_lasso",
            Method::IpfTreeLasso => "ipf_tree_lasso",
        }
    }

    pub fn is_ipf(self) -> bool {
        matches!(
            self,
            Method::IpfLasso | Method::SipfElasticNet | Method::IpfElasticNet | Method::IpfTreeLasso
        )
    }

    pub fn is_tree(self) -> bool {
        matches!(self, Method::TreeLasso | Method::IpfTreeLasso)
    }

    pub fn uses_alpha(self) -> bool {
        matches!(
            self,
            Method::ElasticNet | Method::SipfElasticNet | Method::IpfElasticNet
        )
    }

    /// Methods solved through the row-augmented elastic-net construction.
    pub fn is_augmented_en(self) -> bool {
        matches!(self, Method::SipfElasticNet | Method::IpfElasticNet)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// Method selector plus every penalty parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub method: Method,
    /// Penalty level of the first block (the global level for non-IPF methods).
    pub lambda1: f64,
    /// Per-block ratios `λ_s/λ₁`; empty means all ones. `ratios[0]` is 1.
    #[serde(default)]
    pub ratios: Vec<f64>,
    /// Mixing parameters: one shared value for `elastic_net` and
    /// `sipf_elastic_net`, one per block for `ipf_elastic_net`.
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// Normalized-height threshold for the response tree.
    #[serde(default = "default_rho_star")]
    pub rho_star: f64,
}

fn default_rho_star() -> f64 {
    0.95
}

impl PenaltyConfig {
    pub fn new(method: Method, lambda1: f64) -> Self {
        PenaltyConfig {
            method,
            lambda1,
            ratios: Vec::new(),
            alphas: if method.uses_alpha() { vec![1.0] } else { Vec::new() },
            rho_star: default_rho_star(),
        }
    }

    pub fn with_ratios(mut self, ratios: Vec<f64>) -> Self {
        self.ratios = ratios;
        self
    }

    pub fn with_alphas(mut self, alphas: Vec<f64>) -> Self {
        self.alphas = alphas;
        self
    }

    pub fn with_lambda(&self, lambda1: f64) -> Self {
        let mut c = self.clone();
        c.lambda1 = lambda1;
        c
    }

    /// Ratio `λ_s/λ₁` for block `s` (zero-based).
    pub fn ratio(&self, s: usize) -> f64 {
        if self.method.is_ipf() {
            self.ratios.get(s).copied().unwrap_or(1.0)
        } else {
            1.0
        }
    }

    /// Mixing parameter of block `s`; 1 for the pure-ℓ1 methods.
    pub fn alpha(&self, s: usize) -> f64 {
        match self.method {
            Method::ElasticNet | Method::SipfElasticNet => self.alphas.first().copied().unwrap_or(1.0),
            Method::IpfElasticNet => self.alphas.get(s).copied().unwrap_or(1.0),
            _ => 1.0,
        }
    }

    /// Check the parameters against a dataset with `n_blocks` feature blocks.
    pub fn validate(&self, n_blocks: usize) -> Result<()> {
        if !(self.lambda1 > 0.0) || !self.lambda1.is_finite() {
            return Err(Error::invalid(format!("lambda1 must be positive, got {}", self.lambda1)));
        }
        if !self.ratios.is_empty() {
            if self.method.is_ipf() && self.ratios.len() != n_blocks {
                return Err(Error::invalid(format!(
                    "{} ratios given for {n_blocks} blocks",
                    self.ratios.len()
                )));
            }
            if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
                return Err(Error::invalid(format!("penalty ratios must be positive, got {r}")));
            }
            if (self.ratios[0] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "the first ratio is lambda1/lambda1 = 1, got {}",
                    self.ratios[0]
                )));
            }
        }
        match self.method {
            Method::ElasticNet | Method::SipfElasticNet => {
                if self.alphas.len() != 1 {
                    return Err(Error::invalid(format!(
                        "{} takes one shared alpha, got {}",
                        self.method,
                        self.alphas.len()
                    )));
                }
            }
            Method::IpfElasticNet => {
                if self.alphas.len() != n_blocks {
                    return Err(Error::invalid(format!(
                        "ipf_elastic_net takes one alpha per block ({n_blocks}), got {}",
                        self.alphas.len()
                    )));
                }
            }
            _ => {}
        }
        if self.method.uses_alpha() {
            if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
                return Err(Error::invalid(format!("alpha must lie in (0, 1], got {a}")));
            }
        }
        if !(0.0..=1.0).contains(&self.rho_star) {
            return Err(Error::invalid(format!("rho_star must lie in [0, 1], got {}", self.rho_star)));
        }
        Ok(())
    }
}

/// Order of the norm applied to a coefficient group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormOrder {
    L1,
    L2,
    Inf,
}

impl Serialize for NormOrder {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NormOrder::L1 => ser.serialize_u8(1),
            NormOrder::L2 => ser.serialize_u8(2),
            NormOrder::Inf => ser.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(de)?;
        match &v {
            serde_json::Value::Number(n) if n.as_f64() == Some(1.0) => Ok(NormOrder::L1),
            serde_json::Value::Number(n) if n.as_f64() == Some(2.0) => Ok(NormOrder::L2),
            serde_json::Value::String(s) if s.eq_ignore_ascii_case("inf") => Ok(NormOrder::Inf),
            _ => Err(serde::de::Error::custom(format!("norm order must be 1, 2 or \"inf\", got {v}"))),
        }
    }
}

/// A weighted coefficient group: the entries `(j, k)` with `j` in `rows` and
/// `k` in `cols`. Indices are zero-based in memory, one-based in JSON.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub weight: f64,
    pub q: NormOrder,
}

#[derive(Serialize, Deserialize)]
struct GroupJson {
    rows: Vec<usize>,
    cols: Vec<usize>,
    weight: f64,
    q: NormOrder,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupSpec {
    pub groups: Vec<Group>,
}

impl GroupSpec {
    pub fn new(groups: Vec<Group>) -> Self {
        GroupSpec { groups }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: Vec<GroupJson> = serde_json::from_str(text)?;
        let mut groups = Vec::with_capacity(raw.len());
        for (g, r) in raw.into_iter().enumerate() {
            let shift = |v: Vec<usize>, what: &str| -> Result<Vec<usize>> {
                v.into_iter()
                    .map(|i| {
                        i.checked_sub(1)
                            .ok_or_else(|| Error::invalid(format!("group {}: {what} indices are 1-based", g + 1)))
                    })
                    .collect()
            };
            groups.push(Group {
                rows: shift(r.rows, "row")?,
                cols: shift(r.cols, "column")?,
                weight: r.weight,
                q: r.q,
            });
        }
        Ok(GroupSpec { groups })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let raw: Vec<GroupJson> = self
            .groups
            .iter()
            .map(|g| GroupJson {
                rows: g.rows.iter().map(|i| i + 1).collect(),
                cols: g.cols.iter().map(|i| i + 1).collect(),
                weight: g.weight,
                q: g.q,
            })
            .collect();
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn validate(&self, p: usize, m: usize) -> Result<()> {
        for (g, grp) in self.groups.iter().enumerate() {
            if grp.rows.is_empty() || grp.cols.is_empty() {
                return Err(Error::invalid(format!("group {} is empty", g + 1)));
            }
            if !(grp.weight > 0.0) || !grp.weight.is_finite() {
                return Err(Error::invalid(format!(
                    "group {} has non-positive weight {}",
                    g + 1,
                    grp.weight
                )));
            }
            if let Some(r) = grp.rows.iter().find(|&&r| r >= p) {
                return Err(Error::invalid(format!("group {} references feature {} of {p}", g + 1, r + 1)));
            }
            if let Some(c) = grp.cols.iter().find(|&&c| c >= m) {
                return Err(Error::invalid(format!("group {} references response {} of {m}", g + 1, c + 1)));
            }
        }
        Ok(())
    }

    /// Reject groups that no shipped solver can handle.
    pub fn require_solvable(&self) -> Result<()> {
        if self.groups.iter().any(|g| g.q == NormOrder::Inf) {
            return Err(Error::Unsupported(
                "no l-infinity group solver is available; use q = 1 or 2".into(),
            ));
        }
        Ok(())
    }

    /// Features covered by at least one group.
    pub fn covered_rows(&self, p: usize) -> Vec<bool> {
        let mut covered = vec![false; p];
        for g in &self.groups {
            for &r in &g.rows {
                if r < p {
                    covered[r] = true;
                }
            }
        }
        covered
    }
}

fn norm_of(values: impl Iterator<Item = f64>, q: NormOrder) -> f64 {
    match q {
        NormOrder::L1 => values.map(f64::abs).sum(),
        NormOrder::L2 => values.map(|v| v * v).sum::<f64>().sqrt(),
        NormOrder::Inf => values.map(f64::abs).fold(0.0, f64::max),
    }
}

/// `Σ_s λ_s Σ_g w_g ‖S^g(B_s)‖_q`: each group is intersected with each
/// feature block and the pieces are penalized at that block's level.
pub fn group_penalty(
    b: ArrayView2<f64>,
    groups: &GroupSpec,
    block_offsets: &[usize],
    block_lambdas: &[f64],
) -> f64 {
    let mut total = 0.0;
    for g in &groups.groups {
        for (s, lam) in block_lambdas.iter().enumerate() {
            let (lo, hi) = (block_offsets[s], block_offsets[s + 1]);
            let rows: Vec<usize> = g.rows.iter().copied().filter(|&r| r >= lo && r < hi).collect();
            if rows.is_empty() {
                continue;
            }
            let vals = rows
                .iter()
                .flat_map(|&r| g.cols.iter().map(move |&c| b[[r, c]]));
            total += lam * g.weight * norm_of(vals, g.q);
        }
    }
    total
}

/// Transformed problem whose plain (non-IPF) solution maps back to the IPF
/// solution through [`back_transform`].
#[derive(Clone, Debug)]
pub struct AugmentedProblem {
    /// `(n + extra_rows) × p` design.
    pub xstar: Array2<f64>,
    pub ystar: Array2<f64>,
    /// Penalty level for the transformed problem under the solver's
    /// `1/(2m·rows)` loss normalization.
    pub lambda_star: f64,
    /// `B = col_scales ⊙ B*` row-wise.
    pub col_scales: Vec<f64>,
    pub extra_rows: usize,
    /// Group structure carried through unchanged (generic transform only).
    pub groups: Option<GroupSpec>,
}

/// Design scaling shared by every IPF transform, without materializing the
/// augmented matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignScaling {
    pub col_scales: Vec<f64>,
    /// Diagonal entries `d_j` of the appended ridge rows, if any.
    pub ridge_diag: Option<Vec<f64>>,
}

impl DesignScaling {
    pub fn identity(p: usize) -> Self {
        DesignScaling {
            col_scales: vec![1.0; p],
            ridge_diag: None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.ridge_diag.is_none() && self.col_scales.iter().all(|&c| c == 1.0)
    }

    /// Scale the columns of `x` (n × p).
    pub fn scale_columns(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = crate::linalg::to_col_major(x);
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let c = self.col_scales[j];
            if c != 1.0 {
                col.mapv_inplace(|v| v * c);
            }
        }
        out
    }
}

fn check_ratios(ds: &Dataset, cfg: &PenaltyConfig) -> Result<()> {
    for s in 0..ds.n_blocks() {
        let r = cfg.ratio(s);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("ratio of block {} must be positive, got {r}", s + 1)));
        }
    }
    Ok(())
}

/// Column scaling `λ₁/λ_s` per block.
pub fn ipf_lasso_scaling(ds: &Dataset, cfg: &PenaltyConfig) -> Result<DesignScaling> {
    check_ratios(ds, cfg)?;
    let mut col_scales = vec![1.0; ds.n_features()];
    for j in 0..ds.n_features() {
        col_scales[j] = 1.0 / cfg.ratio(ds.block_of(j));
    }
    Ok(DesignScaling {
        col_scales,
        ridge_diag: None,
    })
}

/// Scaling and ridge rows of the IPF elastic net at penalty level `lambda1`.
///
/// Block `s` is scaled by `c_s = λ₁/(α_s λ_s)`; feature `j` of that block
/// gets an appended row with entry `d_j = c_s √(m n λ_s (1-α_s))`, which
/// reproduces `½ λ_s (1-α_s) ‖B_s‖²` under the `1/(2mn)` loss.
pub fn ipf_en_scaling(ds: &Dataset, cfg: &PenaltyConfig, lambda1: f64) -> Result<DesignScaling> {
    check_ratios(ds, cfg)?;
    let (n, m) = (ds.n_samples() as f64, ds.n_responses() as f64);
    let p = ds.n_features();
    let mut col_scales = vec![1.0; p];
    let mut diag = vec![0.0; p];
    for j in 0..p {
        let s = ds.block_of(j);
        let alpha = cfg.alpha(s);
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "alpha of block {} must lie in (0, 1] for the augmented elastic net, got {alpha}",
                s + 1
            )));
        }
        let lambda_s = cfg.ratio(s) * lambda1;
        let c = lambda1 / (alpha * lambda_s);
        col_scales[j] = c;
        diag[j] = c * (m * n * lambda_s * (1.0 - alpha)).sqrt();
    }
    Ok(DesignScaling {
        col_scales,
        ridge_diag: Some(diag),
    })
}

/// `X* = [X_1, (λ₁/λ_2) X_2, …]`, `λ* = λ₁`.
pub fn ipf_lasso_augment(ds: &Dataset, cfg: &PenaltyConfig) -> Result<AugmentedProblem> {
    if !matches!(cfg.method, Method::IpfLasso | Method::IpfTreeLasso) {
        return Err(Error::invalid(format!("ipf_lasso_augment called for {}", cfg.method)));
    }
    let scaling = ipf_lasso_scaling(ds, cfg)?;
    Ok(AugmentedProblem {
        xstar: scaling.scale_columns(ds.x()),
        ystar: ds.y().to_owned(),
        lambda_star: cfg.lambda1,
        col_scales: scaling.col_scales,
        extra_rows: 0,
        groups: None,
    })
}

/// Row-augmented design turning the (s)IPF elastic net into a lasso.
///
/// `lambda_star = λ₁ n/(n+p)` because the solver normalizes the loss by the
/// augmented row count.
pub fn ipf_en_augment(ds: &Dataset, cfg: &PenaltyConfig) -> Result<AugmentedProblem> {
    if !cfg.method.is_augmented_en() {
        return Err(Error::invalid(format!("ipf_en_augment called for {}", cfg.method)));
    }
    let scaling = ipf_en_scaling(ds, cfg, cfg.lambda1)?;
    let (n, p, m) = (ds.n_samples(), ds.n_features(), ds.n_responses());
    let mut xstar = Array2::zeros((n + p, p));
    xstar.slice_mut(s![..n, ..]).assign(&scaling.scale_columns(ds.x()));
    let diag = scaling.ridge_diag.as_ref().expect("elastic-net scaling has ridge rows");
    for j in 0..p {
        xstar[[n + j, j]] = diag[j];
    }
    let mut ystar = Array2::zeros((n + p, m));
    ystar.slice_mut(s![..n, ..]).assign(&ds.y());
    Ok(AugmentedProblem {
        xstar,
        ystar,
        lambda_star: cfg.lambda1 * n as f64 / (n + p) as f64,
        col_scales: scaling.col_scales,
        extra_rows: p,
        groups: None,
    })
}

/// Generic transform for an IPF problem with an arbitrary group penalty.
///
/// Features not covered by any group stay unpenalized and unscaled.
pub fn prop1_augment(ds: &Dataset, groups: &GroupSpec, cfg: &PenaltyConfig) -> Result<AugmentedProblem> {
    let (p, m) = (ds.n_features(), ds.n_responses());
    groups.validate(p, m)?;
    check_ratios(ds, cfg)?;
    let covered = groups.covered_rows(p);
    let mut col_scales = vec![1.0; p];
    for j in 0..p {
        if covered[j] {
            col_scales[j] = 1.0 / cfg.ratio(ds.block_of(j));
        }
    }
    let scaling = DesignScaling {
        col_scales,
        ridge_diag: None,
    };
    Ok(AugmentedProblem {
        xstar: scaling.scale_columns(ds.x()),
        ystar: ds.y().to_owned(),
        lambda_star: cfg.lambda1,
        col_scales: scaling.col_scales,
        extra_rows: 0,
        groups: Some(groups.clone()),
    })
}

/// Map transformed coefficients back: row `j` of `B` is `col_scales[j]`
/// times row `j` of `B*`.
pub fn back_transform(bstar: ArrayView2<f64>, aug: &AugmentedProblem) -> Result<Array2<f64>> {
    scale_rows(bstar, &aug.col_scales)
}

pub(crate) fn scale_rows(b: ArrayView2<f64>, scales: &[f64]) -> Result<Array2<f64>> {
    if b.nrows() != scales.len() {
        return Err(Error::dims(format!(
            "coefficients have {} rows, transform has {}",
            b.nrows(),
            scales.len()
        )));
    }
    let mut out = b.to_owned();
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| v * scales[j]);
    }
    Ok(out)
}

/// Inverse of [`scale_rows`], used to express warm starts in transformed units.
pub(crate) fn unscale_rows(b: ArrayView2<f64>, scales: &[f64]) -> Result<Array2<f64>> {
    let inv: Vec<f64> = scales.iter().map(|c| 1.0 / c).collect();
    scale_rows(b, &inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn two_block(n: usize, p1: usize, p2: usize, m: usize) -> Dataset {
        let y = Array2::from_shape_fn((n, m), |(i, k)| ((i * 3 + k * 5) % 7) as f64 - 3.0);
        let x1 = Array2::from_shape_fn((n, p1), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let x2 = Array2::from_shape_fn((n, p2), |(i, j)| ((i + j * 2) % 5) as f64 - 2.0);
        Dataset::new(y, vec![x1, x2], None).unwrap()
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert!("ridge".parse::<Method>().is_err());
    }

    #[test]
    fn unit_ratios_leave_design_unchanged() {
        let ds = two_block(6, 3, 2, 2);
        let cfg = PenaltyConfig::new(Method::IpfLasso, 0.1).with_ratios(vec![1.0, 1.0]);
        let aug = ipf_lasso_augment(&ds, &cfg).unwrap();
        assert_eq!(aug.xstar, ds.x().to_owned());
        assert_eq!(aug.extra_rows, 0);
        assert_eq!(aug.lambda_star, 0.1);
    }

    #[test]
    fn ratio_two_halves_second_block() {
        let ds = two_block(6, 3, 2, 2);
        let cfg = PenaltyConfig::new(Method::IpfLasso, 0.1).with_ratios(vec![1.0, 2.0]);
        let aug = ipf_lasso_augment(&ds, &cfg).unwrap();
        assert_eq!(aug.col_scales, vec![1.0, 1.0, 1.0, 0.5, 0.5]);
        for i in 0..6 {
            assert_eq!(aug.xstar[[i, 4]], 0.5 * ds.x()[[i, 4]]);
            assert_eq!(aug.xstar[[i, 0]], ds.x()[[i, 0]]);
        }
    }

    #[test]
    fn nonpositive_ratio_is_rejected() {
        let ds = two_block(6, 3, 2, 2);
        let cfg = PenaltyConfig::new(Method::IpfLasso, 0.1).with_ratios(vec![1.0, 0.0]);
        assert!(ipf_lasso_augment(&ds, &cfg).is_err());
        assert!(cfg.validate(2).is_err());
    }

    #[test]
    fn alpha_one_ridge_rows_vanish() {
        let ds = two_block(6, 3, 2, 2);
        let cfg = PenaltyConfig::new(Method::IpfElasticNet, 0.2)
            .with_ratios(vec![1.0, 3.0])
            .with_alphas(vec![1.0, 1.0]);
        let aug = ipf_en_augment(&ds, &cfg).unwrap();
        let lasso = ipf_lasso_augment(&ds, &PenaltyConfig::new(Method::IpfLasso, 0.2).with_ratios(vec![1.0, 3.0])).unwrap();
        assert_eq!(aug.extra_rows, 5);
        assert!(aug.xstar.slice(s![6.., ..]).iter().all(|&v| v == 0.0));
        assert_eq!(aug.xstar.slice(s![..6, ..]), lasso.xstar);
        assert_eq!(aug.col_scales, lasso.col_scales);
        assert!(aug.ystar.slice(s![6.., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_alpha_is_rejected_by_augmentation() {
        let ds = two_block(6, 3, 2, 2);
        let cfg = PenaltyConfig::new(Method::IpfElasticNet, 0.2)
            .with_ratios(vec![1.0, 3.0])
            .with_alphas(vec![0.0, 1.0]);
        assert!(ipf_en_augment(&ds, &cfg).is_err());
    }

    #[test]
    fn single_l1_group_matches_ipf_lasso() {
        let ds = two_block(6, 3, 2, 2);
        let cfg = PenaltyConfig::new(Method::IpfLasso, 0.3).with_ratios(vec![1.0, 4.0]);
        let groups = GroupSpec::new(vec![Group {
            rows: (0..5).collect(),
            cols: vec![0, 1],
            weight: 1.0,
            q: NormOrder::L1,
        }]);
        let a = prop1_augment(&ds, &groups, &cfg).unwrap();
        let b = ipf_lasso_augment(&ds, &cfg).unwrap();
        assert_eq!(a.xstar, b.xstar);
        assert_eq!(a.col_scales, b.col_scales);
        assert_eq!(a.lambda_star, b.lambda_star);
    }

    #[test]
    fn uncovered_features_stay_unscaled() {
        let ds = two_block(6, 3, 2, 2);
        let cfg = PenaltyConfig::new(Method::IpfLasso, 0.3).with_ratios(vec![1.0, 4.0]);
        let groups = GroupSpec::new(vec![Group {
            rows: vec![0, 3],
            cols: vec![0],
            weight: 1.0,
            q: NormOrder::L2,
        }]);
        let a = prop1_augment(&ds, &groups, &cfg).unwrap();
        assert_eq!(a.col_scales, vec![1.0, 1.0, 1.0, 0.25, 1.0]);
    }

    #[test]
    fn invalid_groups_are_rejected() {
        let ds = two_block(6, 3, 2, 2);
        let cfg = PenaltyConfig::new(Method::IpfLasso, 0.3).with_ratios(vec![1.0, 4.0]);
        let empty = GroupSpec::new(vec![Group { rows: vec![], cols: vec![0], weight: 1.0, q: NormOrder::L2 }]);
        assert!(prop1_augment(&ds, &empty, &cfg).is_err());
        let neg = GroupSpec::new(vec![Group { rows: vec![1], cols: vec![0], weight: 0.0, q: NormOrder::L2 }]);
        assert!(prop1_augment(&ds, &neg, &cfg).is_err());
    }

    #[test]
    fn group_json_is_one_based() {
        let text = r#"[{"rows":[1,2],"cols":[1],"weight":0.5,"q":2},{"rows":[3],"cols":[1,2],"weight":1,"q":"inf"}]"#;
        let spec = GroupSpec::from_json_str(text).unwrap();
        assert_eq!(spec.groups[0].rows, vec![0, 1]);
        assert_eq!(spec.groups[1].q, NormOrder::Inf);
        assert!(spec.require_solvable().is_err());
        let back = GroupSpec::from_json_str(&spec.to_json_string().unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(GroupSpec::from_json_str(r#"[{"rows":[0],"cols":[1],"weight":1,"q":1}]"#).is_err());
        assert!(GroupSpec::from_json_str(r#"[{"rows":[1],"cols":[1],"weight":1,"q":3}]"#).is_err());
    }

    #[test]
    fn back_transform_identity_and_halving() {
        let ds = two_block(6, 3, 2, 2);
        let bstar = Array2::from_shape_fn((5, 2), |(j, k)| (j + k) as f64 + 1.0);
        let id = ipf_lasso_augment(&ds, &PenaltyConfig::new(Method::IpfLasso, 0.1).with_ratios(vec![1.0, 1.0])).unwrap();
        assert_eq!(back_transform(bstar.view(), &id).unwrap(), bstar);
        let half = ipf_lasso_augment(&ds, &PenaltyConfig::new(Method::IpfLasso, 0.1).with_ratios(vec![1.0, 2.0])).unwrap();
        let b = back_transform(bstar.view(), &half).unwrap();
        assert_eq!(b[[4, 1]], 0.5 * bstar[[4, 1]]);
        assert_eq!(b[[0, 1]], bstar[[0, 1]]);
        assert!(back_transform(Array2::zeros((4, 2)).view(), &half).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PenaltyConfig::new(Method::Lasso, 0.0).validate(1).is_err());
        assert!(PenaltyConfig::new(Method::IpfLasso, 1.0).with_ratios(vec![2.0, 1.0]).validate(2).is_err());
        assert!(PenaltyConfig::new(Method::IpfLasso, 1.0).with_ratios(vec![1.0]).validate(2).is_err());
        assert!(PenaltyConfig::new(Method::IpfElasticNet, 1.0).with_alphas(vec![0.5]).validate(2).is_err());
        assert!(PenaltyConfig::new(Method::ElasticNet, 1.0).with_alphas(vec![1.5]).validate(1).is_err());
        PenaltyConfig::new(Method::SipfElasticNet, 1.0)
            .with_ratios(vec![1.0, 0.5])
            .with_alphas(vec![0.3])
            .validate(2)
            .unwrap();
    }
}
