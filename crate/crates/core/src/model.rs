//! Data types shared by the inference modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One regression `y = X β + ε` with a group label for every column of `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTask {
    /// 1-based position of this task among all tasks.
    pub index: usize,
    #[serde(with = "serde_vec")]
    pub y: DVector<f64>,
    #[serde(with = "serde_mat")]
    pub x: DMatrix<f64>,
    /// Group label in `1..=G` for each column of `x`.
    pub groups: Vec<usize>,
}

impl RegressionTask {
    pub fn new(index: usize, y: DVector<f64>, x: DMatrix<f64>, groups: Vec<usize>) -> Self {
        Self { index, y, x, groups }
    }

    /// Task with every column in group 1.
    pub fn single_group(index: usize, y: DVector<f64>, x: DMatrix<f64>) -> Self {
        let s = x.ncols();
        Self::new(index, y, x, vec![1; s])
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn s(&self) -> usize {
        self.x.ncols()
    }

    pub fn max_label(&self) -> usize {
        self.groups.iter().copied().max().unwrap_or(0)
    }

    /// Number of columns carrying each label, indexed `0..num_groups` for
    /// labels `1..=num_groups`.
    pub fn group_counts(&self, num_groups: usize) -> Vec<usize> {
        let mut counts = vec![0; num_groups];
        for &g in &self.groups {
            if (1..=num_groups).contains(&g) {
                counts[g - 1] += 1;
            }
        }
        counts
    }

    /// Zero-based group index of column `t`.
    #[inline]
    pub fn group_of(&self, t: usize) -> usize {
        self.groups[t] - 1
    }

    /// Copy of the task keeping only the listed columns, in the given order.
    pub fn with_columns(&self, keep: &[usize]) -> Self {
        let x = self.x.select_columns(keep);
        let groups = keep.iter().map(|&t| self.groups[t]).collect();
        Self::new(self.index, self.y.clone(), x, groups)
    }

    /// Copy of the task keeping only the listed observations.
    pub fn with_rows(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        Self::new(self.index, y, x, self.groups.clone())
    }
}

/// Number of groups across a collection of tasks: the largest label used.
pub fn infer_num_groups(tasks: &[RegressionTask]) -> usize {
    tasks.iter().map(RegressionTask::max_label).max().unwrap_or(1).max(1)
}

/// Checks the shape and label invariants of a task against `num_groups`.
pub fn validate_task(task: &RegressionTask, num_groups: usize) -> Result<()> {
    let (rows, cols) = task.x.shape();
    if task.n() == 0 || cols == 0 {
        return Err(Error::EmptyDesign {
            task: task.index,
            n: task.n(),
            s: cols,
        });
    }
    if rows != task.n() {
        return Err(Error::Dimension {
            task: task.index,
            detail: format!("y has {} entries but x has {rows} rows", task.n()),
        });
    }
    if task.groups.len() != cols {
        return Err(Error::Dimension {
            task: task.index,
            detail: format!("{} group labels for {cols} columns", task.groups.len()),
        });
    }
    for (column, &label) in task.groups.iter().enumerate() {
        if label == 0 || label > num_groups {
            return Err(Error::Label {
                task: task.index,
                column,
                label,
                groups: num_groups,
            });
        }
    }
    if task.y.iter().chain(task.x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam(format!("task {} contains non-finite data", task.index)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Variant {
    /// Per-task group scales with a shared gamma prior on `τ⁻²`.
    #[default]
    #[serde(rename = "pInc")]
    PInc,
    /// One pooled scale per group, shared by every task.
    #[serde(rename = "pInc2")]
    PInc2,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::PInc => "pInc",
            Variant::PInc2 => "pInc2",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pinc" => Ok(Variant::PInc),
            "pinc2" => Ok(Variant::PInc2),
            other => Err(Error::InvalidParam(format!("unknown variant `{other}`"))),
        }
    }
}

/// Prior hyperparameters: gamma `(a_g, b_g)` on `τ_g⁻²`, gamma `(c, d)` on
/// `σ⁻²`, and the pooled `τ_g²` used by [`Variant::PInc2`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub d: f64,
    pub variant: Variant,
    pub pooled_tau_sq: Vec<f64>,
}

impl Hyperparams {
    /// Starting values for the empirical-Bayes loop: every shape and rate at
    /// `1e-3`, and the pooled scales at `0.05`.
    pub fn initial(num_groups: usize, variant: Variant) -> Self {
        Self {
            a: vec![1e-3; num_groups],
            b: vec![1e-3; num_groups],
            c: 1e-3,
            d: 1e-3,
            variant,
            pooled_tau_sq: vec![0.05; num_groups],
        }
    }

    pub fn num_groups(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.a.len();
        if g == 0 || self.b.len() != g || self.pooled_tau_sq.len() != g {
            return Err(Error::InvalidParam(format!(
                "hyperparameter vectors must share a positive length (a: {}, b: {}, pooled_tau_sq: {})",
                self.a.len(),
                self.b.len(),
                self.pooled_tau_sq.len()
            )));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let all = self.a.iter().chain(&self.b).chain(&self.pooled_tau_sq);
        if !all.copied().all(positive) || !positive(self.c) || !positive(self.d) {
            return Err(Error::InvalidParam("hyperparameters must be positive and finite".into()));
        }
        Ok(())
    }

    /// `a_g / b_g`, or `1 / τ_g²` for the pooled variant.
    pub fn prior_mean_inv_tau_sq(&self, g: usize) -> f64 {
        match self.variant {
            Variant::PInc => self.a[g] / self.b[g],
            Variant::PInc2 => 1.0 / self.pooled_tau_sq[g],
        }
    }
}

/// Variational parameters of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    #[serde(with = "serde_vec")]
    pub beta_mean: DVector<f64>,
    /// Full `Σ*`. Sweeps keep only [`Self::beta_var`] current; the matrix is
    /// brought up to date by `TaskFit::update_beta` or `TaskFit::finalize`.
    #[serde(with = "serde_mat")]
    pub beta_cov: DMatrix<f64>,
    /// Diagonal of `Σ*`.
    pub beta_var: Vec<f64>,
    pub a_star: Vec<f64>,
    pub b_star: Vec<f64>,
    pub c_star: f64,
    pub d_star: f64,
    /// Parameter `l` of each local-scale marginal.
    pub lambda_l: Vec<f64>,
    /// `E[λ_t⁻²]` under the current local-scale marginal.
    pub e_inv_lambda_sq: Vec<f64>,
    pub elbo: f64,
    /// Local scales pinned at one (ridge-type prior) instead of horseshoe.
    #[serde(default)]
    pub frozen_lambda: bool,
    /// Scalars of the Gaussian block, refreshed with `beta_mean`/`beta_cov`.
    #[serde(default)]
    pub moments: Option<GaussianMoments>,
    /// `Σ*` from the latest sweep when `beta_cov` is stale.
    #[serde(skip)]
    pub pending_cov: Option<CovarianceForm>,
}

/// A covariance matrix stored either directly or as `WᵀW`.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceForm {
    Full(DMatrix<f64>),
    Factor(DMatrix<f64>),
}

impl CovarianceForm {
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            CovarianceForm::Full(m) => m.clone(),
            CovarianceForm::Factor(w) => w.transpose() * w,
        }
    }

    /// The same covariance multiplied by `k > 0`.
    pub fn scaled(self, k: f64) -> Self {
        match self {
            CovarianceForm::Full(m) => CovarianceForm::Full(m * k),
            CovarianceForm::Factor(w) => CovarianceForm::Factor(w * k.sqrt()),
        }
    }
}

/// Cached functionals of the Gaussian marginal of `β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    /// `ln |Σ*|`.
    pub log_det_cov: f64,
    /// `tr(XᵀX Σ*)`.
    pub trace_gram_cov: f64,
    /// `‖y − Xβ*‖²`.
    pub resid_sq: f64,
}

impl VariationalState {
    /// `E[σ⁻²]`.
    pub fn e_inv_sigma_sq(&self) -> f64 {
        self.c_star / self.d_star
    }

    /// `E[β_t²]`.
    pub fn e_beta_sq(&self, t: usize) -> f64 {
        self.beta_mean[t] * self.beta_mean[t] + self.beta_var[t]
    }

    pub fn summary(&self) -> PosteriorSummary {
        let means: Vec<f64> = self.beta_mean.iter().copied().collect();
        let sds: Vec<f64> = self.beta_var.iter().map(|v| v.max(0.0).sqrt()).collect();
        PosteriorSummary::new(means, sds, self.elbo)
    }
}

/// Per-coefficient marginal summaries of a fitted task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// `|mean| / sd`, infinite where the sd is zero.
    pub kappa: Vec<f64>,
    pub elbo: f64,
}

impl PosteriorSummary {
    pub fn new(means: Vec<f64>, sds: Vec<f64>, elbo: f64) -> Self {
        let kappa = kappa_ratio(&means, &sds);
        Self { means, sds, kappa, elbo }
    }
}

pub(crate) fn kappa_ratio(means: &[f64], sds: &[f64]) -> Vec<f64> {
    means
        .iter()
        .zip(sds)
        .map(|(&m, &sd)| {
            if sd > 0.0 {
                m.abs() / sd
            } else if m == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Undirected network estimate over `p` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEstimate {
    pub p: usize,
    #[serde(with = "serde_mat")]
    pub strength: DMatrix<f64>,
    /// Zero-based node pairs `(i, j)` with `i < j`.
    pub edges: Vec<(usize, usize)>,
}

/// Serde for a matrix as an array of rows.
pub mod serde_mat {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
    }
}

/// Serde for a vector as a plain array.
pub mod serde_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
