//! Gaussian graphical models as collections of node-wise regressions:
//! precision-matrix generation, sampling, regression-system construction,
//! network assembly and recovery metrics.

mod simulation;

pub use simulation::{simulate, Method, PriorMode, ReplicateResult, SimulationConfig, SimulationOutput};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkEstimate, PosteriorSummary, RegressionTask};
use crate::rng::stream_rng;
use crate::selection::symmetrize_kappa;

/// Symmetric boolean adjacency without self-loops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    p: usize,
    data: Vec<bool>,
}

impl Adjacency {
    pub fn empty(p: usize) -> Self {
        Self { p, data: vec![false; p * p] }
    }

    /// Builds from zero-based unordered pairs.
    pub fn from_edges(p: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = Self::empty(p);
        for &(i, j) in edges {
            adj.set(i, j, true);
        }
        adj
    }

    /// Builds from a square 0/1 matrix; the result is the symmetric closure.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows != cols {
            return Err(Error::InvalidParam(format!("adjacency must be square, got {rows}x{cols}")));
        }
        let mut adj = Self::empty(rows);
        for i in 0..rows {
            for j in 0..cols {
                let v = m[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::InvalidParam(format!("adjacency entry ({}, {}) is {v}, expected 0 or 1", i + 1, j + 1)));
                }
                if v == 1.0 && i != j {
                    adj.set(i, j, true);
                }
            }
        }
        Ok(adj)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.p + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        if i != j {
            self.data[i * self.p + j] = value;
            self.data[j * self.p + i] = value;
        }
    }

    /// Unordered pairs `(i, j)`, `i < j`, that are connected.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        pairs(self.p).filter(|&(i, j)| self.get(i, j)).collect()
    }

    pub fn num_edges(&self) -> usize {
        pairs(self.p).filter(|&(i, j)| self.get(i, j)).count()
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.p).filter(|&j| self.get(i, j)).count()
    }

    /// Swaps a random half of the present edges with as many absent pairs.
    pub fn corrupt_half(&self, rng: &mut ChaCha8Rng) -> Self {
        let present: Vec<(usize, usize)> = self.edges();
        let absent: Vec<(usize, usize)> = pairs(self.p).filter(|&(i, j)| !self.get(i, j)).collect();
        let k = (present.len() / 2).min(absent.len());
        let mut out = self.clone();
        for idx in sample(rng, present.len(), k) {
            let (i, j) = present[idx];
            out.set(i, j, false);
        }
        for idx in sample(rng, absent.len(), k) {
            let (i, j) = absent[idx];
            out.set(i, j, true);
        }
        out
    }
}

/// Unordered node pairs in row-major order.
pub fn pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |i| (i + 1..p).map(move |j| (i, j)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    /// Nodes within `bandwidth` positions of each other are connected.
    Band { bandwidth: usize },
    /// `clusters` contiguous blocks; pairs inside a block connect with probability `prob`.
    Cluster { clusters: usize, prob: f64 },
    /// `hubs` contiguous blocks, each a star centred on its first node.
    Hub { hubs: usize },
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Band { .. } => "band",
            Topology::Cluster { .. } => "cluster",
            Topology::Hub { .. } => "hub",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSpec {
    pub p: usize,
    pub topology: Topology,
    pub seed: u64,
}

/// A precision matrix together with its support.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub omega: DMatrix<f64>,
    pub adjacency: Adjacency,
    /// True regression coefficients, one vector per node in task column order.
    pub coefficients: Vec<DVector<f64>>,
}

impl GroundTruth {
    pub fn from_precision(omega: DMatrix<f64>) -> Result<Self> {
        let p = omega.nrows();
        if omega.ncols() != p || p == 0 {
            return Err(Error::InvalidParam("precision matrix must be square and non-empty".into()));
        }
        let mut adjacency = Adjacency::empty(p);
        for (i, j) in pairs(p) {
            if omega[(i, j)] != 0.0 {
                adjacency.set(i, j, true);
            }
        }
        let coefficients = coefficients_from_precision(&omega)?;
        Ok(Self {
            omega,
            adjacency,
            coefficients,
        })
    }

    pub fn p(&self) -> usize {
        self.omega.nrows()
    }

    /// Off-diagonal coefficients split into true zeros and true nonzeros,
    /// both directed copies included.
    pub fn split_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let mut zeros = Vec::new();
        let mut nonzeros = Vec::new();
        for (i, beta) in self.coefficients.iter().enumerate() {
            for (t, node) in other_nodes(self.p(), i).enumerate() {
                if self.adjacency.get(i, node) {
                    nonzeros.push(beta[t]);
                } else {
                    zeros.push(beta[t]);
                }
            }
        }
        (zeros, nonzeros)
    }
}

/// Node indices of the design columns of task `i`.
pub fn other_nodes(p: usize, i: usize) -> impl Iterator<Item = usize> {
    (0..p).filter(move |&t| t != i)
}

fn support(spec: &PrecisionSpec, rng: &mut ChaCha8Rng) -> Result<Adjacency> {
    let p = spec.p;
    if p < 2 {
        return Err(Error::InvalidParam(format!("network needs at least 2 nodes, got {p}")));
    }
    let mut adj = Adjacency::empty(p);
    match spec.topology {
        Topology::Band { bandwidth } => {
            if bandwidth == 0 || bandwidth >= p {
                return Err(Error::InvalidParam(format!("bandwidth must be in 1..{p}, got {bandwidth}")));
            }
            for (i, j) in pairs(p) {
                if j - i <= bandwidth {
                    adj.set(i, j, true);
                }
            }
        }
        Topology::Cluster { clusters, prob } => {
            if clusters == 0 || clusters > p / 2 || !(0.0..=1.0).contains(&prob) {
                return Err(Error::InvalidParam(format!(
                    "cluster topology needs 1..={} clusters and prob in [0, 1], got {clusters}, {prob}",
                    p / 2
                )));
            }
            for block in blocks(p, clusters) {
                for i in block.clone() {
                    for j in i + 1..block.end {
                        if rng.random::<f64>() < prob {
                            adj.set(i, j, true);
                        }
                    }
                }
            }
        }
        Topology::Hub { hubs } => {
            if hubs == 0 || hubs > p / 2 {
                return Err(Error::InvalidParam(format!("hub topology needs 1..={} hubs, got {hubs}", p / 2)));
            }
            for block in blocks(p, hubs) {
                for j in block.start + 1..block.end {
                    adj.set(block.start, j, true);
                }
            }
        }
    }
    Ok(adj)
}

/// Splits `0..p` into `k` contiguous blocks whose sizes differ by at most one.
fn blocks(p: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    (0..k).map(|b| (b * p / k)..((b + 1) * p / k)).collect()
}

/// Draws a precision matrix with the topology's support: off-diagonal entries
/// uniform on `±[0.3, 0.8]`, diagonal equal to the absolute row sum plus 0.1,
/// then rescaled to unit diagonal.
pub fn generate_precision(spec: &PrecisionSpec) -> Result<GroundTruth> {
    let mut rng = stream_rng(spec.seed, 0);
    let adj = support(spec, &mut rng)?;
    let p = spec.p;
    let mut omega = DMatrix::<f64>::zeros(p, p);
    for (i, j) in adj.edges() {
        let magnitude = rng.random_range(0.3..=0.8);
        let value = if rng.random::<bool>() { magnitude } else { -magnitude };
        omega[(i, j)] = value;
        omega[(j, i)] = value;
    }
    for i in 0..p {
        let row: f64 = (0..p).filter(|&j| j != i).map(|j| omega[(i, j)].abs()).sum();
        omega[(i, i)] = row + 0.1;
    }
    let scale = omega.diagonal().map(|v| 1.0 / v.sqrt());
    let omega = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { omega[(i, j)] * scale[i] * scale[j] });
    GroundTruth::from_precision(omega)
}

/// `n` rows drawn i.i.d. from `N(0, Ω⁻¹)` via the Cholesky factor of `Ω`.
pub fn sample_gaussian(truth: &GroundTruth, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let p = truth.p();
    let chol = truth
        .omega
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("precision matrix is not positive definite".into()))?;
    let mut rng = stream_rng(seed, 1);
    let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    // Ω = LLᵀ, so x = L⁻ᵀz has covariance Ω⁻¹.
    let x = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(x.transpose())
}

/// Node-wise regressions: task `i` regresses column `i` on the other columns.
/// With a prior adjacency, columns flagged as connected get label 2 and the
/// rest label 1.
pub fn build_regression_system(data: &DMatrix<f64>, prior: Option<&Adjacency>) -> Result<Vec<RegressionTask>> {
    let p = data.ncols();
    if p < 2 {
        return Err(Error::InvalidParam(format!("network mode needs at least 2 columns, got {p}")));
    }
    if let Some(prior) = prior {
        if prior.p() != p {
            return Err(Error::InvalidParam(format!("prior adjacency is {0}x{0} but data has {p} columns", prior.p())));
        }
    }
    Ok((0..p)
        .map(|i| {
            let cols: Vec<usize> = other_nodes(p, i).collect();
            let groups = cols
                .iter()
                .map(|&t| match prior {
                    Some(adj) if adj.get(i, t) => 2,
                    _ => 1,
                })
                .collect();
            RegressionTask::new(i + 1, data.column(i).into_owned(), data.select_columns(&cols), groups)
        })
        .collect())
}

/// `β_{i,t} = −Ω_{it}/Ω_{ii}` in the column order of [`build_regression_system`].
pub fn coefficients_from_precision(omega: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let p = omega.nrows();
    (0..p)
        .map(|i| {
            let diag = omega[(i, i)];
            if !(diag > 0.0) {
                return Err(Error::InvalidParam(format!("precision diagonal {} is not positive", i + 1)));
            }
            Ok(DVector::from_iterator(p - 1, other_nodes(p, i).map(|t| -omega[(i, t)] / diag)))
        })
        .collect()
}

/// `(Σ_{true zeros} |β̂|, Σ_{true nonzeros} |β̂ − β|)` over all directed pairs.
pub fn l1_errors(estimates: &[DVector<f64>], truth: &GroundTruth) -> Result<(f64, f64)> {
    let p = truth.p();
    if estimates.len() != p || estimates.iter().any(|e| e.len() != p - 1) {
        return Err(Error::InvalidParam(format!(
            "estimate layout does not match a {p}-node network ({} task vectors)",
            estimates.len()
        )));
    }
    let mut err0 = 0.0;
    let mut err1 = 0.0;
    for (i, (est, beta)) in estimates.iter().zip(&truth.coefficients).enumerate() {
        for (t, node) in other_nodes(p, i).enumerate() {
            if truth.adjacency.get(i, node) {
                err1 += (est[t] - beta[t]).abs();
            } else {
                err0 += est[t].abs();
            }
        }
    }
    Ok((err0, err1))
}

/// Directed `p × p` matrix of κ statistics with zero diagonal.
pub fn kappa_matrix(summaries: &[PosteriorSummary]) -> DMatrix<f64> {
    let p = summaries.len();
    let mut k = DMatrix::zeros(p, p);
    for (i, s) in summaries.iter().enumerate() {
        for (t, node) in other_nodes(p, i).enumerate() {
            k[(i, node)] = s.kappa[t];
        }
    }
    k
}

/// ROC curve from a symmetric strength matrix over unordered pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(FPR, TPR)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// `None` when the truth has no edges or no non-edges.
    pub auc: Option<f64>,
}

pub fn roc_curve(strength: &DMatrix<f64>, truth: &Adjacency) -> Result<RocCurve> {
    let p = truth.p();
    if strength.shape() != (p, p) {
        return Err(Error::InvalidParam("strength matrix does not match adjacency size".into()));
    }
    let mut scored: Vec<(f64, bool)> = pairs(p).map(|(i, j)| (strength[(i, j)], truth.get(i, j))).collect();
    let positives = scored.iter().filter(|s| s.1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(RocCurve { points: Vec::new(), auc: None });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut idx = 0;
    while idx < scored.len() {
        let level = scored[idx].0;
        while idx < scored.len() && scored[idx].0 == level {
            if scored[idx].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        let point = (fp as f64 / negatives as f64, tp as f64 / positives as f64);
        let last = *points.last().unwrap();
        auc += (point.0 - last.0) * (point.1 + last.1) / 2.0;
        points.push(point);
    }
    Ok(RocCurve { points, auc: Some(auc) })
}

/// Symmetrised κ strengths; edges are the pairs selected in either direction.
/// Without selections, no edges are reported.
pub fn assemble_network(summaries: &[PosteriorSummary], selections: Option<&[Vec<bool>]>) -> Result<NetworkEstimate> {
    let p = summaries.len();
    if summaries.iter().any(|s| s.kappa.len() + 1 != p) {
        return Err(Error::InvalidParam("every node-wise summary needs p - 1 coefficients".into()));
    }
    let strength = symmetrize_kappa(&kappa_matrix(summaries));
    let mut edges = Vec::new();
    if let Some(sel) = selections {
        if sel.len() != p || sel.iter().any(|v| v.len() + 1 != p) {
            return Err(Error::InvalidParam("selection layout does not match the network".into()));
        }
        let directed = |i: usize, j: usize| {
            let t = if j < i { j } else { j - 1 };
            sel[i][t]
        };
        edges = pairs(p).filter(|&(i, j)| directed(i, j) || directed(j, i)).collect();
    }
    Ok(NetworkEstimate { p, strength, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: usize, topology: Topology) -> PrecisionSpec {
        PrecisionSpec { p, topology, seed: 11 }
    }

    #[test]
    fn band_support() {
        let truth = generate_precision(&spec(5, Topology::Band { bandwidth: 1 })).unwrap();
        assert_eq!(truth.adjacency.edges(), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn hub_support() {
        let truth = generate_precision(&spec(5, Topology::Hub { hubs: 1 })).unwrap();
        assert_eq!(truth.adjacency.edges(), vec![(0, 1), (0, 2), (0, 3), (0, 4)]);
    }

    #[test]
    fn cluster_edges_stay_inside_blocks() {
        let truth = generate_precision(&spec(20, Topology::Cluster { clusters: 4, prob: 0.5 })).unwrap();
        for (i, j) in truth.adjacency.edges() {
            assert_eq!(i / 5, j / 5);
        }
        assert!(truth.adjacency.num_edges() > 0);
    }

    #[test]
    fn infeasible_specs() {
        assert!(generate_precision(&spec(5, Topology::Band { bandwidth: 5 })).is_err());
        assert!(generate_precision(&spec(5, Topology::Hub { hubs: 3 })).is_err());
        assert!(generate_precision(&spec(1, Topology::Band { bandwidth: 1 })).is_err());
    }

    #[test]
    fn precision_is_positive_definite_with_exact_zeros() {
        for topology in [
            Topology::Band { bandwidth: 3 },
            Topology::Cluster { clusters: 5, prob: 0.3 },
            Topology::Hub { hubs: 5 },
        ] {
            let truth = generate_precision(&spec(50, topology)).unwrap();
            assert!(truth.omega.clone().cholesky().is_some());
            for (i, beta) in truth.coefficients.iter().enumerate() {
                for (t, node) in other_nodes(50, i).enumerate() {
                    assert_eq!(beta[t] != 0.0, truth.adjacency.get(i, node));
                }
            }
            for i in 0..50 {
                assert_eq!(truth.omega[(i, i)], 1.0);
            }
        }
    }

    #[test]
    fn coefficient_formula() {
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let beta = coefficients_from_precision(&omega).unwrap();
        assert_eq!(beta[0][0], -0.5);
        assert_eq!(beta[1][0], -0.5);
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0]));
        assert!(coefficients_from_precision(&diag).unwrap().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn regression_layout() {
        let data = DMatrix::from_fn(4, 3, |r, c| (10 * c + r) as f64);
        let tasks = build_regression_system(&data, None).unwrap();
        assert_eq!(tasks[1].y, data.column(1).into_owned());
        assert_eq!(tasks[1].x.column(0), data.column(0));
        assert_eq!(tasks[1].x.column(1), data.column(2));
        assert!(tasks.iter().all(|t| t.groups.iter().all(|&g| g == 1)));

        let empty = Adjacency::empty(3);
        let tasks = build_regression_system(&data, Some(&empty)).unwrap();
        assert!(tasks.iter().all(|t| t.groups.iter().all(|&g| g == 1)));
    }

    #[test]
    fn prior_groups_follow_degrees() {
        let truth = generate_precision(&spec(5, Topology::Band { bandwidth: 1 })).unwrap();
        let data = DMatrix::from_fn(3, 5, |r, c| (r * c) as f64);
        let tasks = build_regression_system(&data, Some(&truth.adjacency)).unwrap();
        for (i, task) in tasks.iter().enumerate() {
            assert_eq!(task.group_counts(2)[1], truth.adjacency.degree(i));
        }
    }

    #[test]
    fn l1_three_nodes() {
        // One true edge (0, 1) with β = -0.4 both ways.
        let omega = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.0, 0.4, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let truth = GroundTruth::from_precision(omega).unwrap();
        let mut est = truth.coefficients.clone();
        assert_eq!(l1_errors(&est, &truth).unwrap(), (0.0, 0.0));
        est[0][0] += 0.1; // task 0, node 1
        est[1][0] -= 0.1; // task 1, node 0
        est[0][1] = 0.05; // task 0, node 2
        est[2][0] = -0.05; // task 2, node 0
        let (e0, e1) = l1_errors(&est, &truth).unwrap();
        assert!((e0 - 0.05 * 2.0).abs() < 1e-12);
        assert!((e1 - 0.1 * 2.0).abs() < 1e-12);

        let zero: Vec<DVector<f64>> = truth.coefficients.iter().map(|b| DVector::zeros(b.len())).collect();
        assert_eq!(l1_errors(&zero, &truth).unwrap(), (0.0, 0.8));
        assert!(l1_errors(&zero[..2], &truth).is_err());
    }

    #[test]
    fn roc_perfect_and_flat() {
        let truth = Adjacency::from_edges(4, &[(0, 1), (2, 3)]);
        let mut strength = DMatrix::zeros(4, 4);
        for (i, j) in truth.edges() {
            strength[(i, j)] = 1.0;
            strength[(j, i)] = 1.0;
        }
        let roc = roc_curve(&strength, &truth).unwrap();
        assert_eq!(roc.auc, Some(1.0));
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));

        let flat = DMatrix::from_element(4, 4, 0.3);
        let roc = roc_curve(&flat, &truth).unwrap();
        assert_eq!(roc.auc, Some(0.5));
        assert_eq!(roc.points, vec![(0.0, 0.0), (1.0, 1.0)]);

        assert_eq!(roc_curve(&flat, &Adjacency::empty(4)).unwrap().auc, None);
    }

    #[test]
    fn corruption_keeps_edge_count() {
        let truth = generate_precision(&spec(30, Topology::Band { bandwidth: 2 })).unwrap();
        let mut rng = stream_rng(5, 2);
        let corrupted = truth.adjacency.corrupt_half(&mut rng);
        assert_eq!(corrupted.num_edges(), truth.adjacency.num_edges());
        let kept = truth.adjacency.edges().iter().filter(|&&(i, j)| corrupted.get(i, j)).count();
        assert_eq!(kept, truth.adjacency.num_edges() - truth.adjacency.num_edges() / 2);
    }

    #[test]
    fn adjacency_rejects_non_binary() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 2.0;
        assert!(Adjacency::from_matrix(&m).is_err());
    }

    #[test]
    fn network_assembly() {
        let summaries: Vec<PosteriorSummary> = (0..3)
            .map(|_| PosteriorSummary::new(vec![0.0, 0.0], vec![1.0, 1.0], 0.0))
            .collect();
        let none = vec![vec![false; 2]; 3];
        let net = assemble_network(&summaries, Some(&none)).unwrap();
        assert!(net.edges.is_empty());
        assert_eq!(net.strength, DMatrix::zeros(3, 3));

        let mut sel = none.clone();
        sel[0][0] = true; // 0 -> 1
        sel[1][0] = true; // 1 -> 0
        let net = assemble_network(&summaries, Some(&sel)).unwrap();
        assert_eq!(net.edges, vec![(0, 1)]);
    }
}
