//! Reference implementations used only by tests. Nothing here calls into
//! `shrinkhs-core`; every value is recomputed from definitions with
//! numerical quadrature, brute force or plain linear algebra.

pub mod data;
pub mod quad;

use nalgebra::{DMatrix, DVector};

/// Ordinary least squares through the normal equations (LU, not Cholesky).
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    xtx.lu().solve(&xty).expect("singular normal equations")
}

/// Gaussian-prior posterior mean `(XᵀX + diag(prec))⁻¹ Xᵀy`.
pub fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, prec: &[f64]) -> DVector<f64> {
    let mut a = x.transpose() * x;
    for (t, p) in prec.iter().enumerate() {
        a[(t, t)] += p;
    }
    a.lu().solve(&(x.transpose() * y)).expect("singular ridge system")
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let d = a[(col, col)];
        assert!(d != 0.0, "singular matrix");
        for j in 0..n {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        a[(i, j)] -= f * a[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut good = 0.0;
    let mut total = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            total += 1.0;
            if si > sj {
                good += 1.0;
            } else if si == sj {
                good += 0.5;
            }
        }
    }
    good / total
}

/// Adaptive-lasso objective `(1/n)‖Xβ̄ − Xγ‖² + λ Σ|γ_t|/|β̄_t|`.
pub fn dss_objective(x: &DMatrix<f64>, beta_bar: &[f64], gamma: &[f64], lambda: f64) -> f64 {
    let diff = DVector::from_iterator(beta_bar.len(), beta_bar.iter().zip(gamma).map(|(b, g)| b - g));
    let r = x * diff;
    let penalty: f64 = gamma.iter().zip(beta_bar).map(|(g, b)| g.abs() / b.abs()).sum();
    r.norm_squared() / x.nrows() as f64 + lambda * penalty
}

/// Two-coefficient adaptive-lasso minimiser by brute force: a 400×400 grid,
/// then repeated 400×400 grids on a shrinking window around the best cell.
pub fn dss_grid_search(x: &DMatrix<f64>, beta_bar: &[f64], lambda: f64) -> [f64; 2] {
    assert_eq!(beta_bar.len(), 2);
    let span = 2.0 * beta_bar.iter().fold(0.0_f64, |m, b| m.max(b.abs())) + 1e-3;
    let mut centre = [0.0, 0.0];
    let mut half = span;
    for _ in 0..6 {
        let mut best = (f64::INFINITY, centre);
        for i in 0..400 {
            for j in 0..400 {
                let g = [
                    centre[0] - half + 2.0 * half * i as f64 / 399.0,
                    centre[1] - half + 2.0 * half * j as f64 / 399.0,
                ];
                // Keep exact zeros reachable on every level.
                let g = [snap(g[0], half), snap(g[1], half)];
                let f = dss_objective(x, beta_bar, &g, lambda);
                if f < best.0 {
                    best = (f, g);
                }
            }
        }
        centre = best.1;
        half *= 0.05;
    }
    centre
}

fn snap(v: f64, half: f64) -> f64 {
    if v.abs() < half / 399.0 {
        0.0
    } else {
        v
    }
}
