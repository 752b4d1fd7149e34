//! Seeded synthetic regression problems.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, s: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, s, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// A linear-model draw with known coefficients.
#[derive(Debug, Clone)]
pub struct Problem {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub groups: Vec<usize>,
}

/// `y = Xβ + ε` with standard normal design and unit noise.
pub fn linear(rng: &mut ChaCha8Rng, n: usize, beta: &[f64], noise_sd: f64) -> Problem {
    let x = gaussian_matrix(rng, n, beta.len());
    let beta = DVector::from_column_slice(beta);
    let y = &x * &beta + gaussian_vector(rng, n) * noise_sd;
    Problem {
        y,
        x,
        groups: vec![1; beta.len()],
        beta,
    }
}

/// `s` coefficients of which the first two are `±signal`, the rest zero.
pub fn two_signal(rng: &mut ChaCha8Rng, n: usize, s: usize, signal: f64) -> Problem {
    let mut beta = vec![0.0; s];
    beta[0] = signal;
    beta[1] = -signal;
    linear(rng, n, &beta, 1.0)
}

/// The VB-versus-sampler suite: `count` problems with `n = 30`, `s = 10`
/// and coefficients `(1.5, −1, 0, …, 0)`.
pub fn comparison_suite(seed: u64, count: usize) -> Vec<Problem> {
    let mut r = rng(seed);
    let mut beta = vec![0.0; 10];
    beta[0] = 1.5;
    beta[1] = -1.0;
    (0..count).map(|_| linear(&mut r, 30, &beta, 1.0)).collect()
}

/// A random problem for property checks: `n ∈ 5..=50`, `s ∈ 1..=60`,
/// one or two groups, sparse heavy-ish coefficients and a random noise level.
pub fn random_problem(rng: &mut ChaCha8Rng) -> Problem {
    let n = rng.random_range(5..=50);
    let s = rng.random_range(1..=60);
    let two_groups = rng.random_bool(0.5);
    let beta: Vec<f64> = (0..s)
        .map(|_| {
            if rng.random_bool(0.2) {
                rng.sample::<f64, _>(StandardNormal) * 2.0
            } else {
                0.0
            }
        })
        .collect();
    let noise = rng.random_range(0.2..2.0);
    let mut p = linear(rng, n, &beta, noise);
    if two_groups {
        p.groups = (0..s).map(|_| rng.random_range(1..=2)).collect();
    }
    p
}

/// Exhaustive best pair of columns by residual sum of squares.
pub fn best_pair(x: &DMatrix<f64>, y: &DVector<f64>) -> [usize; 2] {
    let mut best = (f64::INFINITY, [0, 1]);
    for i in 0..x.ncols() {
        for j in i + 1..x.ncols() {
            let sub = x.select_columns(&[i, j]);
            let rss = (y - &sub * crate::ols(&sub, y)).norm_squared();
            if rss < best.0 {
                best = (rss, [i, j]);
            }
        }
    }
    best.1
}
