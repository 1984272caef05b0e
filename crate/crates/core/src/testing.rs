//! Two-sample permutation tests with the EPCFD statistic, and the power
//! study of Brownian motion against fractional Brownian motion.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disc::{train_discriminator, DiscConfig};
use crate::error::{Error, Result};
use crate::lie::{CMatrix, ScalarLaw};
use crate::paths::PathBatch;
use crate::pcfd::{epcfd_from_features, features, EpcfdParams, Lift};
use crate::rng::{child_seed, stream};
use crate::sim::{simulate, SimSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub permutation_values: Vec<f64>,
    /// `(1 + #{perm >= statistic}) / (1 + n_permutations)`.
    pub p_value: f64,
    pub n_permutations: usize,
    pub alpha: f64,
}

impl TestResult {
    pub fn rejects(&self) -> bool {
        self.p_value <= self.alpha
    }
}

/// Permutation test on features computed once for the pooled sample.
///
/// `params` must have been trained on data disjoint from `x` and `y`;
/// that is the caller's responsibility.
pub fn permutation_test(
    x: &PathBatch,
    y: &PathBatch,
    params: &EpcfdParams,
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let fx = features(x, params)?;
    let fy = features(y, params)?;
    test_features(&fx, &fy, n_perm, alpha, seed)
}

/// Permutation test from per-map feature lists (`f[j][i]`).
pub fn test_features(
    fx: &[Vec<CMatrix>],
    fy: &[Vec<CMatrix>],
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<TestResult> {
    if n_perm < 19 {
        return Err(Error::InvalidParameter(format!("n_perm = {n_perm}, need at least 19")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} is not in (0, 1)")));
    }
    if fx.len() != fy.len() || fx.is_empty() {
        return Err(Error::ShapeMismatch("feature sets use different maps".into()));
    }
    let (nx, ny) = (fx[0].len(), fy[0].len());
    if nx == 0 || ny == 0 {
        return Err(Error::EmptyBatch);
    }
    let pooled: Vec<Vec<CMatrix>> = fx
        .iter()
        .zip(fy)
        .map(|(a, b)| a.iter().chain(b).cloned().collect())
        .collect();
    let ix: Vec<usize> = (0..nx).collect();
    let iy: Vec<usize> = (nx..nx + ny).collect();
    let statistic = epcfd_from_features(&pooled, &ix, &pooled, &iy);
    let permutation_values: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut idx: Vec<usize> = (0..nx + ny).collect();
            idx.shuffle(&mut stream(seed, "permutation", p as u64));
            let (a, b) = idx.split_at(nx);
            epcfd_from_features(&pooled, a, &pooled, b)
        })
        .collect();
    let exceed = permutation_values.iter().filter(|&&v| v >= statistic).count();
    Ok(TestResult {
        statistic,
        p_value: (1 + exceed) as f64 / (1 + n_perm) as f64,
        permutation_values,
        n_permutations: n_perm,
        alpha,
    })
}

/// Approximate characteristic-function baseline on flattened series: the
/// one-dimensional unitary features `exp(i <t_j, vec(x)>)` with standard
/// normal frequencies `t_j` over all time-channel coordinates.
pub fn flat_cf_features(batch: &PathBatch, k: usize, seed: u64) -> Result<Vec<Vec<CMatrix>>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let len = batch.items()[0].values().len();
    (0..k)
        .map(|j| {
            let mut rng = stream(seed, "flat-cf", j as u64);
            let t: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            Ok(batch
                .items()
                .iter()
                .map(|s| {
                    let phase: f64 = s.values().iter().zip(&t).map(|(a, b)| a * b).sum();
                    CMatrix::from_element(1, 1, num_complex::Complex64::from_polar(1.0, phase))
                })
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerConfig {
    /// Paths per side, for both training and each test.
    pub paths: usize,
    pub steps: usize,
    pub dim: usize,
    /// Independent tests per Hurst value.
    pub reps: usize,
    pub n_perm: usize,
    pub alpha: f64,
    pub train_iters: usize,
    pub m: usize,
    pub k: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lift: Lift,
    /// Law of the entries of the initial maps.
    pub init: ScalarLaw,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            paths: 200,
            steps: 50,
            dim: 3,
            reps: 100,
            n_perm: 500,
            alpha: 0.05,
            train_iters: 100,
            m: 10,
            k: 8,
            lr: 0.005,
            batch_size: 64,
            lift: Lift::default(),
            init: ScalarLaw::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub h: f64,
    /// Rejection rate of BM against fBM(h).
    pub power: f64,
    /// Rejection rate at h = 0.5, where both samples are Brownian.
    pub type1: f64,
}

fn fbm(h: f64, cfg: &PowerConfig, n: usize, seed: u64) -> Result<PathBatch> {
    simulate(&SimSpec {
        dim: cfg.dim,
        n_steps: cfg.steps,
        ..SimSpec::fbm(h, n, seed)
    })
}

/// Rejection rate of BM against fBM(`h`) over `cfg.reps` tests, with
/// parameters trained on a separate sample of each law.
pub fn rejection_rate(h: f64, cfg: &PowerConfig) -> Result<f64> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidParameter(format!("Hurst value {h} is not in (0, 1)")));
    }
    let key = (h * 1e6).round() as u64;
    let root = child_seed(cfg.seed, "power", key);
    let x = fbm(0.5, cfg, cfg.paths, child_seed(root, "train-bm", 0))?;
    let y = fbm(h, cfg, cfg.paths, child_seed(root, "train-fbm", 0))?;
    let disc = DiscConfig {
        iters: cfg.train_iters,
        batch_size: cfg.batch_size,
        m: cfg.m,
        k: cfg.k,
        lr: cfg.lr,
        seed: child_seed(root, "disc", 0),
        lift: cfg.lift,
        init: cfg.init,
        ..DiscConfig::default()
    };
    let params = train_discriminator(&x, &y, &disc)?.params;
    let mut rejected = 0;
    for r in 0..cfg.reps as u64 {
        let x = fbm(0.5, cfg, cfg.paths, child_seed(root, "test-bm", r))?;
        let y = fbm(h, cfg, cfg.paths, child_seed(root, "test-fbm", r))?;
        let t = permutation_test(&x, &y, &params, cfg.n_perm, cfg.alpha, child_seed(root, "perm", r))?;
        rejected += usize::from(t.rejects());
    }
    Ok(rejected as f64 / cfg.reps as f64)
}

/// Power for each `h`, with the Type-I error estimated once at h = 0.5
/// and repeated on every row.
pub fn power_sweep(h_values: &[f64], cfg: &PowerConfig) -> Result<Vec<PowerRow>> {
    if cfg.reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let mut rates: Vec<(f64, f64)> = Vec::with_capacity(h_values.len() + 1);
    for &h in h_values {
        rates.push((h, rejection_rate(h, cfg)?));
    }
    let type1 = match rates.iter().find(|(h, _)| (*h - 0.5).abs() < 1e-12) {
        Some(&(_, r)) => r,
        None => rejection_rate(0.5, cfg)?,
    };
    Ok(rates
        .into_iter()
        .map(|(h, power)| PowerRow { h, power, type1 })
        .collect())
}
