//! Distribution-level evaluation: truncated signatures, Sig-MMD with an
//! RBF kernel on signature features, and marginal diagnostics.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{increments, lift, PathBatch, TimeSeries};
use crate::rng::stream;
use crate::testing::TestResult;

pub const MAX_DEPTH: usize = 6;

/// Levels `1..=depth` of a truncated signature, each level row-major with
/// `dim^k` entries, concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureFeature {
    pub depth: usize,
    pub dim: usize,
    pub coefficients: Vec<f64>,
}

impl SignatureFeature {
    fn offset(&self, k: usize) -> usize {
        (1..k).map(|j| self.dim.pow(j as u32)).sum()
    }

    /// Level `k` (1-based).
    pub fn level(&self, k: usize) -> &[f64] {
        let start = self.offset(k);
        &self.coefficients[start..start + self.dim.pow(k as u32)]
    }

    fn levels(&self) -> Vec<Vec<f64>> {
        (1..=self.depth).map(|k| self.level(k).to_vec()).collect()
    }

    fn from_levels(dim: usize, levels: Vec<Vec<f64>>) -> Self {
        Self {
            depth: levels.len(),
            dim,
            coefficients: levels.concat(),
        }
    }
}

fn check_depth(depth: usize) -> Result<()> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "signature depth {depth} is outside 1..={MAX_DEPTH}"
        )));
    }
    Ok(())
}

fn outer(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        out.extend(b.iter().map(|y| x * y));
    }
    out
}

/// Levels of the tensor exponential of one increment: `delta^{(x)k} / k!`.
fn segment_levels(delta: &[f64], depth: usize) -> Vec<Vec<f64>> {
    let mut levels = Vec::with_capacity(depth);
    let mut cur = delta.to_vec();
    for k in 1..=depth {
        if k > 1 {
            cur = outer(&cur, delta).into_iter().map(|v| v / k as f64).collect();
        }
        levels.push(cur.clone());
    }
    levels
}

/// Truncated tensor product of two group-like elements given by their
/// levels `1..=depth` (level 0 is 1).
fn chen_levels(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let depth = a.len();
    (1..=depth)
        .map(|k| {
            let mut out = a[k - 1].clone();
            for (o, v) in out.iter_mut().zip(&b[k - 1]) {
                *o += v;
            }
            for i in 1..k {
                for (o, v) in out.iter_mut().zip(outer(&a[i - 1], &b[k - i - 1])) {
                    *o += v;
                }
            }
            out
        })
        .collect()
}

/// Chen's rule: the signature of a concatenation.
pub fn chen(a: &SignatureFeature, b: &SignatureFeature) -> Result<SignatureFeature> {
    if a.depth != b.depth || a.dim != b.dim {
        return Err(Error::ShapeMismatch("signatures differ in depth or dimension".into()));
    }
    Ok(SignatureFeature::from_levels(a.dim, chen_levels(&a.levels(), &b.levels())))
}

/// Signature of the piecewise-linear path through the points of `x`, as
/// given.
pub fn path_signature(x: &TimeSeries, depth: usize) -> Result<SignatureFeature> {
    check_depth(depth)?;
    let d = x.dim();
    let incs = increments(x);
    let mut acc: Vec<Vec<f64>> = (1..=depth).map(|k| vec![0.0; d.pow(k as u32)]).collect();
    for delta in incs.chunks_exact(d) {
        acc = chen_levels(&acc, &segment_levels(delta, depth));
    }
    Ok(SignatureFeature::from_levels(d, acc))
}

/// Signature of the time-augmented, basepointed path.
pub fn signature(x: &TimeSeries, depth: usize) -> Result<SignatureFeature> {
    path_signature(&lift(x, true, true), depth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigMmd {
    /// Unbiased estimate of MMD^2; it can be slightly negative.
    pub value: f64,
    pub bandwidth: f64,
    /// All features coincide, so no bandwidth can be chosen; `value` is 0.
    pub degenerate: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn sig_features(batch: &PathBatch, depth: usize) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    batch
        .items()
        .par_iter()
        .map(|x| signature(x, depth).map(|s| s.coefficients))
        .collect()
}

/// Median of the pairwise distances of the pooled features.
fn median_bandwidth(feats: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = (0..feats.len())
        .flat_map(|i| (i + 1..feats.len()).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(&feats[i], &feats[j]).sqrt())
        .collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    }
}

struct Gram {
    k: Vec<f64>,
    n: usize,
}

impl Gram {
    fn new(feats: &[Vec<f64>], sigma: f64) -> Self {
        let n = feats.len();
        let s2 = 2.0 * sigma * sigma;
        let k = (0..n * n)
            .into_par_iter()
            .map(|ij| (-sq_dist(&feats[ij / n], &feats[ij % n]) / s2).exp())
            .collect();
        Self { k, n }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n + j]
    }

    fn mmd(&self, a: &[usize], b: &[usize]) -> f64 {
        let within = |s: &[usize]| {
            let mut t = 0.0;
            for (p, &i) in s.iter().enumerate() {
                for (q, &j) in s.iter().enumerate() {
                    if p != q {
                        t += self.at(i, j);
                    }
                }
            }
            t / (s.len() * (s.len() - 1)) as f64
        };
        let mut cross = 0.0;
        for &i in a {
            for &j in b {
                cross += self.at(i, j);
            }
        }
        within(a) + within(b) - 2.0 * cross / (a.len() * b.len()) as f64
    }
}

fn prepare(x: &PathBatch, y: &PathBatch, depth: usize, bandwidth: Option<f64>) -> Result<(Vec<Vec<f64>>, f64)> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidParameter("Sig-MMD needs at least two paths per side".into()));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    let mut feats = sig_features(x, depth)?;
    feats.extend(sig_features(y, depth)?);
    let sigma = match bandwidth {
        Some(s) if !(s > 0.0 && s.is_finite()) => {
            return Err(Error::InvalidParameter(format!("bandwidth {s} must be positive")));
        }
        Some(s) => s,
        None => median_bandwidth(&feats),
    };
    Ok((feats, sigma))
}

/// Unbiased MMD^2 with kernel `exp(-|s - s'|^2 / (2 sigma^2))` on
/// signature features; the median heuristic picks `sigma` when
/// `bandwidth` is `None`.
pub fn sig_mmd(x: &PathBatch, y: &PathBatch, depth: usize, bandwidth: Option<f64>) -> Result<SigMmd> {
    let (feats, sigma) = prepare(x, y, depth, bandwidth)?;
    if sigma == 0.0 {
        return Ok(SigMmd {
            value: 0.0,
            bandwidth: 0.0,
            degenerate: true,
        });
    }
    let gram = Gram::new(&feats, sigma);
    let a: Vec<usize> = (0..x.len()).collect();
    let b: Vec<usize> = (x.len()..feats.len()).collect();
    Ok(SigMmd {
        value: gram.mmd(&a, &b),
        bandwidth: sigma,
        degenerate: false,
    })
}

/// Permutation test with the Sig-MMD statistic. The bandwidth is fixed
/// from the pooled sample, so it is the same for every relabelling.
pub fn sig_mmd_test(
    x: &PathBatch,
    y: &PathBatch,
    depth: usize,
    bandwidth: Option<f64>,
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<TestResult> {
    if n_perm < 19 {
        return Err(Error::InvalidParameter(format!("n_perm = {n_perm}, need at least 19")));
    }
    let (feats, sigma) = prepare(x, y, depth, bandwidth)?;
    let nx = x.len();
    let n = feats.len();
    if sigma == 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            permutation_values: vec![0.0; n_perm],
            p_value: 1.0,
            n_permutations: n_perm,
            alpha,
        });
    }
    let gram = Gram::new(&feats, sigma);
    let a: Vec<usize> = (0..nx).collect();
    let b: Vec<usize> = (nx..n).collect();
    let statistic = gram.mmd(&a, &b);
    let permutation_values: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut stream(seed, "sig-permutation", p as u64));
            let (a, b) = idx.split_at(nx);
            gram.mmd(a, b)
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

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic p-value of the two-sample KS statistic, using the
/// Kolmogorov distribution with the usual small-sample correction.
pub fn ks_p_value(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub t: f64,
    pub channel: usize,
    pub mean_x: f64,
    pub mean_y: f64,
    pub std_x: f64,
    pub std_y: f64,
    pub ks: f64,
    pub ks_p_value: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

fn grid_index(times: &[f64], t: f64) -> Result<usize> {
    times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()))
        .ok_or_else(|| Error::OutOfRange(format!("time {t} is not on the series grid")))
}

/// Per time point and channel: sample means, standard deviations and the
/// two-sample KS statistic of the marginals of `x` and `y`.
pub fn marginal_report(x: &PathBatch, y: &PathBatch, t_list: &[f64]) -> Result<Vec<MarginalRow>> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    let mut rows = Vec::with_capacity(t_list.len() * x.dim());
    for &t in t_list {
        let (ix, iy) = (grid_index(x.times(), t)?, grid_index(y.times(), t)?);
        for c in 0..x.dim() {
            let a: Vec<f64> = x.items().iter().map(|s| s.row(ix)[c]).collect();
            let b: Vec<f64> = y.items().iter().map(|s| s.row(iy)[c]).collect();
            let (mean_x, std_x) = mean_std(&a);
            let (mean_y, std_y) = mean_std(&b);
            let ks = ks_statistic(&a, &b);
            rows.push(MarginalRow {
                t,
                channel: c,
                mean_x,
                mean_y,
                std_x,
                std_y,
                ks,
                ks_p_value: ks_p_value(ks, a.len(), b.len()),
            });
        }
    }
    Ok(rows)
}
