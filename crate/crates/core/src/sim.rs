//! Seeded generators for synthetic path data: a time-dependent
//! Ornstein-Uhlenbeck process, fractional Brownian motion, discretised
//! Brownian noise and a rough volatility model.
//!
//! Sample `i` of a run always draws from stream `(seed, kind, i)`, so a
//! batch is reproducible and independent of thread count.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathBatch;
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SimKind {
    /// `dX = (mu t - theta X) dt + sigma dB`, `X_0 ~ N(0, x0_std^2)`,
    /// Euler-Maruyama with step `dt`, recorded every `record_every` time units.
    Ou {
        mu: f64,
        theta: f64,
        sigma: f64,
        x0_std: f64,
        record_every: f64,
    },
    /// Fractional Brownian motion with Hurst parameter `hurst`, one
    /// independent copy per channel.
    Fbm { hurst: f64 },
    /// Brownian motion; with `scale`, values are divided by 3 and clipped
    /// to `[-1, 1]`.
    Bm { scale: bool },
    /// Channels `(log S, log V)` with
    /// `V_t = xi exp(eta B^H_t - eta^2 t^(2H) / 2)` and `dS = sqrt(V) S dZ`.
    Roughvol {
        hurst: f64,
        eta: f64,
        xi_mean: f64,
        xi_std: f64,
        log_s0_std: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(flatten)]
    pub kind: SimKind,
    pub dim: usize,
    pub n_samples: usize,
    /// Number of recorded increments; the series have `n_steps + 1` points.
    pub n_steps: usize,
    /// Simulation step. For `fbm`, `bm` and `roughvol` it is also the
    /// recording interval.
    pub dt: f64,
    pub seed: u64,
}

impl SimSpec {
    /// `mu = 0.01, theta = 0.02, sigma = 0.4`, `dt = 0.1`, recorded at the
    /// integers `0..=63`.
    pub fn ou(n_samples: usize, seed: u64) -> Self {
        Self {
            kind: SimKind::Ou {
                mu: 0.01,
                theta: 0.02,
                sigma: 0.4,
                x0_std: 1.0,
                record_every: 1.0,
            },
            dim: 1,
            n_samples,
            n_steps: 63,
            dt: 0.1,
            seed,
        }
    }

    /// Three independent channels on 50 steps of `[0, 1]`.
    pub fn fbm(hurst: f64, n_samples: usize, seed: u64) -> Self {
        Self {
            kind: SimKind::Fbm { hurst },
            dim: 3,
            n_samples,
            n_steps: 50,
            dt: 1.0 / 50.0,
            seed,
        }
    }

    pub fn bm(dim: usize, n_steps: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            kind: SimKind::Bm { scale: false },
            dim,
            n_samples,
            n_steps,
            dt: 1.0 / n_steps as f64,
            seed,
        }
    }

    /// `H = 0.25, eta = 0.5, xi ~ N(0.1, 0.01^2), log S_0 ~ N(0, 0.05^2)`,
    /// 200 steps of 0.005.
    pub fn roughvol(n_samples: usize, seed: u64) -> Self {
        Self {
            kind: SimKind::Roughvol {
                hurst: 0.25,
                eta: 0.5,
                xi_mean: 0.1,
                xi_std: 0.01,
                log_s0_std: 0.05,
            },
            dim: 2,
            n_samples,
            n_steps: 200,
            dt: 0.005,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_samples == 0 || self.n_steps == 0 || self.dim == 0 {
            return bad("n_samples, n_steps and dim must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        match &self.kind {
            SimKind::Ou {
                mu,
                theta,
                sigma,
                x0_std,
                record_every,
            } => {
                if ![*mu, *theta, *sigma, *x0_std].iter().all(|v| v.is_finite()) || *sigma < 0.0 || *x0_std < 0.0 {
                    return bad("OU parameters must be finite with sigma, x0_std >= 0".into());
                }
                let sub = record_every / self.dt;
                if !(sub >= 1.0 && (sub - sub.round()).abs() < 1e-9) {
                    return bad(format!("record_every = {record_every} is not a multiple of dt = {}", self.dt));
                }
            }
            SimKind::Fbm { hurst } => {
                if !(*hurst > 0.0 && *hurst < 1.0) {
                    return bad(format!("Hurst parameter must lie in (0, 1), got {hurst}"));
                }
                if self.n_steps > 512 {
                    return bad("fBM grids are limited to 512 steps".into());
                }
            }
            SimKind::Bm { .. } => {}
            SimKind::Roughvol {
                hurst,
                eta,
                xi_mean,
                xi_std,
                log_s0_std,
            } => {
                if !(*hurst > 0.0 && *hurst < 1.0) {
                    return bad(format!("Hurst parameter must lie in (0, 1), got {hurst}"));
                }
                if self.dim != 2 {
                    return bad("rough volatility paths have dimension 2".into());
                }
                if *xi_mean <= 0.0 || *xi_std < 0.0 || *log_s0_std < 0.0 || !eta.is_finite() {
                    return bad("rough volatility needs xi_mean > 0 and non-negative deviations".into());
                }
            }
        }
        Ok(())
    }

    /// Recording grid of the simulated series.
    pub fn times(&self) -> Vec<f64> {
        let step = match &self.kind {
            SimKind::Ou { record_every, .. } => *record_every,
            _ => self.dt,
        };
        (0..=self.n_steps).map(|i| i as f64 * step).collect()
    }
}

/// Run any simulator.
pub fn simulate(spec: &SimSpec) -> Result<PathBatch> {
    spec.validate()?;
    match spec.kind {
        SimKind::Ou { .. } => simulate_ou(spec),
        SimKind::Fbm { .. } => simulate_fbm(spec),
        SimKind::Bm { scale } => {
            let times = spec.times();
            let blocks = par_samples(spec, "bm", |rng| bm_values(spec.dim, spec.n_steps, spec.dt, scale, rng));
            PathBatch::from_blocks(&times, blocks, spec.dim)
        }
        SimKind::Roughvol { .. } => simulate_roughvol(spec),
    }
}

fn par_samples<F>(spec: &SimSpec, purpose: &str, f: F) -> Vec<Vec<f64>>
where
    F: Fn(&mut StreamRng) -> Vec<f64> + Sync,
{
    (0..spec.n_samples)
        .into_par_iter()
        .map(|i| f(&mut stream(spec.seed, purpose, i as u64)))
        .collect()
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn simulate_ou(spec: &SimSpec) -> Result<PathBatch> {
    spec.validate()?;
    let SimKind::Ou {
        mu,
        theta,
        sigma,
        x0_std,
        record_every,
    } = spec.kind
    else {
        return Err(Error::InvalidParameter("spec is not an OU spec".into()));
    };
    let (d, dt) = (spec.dim, spec.dt);
    let sub = (record_every / dt).round() as usize;
    let sq = dt.sqrt();
    let blocks = par_samples(spec, "ou", |rng| {
        let mut x: Vec<f64> = (0..d).map(|_| x0_std * normal(rng)).collect();
        let mut out = Vec::with_capacity((spec.n_steps + 1) * d);
        out.extend_from_slice(&x);
        let mut step = 0usize;
        for _ in 0..spec.n_steps {
            for _ in 0..sub {
                let t = step as f64 * dt;
                for v in x.iter_mut() {
                    *v += (mu * t - theta * *v) * dt + sigma * sq * normal(rng);
                }
                step += 1;
            }
            out.extend_from_slice(&x);
        }
        out
    });
    PathBatch::from_blocks(&spec.times(), blocks, d)
}

/// `Cov(B_t, B_s)` of fractional Brownian motion.
pub fn fbm_covariance(hurst: f64, t: f64, s: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2))
}

/// Lower Cholesky factor of the fBM covariance on `times[1..]`, with
/// diagonal jitter added only when the plain factorisation fails.
fn fbm_factor(hurst: f64, times: &[f64]) -> Result<DMatrix<f64>> {
    let t = &times[1..];
    let n = t.len();
    let cov = DMatrix::from_fn(n, n, |i, j| fbm_covariance(hurst, t[i], t[j]));
    let scale = cov.diagonal().max();
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(c) {
            return Ok(ch.l());
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 10.0 };
    }
    Err(Error::Numerical(format!(
        "fBM covariance with H = {hurst} is not positive definite even with jitter {jitter:e}"
    )))
}

pub fn simulate_fbm(spec: &SimSpec) -> Result<PathBatch> {
    spec.validate()?;
    let SimKind::Fbm { hurst } = spec.kind else {
        return Err(Error::InvalidParameter("spec is not an fBM spec".into()));
    };
    let times = spec.times();
    let l = fbm_factor(hurst, &times)?;
    let (n, d) = (spec.n_steps, spec.dim);
    let blocks = par_samples(spec, "fbm", |rng| {
        let mut out = vec![0.0; (n + 1) * d];
        for c in 0..d {
            let z = DVector::from_fn(n, |_, _| normal(rng));
            let path = &l * z;
            for (i, v) in path.iter().enumerate() {
                out[(i + 1) * d + c] = *v;
            }
        }
        out
    });
    PathBatch::from_blocks(&times, blocks, d)
}

fn bm_values(e: usize, n_t: usize, dt: f64, scale: bool, rng: &mut StreamRng) -> Vec<f64> {
    let sq = dt.sqrt();
    let mut out = vec![0.0; (n_t + 1) * e];
    for i in 1..=n_t {
        for c in 0..e {
            out[i * e + c] = out[(i - 1) * e + c] + sq * normal(rng);
        }
    }
    if scale {
        for v in out.iter_mut() {
            *v = (*v / 3.0).clamp(-1.0, 1.0);
        }
    }
    out
}

/// `n` Brownian paths of dimension `e` on the grid `i / n_t`, `i = 0..=n_t`.
pub fn simulate_bm_noise(e: usize, n_t: usize, n: usize, seed: u64, scale: bool) -> Result<PathBatch> {
    let mut spec = SimSpec::bm(e, n_t, n, seed);
    spec.kind = SimKind::Bm { scale };
    simulate(&spec)
}

/// Weights `w_k = (1/dt) int_{(k-1)dt}^{k dt} sqrt(2H) r^(H - 1/2) dr`.
fn volterra_weights(hurst: f64, dt: f64, n: usize) -> Vec<f64> {
    let a = hurst + 0.5;
    let c = (2.0 * hurst).sqrt() / a * dt.powf(hurst - 0.5);
    (0..=n)
        .map(|k| if k == 0 { 0.0 } else { c * ((k as f64).powf(a) - ((k - 1) as f64).powf(a)) })
        .collect()
}

pub fn simulate_roughvol(spec: &SimSpec) -> Result<PathBatch> {
    spec.validate()?;
    let SimKind::Roughvol {
        hurst,
        eta,
        xi_mean,
        xi_std,
        log_s0_std,
    } = spec.kind
    else {
        return Err(Error::InvalidParameter("spec is not a rough volatility spec".into()));
    };
    let (n, dt) = (spec.n_steps, spec.dt);
    let w = volterra_weights(hurst, dt, n);
    let sq = dt.sqrt();
    let blocks = par_samples(spec, "roughvol", |rng| {
        let xi = loop {
            let v = xi_mean + xi_std * normal(rng);
            if v > 0.0 {
                break v;
            }
        };
        let mut log_s = log_s0_std * normal(rng);
        let dw: Vec<f64> = (0..n).map(|_| sq * normal(rng)).collect();
        let dz: Vec<f64> = (0..n).map(|_| sq * normal(rng)).collect();
        let mut out = Vec::with_capacity(2 * (n + 1));
        for i in 0..=n {
            let t = i as f64 * dt;
            let bh: f64 = (0..i).map(|j| w[i - j] * dw[j]).sum();
            let log_v = xi.ln() + eta * bh - 0.5 * eta * eta * t.powf(2.0 * hurst);
            out.push(log_s);
            out.push(log_v);
            if i < n {
                let v = log_v.exp();
                log_s += -0.5 * v * dt + v.sqrt() * dz[i];
            }
        }
        out
    });
    PathBatch::from_blocks(&spec.times(), blocks, 2)
}

/// The Volterra process `B^H` alone, one channel, for checking the kernel.
pub fn simulate_volterra(hurst: f64, n_steps: usize, dt: f64, n: usize, seed: u64) -> Result<PathBatch> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidParameter(format!("Hurst parameter must lie in (0, 1), got {hurst}")));
    }
    let w = volterra_weights(hurst, dt, n_steps);
    let sq = dt.sqrt();
    let blocks: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream(seed, "volterra", s as u64);
            let dw: Vec<f64> = (0..n_steps).map(|_| sq * normal(&mut rng)).collect();
            (0..=n_steps).map(|i| (0..i).map(|j| w[i - j] * dw[j]).sum()).collect()
        })
        .collect();
    let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    PathBatch::from_blocks(&times, blocks, 1)
}

/// Values of channel `c` at grid index `i` across the batch.
pub fn marginal(batch: &PathBatch, i: usize, c: usize) -> Vec<f64> {
    batch.items().iter().map(|s| s.row(i)[c]).collect()
}

/// Sample mean and unbiased variance.
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}
