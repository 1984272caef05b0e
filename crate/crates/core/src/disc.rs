//! Training EPCFD parameters by gradient ascent, so the distance separates
//! two empirical distributions as well as possible.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{anti_hermitian_defect, ScalarLaw};
use crate::optim::{adam_step, decayed_lr, AdamConfig, OptimState};
use crate::paths::PathBatch;
use crate::pcfd::{epcfd_ceiling, epcfd_grad, EpcfdParams, Lift};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub m: usize,
    pub k: usize,
    pub lr: f64,
    /// Multiply the learning rate by `decay` every `decay_every` iterations.
    pub decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub lift: Lift,
    /// Law of the entries of the initial maps.
    pub init: ScalarLaw,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            batch_size: 64,
            m: 10,
            k: 8,
            lr: 0.005,
            decay: 1.0,
            decay_every: 500,
            seed: 0,
            lift: Lift::default(),
            init: ScalarLaw::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscOutcome {
    pub params: EpcfdParams,
    /// EPCFD^2 on each iteration's minibatch, before its update.
    pub trace: Vec<f64>,
}

/// Sample `min(size, n)` distinct indices.
pub(crate) fn minibatch(n: usize, size: usize, seed: u64, purpose: &str, iter: u64) -> Vec<usize> {
    let mut rng = stream(seed, purpose, iter);
    let mut idx = sample(&mut rng, n, size.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Train freshly sampled parameters on minibatches resampled each
/// iteration from the fixed pools `x` and `y`.
pub fn train_discriminator(x: &PathBatch, y: &PathBatch, cfg: &DiscConfig) -> Result<DiscOutcome> {
    let d = cfg.lift.lifted_dim(x.dim());
    let init = EpcfdParams::sample_with(cfg.m, d, cfg.k, cfg.seed, &cfg.init, cfg.lift)?;
    train_from(init, x, y, cfg)
}

/// As [`train_discriminator`], starting from `params`.
pub fn train_from(mut params: EpcfdParams, x: &PathBatch, y: &PathBatch, cfg: &DiscConfig) -> Result<DiscOutcome> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be positive".into()));
    }
    let ceiling = epcfd_ceiling(params.m()) + 1e-9;
    let mut state = OptimState::new(params.flat_len(), AdamConfig::with_lr(cfg.lr));
    let mut trace = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        state.config.lr = decayed_lr(cfg.lr, cfg.decay, cfg.decay_every, it);
        let bx = x.select(&minibatch(x.len(), cfg.batch_size, cfg.seed, "disc-x", it as u64))?;
        let by = y.select(&minibatch(y.len(), cfg.batch_size, cfg.seed, "disc-y", it as u64))?;
        let g = epcfd_grad(&bx, &by, &params)?;
        if !(g.value <= ceiling) {
            return Err(Error::Numerical(format!(
                "EPCFD^2 = {} exceeds its bound {ceiling} at iteration {it}",
                g.value
            )));
        }
        trace.push(g.value);
        adam_step(&mut params, &g.maps, &mut state, true)?;
        debug_assert!(params
            .maps
            .iter()
            .all(|mp| mp.blocks().iter().all(|b| anti_hermitian_defect(b.matrix()) < 1e-12)));
    }
    Ok(DiscOutcome { params, trace })
}
