//! PCF-GAN training: the basic min-max game between a recurrent generator
//! and EPCFD parameters, and the autoencoder variant in which an embedder
//! `F` maps series back to the noise space and serves as the critic.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::disc::minibatch;
use crate::error::{Error, Result};
use crate::io::MinMax;
use crate::lie::{anti_hermitian_defect, CMatrix, ScalarLaw};
use crate::nets::checkpoint::write_atomic;
use crate::nets::rnn::{batch_of, step_grads, steps_of};
use crate::nets::{Mat, NetConfig, NodeId, SeqNetParams, Tape};
use crate::optim::{adam_step, decayed_lr, AdamConfig, OptimState};
use crate::paths::PathBatch;
use crate::pcfd::{epcfd_ceiling, epcfd_grad, epcfd_sq, EpcfdParams, Lift};
use crate::rng::child_seed;
use crate::sim::simulate_bm_noise;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    Basic,
    Autoencoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub mode: GanMode,
    /// Weight of the recovery loss in the embedder objective.
    pub lambda1: f64,
    /// Weight of the regularisation loss in the embedder objective.
    pub lambda2: f64,
    /// Critic iterations per generator iteration.
    pub n_critic: usize,
    /// Generator iterations.
    pub iters: usize,
    pub batch_size: usize,
    pub lr_net: f64,
    pub lr_map: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub m: usize,
    pub k: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Noise dimension `e`.
    pub noise_dim: usize,
    /// Divide the noise by 3 and clip it to `[-1, 1]`.
    pub noise_scale: bool,
    /// Lift used by every EPCFD in the game.
    pub lift: Lift,
    /// Law of the entries of the initial maps.
    pub map_init: ScalarLaw,
    /// Average the generator weights over this many final iterations.
    pub average_window: usize,
    /// Train on per-channel min-max normalised data; generated and
    /// reconstructed series are mapped back to data units.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            mode: GanMode::Autoencoder,
            lambda1: 50.0,
            lambda2: 1.0,
            n_critic: 2,
            iters: 2000,
            batch_size: 64,
            lr_net: 0.001,
            lr_map: 0.005,
            decay: 0.97,
            decay_every: 500,
            m: 8,
            k: 6,
            hidden: 16,
            layers: 1,
            noise_dim: 2,
            noise_scale: true,
            lift: Lift {
                add_time: true,
                anchor: true,
            },
            map_init: ScalarLaw::default(),
            average_window: 0,
            normalize: true,
            seed: 0,
        }
    }
}

impl GanConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be non-negative");
        }
        if self.n_critic == 0 || self.batch_size == 0 || self.noise_dim == 0 {
            return bad("n_critic, batch_size and noise_dim must be positive");
        }
        if self.average_window > self.iters {
            return bad("average_window exceeds the iteration budget");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub generator: Vec<f64>,
    pub recovery: Vec<f64>,
    pub regularization: Vec<f64>,
}

/// Which parameter set an update touched, in the order they happen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    Maps,
    MapsReg,
    Embedder,
    Generator,
}

#[derive(Debug, Clone)]
pub struct GanState {
    pub config: GanConfig,
    /// Grid of the data series.
    pub times: Vec<f64>,
    pub generator: SeqNetParams,
    pub embedder: Option<SeqNetParams>,
    pub maps: EpcfdParams,
    pub maps_reg: Option<EpcfdParams>,
    pub opt_generator: OptimState,
    pub opt_embedder: Option<OptimState>,
    pub opt_maps: OptimState,
    pub opt_maps_reg: Option<OptimState>,
    pub traces: Traces,
    /// Cesaro mean of the generator over the final window, once complete.
    pub averaged: Option<SeqNetParams>,
    /// Data normalisation; the networks and losses work in its units.
    pub scaler: Option<MinMax>,
    pub iteration: usize,
}

/// A loss value and the gradients of that loss (not of its negation) for
/// the parameter sets it depends on.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub value: f64,
    pub generator: Option<Vec<f64>>,
    pub embedder: Option<Vec<f64>>,
    pub maps: Option<Vec<Vec<CMatrix>>>,
}

/// Grid `i / n`, `i = 1..=n`, on which noise and embeddings live.
pub fn noise_times(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

impl GanState {
    pub fn init(config: GanConfig, data_dim: usize, times: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if times.len() < 2 {
            return Err(Error::InvalidParameter("data series need at least two points".into()));
        }
        let c = &config;
        let seed = c.seed;
        let net = |input, output| NetConfig {
            layers: c.layers,
            ..NetConfig::new(input, c.hidden, output)
        };
        let generator = SeqNetParams::init(net(c.noise_dim, data_dim), child_seed(seed, "generator", 0))?;
        let maps = |dim: usize, purpose: &str| {
            EpcfdParams::sample_with(c.m, c.lift.lifted_dim(dim), c.k, child_seed(seed, purpose, 0), &c.map_init, c.lift)
        };
        let adam_net = AdamConfig::with_lr(c.lr_net);
        let adam_map = AdamConfig::with_lr(c.lr_map);
        let (embedder, maps, maps_reg) = match c.mode {
            GanMode::Basic => (None, maps(data_dim, "maps")?, None),
            GanMode::Autoencoder => (
                Some(SeqNetParams::init(net(data_dim, c.noise_dim), child_seed(seed, "embedder", 0))?),
                maps(c.noise_dim, "maps")?,
                Some(maps(c.noise_dim, "maps-reg")?),
            ),
        };
        Ok(Self {
            opt_generator: OptimState::new(generator.n_params(), adam_net),
            opt_embedder: embedder.as_ref().map(|e| OptimState::new(e.n_params(), adam_net)),
            opt_maps: OptimState::new(maps.flat_len(), adam_map),
            opt_maps_reg: maps_reg.as_ref().map(|p| OptimState::new(p.flat_len(), adam_map)),
            config,
            times,
            generator,
            embedder,
            maps,
            maps_reg,
            traces: Traces::default(),
            averaged: None,
            scaler: None,
            iteration: 0,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.generator.config.output
    }

    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    /// Fresh noise: Brownian paths on `[0, 1]` with one step per data
    /// point, dropping the fixed starting point.
    pub fn sample_noise(&self, n: usize, seed: u64) -> Result<PathBatch> {
        let c = &self.config;
        let raw = simulate_bm_noise(c.noise_dim, self.n_points(), n, seed, c.noise_scale)?;
        let grid = noise_times(self.n_points());
        raw.map(|s| {
            let e = s.dim();
            crate::paths::TimeSeries::from_flat(grid.clone(), s.values()[e..].to_vec(), e)
        })
    }

    /// The generator used for sampling: the weight average when one exists.
    pub fn sampling_generator(&self) -> &SeqNetParams {
        self.averaged.as_ref().unwrap_or(&self.generator)
    }

    /// Data in model units.
    pub fn to_model(&self, x: &PathBatch) -> Result<PathBatch> {
        match &self.scaler {
            Some(s) => s.apply(x),
            None => Ok(x.clone()),
        }
    }

    /// Model output in data units.
    pub fn to_data(&self, x: &PathBatch) -> Result<PathBatch> {
        match &self.scaler {
            Some(s) => s.invert(x),
            None => Ok(x.clone()),
        }
    }

    /// `G(z)` in data units.
    pub fn generate_from(&self, z: &PathBatch) -> Result<PathBatch> {
        self.to_data(&self.sampling_generator().forward(z, &self.times)?)
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<PathBatch> {
        self.generate_from(&self.sample_noise(n, seed)?)
    }

    fn embedder(&self) -> Result<&SeqNetParams> {
        self.embedder
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("the basic game has no embedder".into()))
    }

    fn maps_reg(&self) -> Result<&EpcfdParams> {
        self.maps_reg
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("the basic game has no regularisation maps".into()))
    }

    /// `F(x)` on the noise grid, for `x` in data units.
    pub fn embed(&self, x: &PathBatch) -> Result<PathBatch> {
        self.embedder()?.forward(&self.to_model(x)?, &noise_times(self.n_points()))
    }

    /// `G(F(x))` in data units.
    pub fn reconstruct(&self, x: &PathBatch) -> Result<PathBatch> {
        self.check_data(x)?;
        let z = self.embed(x)?;
        self.to_data(&self.sampling_generator().forward(&z, x.times())?)
    }

    /// Fit the normalisation to `data` when the config asks for one.
    pub fn fit_scaler(&mut self, data: &PathBatch) {
        if self.config.normalize {
            self.scaler = Some(MinMax::fit(data));
        }
    }

    fn check_data(&self, x: &PathBatch) -> Result<()> {
        if x.dim() != self.data_dim() || x.times().len() != self.n_points() {
            return Err(Error::ShapeMismatch(format!(
                "expected series of {} points and dimension {}, got {} and {}",
                self.n_points(),
                self.data_dim(),
                x.times().len(),
                x.dim()
            )));
        }
        Ok(())
    }

    fn check_noise(&self, z: &PathBatch) -> Result<()> {
        if z.dim() != self.config.noise_dim || z.times().len() != self.n_points() {
            return Err(Error::ShapeMismatch(format!(
                "expected noise of {} points and dimension {}, got {} and {}",
                self.n_points(),
                self.config.noise_dim,
                z.times().len(),
                z.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    config: GanConfig,
    times: Vec<f64>,
    data_dim: usize,
    iteration: usize,
    scaler: Option<MinMax>,
}

#[derive(Serialize, Deserialize)]
struct OptimFile {
    generator: OptimState,
    embedder: Option<OptimState>,
    maps: OptimState,
    maps_reg: Option<OptimState>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

impl GanState {
    /// Write the state into `dir`: `state.json`, network checkpoints,
    /// map JSON files, optimiser moments and `traces.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(
            &dir.join("state.json"),
            &StateFile {
                config: self.config.clone(),
                times: self.times.clone(),
                data_dim: self.data_dim(),
                iteration: self.iteration,
                scaler: self.scaler.clone(),
            },
        )?;
        let extra = serde_json::json!({ "iteration": self.iteration });
        self.generator.save(&dir.join("generator.ckpt"), extra.clone())?;
        if let Some(a) = &self.averaged {
            a.save(&dir.join("generator_avg.ckpt"), extra.clone())?;
        }
        if let Some(f) = &self.embedder {
            f.save(&dir.join("embedder.ckpt"), extra)?;
        }
        write_atomic(&dir.join("maps.json"), self.maps.to_json()?.as_bytes())?;
        if let Some(p) = &self.maps_reg {
            write_atomic(&dir.join("maps_reg.json"), p.to_json()?.as_bytes())?;
        }
        write_json(
            &dir.join("optim.json"),
            &OptimFile {
                generator: self.opt_generator.clone(),
                embedder: self.opt_embedder.clone(),
                maps: self.opt_maps.clone(),
                maps_reg: self.opt_maps_reg.clone(),
            },
        )?;
        write_atomic(&dir.join("traces.csv"), self.traces.to_csv().as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sf: StateFile = read_json(&dir.join("state.json"))?;
        let mut state = GanState::init(sf.config, sf.data_dim, sf.times)?;
        state.iteration = sf.iteration;
        state.scaler = sf.scaler;
        state.generator = SeqNetParams::load(&dir.join("generator.ckpt"))?.0;
        let avg = dir.join("generator_avg.ckpt");
        if avg.exists() {
            state.averaged = Some(SeqNetParams::load(&avg)?.0);
        }
        if state.embedder.is_some() {
            state.embedder = Some(SeqNetParams::load(&dir.join("embedder.ckpt"))?.0);
            state.maps_reg = Some(EpcfdParams::load(&dir.join("maps_reg.json"))?);
        }
        state.maps = EpcfdParams::load(&dir.join("maps.json"))?;
        let of: OptimFile = read_json(&dir.join("optim.json"))?;
        state.opt_generator = of.generator;
        state.opt_embedder = of.embedder;
        state.opt_maps = of.maps;
        state.opt_maps_reg = of.maps_reg;
        state.traces = Traces::from_csv(&std::fs::read_to_string(dir.join("traces.csv"))?)?;
        Ok(state)
    }
}

impl Traces {
    /// `iteration,generator,recovery,regularization`, leaving cells of
    /// traces that were not recorded empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,generator,recovery,regularization\n");
        let cell = |v: &[f64], i: usize| v.get(i).map(|x| format!("{x:?}")).unwrap_or_default();
        for i in 0..self.generator.len() {
            out.push_str(&format!(
                "{i},{},{},{}\n",
                cell(&self.generator, i),
                cell(&self.recovery, i),
                cell(&self.regularization, i)
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut t = Traces::default();
        for (row, line) in text.lines().enumerate().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(Error::Csv {
                    row: row + 1,
                    column: cells.len(),
                    message: "expected 4 columns".into(),
                });
            }
            for (c, dst) in [(1, &mut t.generator), (2, &mut t.recovery), (3, &mut t.regularization)] {
                if !cells[c].is_empty() {
                    dst.push(cells[c].parse().map_err(|_| Error::Csv {
                        row: row + 1,
                        column: c + 1,
                        message: format!("not a number: {}", cells[c]),
                    })?);
                }
            }
        }
        Ok(t)
    }
}

fn leaves(tape: &mut Tape, b: &PathBatch) -> Vec<NodeId> {
    steps_of(b).into_iter().map(|m| tape.leaf(m)).collect()
}

fn values(tape: &Tape, ids: &[NodeId]) -> Vec<Mat> {
    ids.iter().map(|&i| tape.value(i).clone()).collect()
}

fn seeds(ids: &[NodeId], levels: &[Vec<f64>], d: usize) -> Vec<(NodeId, Mat)> {
    ids.iter().copied().zip(step_grads(levels, ids.len(), d)).collect()
}

/// `EPCFD^2(X, G(Z))` on raw paths under `maps`. The loss functions take
/// data in model units.
pub fn loss_basic(state: &GanState, x: &PathBatch, z: &PathBatch) -> Result<LossGrads> {
    state.check_data(x)?;
    state.check_noise(z)?;
    let g = &state.generator;
    let mut tape = Tape::new();
    let bg = g.bind(&mut tape);
    let zs = leaves(&mut tape, z);
    let gz = g.unroll(&mut tape, &bg, &zs)?;
    let fake = batch_of(&values(&tape, &gz), &state.times)?;
    let eg = epcfd_grad(x, &fake, &state.maps)?;
    let grads = tape.backward(&seeds(&gz, &eg.y.levels, state.data_dim()))?;
    Ok(LossGrads {
        value: eg.value,
        generator: Some(g.flat_grads(&bg, &grads)),
        embedder: None,
        maps: Some(eg.maps),
    })
}

/// `EPCFD^2(F(X), F(G(Z)))` under `maps`.
pub fn loss_generator(state: &GanState, x: &PathBatch, z: &PathBatch) -> Result<LossGrads> {
    state.check_data(x)?;
    state.check_noise(z)?;
    let (g, f) = (&state.generator, state.embedder()?);
    let grid = noise_times(state.n_points());
    let e = state.config.noise_dim;
    let mut tape = Tape::new();
    let bg = g.bind(&mut tape);
    let bf = f.bind(&mut tape);
    let xs = leaves(&mut tape, x);
    let zs = leaves(&mut tape, z);
    let fx = f.unroll(&mut tape, &bf, &xs)?;
    let gz = g.unroll(&mut tape, &bg, &zs)?;
    let fgz = f.unroll(&mut tape, &bf, &gz)?;
    let real = batch_of(&values(&tape, &fx), &grid)?;
    let fake = batch_of(&values(&tape, &fgz), &grid)?;
    let eg = epcfd_grad(&real, &fake, &state.maps)?;
    let mut sd = seeds(&fx, &eg.x.levels, e);
    sd.extend(seeds(&fgz, &eg.y.levels, e));
    let grads = tape.backward(&sd)?;
    Ok(LossGrads {
        value: eg.value,
        generator: Some(g.flat_grads(&bg, &grads)),
        embedder: Some(f.flat_grads(&bf, &grads)),
        maps: Some(eg.maps),
    })
}

/// Mean over samples of `|Z - F(G(Z))|^2`, summed over steps and channels.
pub fn loss_recovery(state: &GanState, z: &PathBatch) -> Result<LossGrads> {
    state.check_noise(z)?;
    let (g, f) = (&state.generator, state.embedder()?);
    let mut tape = Tape::new();
    let bg = g.bind(&mut tape);
    let bf = f.bind(&mut tape);
    let zsteps = steps_of(z);
    let zs: Vec<NodeId> = zsteps.iter().map(|m| tape.leaf(m.clone())).collect();
    let gz = g.unroll(&mut tape, &bg, &zs)?;
    let fgz = f.unroll(&mut tape, &bf, &gz)?;
    let n = z.len() as f64;
    let mut value = 0.0;
    let mut sd = Vec::with_capacity(fgz.len());
    for (&id, zt) in fgz.iter().zip(&zsteps) {
        let r = zt - tape.value(id);
        value += r.norm_squared();
        sd.push((id, r * (-2.0 / n)));
    }
    let grads = tape.backward(&sd)?;
    Ok(LossGrads {
        value: value / n,
        generator: Some(g.flat_grads(&bg, &grads)),
        embedder: Some(f.flat_grads(&bf, &grads)),
        maps: None,
    })
}

/// `EPCFD^2(Z, F(X))` under `maps_reg`.
pub fn loss_regularization(state: &GanState, x: &PathBatch, z: &PathBatch) -> Result<LossGrads> {
    state.check_data(x)?;
    state.check_noise(z)?;
    let f = state.embedder()?;
    let mut tape = Tape::new();
    let bf = f.bind(&mut tape);
    let xs = leaves(&mut tape, x);
    let fx = f.unroll(&mut tape, &bf, &xs)?;
    let real = batch_of(&values(&tape, &fx), &noise_times(state.n_points()))?;
    let eg = epcfd_grad(z, &real, state.maps_reg()?)?;
    let grads = tape.backward(&seeds(&fx, &eg.y.levels, state.config.noise_dim))?;
    Ok(LossGrads {
        value: eg.value,
        generator: None,
        embedder: Some(f.flat_grads(&bf, &grads)),
        maps: Some(eg.maps),
    })
}

fn check_bound(value: f64, m: usize, what: &str, it: usize) -> Result<()> {
    let ceiling = epcfd_ceiling(m) + 1e-9;
    if !value.is_finite() || value > ceiling {
        return Err(Error::Numerical(format!(
            "{what} = {value} left [0, {ceiling}] at iteration {it}"
        )));
    }
    Ok(())
}

fn step_net(net: &mut SeqNetParams, opt: &mut OptimState, grads: &[f64], ascend: bool) -> Result<()> {
    let g: Vec<f64> = if ascend { grads.iter().map(|v| -v).collect() } else { grads.to_vec() };
    let mut flat = net.flat();
    opt.step(&mut flat, &g)?;
    net.set_flat(&flat)
}

fn maps_ok(p: &EpcfdParams) -> bool {
    p.maps
        .iter()
        .all(|mp| mp.blocks().iter().all(|b| anti_hermitian_defect(b.matrix()) < 1e-12))
}

/// Train from scratch with `config.mode`.
pub fn train(config: &GanConfig, data: &PathBatch) -> Result<GanState> {
    let mut state = GanState::init(config.clone(), data.dim(), data.times().to_vec())?;
    state.fit_scaler(data);
    run(&mut state, data, &mut |_, _| {})?;
    Ok(state)
}

pub fn train_basic(config: &GanConfig, data: &PathBatch) -> Result<GanState> {
    train(&GanConfig { mode: GanMode::Basic, ..config.clone() }, data)
}

pub fn train_autoencoder(config: &GanConfig, data: &PathBatch) -> Result<GanState> {
    train(&GanConfig { mode: GanMode::Autoencoder, ..config.clone() }, data)
}

/// Continue training `state` on `data` (in data units) until its iteration
/// budget is spent, calling `observer` after every parameter update.
pub fn run(
    state: &mut GanState,
    data: &PathBatch,
    observer: &mut dyn FnMut(Update, &GanState),
) -> Result<()> {
    state.check_data(data)?;
    let data = &state.to_model(data)?;
    let c = state.config.clone();
    let window_start = c.iters - c.average_window;
    let mut avg_sum: Option<Vec<f64>> = None;
    while state.iteration < c.iters {
        let it = state.iteration;
        let lr_net = decayed_lr(c.lr_net, c.decay, c.decay_every, it);
        let lr_map = decayed_lr(c.lr_map, c.decay, c.decay_every, it);
        state.opt_generator.config.lr = lr_net;
        state.opt_maps.config.lr = lr_map;
        if let Some(o) = state.opt_embedder.as_mut() {
            o.config.lr = lr_net;
        }
        if let Some(o) = state.opt_maps_reg.as_mut() {
            o.config.lr = lr_map;
        }
        let draw = |state: &GanState, purpose: &str, round: usize| -> Result<(PathBatch, PathBatch)> {
            let tag = (it * (c.n_critic + 1) + round) as u64;
            let x = data.select(&minibatch(data.len(), c.batch_size, c.seed, &format!("{purpose}-data"), tag))?;
            let z = state.sample_noise(c.batch_size, child_seed(c.seed, &format!("{purpose}-noise"), tag))?;
            Ok((x, z))
        };
        match c.mode {
            GanMode::Basic => {
                for round in 0..c.n_critic {
                    let (x, z) = draw(state, "gan", round)?;
                    let fake = state.generator.forward(&z, &state.times)?;
                    let eg = epcfd_grad(&x, &fake, &state.maps)?;
                    check_bound(eg.value, c.m, "critic loss", it)?;
                    adam_step(&mut state.maps, &eg.maps, &mut state.opt_maps, true)?;
                    debug_assert!(maps_ok(&state.maps));
                    observer(Update::Maps, state);
                }
                let (x, z) = draw(state, "gan", c.n_critic)?;
                let lg = loss_basic(state, &x, &z)?;
                check_bound(lg.value, c.m, "generator loss", it)?;
                state.traces.generator.push(lg.value);
                let g = lg.generator.expect("generator gradient");
                step_net(&mut state.generator, &mut state.opt_generator, &g, false)?;
                observer(Update::Generator, state);
            }
            GanMode::Autoencoder => {
                let mut last = (0.0, 0.0);
                for round in 0..c.n_critic {
                    let (x, z) = draw(state, "gan", round)?;

                    let lg = loss_generator(state, &x, &z)?;
                    check_bound(lg.value, c.m, "generator loss", it)?;
                    adam_step(&mut state.maps, &lg.maps.expect("map gradient"), &mut state.opt_maps, true)?;
                    debug_assert!(maps_ok(&state.maps));
                    observer(Update::Maps, state);

                    let lr = loss_regularization(state, &x, &z)?;
                    check_bound(lr.value, c.m, "regularisation loss", it)?;
                    let (maps_reg, opt) = (
                        state.maps_reg.as_mut().expect("autoencoder state"),
                        state.opt_maps_reg.as_mut().expect("autoencoder state"),
                    );
                    adam_step(maps_reg, &lr.maps.expect("map gradient"), opt, true)?;
                    debug_assert!(maps_ok(maps_reg));
                    observer(Update::MapsReg, state);

                    let lg = loss_generator(state, &x, &z)?;
                    let lrec = loss_recovery(state, &z)?;
                    let lreg = loss_regularization(state, &x, &z)?;
                    let (gg, gr, gq) = (
                        lg.embedder.expect("embedder gradient"),
                        lrec.embedder.expect("embedder gradient"),
                        lreg.embedder.expect("embedder gradient"),
                    );
                    let critic: Vec<f64> = gg
                        .iter()
                        .zip(&gr)
                        .zip(&gq)
                        .map(|((a, b), q)| a - c.lambda1 * b - c.lambda2 * q)
                        .collect();
                    let (f, opt) = (
                        state.embedder.as_mut().expect("autoencoder state"),
                        state.opt_embedder.as_mut().expect("autoencoder state"),
                    );
                    step_net(f, opt, &critic, true)?;
                    observer(Update::Embedder, state);
                    last = (lrec.value, lreg.value);
                }
                let (x, z) = draw(state, "gan", c.n_critic)?;
                let lg = loss_generator(state, &x, &z)?;
                check_bound(lg.value, c.m, "generator loss", it)?;
                state.traces.generator.push(lg.value);
                state.traces.recovery.push(last.0);
                state.traces.regularization.push(last.1);
                let g = lg.generator.expect("generator gradient");
                step_net(&mut state.generator, &mut state.opt_generator, &g, false)?;
                observer(Update::Generator, state);
            }
        }
        if c.average_window > 0 && it >= window_start {
            let flat = state.generator.flat();
            match avg_sum.as_mut() {
                Some(acc) => acc.iter_mut().zip(&flat).for_each(|(a, b)| *a += b),
                None => avg_sum = Some(flat),
            }
        }
        state.iteration += 1;
    }
    if let Some(acc) = avg_sum {
        let n = c.average_window as f64;
        let mean: Vec<f64> = acc.iter().map(|v| v / n).collect();
        let mut avg = state.generator.clone();
        avg.set_flat(&mean)?;
        state.averaged = Some(avg);
    }
    Ok(())
}

/// Held-out `EPCFD^2(G(Z), X)` under independent evaluation parameters.
pub fn heldout_distance(state: &GanState, x: &PathBatch, eval: &EpcfdParams, seed: u64) -> Result<f64> {
    let fake = state.generate(x.len(), seed)?;
    epcfd_sq(&fake, x, eval)
}

/// Mean recovery loss on fresh noise.
pub fn heldout_recovery(state: &GanState, n: usize, seed: u64) -> Result<f64> {
    let z = state.sample_noise(n, seed)?;
    let (g, f) = (state.sampling_generator(), state.embedder()?);
    // both networks act in model units, so no rescaling is needed
    let x = g.forward(&z, &state.times)?;
    let back = f.forward(&x, z.times())?;
    let total: f64 = z
        .items()
        .iter()
        .zip(back.items())
        .map(|(a, b)| a.values().iter().zip(b.values()).map(|(u, v)| (u - v).powi(2)).sum::<f64>())
        .sum();
    Ok(total / n as f64)
}

/// Trailing moving average with the window truncated at the start.
pub fn moving_average(trace: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(trace.len());
    let mut sum = 0.0;
    for i in 0..trace.len() {
        sum += trace[i];
        if i >= window {
            sum -= trace[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, SimSpec};

    fn tiny(mode: GanMode, iters: usize) -> GanConfig {
        GanConfig {
            mode,
            iters,
            batch_size: 4,
            m: 2,
            k: 1,
            hidden: 3,
            ..GanConfig::default()
        }
    }

    fn ou(n: usize) -> PathBatch {
        let mut spec = SimSpec::ou(n, 5);
        spec.n_steps = 5;
        simulate(&spec).unwrap()
    }

    #[test]
    fn zero_budget_returns_the_initialisation() {
        let data = ou(6);
        let cfg = tiny(GanMode::Basic, 0);
        let fresh = GanState::init(cfg.clone(), 1, data.times().to_vec()).unwrap();
        let trained = train(&cfg, &data).unwrap();
        assert_eq!(fresh.generator, trained.generator);
        assert_eq!(fresh.maps, trained.maps);
        assert!(trained.traces.generator.is_empty());
    }

    #[test]
    fn map_law_scales_both_critics() {
        let times = ou(2).times().to_vec();
        let base = tiny(GanMode::Autoencoder, 0);
        let scaled = GanConfig {
            map_init: ScalarLaw::Normal { mean: 0.0, std: 0.5 },
            ..base.clone()
        };
        let a = GanState::init(base, 1, times.clone()).unwrap();
        let b = GanState::init(scaled, 1, times).unwrap();
        let pairs = [
            (a.maps.flat(), b.maps.flat()),
            (a.maps_reg.unwrap().flat(), b.maps_reg.unwrap().flat()),
        ];
        for (u, v) in pairs {
            assert!(u.iter().zip(&v).all(|(p, q)| (0.5 * p - q).abs() < 1e-15));
        }
        assert_eq!(a.generator, b.generator);
    }

    #[test]
    fn autoencoder_update_order() {
        let data = ou(6);
        let cfg = tiny(GanMode::Autoencoder, 2);
        let mut state = GanState::init(cfg, 1, data.times().to_vec()).unwrap();
        let mut log = Vec::new();
        run(&mut state, &data, &mut |u, _| log.push(u)).unwrap();
        use Update::*;
        let one = [Maps, MapsReg, Embedder, Maps, MapsReg, Embedder, Generator];
        assert_eq!(log, [one, one].concat());
    }

    #[test]
    fn cesaro_mean_matches_recorded_weights() {
        let data = ou(6);
        let cfg = GanConfig {
            average_window: 3,
            ..tiny(GanMode::Basic, 5)
        };
        let mut state = GanState::init(cfg, 1, data.times().to_vec()).unwrap();
        let mut snaps = Vec::new();
        run(&mut state, &data, &mut |u, s| {
            if u == Update::Generator {
                snaps.push(s.generator.flat());
            }
        })
        .unwrap();
        let avg = state.averaged.as_ref().unwrap().flat();
        for (i, a) in avg.iter().enumerate() {
            let mean = snaps[2..].iter().map(|s| s[i]).sum::<f64>() / 3.0;
            assert!((a - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let data = ou(6);
        let cfg = GanConfig {
            average_window: 1,
            ..tiny(GanMode::Autoencoder, 2)
        };
        let state = train(&cfg, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        state.save(dir.path()).unwrap();
        let back = GanState::load(dir.path()).unwrap();
        assert_eq!(back.generator, state.generator);
        assert_eq!(back.averaged, state.averaged);
        assert_eq!(back.embedder, state.embedder);
        assert_eq!(back.maps, state.maps);
        assert_eq!(back.maps_reg, state.maps_reg);
        assert_eq!(back.traces, state.traces);
        assert_eq!(back.scaler, state.scaler);
        assert_eq!(back.opt_generator, state.opt_generator);
        assert_eq!(back.iteration, 2);
    }

    #[test]
    fn reconstruction_has_input_shape() {
        let data = ou(3);
        let state = GanState::init(tiny(GanMode::Autoencoder, 0), 1, data.times().to_vec()).unwrap();
        let r = state.reconstruct(&data).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.times(), data.times());
        assert!(r.items().iter().all(|s| s.values().iter().all(|v| v.is_finite())));
    }

    #[test]
    fn moving_average_truncates() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }
}
