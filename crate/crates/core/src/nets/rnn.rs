//! Recurrent networks built on the tape: stacked cells
//! `h_t = act(x_t W_in + h_{t-1} W_h + b)` followed by a head
//! `y_t = act(h_t) W_out + b_out`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Mat, NodeId, Tape};
use crate::error::{Error, Result};
use crate::paths::PathBatch;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub layers: usize,
    pub cell: Activation,
    pub head: Activation,
}

impl NetConfig {
    /// One tanh layer with a tanh-then-linear head.
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            layers: 1,
            cell: Activation::Tanh,
            head: Activation::Tanh,
        }
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let h = self.hidden;
        let mut s = Vec::with_capacity(3 * self.layers + 2);
        for l in 0..self.layers {
            let inp = if l == 0 { self.input } else { h };
            s.extend([(inp, h), (h, h), (1, h)]);
        }
        s.extend([(h, self.output), (1, self.output)]);
        s
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.output == 0 || self.layers == 0 {
            return Err(Error::InvalidParameter("network sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqNetParams {
    pub config: NetConfig,
    /// Per layer `W_in, W_h, b`, then `W_out, b_out`.
    pub weights: Vec<Mat>,
}

/// The parameter leaves of one network on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    ids: Vec<NodeId>,
}

fn act(tape: &mut Tape, a: NodeId, kind: Activation) -> NodeId {
    match kind {
        Activation::Tanh => tape.tanh(a),
        Activation::Identity => a,
    }
}

impl SeqNetParams {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases using
    /// the hidden width as fan-in.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "seqnet-init", 0);
        let weights = config
            .shapes()
            .into_iter()
            .map(|(r, c)| {
                let fan_in = if r == 1 { config.hidden } else { r };
                let bound = 1.0 / (fan_in as f64).sqrt();
                Mat::from_fn(r, c, |_, _| rng.random_range(-bound..=bound))
            })
            .collect();
        Ok(Self { config, weights })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let weights = config.shapes().into_iter().map(|(r, c)| Mat::zeros(r, c)).collect();
        Ok(Self { config, weights })
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// All weights in order, each column-major.
    pub fn flat(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.as_slice().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} network parameters, got {}",
                self.n_params(),
                data.len()
            )));
        }
        let mut off = 0;
        for w in self.weights.iter_mut() {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&data[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            ids: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
        }
    }

    /// Unroll over per-step inputs (`batch x input` each), returning the
    /// per-step outputs (`batch x output`).
    pub fn unroll(&self, tape: &mut Tape, bound: &Bound, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        let c = self.config;
        if let Some(x) = inputs.first() {
            if tape.value(*x).ncols() != c.input {
                return Err(Error::DimensionMismatch {
                    expected: c.input,
                    found: tape.value(*x).ncols(),
                });
            }
        }
        let mut seq: Vec<NodeId> = inputs.to_vec();
        for l in 0..c.layers {
            let (w_in, w_h, b) = (bound.ids[3 * l], bound.ids[3 * l + 1], bound.ids[3 * l + 2]);
            let mut prev: Option<NodeId> = None;
            let mut next = Vec::with_capacity(seq.len());
            for &x in &seq {
                let mut pre = tape.matmul(x, w_in)?;
                if let Some(h) = prev {
                    let rec = tape.matmul(h, w_h)?;
                    pre = tape.add(pre, rec)?;
                }
                let pre = tape.add_row(pre, b)?;
                let h = act(tape, pre, c.cell);
                next.push(h);
                prev = Some(h);
            }
            seq = next;
        }
        let (w_out, b_out) = (bound.ids[3 * c.layers], bound.ids[3 * c.layers + 1]);
        seq.iter()
            .map(|&h| {
                let a = act(tape, h, c.head);
                let y = tape.matmul(a, w_out)?;
                tape.add_row(y, b_out)
            })
            .collect()
    }

    /// Flat parameter gradient in the [`Self::flat`] layout.
    pub fn flat_grads(&self, bound: &Bound, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, id) in self.weights.iter().zip(&bound.ids) {
            match grads.get(*id) {
                Some(g) => out.extend_from_slice(g.as_slice()),
                None => out.extend(std::iter::repeat_n(0.0, w.len())),
            }
        }
        out
    }

    /// Run the network over a batch; outputs are placed on `times`, which
    /// must have one point per input point.
    pub fn forward(&self, batch: &PathBatch, times: &[f64]) -> Result<PathBatch> {
        if times.len() != batch.times().len() {
            return Err(Error::ShapeMismatch(format!(
                "{} output times for {} input points",
                times.len(),
                batch.times().len()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let inputs: Vec<NodeId> = steps_of(batch).into_iter().map(|m| tape.leaf(m)).collect();
        let outs = self.unroll(&mut tape, &bound, &inputs)?;
        let steps: Vec<Mat> = outs.iter().map(|&o| tape.value(o).clone()).collect();
        batch_of(&steps, times)
    }

    pub fn save(&self, path: &std::path::Path, extra: serde_json::Value) -> Result<()> {
        let header = serde_json::json!({ "config": self.config, "extra": extra });
        super::checkpoint::write_checkpoint(path, &header, &self.flat())
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, serde_json::Value)> {
        let (header, data) = super::checkpoint::read_checkpoint(path)?;
        let config: NetConfig = serde_json::from_value(header["config"].clone())?;
        let mut p = Self::zeros(config)?;
        p.set_flat(&data)?;
        Ok((p, header["extra"].clone()))
    }
}

/// Per-step `(n, d)` matrices of a batch.
pub fn steps_of(batch: &PathBatch) -> Vec<Mat> {
    let (n, d) = (batch.len(), batch.dim());
    (0..batch.times().len())
        .map(|t| Mat::from_fn(n, d, |i, c| batch.items()[i].row(t)[c]))
        .collect()
}

/// Inverse of [`steps_of`].
pub fn batch_of(steps: &[Mat], times: &[f64]) -> Result<PathBatch> {
    let first = steps
        .first()
        .ok_or_else(|| Error::InvalidParameter("no time steps".into()))?;
    let (n, d) = first.shape();
    let blocks = (0..n)
        .map(|i| steps.iter().flat_map(|m| (0..d).map(move |c| m[(i, c)])).collect())
        .collect();
    PathBatch::from_blocks(times, blocks, d)
}

/// Per-sample flat `(points, d)` gradients rearranged into per-step
/// `(n, d)` matrices.
pub fn step_grads(levels: &[Vec<f64>], points: usize, d: usize) -> Vec<Mat> {
    let n = levels.len();
    (0..points)
        .map(|t| Mat::from_fn(n, d, |i, c| levels[i][t * d + c]))
        .collect()
}
