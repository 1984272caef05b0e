//! A reverse-mode tape over dense real matrices, with just the primitives a
//! small recurrent network needs. Rows index samples.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    /// Broadcast a `1 x n` row over every row.
    AddRow(usize, usize),
    Tanh(usize),
    Scale(usize, f64),
    Slice { src: usize, start: usize },
    Concat(usize, usize),
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Mat>,
    ops: Vec<Op>,
    consumed: bool,
}

/// Adjoints of every node after a backward pass.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Mat>>);

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.0[id.0].as_ref()
    }

    /// The adjoint of `id`, zero when nothing flowed into it.
    pub fn dense(&self, id: NodeId, rows: usize, cols: usize) -> Mat {
        self.get(id).cloned().unwrap_or_else(|| Mat::zeros(rows, cols))
    }
}

fn accumulate(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        NodeId(self.values.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.values[id.0]
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    fn shape_err(what: &str, a: &Mat, b: &Mat) -> Error {
        Error::ShapeMismatch(format!(
            "{what}: {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.ncols() != vb.nrows() {
            return Err(Self::shape_err("matmul", va, vb));
        }
        let v = va * vb;
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.shape() != vb.shape() {
            return Err(Self::shape_err("add", va, vb));
        }
        let v = va + vb;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (&self.values[a.0], &self.values[row.0]);
        if vr.nrows() != 1 || vr.ncols() != va.ncols() {
            return Err(Self::shape_err("add_row", va, vr));
        }
        let mut v = va.clone();
        for mut r in v.row_iter_mut() {
            r += vr;
        }
        Ok(self.push(v, Op::AddRow(a.0, row.0)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = &self.values[a.0] * s;
        self.push(v, Op::Scale(a.0, s))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.values[a.0];
        if start + len > va.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{} of {} columns",
                start + len,
                va.ncols()
            )));
        }
        let v = va.columns(start, len).into_owned();
        Ok(self.push(v, Op::Slice { src: a.0, start }))
    }

    /// `[a | b]` side by side.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.nrows() != vb.nrows() {
            return Err(Self::shape_err("concat", va, vb));
        }
        let mut v = Mat::zeros(va.nrows(), va.ncols() + vb.ncols());
        v.columns_mut(0, va.ncols()).copy_from(va);
        v.columns_mut(va.ncols(), vb.ncols()).copy_from(vb);
        Ok(self.push(v, Op::Concat(a.0, b.0)))
    }

    /// Propagate the given output adjoints back to every node. A tape can
    /// be differentiated once.
    pub fn backward(&mut self, seeds: &[(NodeId, Mat)]) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        let mut grads: Vec<Option<Mat>> = vec![None; self.values.len()];
        for (id, g) in seeds {
            let v = &self.values[id.0];
            if v.shape() != g.shape() {
                return Err(Self::shape_err("seed", v, g));
            }
            accumulate(&mut grads[id.0], g.clone());
        }
        for i in (0..self.values.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match self.ops[i] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = &g * self.values[b].transpose();
                    let gb = self.values[a].transpose() * &g;
                    accumulate(&mut grads[a], ga);
                    accumulate(&mut grads[b], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a], g.clone());
                    accumulate(&mut grads[b], g.clone());
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut grads[r], Mat::from_row_slice(1, g.ncols(), g.row_sum().as_slice()));
                    accumulate(&mut grads[a], g.clone());
                }
                Op::Tanh(a) => {
                    let y = &self.values[i];
                    accumulate(&mut grads[a], g.zip_map(y, |g, y| g * (1.0 - y * y)));
                }
                Op::Scale(a, s) => accumulate(&mut grads[a], &g * s),
                Op::Slice { src, start } => {
                    let v = &self.values[src];
                    let mut full = Mat::zeros(v.nrows(), v.ncols());
                    full.columns_mut(start, g.ncols()).copy_from(&g);
                    accumulate(&mut grads[src], full);
                }
                Op::Concat(a, b) => {
                    let na = self.values[a].ncols();
                    let nb = self.values[b].ncols();
                    accumulate(&mut grads[a], g.columns(0, na).into_owned());
                    accumulate(&mut grads[b], g.columns(na, nb).into_owned());
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients(grads))
    }
}
