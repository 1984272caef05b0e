//! The unitary feature `U_M(x) = exp(M(dx_1)) ... exp(M(dx_N))` of a
//! piecewise-linear path, and its reverse-mode gradient.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lie::{polar_unitary, CMatrix, DevelopmentMap, UnitaryMatrix};
use crate::small::{mul, mul_adj_left, mul_adj_right, SMat, SandwichScratch, SplitExpm};
use crate::paths::{increments, PathBatch, TimeSeries};
use crate::pcfd::EpcfdParams;

/// Prefix products are snapped back onto U(m) at this period.
pub const REUNITARIZE_EVERY: usize = 64;

#[derive(Debug, Clone)]
pub struct DevelopmentResult {
    pub endpoint: UnitaryMatrix,
    /// `y_{t_0} = I, ..., y_{t_N} = endpoint` when requested.
    pub prefix_states: Option<Vec<UnitaryMatrix>>,
}

/// Gradients of a scalar loss of `U_M(x)`.
#[derive(Debug, Clone)]
pub struct DevelopmentGrad {
    /// One anti-Hermitian matrix per block of the map.
    pub map: Vec<CMatrix>,
    /// Row-major `(N, d)`, aligned with [`increments`].
    pub increments: Vec<f64>,
}

/// Forward pass over a flat increment sequence that keeps everything the
/// backward pass needs.
pub(crate) struct Forward {
    pub decomps: Vec<SplitExpm>,
    /// `prefix[i]` is the product of the first `i` exponentials.
    pub prefix: Vec<SMat>,
}

impl Forward {
    pub fn endpoint(&self) -> &SMat {
        self.prefix.last().expect("prefix always holds the identity")
    }
}

/// The blocks of a map in split storage.
pub(crate) fn split_blocks(map: &DevelopmentMap) -> Vec<SMat> {
    map.blocks().iter().map(|b| SMat::from_cmatrix(b.matrix())).collect()
}

fn check_dim(map: &DevelopmentMap, d: usize) -> Result<()> {
    if map.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: d,
        });
    }
    Ok(())
}

fn snap(p: &mut SMat, step: usize, total: usize) -> Result<()> {
    if total > REUNITARIZE_EVERY && step.is_multiple_of(REUNITARIZE_EVERY) {
        *p = SMat::from_cmatrix(&polar_unitary(&p.to_cmatrix())?);
    }
    Ok(())
}

fn apply(blocks: &[SMat], dx: &[f64], out: &mut SMat) {
    out.fill_zero();
    for (b, &x) in blocks.iter().zip(dx) {
        if x != 0.0 {
            out.axpy(x, b);
        }
    }
}

/// Endpoint only, without caching.
pub(crate) fn endpoint_split(incs: &[f64], d: usize, blocks: &[SMat]) -> Result<SMat> {
    let m = blocks[0].m;
    let n = incs.len() / d;
    let mut a = SMat::zeros(m);
    let mut p = SMat::identity(m);
    let mut tmp = SMat::zeros(m);
    for (s, dx) in incs.chunks_exact(d).enumerate() {
        if dx.iter().all(|&v| v == 0.0) {
            continue;
        }
        apply(blocks, dx, &mut a);
        let e = SplitExpm::new(&a)?.exp;
        mul(&p, &e, &mut tmp);
        std::mem::swap(&mut p, &mut tmp);
        snap(&mut p, s + 1, n)?;
    }
    Ok(p)
}

pub(crate) fn endpoint_of(incs: &[f64], d: usize, map: &DevelopmentMap) -> Result<CMatrix> {
    Ok(endpoint_split(incs, d, &split_blocks(map))?.to_cmatrix())
}

pub(crate) fn forward(incs: &[f64], d: usize, blocks: &[SMat]) -> Result<Forward> {
    let m = blocks[0].m;
    let n = incs.len() / d;
    let mut a = SMat::zeros(m);
    let mut decomps = Vec::with_capacity(n);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(SMat::identity(m));
    for (s, dx) in incs.chunks_exact(d).enumerate() {
        apply(blocks, dx, &mut a);
        let dec = SplitExpm::new(&a)?;
        let mut p = SMat::zeros(m);
        mul(&prefix[s], &dec.exp, &mut p);
        snap(&mut p, s + 1, n)?;
        prefix.push(p);
        decomps.push(dec);
    }
    Ok(Forward { decomps, prefix })
}

/// Reverse sweep. Accumulates into `grad_map` (unprojected) and writes the
/// increment gradient into `grad_incs` when given.
pub(crate) fn backward(
    fwd: &Forward,
    incs: &[f64],
    d: usize,
    blocks: &[SMat],
    cotangent: &SMat,
    grad_map: &mut [SMat],
    mut grad_incs: Option<&mut [f64]>,
) {
    let m = cotangent.m;
    // h = G (E_{j+1} ... E_N)^*, the cotangent seen from the right of step j.
    let mut h = cotangent.clone();
    let mut g_exp = SMat::zeros(m);
    let mut g_a = SMat::zeros(m);
    let mut tmp = SMat::zeros(m);
    let mut scratch = SandwichScratch::new(m);
    for j in (0..fwd.decomps.len()).rev() {
        let dec = &fwd.decomps[j];
        mul_adj_left(&fwd.prefix[j], &h, &mut g_exp);
        dec.frechet_adjoint(&g_exp, &mut g_a, &mut scratch);
        let dx = &incs[j * d..(j + 1) * d];
        for (g, &x) in grad_map.iter_mut().zip(dx) {
            if x != 0.0 {
                g.axpy(x, &g_a);
            }
        }
        if let Some(gi) = grad_incs.as_deref_mut() {
            for (i, block) in blocks.iter().enumerate() {
                gi[j * d + i] = block.real_inner(&g_a);
            }
        }
        mul_adj_right(&h, &dec.exp, &mut tmp);
        std::mem::swap(&mut h, &mut tmp);
    }
}

/// The unitary feature of `x` under `map`.
pub fn develop(x: &TimeSeries, map: &DevelopmentMap, keep_states: bool) -> Result<DevelopmentResult> {
    check_dim(map, x.dim())?;
    let incs = increments(x);
    if !keep_states {
        let u = endpoint_of(&incs, x.dim(), map)?;
        return Ok(DevelopmentResult {
            endpoint: UnitaryMatrix::from_matrix_unchecked(u),
            prefix_states: None,
        });
    }
    let fwd = forward(&incs, x.dim(), &split_blocks(map))?;
    let states: Vec<UnitaryMatrix> = fwd
        .prefix
        .iter()
        .map(|p| UnitaryMatrix::from_matrix_unchecked(p.to_cmatrix()))
        .collect();
    Ok(DevelopmentResult {
        endpoint: states.last().cloned().expect("non-empty"),
        prefix_states: Some(states),
    })
}

/// Gradient of a real loss `L(U_M(x))` given `G = dL/dU` under the real
/// inner product `<A, B> = Re tr(A B*)`.
///
/// `result` must come from [`develop`] with `keep_states = true`.
pub fn develop_grad(
    x: &TimeSeries,
    map: &DevelopmentMap,
    result: &DevelopmentResult,
    cotangent: &CMatrix,
) -> Result<DevelopmentGrad> {
    check_dim(map, x.dim())?;
    let states = result.prefix_states.as_ref().ok_or(Error::MissingStates)?;
    if states.len() != x.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} cached states for a path of {} points",
            states.len(),
            x.len()
        )));
    }
    let m = map.order();
    if cotangent.shape() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "cotangent {:?} for a map of order {m}",
            cotangent.shape()
        )));
    }
    let d = x.dim();
    let incs = increments(x);
    let blocks = split_blocks(map);
    let mut a = SMat::zeros(m);
    let mut decomps = Vec::with_capacity(x.segments());
    for dx in incs.chunks_exact(d) {
        apply(&blocks, dx, &mut a);
        decomps.push(SplitExpm::new(&a)?);
    }
    let fwd = Forward {
        decomps,
        prefix: states.iter().map(|s| SMat::from_cmatrix(s.matrix())).collect(),
    };
    let mut grad_map = vec![SMat::zeros(m); d];
    let mut grad_incs = vec![0.0; incs.len()];
    backward(
        &fwd,
        &incs,
        d,
        &blocks,
        &SMat::from_cmatrix(cotangent),
        &mut grad_map,
        Some(&mut grad_incs),
    );
    Ok(DevelopmentGrad {
        map: grad_map
            .iter()
            .map(|g| crate::lie::project_anti_hermitian(&g.to_cmatrix()))
            .collect(),
        increments: grad_incs,
    })
}

/// `out[j][i] = develop(x_i, M_j)`. Results do not depend on the thread
/// schedule.
pub fn develop_batch(batch: &PathBatch, params: &EpcfdParams) -> Result<Vec<Vec<UnitaryMatrix>>> {
    let d = batch.dim();
    if let Some(map) = params.maps.first() {
        check_dim(map, d)?;
    }
    let incs: Vec<Vec<f64>> = batch.items().iter().map(increments).collect();
    params
        .maps
        .iter()
        .map(|map| {
            let blocks = split_blocks(map);
            incs.par_iter()
                .map(|x| {
                    endpoint_split(x, d, &blocks)
                        .map(|u| UnitaryMatrix::from_matrix_unchecked(u.to_cmatrix()))
                })
                .collect()
        })
        .collect()
}

/// Explicit `exp(M(dx))` for a single segment.
pub fn segment_exponential(map: &DevelopmentMap, dx: &[f64]) -> Result<CMatrix> {
    check_dim(map, dx.len())?;
    let mut a = SMat::zeros(map.order());
    apply(&split_blocks(map), dx, &mut a);
    Ok(SplitExpm::new(&a)?.exp.to_cmatrix())
}
