//! Empirical path characteristic functions and the squared empirical path
//! characteristic function distance (EPCFD) between two batches.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::development::{backward, endpoint_of, endpoint_split, forward, split_blocks};
use crate::small::SMat;
use crate::error::{Error, Result};
use crate::lie::{
    block_from_interleaved, block_to_interleaved, real_inner, sample_map, AntiHermitian, CMatrix,
    DevelopmentMap, ScalarLaw,
};
use crate::paths::{concat, increments, reverse, PathBatch, TimeSeries};
use crate::rng::stream;

/// How a raw series is turned into the path seen by the metric.
///
/// `add_time` prepends the normalised time channel. `anchor` prepends a
/// segment from the origin to the first point, so the starting value is
/// visible to the development; without it the path is implicitly
/// basepointed, since development only sees increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lift {
    pub add_time: bool,
    pub anchor: bool,
}

impl Default for Lift {
    fn default() -> Self {
        Self {
            add_time: true,
            anchor: false,
        }
    }
}

impl Lift {
    pub fn raw() -> Self {
        Self {
            add_time: false,
            anchor: false,
        }
    }

    /// Dimension of the lifted path for `d` raw channels.
    pub fn lifted_dim(&self, d: usize) -> usize {
        d + usize::from(self.add_time)
    }

    /// Number of lifted segments for a series of `points` points.
    pub fn segments(&self, points: usize) -> usize {
        points - 1 + usize::from(self.anchor)
    }

    /// Flat `(segments, lifted_dim)` increments of the lifted path.
    pub fn increments(&self, x: &TimeSeries) -> Vec<f64> {
        let d = x.dim();
        let out_d = self.lifted_dim(d);
        let n = x.len();
        let times = x.times();
        let span = times[n - 1] - times[0];
        let mut out = Vec::with_capacity(self.segments(n) * out_d);
        if self.anchor {
            if self.add_time {
                out.push(0.0);
            }
            out.extend_from_slice(x.first());
        }
        for i in 1..n {
            if self.add_time {
                out.push(if span > 0.0 {
                    (times[i] - times[i - 1]) / span
                } else {
                    0.0
                });
            }
            let (a, b) = (x.row(i - 1), x.row(i));
            out.extend(b.iter().zip(a).map(|(b, a)| b - a));
        }
        out
    }

    /// Pull a gradient on lifted increments back to the raw values
    /// `(points, d)`.
    pub fn levels_grad(&self, g_incs: &[f64], points: usize, d: usize) -> Vec<f64> {
        let out_d = self.lifted_dim(d);
        let off = usize::from(self.add_time);
        let mut g = vec![0.0; points * d];
        let mut seg = 0;
        if self.anchor {
            for c in 0..d {
                g[c] += g_incs[off + c];
            }
            seg = 1;
        }
        for i in 1..points {
            let row = &g_incs[(seg + i - 1) * out_d + off..(seg + i) * out_d];
            for c in 0..d {
                g[i * d + c] += row[c];
                g[(i - 1) * d + c] -= row[c];
            }
        }
        g
    }

    /// The lifted path as an explicit series on a unit-spaced grid.
    pub fn path(&self, x: &TimeSeries) -> Result<TimeSeries> {
        let d = self.lifted_dim(x.dim());
        let incs = self.increments(x);
        let mut values = vec![0.0; d];
        let mut cur = vec![0.0; d];
        for dx in incs.chunks_exact(d) {
            for (c, v) in cur.iter_mut().zip(dx) {
                *c += v;
            }
            values.extend_from_slice(&cur);
        }
        TimeSeries::uniform(values, d)
    }
}

/// The trainable discriminator state: `k` development maps sharing order
/// `m` and input dimension `d` (the lifted dimension).
#[derive(Debug, Clone, PartialEq)]
pub struct EpcfdParams {
    pub maps: Vec<DevelopmentMap>,
    pub seed: u64,
    pub lift: Lift,
}

impl EpcfdParams {
    pub fn new(maps: Vec<DevelopmentMap>, seed: u64, lift: Lift) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidParameter("EPCFD needs k >= 1 maps".into()))?;
        let (m, d) = (first.order(), first.dim());
        if maps.iter().any(|mp| mp.order() != m || mp.dim() != d) {
            return Err(Error::ShapeMismatch("maps of differing order or dimension".into()));
        }
        Ok(Self { maps, seed, lift })
    }

    /// `k` maps with standard normal entries, with `d` the map's input
    /// dimension, drawn from stream `("epcfd-map", j)` of `seed`.
    pub fn sample(m: usize, d: usize, k: usize, seed: u64) -> Result<Self> {
        Self::sample_with(m, d, k, seed, &ScalarLaw::default(), Lift::default())
    }

    pub fn sample_with(
        m: usize,
        d: usize,
        k: usize,
        seed: u64,
        law: &ScalarLaw,
        lift: Lift,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("EPCFD needs k >= 1 maps".into()));
        }
        let maps = (0..k)
            .map(|j| sample_map(m, d, law, &mut stream(seed, "epcfd-map", j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps, seed, lift)
    }

    /// Maps sized for raw series of `data_dim` channels under `lift`.
    pub fn for_data(data_dim: usize, m: usize, k: usize, seed: u64, lift: Lift) -> Result<Self> {
        Self::sample_with(m, lift.lifted_dim(data_dim), k, seed, &ScalarLaw::default(), lift)
    }

    pub fn m(&self) -> usize {
        self.maps[0].order()
    }

    pub fn d(&self) -> usize {
        self.maps[0].dim()
    }

    pub fn k(&self) -> usize {
        self.maps.len()
    }

    /// Raw data dimension these params accept.
    pub fn data_dim(&self) -> usize {
        self.d() - usize::from(self.lift.add_time)
    }

    fn check(&self, batch: &PathBatch) -> Result<()> {
        if self.lift.lifted_dim(batch.dim()) != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.data_dim(),
                found: batch.dim(),
            });
        }
        Ok(())
    }

    /// Number of reals in [`Self::flat`].
    pub fn flat_len(&self) -> usize {
        2 * self.m() * self.m() * self.d() * self.k()
    }

    /// All blocks, map-major, each row-major interleaved `(re, im)`.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for map in &self.maps {
            for b in map.blocks() {
                out.extend(block_to_interleaved(b.matrix()));
            }
        }
        out
    }

    /// Overwrite every block from a [`Self::flat`] layout, projecting each
    /// onto u(m).
    pub fn set_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.flat_len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.flat_len(),
                data.len()
            )));
        }
        let (m, d) = (self.m(), self.d());
        let per = 2 * m * m;
        let mut chunks = data.chunks_exact(per);
        for map in self.maps.iter_mut() {
            let blocks = (0..d)
                .map(|_| {
                    let b = block_from_interleaved(m, chunks.next().expect("length checked"))?;
                    Ok(AntiHermitian::projected(&b))
                })
                .collect::<Result<Vec<_>>>()?;
            *map = DevelopmentMap::new(blocks)?;
        }
        Ok(())
    }

    /// Flatten a per-map, per-block gradient in the [`Self::flat`] layout.
    pub fn flatten_grad(grad: &[Vec<CMatrix>]) -> Vec<f64> {
        grad.iter().flatten().flat_map(block_to_interleaved).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ParamsFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<ParamsFile>(s)?.try_into()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    m: usize,
    d: usize,
    k: usize,
    seed: u64,
    lift: Lift,
    /// `maps[j][i]` is block `i` of map `j`, row-major interleaved `(re, im)`.
    maps: Vec<Vec<Vec<f64>>>,
}

impl From<&EpcfdParams> for ParamsFile {
    fn from(p: &EpcfdParams) -> Self {
        Self {
            m: p.m(),
            d: p.d(),
            k: p.k(),
            seed: p.seed,
            lift: p.lift,
            maps: p
                .maps
                .iter()
                .map(|mp| mp.blocks().iter().map(|b| block_to_interleaved(b.matrix())).collect())
                .collect(),
        }
    }
}

impl TryFrom<ParamsFile> for EpcfdParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        if f.maps.len() != f.k {
            return Err(Error::Format(format!("k = {} but {} maps stored", f.k, f.maps.len())));
        }
        let maps = f
            .maps
            .iter()
            .map(|blocks| {
                if blocks.len() != f.d {
                    return Err(Error::Format(format!(
                        "d = {} but a map has {} blocks",
                        f.d,
                        blocks.len()
                    )));
                }
                let blocks = blocks
                    .iter()
                    .map(|b| AntiHermitian::new(block_from_interleaved(f.m, b)?))
                    .collect::<Result<Vec<_>>>()?;
                DevelopmentMap::new(blocks)
            })
            .collect::<Result<Vec<_>>>()?;
        EpcfdParams::new(maps, f.seed, f.lift)
    }
}

/// An empirical path characteristic function value: the mean unitary
/// feature of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PcfValue {
    pub matrix: CMatrix,
}

/// `(1/n) sum_i U_M(x_i)` on the series as given (no lift).
pub fn pcf(batch: &PathBatch, map: &DevelopmentMap) -> Result<PcfValue> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if map.dim() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: batch.dim(),
        });
    }
    let d = batch.dim();
    let blocks = split_blocks(map);
    let feats = batch
        .items()
        .par_iter()
        .map(|x| endpoint_split(&increments(x), d, &blocks).map(|u| u.to_cmatrix()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PcfValue {
        matrix: mean(&feats, map.order()),
    })
}

fn mean(feats: &[CMatrix], m: usize) -> CMatrix {
    let mut acc = CMatrix::zeros(m, m);
    for f in feats {
        acc += f;
    }
    acc.unscale(feats.len() as f64)
}

/// Unitary features of the lifted batch, `out[j][i] = U_{M_j}(lift(x_i))`.
pub fn features(batch: &PathBatch, params: &EpcfdParams) -> Result<Vec<Vec<CMatrix>>> {
    params.check(batch)?;
    let d = params.d();
    let incs: Vec<Vec<f64>> = batch.items().iter().map(|x| params.lift.increments(x)).collect();
    params
        .maps
        .iter()
        .map(|map| {
            let blocks = split_blocks(map);
            incs.par_iter()
                .map(|x| endpoint_split(x, d, &blocks).map(|u| u.to_cmatrix()))
                .collect()
        })
        .collect()
}

/// EPCFD^2 from precomputed features, averaging `fx` over `ix` and `fy`
/// over `iy` for every map.
pub fn epcfd_from_features(fx: &[Vec<CMatrix>], ix: &[usize], fy: &[Vec<CMatrix>], iy: &[usize]) -> f64 {
    let k = fx.len();
    let mut total = 0.0;
    for (gx, gy) in fx.iter().zip(fy) {
        let m = gx[0].nrows();
        let mut ax = CMatrix::zeros(m, m);
        let mut ay = CMatrix::zeros(m, m);
        for &i in ix {
            ax += &gx[i];
        }
        for &i in iy {
            ay += &gy[i];
        }
        let diff = ax.unscale(ix.len() as f64) - ay.unscale(iy.len() as f64);
        total += diff.norm_squared();
    }
    total / k as f64
}

fn check_pair(x: &PathBatch, y: &PathBatch, params: &EpcfdParams) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    params.check(x)?;
    params.check(y)
}

/// Sharp upper bound of EPCFD^2 for maps of order `m`: both mean features
/// have HS norm at most `sqrt(m)`, so their squared distance is at most
/// `4m`. This implies `2m^2` for `m >= 2`; at `m = 1` the value 4 is
/// attained by two point masses with opposite phases.
pub fn epcfd_ceiling(m: usize) -> f64 {
    4.0 * m as f64
}

/// `(1/k) sum_j |Phi_X(M_j) - Phi_Y(M_j)|_HS^2` on lifted paths.
pub fn epcfd_sq(x: &PathBatch, y: &PathBatch, params: &EpcfdParams) -> Result<f64> {
    check_pair(x, y, params)?;
    let fx = features(x, params)?;
    let fy = features(y, params)?;
    let ix: Vec<usize> = (0..x.len()).collect();
    let iy: Vec<usize> = (0..y.len()).collect();
    Ok(epcfd_from_features(&fx, &ix, &fy, &iy))
}

/// Gradients of a path-side argument of EPCFD^2.
#[derive(Debug, Clone)]
pub struct SideGrad {
    /// Per sample, flat `(points, d)` gradient on the raw values.
    pub levels: Vec<Vec<f64>>,
    /// Per sample, flat gradient on the lifted increments.
    pub increments: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EpcfdGrad {
    pub value: f64,
    /// `maps[j][i]`: gradient for block `i` of map `j`, anti-Hermitian.
    pub maps: Vec<Vec<CMatrix>>,
    pub x: SideGrad,
    pub y: SideGrad,
}

struct SideWork {
    incs: Vec<Vec<f64>>,
    grad_incs: Vec<Vec<f64>>,
}

/// EPCFD^2 and its exact gradient with respect to the maps and both
/// batches. Maps are processed one at a time to bound memory.
pub fn epcfd_grad(x: &PathBatch, y: &PathBatch, params: &EpcfdParams) -> Result<EpcfdGrad> {
    check_pair(x, y, params)?;
    let (m, d, k) = (params.m(), params.d(), params.k());
    let lift = params.lift;
    let prep = |b: &PathBatch| SideWork {
        incs: b.items().iter().map(|s| lift.increments(s)).collect(),
        grad_incs: b
            .items()
            .iter()
            .map(|s| vec![0.0; lift.segments(s.len()) * d])
            .collect(),
    };
    let mut sx = prep(x);
    let mut sy = prep(y);
    let mut value = 0.0;
    let mut grad_maps = Vec::with_capacity(k);
    for map in &params.maps {
        let blocks = split_blocks(map);
        let fwd_x = sx
            .incs
            .par_iter()
            .map(|v| forward(v, d, &blocks))
            .collect::<Result<Vec<_>>>()?;
        let fwd_y = sy
            .incs
            .par_iter()
            .map(|v| forward(v, d, &blocks))
            .collect::<Result<Vec<_>>>()?;
        let ends_x: Vec<CMatrix> = fwd_x.iter().map(|f| f.endpoint().to_cmatrix()).collect();
        let ends_y: Vec<CMatrix> = fwd_y.iter().map(|f| f.endpoint().to_cmatrix()).collect();
        let diff = mean(&ends_x, m) - mean(&ends_y, m);
        value += diff.norm_squared();
        let cot_x = SMat::from_cmatrix(&diff.scale(2.0 / (k * x.len()) as f64));
        let cot_y = SMat::from_cmatrix(&diff.scale(-2.0 / (k * y.len()) as f64));
        let side = |fwds: &[crate::development::Forward], work: &mut SideWork, cot: &SMat| {
            fwds.par_iter()
                .zip(work.incs.par_iter())
                .zip(work.grad_incs.par_iter_mut())
                .map(|((f, incs), gi)| {
                    let mut gm = vec![SMat::zeros(m); d];
                    let mut local = vec![0.0; gi.len()];
                    backward(f, incs, d, &blocks, cot, &mut gm, Some(&mut local));
                    for (a, b) in gi.iter_mut().zip(local) {
                        *a += b;
                    }
                    gm
                })
                .collect::<Vec<_>>()
        };
        let mut gm = vec![SMat::zeros(m); d];
        for part in side(&fwd_x, &mut sx, &cot_x)
            .into_iter()
            .chain(side(&fwd_y, &mut sy, &cot_y))
        {
            for (a, b) in gm.iter_mut().zip(&part) {
                a.axpy(1.0, b);
            }
        }
        grad_maps.push(
            gm.iter()
                .map(|g| crate::lie::project_anti_hermitian(&g.to_cmatrix()))
                .collect(),
        );
    }
    let finish = |b: &PathBatch, work: SideWork| SideGrad {
        levels: b
            .items()
            .iter()
            .zip(&work.grad_incs)
            .map(|(s, g)| lift.levels_grad(g, s.len(), s.dim()))
            .collect(),
        increments: work.grad_incs,
    };
    Ok(EpcfdGrad {
        value: value / k as f64,
        maps: grad_maps,
        x: finish(x, sx),
        y: finish(y, sy),
    })
}

/// How the MMD oracle evaluates its kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelRoute {
    /// `Re tr U(x * reverse(y))`: one development of the concatenated
    /// forward-and-reversed path per pair.
    #[default]
    PathConcat,
    /// `Re tr (U(x) U(y)*)` from per-sample features.
    FeatureGram,
}

/// Kernel `(1/k) sum_j Re tr U_{M_j}(x * reverse(y))` on lifted paths.
pub fn pcfd_kernel(x: &TimeSeries, y: &TimeSeries, params: &EpcfdParams) -> Result<f64> {
    let lx = params.lift.path(x)?;
    let ly = params.lift.path(y)?;
    kernel_lifted(&lx, &ly, params)
}

fn kernel_lifted(lx: &TimeSeries, ly: &TimeSeries, params: &EpcfdParams) -> Result<f64> {
    let joined = concat(lx, &reverse(ly))?;
    let incs = increments(&joined);
    let mut total = 0.0;
    for map in &params.maps {
        let u = endpoint_of(&incs, params.d(), map)?;
        total += u.trace().re;
    }
    Ok(total / params.k() as f64)
}

/// Biased (V-statistic) MMD^2 with the path development kernel. Quadratic
/// in the batch sizes, against the linear cost of [`epcfd_sq`].
pub fn mmd_oracle(x: &PathBatch, y: &PathBatch, params: &EpcfdParams, route: KernelRoute) -> Result<f64> {
    check_pair(x, y, params)?;
    let (n, n2) = (x.len(), y.len());
    let kxx;
    let kyy;
    let kxy;
    match route {
        KernelRoute::PathConcat => {
            let lx = x.items().iter().map(|s| params.lift.path(s)).collect::<Result<Vec<_>>>()?;
            let ly = y.items().iter().map(|s| params.lift.path(s)).collect::<Result<Vec<_>>>()?;
            let sum = |a: &[TimeSeries], b: &[TimeSeries]| -> Result<f64> {
                let rows = a
                    .par_iter()
                    .map(|p| b.iter().map(|q| kernel_lifted(p, q, params)).sum::<Result<f64>>())
                    .collect::<Result<Vec<_>>>()?;
                Ok(rows.iter().sum())
            };
            kxx = sum(&lx, &lx)?;
            kyy = sum(&ly, &ly)?;
            kxy = sum(&lx, &ly)?;
        }
        KernelRoute::FeatureGram => {
            let fx = features(x, params)?;
            let fy = features(y, params)?;
            let gram = |a: &[Vec<CMatrix>], b: &[Vec<CMatrix>]| -> f64 {
                let mut total = 0.0;
                for (ga, gb) in a.iter().zip(b) {
                    total += ga
                        .par_iter()
                        .map(|u| gb.iter().map(|v| real_inner(u, v)).sum::<f64>())
                        .collect::<Vec<_>>()
                        .iter()
                        .sum::<f64>();
                }
                total / params.k() as f64
            };
            kxx = gram(&fx, &fx);
            kyy = gram(&fy, &fy);
            kxy = gram(&fx, &fy);
        }
    }
    let (n, n2) = (n as f64, n2 as f64);
    Ok((kxx / (n * n) + kyy / (n2 * n2) - 2.0 * kxy / (n * n2)).max(0.0))
}
