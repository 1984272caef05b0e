//! The Lie algebra u(m) of anti-Hermitian matrices, the unitary group U(m),
//! and linear maps from R^d into u(m).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::small::{SMat, SandwichScratch, SplitExpm};
use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Tolerance for `A* + A = 0`, relative to `max(1, max |A_ij|)`.
pub const ANTI_HERMITIAN_TOL: f64 = 1e-12;

/// Largest entrywise deviation `|A_ij + conj(A_ji)|`.
pub fn anti_hermitian_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[(i, j)] + a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Orthogonal projection onto u(m): `(A - A*) / 2`.
pub fn project_anti_hermitian(a: &CMatrix) -> CMatrix {
    (a - a.adjoint()).scale(0.5)
}

/// An element of u(m).
#[derive(Debug, Clone, PartialEq)]
pub struct AntiHermitian(CMatrix);

impl AntiHermitian {
    pub fn new(a: CMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "anti-Hermitian matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let scale = a.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let defect = anti_hermitian_defect(&a);
        if defect > ANTI_HERMITIAN_TOL * scale {
            return Err(Error::NotAntiHermitian(defect));
        }
        Ok(Self(a))
    }

    /// Project an arbitrary square matrix onto u(m).
    pub fn projected(a: &CMatrix) -> Self {
        Self(project_anti_hermitian(a))
    }

    pub fn zeros(m: usize) -> Self {
        Self(CMatrix::zeros(m, m))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
}

/// An element of U(m).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix(CMatrix);

impl UnitaryMatrix {
    pub fn identity(m: usize) -> Self {
        Self(CMatrix::identity(m, m))
    }

    /// Wrap a matrix known to be unitary (e.g. a product of exponentials).
    pub(crate) fn from_matrix_unchecked(u: CMatrix) -> Self {
        Self(u)
    }

    /// Wrap after checking `|U*U - I|_HS <= tol`.
    pub fn new(u: CMatrix, tol: f64) -> Result<Self> {
        let defect = unitarity_defect(&u);
        if defect > tol {
            return Err(Error::Numerical(format!(
                "matrix is not unitary (|U*U - I|_HS = {defect:e})"
            )));
        }
        Ok(Self(u))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }
}

/// `|U*U - I|_HS`.
pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let m = u.nrows();
    (u.adjoint() * u - CMatrix::identity(m, m)).norm()
}

/// Nearest unitary matrix in Frobenius norm (polar factor).
pub fn polar_unitary(u: &CMatrix) -> Result<CMatrix> {
    let svd = u.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(w), Some(v_t)) => Ok(w * v_t),
        _ => Err(Error::Numerical("SVD failed in polar projection".into())),
    }
}

/// Hilbert-Schmidt distance `sqrt(tr[(A-B)(A-B)*])`.
pub fn hs_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

/// Real inner product `Re tr(A B*)`.
pub fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

/// Spectral data of `exp(A)` for anti-Hermitian `A = iH`, reused by the
/// Fréchet derivative and its adjoint.
#[derive(Debug, Clone)]
pub struct ExpmDecomposition {
    inner: SplitExpm,
    /// Eigenvalues of `H = -iA`.
    pub lambda: Vec<f64>,
    /// Eigenvectors of `H` as columns.
    pub vectors: CMatrix,
    pub exp: CMatrix,
}

impl ExpmDecomposition {
    pub fn new(a: &CMatrix) -> Result<Self> {
        let inner = SplitExpm::new(&SMat::from_cmatrix(a))?;
        Ok(Self {
            lambda: inner.lambda().to_vec(),
            vectors: inner.v.to_cmatrix(),
            exp: inner.exp.to_cmatrix(),
            inner,
        })
    }

    /// Directional derivative of `exp` at `A` in direction `E`.
    pub fn frechet(&self, e: &CMatrix) -> CMatrix {
        let m = e.nrows();
        let mut out = SMat::zeros(m);
        self.inner
            .frechet(&SMat::from_cmatrix(e), &mut out, &mut SandwichScratch::new(m));
        out.to_cmatrix()
    }

    /// Adjoint of [`Self::frechet`] under `<X, Y> = Re tr(X Y*)`: maps a
    /// cotangent of `exp(A)` to the cotangent of `A`.
    pub fn frechet_adjoint(&self, g: &CMatrix) -> CMatrix {
        let m = g.nrows();
        let mut out = SMat::zeros(m);
        self.inner
            .frechet_adjoint(&SMat::from_cmatrix(g), &mut out, &mut SandwichScratch::new(m));
        out.to_cmatrix()
    }
}

/// `exp(A)` for `A` in u(m), via the eigendecomposition of `-iA`.
pub fn expm(a: &AntiHermitian) -> Result<UnitaryMatrix> {
    Ok(UnitaryMatrix(ExpmDecomposition::new(a.matrix())?.exp))
}

/// Fréchet derivative of the matrix exponential at `A` in direction `E`.
pub fn expm_frechet(a: &AntiHermitian, e: &AntiHermitian) -> Result<CMatrix> {
    if a.order() != e.order() {
        return Err(Error::ShapeMismatch(format!(
            "expm_frechet: orders {} and {}",
            a.order(),
            e.order()
        )));
    }
    Ok(ExpmDecomposition::new(a.matrix())?.frechet(e.matrix()))
}

/// Scalar law used to draw the entries of random u(m) elements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ScalarLaw {
    #[default]
    StandardNormal,
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    PointMass { value: f64 },
}

impl ScalarLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        Ok(match *self {
            ScalarLaw::StandardNormal => StandardNormal.sample(rng),
            ScalarLaw::Normal { mean, std } => Normal::new(mean, std)
                .map_err(|e| Error::InvalidParameter(format!("normal law: {e}")))?
                .sample(rng),
            ScalarLaw::Uniform { low, high } => Uniform::new(low, high)
                .map_err(|e| Error::InvalidParameter(format!("uniform law: {e}")))?
                .sample(rng),
            ScalarLaw::PointMass { value } => value,
        })
    }
}

/// Draw one element of u(m): `R + i(C + D)` with `R = (A^T - A)/sqrt 2`,
/// `C = (E^T + E)/sqrt 2` for the off-diagonal part `E` of `B` and `D` its
/// diagonal, where `A`, `B` have i.i.d. entries from `law`.
pub fn sample_anti_hermitian<R: Rng + ?Sized>(
    m: usize,
    law: &ScalarLaw,
    rng: &mut R,
) -> Result<AntiHermitian> {
    if m == 0 {
        return Err(Error::InvalidParameter("order m must be at least 1".into()));
    }
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DMatrix::<f64>::zeros(m, m);
    for v in a.iter_mut() {
        *v = law.sample(rng)?;
    }
    for v in b.iter_mut() {
        *v = law.sample(rng)?;
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let block = CMatrix::from_fn(m, m, |i, j| {
        let r = s * (a[(j, i)] - a[(i, j)]);
        let imag = if i == j {
            b[(i, i)]
        } else {
            s * (b[(j, i)] + b[(i, j)])
        };
        Complex64::new(r, imag)
    });
    Ok(AntiHermitian(block))
}

/// A linear map `R^d -> u(m)`, `M(x) = sum_i x_i theta_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DevelopmentMap {
    blocks: Vec<AntiHermitian>,
}

impl DevelopmentMap {
    pub fn new(blocks: Vec<AntiHermitian>) -> Result<Self> {
        let m = blocks
            .first()
            .ok_or_else(|| Error::InvalidParameter("a development map needs d >= 1 blocks".into()))?
            .order();
        if let Some(b) = blocks.iter().find(|b| b.order() != m) {
            return Err(Error::ShapeMismatch(format!(
                "block of order {} in a map of order {m}",
                b.order()
            )));
        }
        Ok(Self { blocks })
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            blocks: (0..d).map(|_| AntiHermitian::zeros(m)).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.blocks[0].order()
    }

    pub fn dim(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[AntiHermitian] {
        &self.blocks
    }

    /// Add `step * delta_i` to each block and re-project onto u(m).
    pub fn update(&mut self, deltas: &[CMatrix], step: f64) {
        for (b, d) in self.blocks.iter_mut().zip(deltas) {
            let updated = &b.0 + d.scale(step);
            b.0 = project_anti_hermitian(&updated);
        }
    }

    /// `M(v)` written into a preallocated buffer.
    pub(crate) fn apply_into(&self, v: &[f64], out: &mut CMatrix) {
        out.fill(Complex64::new(0.0, 0.0));
        for (b, &x) in self.blocks.iter().zip(v) {
            if x != 0.0 {
                out.zip_apply(&b.0, |o, t| *o += t * x);
            }
        }
    }
}

/// `M(v) = sum_i v_i theta_i`.
pub fn apply_map(map: &DevelopmentMap, v: &[f64]) -> Result<AntiHermitian> {
    if v.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            found: v.len(),
        });
    }
    let m = map.order();
    let mut out = CMatrix::zeros(m, m);
    map.apply_into(v, &mut out);
    Ok(AntiHermitian(out))
}

/// Draw a development map with `d` independent blocks.
pub fn sample_map<R: Rng + ?Sized>(
    m: usize,
    d: usize,
    law: &ScalarLaw,
    rng: &mut R,
) -> Result<DevelopmentMap> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension d must be at least 1".into()));
    }
    let blocks = (0..d)
        .map(|_| sample_anti_hermitian(m, law, rng))
        .collect::<Result<Vec<_>>>()?;
    DevelopmentMap::new(blocks)
}

/// `sup_{|v|=1} |M(v)|_HS`: the largest singular value of the map flattened
/// to a real `2 m^2 x d` matrix.
pub fn operator_norm(map: &DevelopmentMap) -> f64 {
    let d = map.dim();
    // Gram matrix G_ab = <theta_a, theta_b>
    let gram = DMatrix::<f64>::from_fn(d, d, |a, b| {
        real_inner(map.blocks[a].matrix(), map.blocks[b].matrix())
    });
    let eig = gram.symmetric_eigen();
    eig.eigenvalues.iter().copied().fold(0.0, f64::max).sqrt()
}

/// Flatten a block row-major with interleaved `(re, im)`.
pub(crate) fn block_to_interleaved(a: &CMatrix) -> Vec<f64> {
    let m = a.nrows();
    let mut out = Vec::with_capacity(2 * m * m);
    for i in 0..m {
        for j in 0..m {
            out.push(a[(i, j)].re);
            out.push(a[(i, j)].im);
        }
    }
    out
}

pub(crate) fn block_from_interleaved(m: usize, data: &[f64]) -> Result<CMatrix> {
    if data.len() != 2 * m * m {
        return Err(Error::Format(format!(
            "block of order {m} needs {} numbers, got {}",
            2 * m * m,
            data.len()
        )));
    }
    Ok(CMatrix::from_fn(m, m, |i, j| {
        let k = 2 * (i * m + j);
        Complex64::new(data[k], data[k + 1])
    }))
}
