//! Small dense complex matrices in split real/imaginary row-major storage,
//! used on the hot path of development and its gradient.

use num_complex::Complex64;

use crate::eigen::eigh_anti_hermitian;
use crate::error::Result;
use crate::lie::CMatrix;

/// Row-major `m x m` complex matrix; one buffer holding the real parts
/// followed by the imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SMat {
    pub m: usize,
    data: Vec<f64>,
}

impl SMat {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            data: vec![0.0; 2 * m * m],
        }
    }

    pub fn identity(m: usize) -> Self {
        let mut s = Self::zeros(m);
        for i in 0..m {
            s.data[i * m + i] = 1.0;
        }
        s
    }

    pub fn from_cmatrix(a: &CMatrix) -> Self {
        let m = a.nrows();
        let mut s = Self::zeros(m);
        let (re, im) = s.parts_mut();
        for i in 0..m {
            for j in 0..m {
                let z = a[(i, j)];
                re[i * m + j] = z.re;
                im[i * m + j] = z.im;
            }
        }
        s
    }

    pub fn to_cmatrix(&self) -> CMatrix {
        let m = self.m;
        let (re, im) = (self.re(), self.im());
        CMatrix::from_fn(m, m, |i, j| Complex64::new(re[i * m + j], im[i * m + j]))
    }

    pub fn re(&self) -> &[f64] {
        &self.data[..self.m * self.m]
    }

    pub fn im(&self) -> &[f64] {
        &self.data[self.m * self.m..]
    }

    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let n = self.m * self.m;
        self.data.split_at_mut(n)
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(0.0);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &SMat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `Re tr(self other*)`.
    pub fn real_inner(&self, other: &SMat) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// `out = a b`.
pub(crate) fn mul(a: &SMat, b: &SMat, out: &mut SMat) {
    let m = a.m;
    out.fill_zero();
    let (ar, ai) = (a.re(), a.im());
    let (br, bi) = (b.re(), b.im());
    let (or, oi) = out.parts_mut();
    for (((o_r, o_i), a_r), a_i) in or
        .chunks_exact_mut(m)
        .zip(oi.chunks_exact_mut(m))
        .zip(ar.chunks_exact(m))
        .zip(ai.chunks_exact(m))
    {
        for (((&xr, &xi), b_r), b_i) in a_r.iter().zip(a_i).zip(br.chunks_exact(m)).zip(bi.chunks_exact(m)) {
            for (((o_r, o_i), &yr), &yi) in o_r.iter_mut().zip(o_i.iter_mut()).zip(b_r).zip(b_i) {
                *o_r += xr * yr - xi * yi;
                *o_i += xr * yi + xi * yr;
            }
        }
    }
}

/// `out = a* b`.
pub(crate) fn mul_adj_left(a: &SMat, b: &SMat, out: &mut SMat) {
    let m = a.m;
    out.fill_zero();
    let (ar, ai) = (a.re(), a.im());
    let (br, bi) = (b.re(), b.im());
    let (or, oi) = out.parts_mut();
    for (((a_r, a_i), b_r), b_i) in ar
        .chunks_exact(m)
        .zip(ai.chunks_exact(m))
        .zip(br.chunks_exact(m))
        .zip(bi.chunks_exact(m))
    {
        // row k of a contributes conj(a_ki) * (row k of b) to row i of out
        for (((&xr, &xi), o_r), o_i) in a_r.iter().zip(a_i).zip(or.chunks_exact_mut(m)).zip(oi.chunks_exact_mut(m)) {
            for (((o_r, o_i), &yr), &yi) in o_r.iter_mut().zip(o_i.iter_mut()).zip(b_r).zip(b_i) {
                *o_r += xr * yr + xi * yi;
                *o_i += xr * yi - xi * yr;
            }
        }
    }
}

/// `out = a b*`.
pub(crate) fn mul_adj_right(a: &SMat, b: &SMat, out: &mut SMat) {
    let m = a.m;
    let (ar, ai) = (a.re(), a.im());
    let (br, bi) = (b.re(), b.im());
    let (or, oi) = out.parts_mut();
    for (((a_r, a_i), o_r), o_i) in ar
        .chunks_exact(m)
        .zip(ai.chunks_exact(m))
        .zip(or.chunks_exact_mut(m))
        .zip(oi.chunks_exact_mut(m))
    {
        for (((o_r, o_i), b_r), b_i) in o_r.iter_mut().zip(o_i.iter_mut()).zip(br.chunks_exact(m)).zip(bi.chunks_exact(m)) {
            let mut sr = 0.0;
            let mut si = 0.0;
            for (((&xr, &xi), &yr), &yi) in a_r.iter().zip(a_i).zip(b_r).zip(b_i) {
                // x conj(y)
                sr += xr * yr + xi * yi;
                si += xi * yr - xr * yi;
            }
            *o_r = sr;
            *o_i = si;
        }
    }
}

/// Temporaries for [`SplitExpm::frechet_adjoint`], reusable across calls.
pub(crate) struct SandwichScratch {
    gamma: SMat,
    t1: SMat,
    t2: SMat,
}

impl SandwichScratch {
    pub fn new(m: usize) -> Self {
        Self {
            gamma: SMat::zeros(m),
            t1: SMat::zeros(m),
            t2: SMat::zeros(m),
        }
    }
}

/// `exp(A)` for anti-Hermitian `A` with the spectral data of `H = -iA`.
#[derive(Debug, Clone)]
pub(crate) struct SplitExpm {
    /// `lambda` followed by `cos(lambda)` and `sin(lambda)`.
    spec: Vec<f64>,
    /// Eigenvectors as columns.
    pub v: SMat,
    pub exp: SMat,
}

impl SplitExpm {
    pub fn new(a: &SMat) -> Result<Self> {
        let m = a.m;
        let mut spec = vec![0.0; 3 * m];
        let mut v = SMat::zeros(m);
        {
            let (vr, vi) = v.parts_mut();
            eigh_anti_hermitian(a.re(), a.im(), m, &mut spec[..m], vr, vi)?;
        }
        for i in 0..m {
            let (s, c) = spec[i].sin_cos();
            spec[m + i] = c;
            spec[2 * m + i] = s;
        }
        // exp = W V* with W = V diag(p)
        let mut exp = SMat::zeros(m);
        let (cos, sin) = (&spec[m..2 * m], &spec[2 * m..]);
        let (vr, vi) = (v.re(), v.im());
        let mut wr = vec![0.0; m * m];
        let mut wi = vec![0.0; m * m];
        for r in 0..m {
            for l in 0..m {
                let (xr, xi) = (vr[r * m + l], vi[r * m + l]);
                wr[r * m + l] = xr * cos[l] - xi * sin[l];
                wi[r * m + l] = xr * sin[l] + xi * cos[l];
            }
        }
        let (er, ei) = exp.parts_mut();
        for i in 0..m {
            let (pr, pi) = (&wr[i * m..(i + 1) * m], &wi[i * m..(i + 1) * m]);
            for j in 0..m {
                let (yr, yi) = (&vr[j * m..(j + 1) * m], &vi[j * m..(j + 1) * m]);
                let mut sr = 0.0;
                let mut si = 0.0;
                for l in 0..m {
                    sr += pr[l] * yr[l] + pi[l] * yi[l];
                    si += pi[l] * yr[l] - pr[l] * yi[l];
                }
                er[i * m + j] = sr;
                ei[i * m + j] = si;
            }
        }
        Ok(Self { spec, v, exp })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.spec[..self.v.m]
    }

    /// Divided differences of `exp` at the eigenvalues `i lambda`:
    /// `(e^{i l_a} - e^{i l_b}) / (i (l_a - l_b))`, which equals
    /// `e^{i(l_a+l_b)/2} sinc((l_a - l_b)/2)` and tends to `e^{i l_a}` on
    /// coincident eigenvalues.
    fn divided_differences(&self, g: &mut SMat) {
        let m = self.v.m;
        let lambda = &self.spec[..m];
        let (cos, sin) = (&self.spec[m..2 * m], &self.spec[2 * m..]);
        let (gr, gi) = g.parts_mut();
        for a in 0..m {
            for b in 0..m {
                let (la, lb) = (lambda[a], lambda[b]);
                let gap = la - lb;
                let (re, im) = if gap.abs() > 1e-3 {
                    // (p_a - p_b) / (i gap)
                    ((sin[a] - sin[b]) / gap, -(cos[a] - cos[b]) / gap)
                } else {
                    let half = 0.5 * gap;
                    let sinc = if half.abs() < 1e-8 {
                        1.0 - half * half / 6.0
                    } else {
                        half.sin() / half
                    };
                    let (s, c) = (0.5 * (la + lb)).sin_cos();
                    (c * sinc, s * sinc)
                };
                gr[a * m + b] = re;
                gi[a * m + b] = im;
            }
        }
    }

    /// `V ((V* E V) o Gamma) V*`, the derivative of `exp` in direction `E`.
    pub fn frechet(&self, e: &SMat, out: &mut SMat, scratch: &mut SandwichScratch) {
        self.sandwich(e, false, out, scratch);
    }

    /// The adjoint of [`Self::frechet`] under `Re tr(X Y*)`.
    pub fn frechet_adjoint(&self, g: &SMat, out: &mut SMat, scratch: &mut SandwichScratch) {
        self.sandwich(g, true, out, scratch);
    }

    fn sandwich(&self, x: &SMat, conj: bool, out: &mut SMat, s: &mut SandwichScratch) {
        let m = self.v.m;
        self.divided_differences(&mut s.gamma);
        mul_adj_left(&self.v, x, &mut s.t1);
        mul(&s.t1, &self.v, &mut s.t2);
        let sign = if conj { -1.0 } else { 1.0 };
        let (gr, gi) = (s.gamma.re(), s.gamma.im());
        let (tr, ti) = s.t2.parts_mut();
        for idx in 0..m * m {
            let (a, b) = (tr[idx], ti[idx]);
            let (c, d) = (gr[idx], sign * gi[idx]);
            tr[idx] = a * c - b * d;
            ti[idx] = a * d + b * c;
        }
        mul(&self.v, &s.t2, &mut s.t1);
        mul_adj_right(&s.t1, &self.v, out);
    }
}
