//! Eigendecomposition of small dense Hermitian matrices.
//!
//! Householder reduction to a complex Hermitian tridiagonal form, a diagonal
//! phase change that makes the tridiagonal real symmetric, then implicit QL
//! with Wilkinson shifts on the real tridiagonal. Works on flat split
//! real/imaginary buffers and never allocates inside the iteration.

use std::cell::RefCell;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// `H = V diag(values) V*` with `V` unitary.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: DMatrix<Complex64>,
}

/// Decompose a Hermitian matrix. Only the lower triangle is read.
pub fn hermitian_eigen(h: &DMatrix<Complex64>) -> Result<HermitianEigen> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            h.ncols()
        )));
    }
    let mut hr = vec![0.0; n * n];
    let mut hi = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            hr[i * n + j] = h[(i, j)].re;
            hi[i * n + j] = h[(i, j)].im;
        }
    }
    let mut values = vec![0.0; n];
    let mut vr = vec![0.0; n * n];
    let mut vi = vec![0.0; n * n];
    eigh_split(&hr, &hi, n, &mut values, &mut vr, &mut vi)?;
    Ok(HermitianEigen {
        values,
        vectors: DMatrix::from_fn(n, n, |r, c| Complex64::new(vr[r * n + c], vi[r * n + c])),
    })
}

/// Split-storage core of [`hermitian_eigen`]: reads the lower triangle of
/// `(hr, hi)` and writes eigenvectors as the columns of row-major `(vr, vi)`.
pub(crate) fn eigh_split(
    hr: &[f64],
    hi: &[f64],
    n: usize,
    values: &mut [f64],
    vr: &mut [f64],
    vi: &mut [f64],
) -> Result<()> {
    WORKSPACE.with(|w| {
        let mut ws = w.borrow_mut();
        ws.reset(n);
        for i in 0..n {
            for j in 0..i {
                let (re, im) = (hr[i * n + j], hi[i * n + j]);
                ws.set(i, j, re, im);
            }
            ws.ar[i * n + i] = hr[i * n + i];
        }
        ws.solve(values, vr, vi)
    })
}

/// Eigendecomposition of `H = -iA` for anti-Hermitian `A = (ar, ai)`, so
/// that `A = V diag(i values) V*`.
pub(crate) fn eigh_anti_hermitian(
    ar: &[f64],
    ai: &[f64],
    n: usize,
    values: &mut [f64],
    vr: &mut [f64],
    vi: &mut [f64],
) -> Result<()> {
    WORKSPACE.with(|w| {
        let mut ws = w.borrow_mut();
        ws.reset(n);
        for i in 0..n {
            for j in 0..i {
                // -i (x + iy) = y - ix
                let (re, im) = (ai[i * n + j], -ar[i * n + j]);
                ws.set(i, j, re, im);
            }
            ws.ar[i * n + i] = ai[i * n + i];
        }
        ws.solve(values, vr, vi)
    })
}

thread_local! {
    static WORKSPACE: RefCell<Workspace> = RefCell::new(Workspace::default());
}

/// Split real/imaginary row-major buffers, reused between calls.
#[derive(Default)]
struct Workspace {
    n: usize,
    ar: Vec<f64>,
    ai: Vec<f64>,
    qr: Vec<f64>,
    qi: Vec<f64>,
    zt: Vec<f64>,
    off: Vec<f64>,
    ph: Vec<(f64, f64)>,
    buf: Vec<f64>,
}

impl Workspace {
    fn reset(&mut self, n: usize) {
        self.n = n;
        for v in [&mut self.ar, &mut self.ai, &mut self.qr, &mut self.qi, &mut self.zt] {
            v.clear();
            v.resize(n * n, 0.0);
        }
        for i in 0..n {
            self.qr[i * n + i] = 1.0;
            self.zt[i * n + i] = 1.0;
        }
        self.off.clear();
        self.off.resize(n, 0.0);
        self.ph.clear();
        self.ph.resize(n, (1.0, 0.0));
        self.buf.clear();
        self.buf.resize(4 * n, 0.0);
    }

    /// Set entry `(i, j)` and its Hermitian mirror.
    fn set(&mut self, i: usize, j: usize, re: f64, im: f64) {
        let n = self.n;
        self.ar[i * n + j] = re;
        self.ai[i * n + j] = im;
        self.ar[j * n + i] = re;
        self.ai[j * n + i] = -im;
    }

    fn solve(&mut self, values: &mut [f64], vr: &mut [f64], vi: &mut [f64]) -> Result<()> {
        let n = self.n;
        self.tridiagonalize();
        for (i, v) in values.iter_mut().enumerate() {
            *v = self.ar[i * n + i];
        }
        // phase of the diagonal change of basis
        let ph = &mut self.ph;
        for k in 0..n.saturating_sub(1) {
            let (er, ei) = (self.ar[(k + 1) * n + k], self.ai[(k + 1) * n + k]);
            let r = (er * er + ei * ei).sqrt();
            self.off[k] = r;
            ph[k + 1] = if r > 0.0 {
                let (pr, pi) = ph[k];
                let (ur, ui) = (er / r, ei / r);
                (pr * ur - pi * ui, pr * ui + pi * ur)
            } else {
                ph[k]
            };
        }
        // rows of zt become the eigenvectors of the real tridiagonal
        tql2(values, &mut self.off, &mut self.zt, n)?;

        // V = Q diag(phase) Z
        let (qr, qi) = (&mut self.qr, &mut self.qi);
        for (rr, ri) in qr.chunks_exact_mut(n).zip(qi.chunks_exact_mut(n)) {
            for ((a, b), &(pr, pi)) in rr.iter_mut().zip(ri.iter_mut()).zip(ph.iter()) {
                let (x, y) = (*a, *b);
                *a = x * pr - y * pi;
                *b = x * pi + y * pr;
            }
        }
        for (((rr, ri), out_r), out_i) in qr
            .chunks_exact(n)
            .zip(qi.chunks_exact(n))
            .zip(vr.chunks_exact_mut(n))
            .zip(vi.chunks_exact_mut(n))
        {
            for ((o_r, o_i), zc) in out_r.iter_mut().zip(out_i.iter_mut()).zip(self.zt.chunks_exact(n)) {
                let mut sr = 0.0;
                let mut si = 0.0;
                for ((&a, &b), &z) in rr.iter().zip(ri).zip(zc) {
                    sr += a * z;
                    si += b * z;
                }
                *o_r = sr;
                *o_i = si;
            }
        }
        Ok(())
    }

    fn tridiagonalize(&mut self) {
        let n = self.n;
        let (ar, ai, qr, qi) = (&mut self.ar, &mut self.ai, &mut self.qr, &mut self.qi);
        let (vr, rest) = self.buf.split_at_mut(n);
        let (vi, rest) = rest.split_at_mut(n);
        let (wr, wi) = rest.split_at_mut(n);
        for k in 0..n.saturating_sub(2) {
            let lo = k + 1;
            let m = n - lo;
            let tail: f64 = (lo + 1..n)
                .map(|i| ar[i * n + k] * ar[i * n + k] + ai[i * n + k] * ai[i * n + k])
                .sum();
            if tail == 0.0 {
                continue;
            }
            let (x0r, x0i) = (ar[lo * n + k], ai[lo * n + k]);
            let x0_abs = (x0r * x0r + x0i * x0i).sqrt();
            let norm = (tail + x0_abs * x0_abs).sqrt();
            let (phr, phi) = if x0_abs > 0.0 {
                (x0r / x0_abs, x0i / x0_abs)
            } else {
                (1.0, 0.0)
            };
            let (alr, ali) = (-phr * norm, -phi * norm);
            let (v_r, v_i) = (&mut vr[..m], &mut vi[..m]);
            for j in 0..m {
                v_r[j] = ar[(lo + j) * n + k];
                v_i[j] = ai[(lo + j) * n + k];
            }
            v_r[0] -= alr;
            v_i[0] -= ali;
            let vnorm = v_r
                .iter()
                .zip(v_i.iter())
                .map(|(a, b)| a * a + b * b)
                .sum::<f64>()
                .sqrt();
            if vnorm == 0.0 {
                continue;
            }
            let inv = 1.0 / vnorm;
            v_r.iter_mut().for_each(|x| *x *= inv);
            v_i.iter_mut().for_each(|x| *x *= inv);
            let (v_r, v_i) = (&*v_r, &*v_i);
            let (w_r, w_i) = (&mut wr[..m], &mut wi[..m]);
            // p = A22 v, kappa = Re(v* p), w = p - kappa v
            let mut kappa = 0.0;
            for j in 0..m {
                let row = (lo + j) * n + lo;
                let (rr, ri) = (&ar[row..row + m], &ai[row..row + m]);
                let mut pr = 0.0;
                let mut pi = 0.0;
                for (((&a, &b), &x), &y) in rr.iter().zip(ri).zip(v_r).zip(v_i) {
                    pr += a * x - b * y;
                    pi += a * y + b * x;
                }
                w_r[j] = pr;
                w_i[j] = pi;
                kappa += v_r[j] * pr + v_i[j] * pi;
            }
            for j in 0..m {
                w_r[j] -= kappa * v_r[j];
                w_i[j] -= kappa * v_i[j];
            }
            let (w_r, w_i) = (&*w_r, &*w_i);
            // A22 -= 2 (v w* + w v*)
            for i in 0..m {
                let (vri, vii, wri, wii) = (v_r[i], v_i[i], w_r[i], w_i[i]);
                let row = (lo + i) * n + lo;
                let row_r = &mut ar[row..row + m];
                for (((o, &vrj), &vij), (&wrj, &wij)) in
                    row_r.iter_mut().zip(v_r).zip(v_i).zip(w_r.iter().zip(w_i))
                {
                    *o -= 2.0 * (vri * wrj + vii * wij + wri * vrj + wii * vij);
                }
                let row_i = &mut ai[row..row + m];
                for (((o, &vrj), &vij), (&wrj, &wij)) in
                    row_i.iter_mut().zip(v_r).zip(v_i).zip(w_r.iter().zip(w_i))
                {
                    *o -= 2.0 * (vii * wrj - vri * wij + wii * vrj - wri * vij);
                }
            }
            ar[lo * n + k] = alr;
            ai[lo * n + k] = ali;
            ar[k * n + lo] = alr;
            ai[k * n + lo] = -ali;
            for i in lo + 1..n {
                ar[i * n + k] = 0.0;
                ai[i * n + k] = 0.0;
                ar[k * n + i] = 0.0;
                ai[k * n + i] = 0.0;
            }
            // Q <- Q (I - 2 v v*)
            for r in 0..n {
                let row = r * n + lo;
                let (rr, ri) = (&qr[row..row + m], &qi[row..row + m]);
                let mut sr = 0.0;
                let mut si = 0.0;
                for (((&a, &b), &x), &y) in rr.iter().zip(ri).zip(v_r).zip(v_i) {
                    sr += a * x - b * y;
                    si += a * y + b * x;
                }
                let (sr, si) = (2.0 * sr, 2.0 * si);
                for ((o, &x), &y) in qr[row..row + m].iter_mut().zip(v_r).zip(v_i) {
                    *o -= sr * x + si * y;
                }
                for ((o, &x), &y) in qi[row..row + m].iter_mut().zip(v_r).zip(v_i) {
                    *o -= si * x - sr * y;
                }
            }
        }
    }
}

/// Symmetric tridiagonal QL with implicit shifts. `d` is the diagonal, `e[i]`
/// couples `i` and `i + 1`. On exit `d` holds eigenvalues and `zt` holds the
/// rotated basis vectors, one per contiguous row.
fn tql2(d: &mut [f64], e: &mut [f64], zt: &mut [f64], n: usize) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::Numerical(
                        "tridiagonal QL iteration did not converge".into(),
                    ));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = (p * p + 1.0).sqrt();
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = (p * p + e[i] * e[i]).sqrt();
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (head, tail) = zt.split_at_mut((i + 1) * n);
                    let zi = &mut head[i * n..];
                    let zi1 = &mut tail[..n];
                    for (a, b) in zi[..n].iter_mut().zip(zi1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
