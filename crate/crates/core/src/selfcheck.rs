//! A quick invariant suite over seeded random fixtures, for checking a
//! build on a new machine.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::development::{develop, develop_grad};
use crate::error::Result;
use crate::lie::{
    expm_frechet, hs_distance, operator_norm, real_inner, sample_map, unitarity_defect, AntiHermitian, CMatrix,
    DevelopmentMap, ExpmDecomposition, ScalarLaw,
};
use crate::paths::{concat, difference, reverse, total_variation, PathBatch, TimeSeries};
use crate::pcfd::{epcfd_ceiling, epcfd_grad, epcfd_sq, mmd_oracle, EpcfdParams, KernelRoute, Lift};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub fixtures: usize,
    /// Largest error, or for the inequality checks the largest excess of
    /// the left side over the right side.
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn check(name: &str, fixtures: usize, errors: impl IntoIterator<Item = f64>, tolerance: f64) -> Check {
    let max_error = errors.into_iter().fold(0.0, |a: f64, e| if e.is_nan() { f64::NAN } else { a.max(e) });
    Check {
        name: name.into(),
        fixtures,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    }
}

fn path(n: usize, d: usize, scale: f64, rng: &mut StreamRng) -> TimeSeries {
    let v = (0..(n + 1) * d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    TimeSeries::uniform(v, d).expect("valid path")
}

fn map(m: usize, d: usize, scale: f64, rng: &mut StreamRng) -> Result<DevelopmentMap> {
    sample_map(m, d, &ScalarLaw::Normal { mean: 0.0, std: scale }, rng)
}

fn rand_ah(m: usize, rng: &mut StreamRng) -> CMatrix {
    let a = CMatrix::from_fn(m, m, |_, _| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    (&a - a.adjoint()).scale(0.5)
}

fn vec_rel(exact: &[f64], fd: &[f64]) -> f64 {
    let diff: f64 = exact.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    diff / exact.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12)
}

fn shifted(map: &DevelopmentMap, i: usize, dir: &CMatrix, s: f64) -> Result<DevelopmentMap> {
    let blocks = map
        .blocks()
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let mut a = b.matrix().clone();
            if j == i {
                a += dir.scale(s);
            }
            AntiHermitian::new(a)
        })
        .collect::<Result<Vec<_>>>()?;
    DevelopmentMap::new(blocks)
}

/// Run every check with `fixtures` random cases each (the gradient checks
/// use a tenth of that).
pub fn run(seed: u64, fixtures: usize) -> Result<Report> {
    let n = fixtures.max(1);
    let mut checks = Vec::new();

    let (mut unit, mut mult, mut rev, mut lip) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for f in 0..n as u64 {
        let mut rng = stream(seed, "selfcheck-group", f);
        let m = rng.random_range(1..=8);
        let d = rng.random_range(1..=3);
        let len = rng.random_range(1..=40);
        let mp = map(m, d, rng.random_range(0.1..2.0), &mut rng)?;
        let x = path(len, d, 1.0, &mut rng);
        let y = path(rng.random_range(1..=20), d, 1.0, &mut rng);
        let ux = develop(&x, &mp, false)?.endpoint;
        let uy = develop(&y, &mp, false)?.endpoint;
        unit.push(unitarity_defect(ux.matrix()));
        let uxy = develop(&concat(&x, &y)?, &mp, false)?.endpoint;
        mult.push(hs_distance(uxy.matrix(), &(ux.matrix() * uy.matrix()))?);
        let ur = develop(&reverse(&x), &mp, false)?.endpoint;
        rev.push(hs_distance(ur.matrix(), &ux.matrix().adjoint())?);
        let z = x.with_values(x.values().iter().map(|v| v + 0.1 * rng.random_range(-1.0..1.0)).collect(), d)?;
        let uz = develop(&z, &mp, false)?.endpoint;
        let lhs = hs_distance(ux.matrix(), uz.matrix())?;
        let rhs = operator_norm(&mp) * total_variation(&difference(&x, &z)?);
        lip.push(lhs - rhs);
    }
    checks.push(check("unitarity", n, unit, 1e-10));
    checks.push(check("multiplicativity", n, mult, 1e-10));
    checks.push(check("reverse_inverse", n, rev, 1e-10));
    checks.push(check("lipschitz", n, lip, 1e-12));

    let (mut bound, mut mmd) = (Vec::new(), Vec::new());
    let small = (n / 10).max(1);
    for f in 0..n as u64 {
        let mut rng = stream(seed, "selfcheck-metric", f);
        let m = rng.random_range(1..=6);
        let scale = 10f64.powf(rng.random_range(-2.0..3.0));
        let d = rng.random_range(1..=2);
        let len = rng.random_range(1..=10);
        let bx = PathBatch::new((0..rng.random_range(1..=6)).map(|_| path(len, d, scale, &mut rng)).collect())?;
        let by = PathBatch::new((0..rng.random_range(1..=6)).map(|_| path(len, d, scale, &mut rng)).collect())?;
        let params = EpcfdParams::sample_with(m, d + 1, rng.random_range(1..=3), f, &ScalarLaw::default(), Lift::default())?;
        let v = epcfd_sq(&bx, &by, &params)?;
        bound.push(v - epcfd_ceiling(m));
        if (f as usize) < small {
            for route in [KernelRoute::PathConcat, KernelRoute::FeatureGram] {
                mmd.push((v - mmd_oracle(&bx, &by, &params, route)?).abs());
            }
        }
    }
    checks.push(check("bound", n, bound, 0.0));
    checks.push(check("mmd_identity", small, mmd, 1e-8));

    let (mut fre, mut dev, mut epc) = (Vec::new(), Vec::new(), Vec::new());
    let h = 1e-6;
    for f in 0..small as u64 {
        let mut rng = stream(seed, "selfcheck-grad", f);
        let m = rng.random_range(1..=5);
        let a = rand_ah(m, &mut rng);
        let e = rand_ah(m, &mut rng);
        let plus = ExpmDecomposition::new(&(&a + e.scale(h)))?.exp;
        let minus = ExpmDecomposition::new(&(&a - e.scale(h)))?.exp;
        let fd = (plus - minus).unscale(2.0 * h);
        let exact = expm_frechet(&AntiHermitian::new(a)?, &AntiHermitian::new(e)?)?;
        fre.push((&fd - &exact).norm() / exact.norm().max(1e-12));

        let d = rng.random_range(1..=3);
        let mp = map(m, d, 0.5, &mut rng)?;
        let x = path(rng.random_range(1..=8), d, 1.0, &mut rng);
        let w = CMatrix::from_fn(m, m, |_, _| {
            Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        });
        let loss = |mp: &DevelopmentMap| -> Result<f64> { Ok(real_inner(develop(&x, mp, false)?.endpoint.matrix(), &w)) };
        let res = develop(&x, &mp, true)?;
        let g = develop_grad(&x, &mp, &res, &w)?;
        let (mut ex, mut fdv) = (Vec::new(), Vec::new());
        for i in 0..d {
            let dir = rand_ah(m, &mut rng);
            fdv.push((loss(&shifted(&mp, i, &dir, h)?)? - loss(&shifted(&mp, i, &dir, -h)?)?) / (2.0 * h));
            ex.push(real_inner(&g.map[i], &dir));
        }
        dev.push(vec_rel(&ex, &fdv));

        let bx = PathBatch::new((0..3).map(|_| path(4, d, 1.0, &mut rng)).collect())?;
        let by = PathBatch::new((0..2).map(|_| path(4, d, 1.0, &mut rng)).collect())?;
        let params = EpcfdParams::sample_with(m, d + 1, 2, f, &ScalarLaw::default(), Lift::default())?;
        let eg = epcfd_grad(&bx, &by, &params)?;
        let (mut ex, mut fdv) = (Vec::new(), Vec::new());
        for j in 0..params.k() {
            for i in 0..params.d() {
                let dir = rand_ah(m, &mut rng);
                let at = |s: f64| -> Result<f64> {
                    let mut p = params.clone();
                    p.maps[j] = shifted(&p.maps[j], i, &dir, s)?;
                    epcfd_sq(&bx, &by, &p)
                };
                fdv.push((at(h)? - at(-h)?) / (2.0 * h));
                ex.push(real_inner(&eg.maps[j][i], &dir));
            }
        }
        epc.push(vec_rel(&ex, &fdv));
    }
    checks.push(check("expm_frechet_gradient", small, fre, 1e-4));
    checks.push(check("develop_gradient", small, dev, 1e-4));
    checks.push(check("epcfd_gradient", small, epc, 1e-4));

    Ok(Report {
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
