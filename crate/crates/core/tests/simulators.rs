use pcf_core::sim::{
    fbm_covariance, marginal, mean_var, simulate, simulate_bm_noise, simulate_volterra, SimKind, SimSpec,
};

/// Exact mean and variance of the Euler-Maruyama recursion for the OU
/// scheme, stepped deterministically.
fn euler_moments(t_end: f64, dt: f64) -> (f64, f64) {
    let (mu, theta, sigma) = (0.01, 0.02, 0.4);
    let (mut m, mut v) = (0.0, 1.0);
    let steps = (t_end / dt).round() as usize;
    for k in 0..steps {
        let t = k as f64 * dt;
        m += (mu * t - theta * m) * dt;
        v = (1.0 - theta * dt).powi(2) * v + sigma * sigma * dt;
    }
    (m, v)
}

#[test]
fn ou_marginals_match_the_scheme_and_the_sde() {
    let batch = simulate(&SimSpec::ou(10_000, 21)).unwrap();
    assert_eq!(batch.times().len(), 64);
    for t in [10usize, 30, 60] {
        let (m, v) = mean_var(&marginal(&batch, t, 0));
        let (em, ev) = euler_moments(t as f64, 0.1);
        let n = batch.len() as f64;
        assert!((m - em).abs() < 4.0 * (ev / n).sqrt(), "t={t} mean {m} vs {em}");
        assert!((v - ev).abs() < 4.0 * ev * (2.0 / n).sqrt(), "t={t} var {v} vs {ev}");
        let tf = t as f64;
        let am = 0.5 * tf - 25.0 * (1.0 - (-0.02 * tf).exp());
        let av = (-0.04 * tf).exp() + 4.0 * (1.0 - (-0.04 * tf).exp());
        assert!((em - am).abs() < 0.05 && (ev - av).abs() / av < 0.01, "t={t}: {em} {am} {ev} {av}");
    }
}

#[test]
fn fbm_sample_covariance_matches_the_formula() {
    let spec = SimSpec {
        dim: 1,
        n_steps: 8,
        dt: 1.0 / 8.0,
        ..SimSpec::fbm(0.2, 10_000, 22)
    };
    let batch = simulate(&spec).unwrap();
    let n = batch.len() as f64;
    let times = batch.times().to_vec();
    for i in 1..times.len() {
        for j in i..times.len() {
            let a = marginal(&batch, i, 0);
            let b = marginal(&batch, j, 0);
            let c: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n;
            let (cii, cjj, cij) = (
                fbm_covariance(0.2, times[i], times[i]),
                fbm_covariance(0.2, times[j], times[j]),
                fbm_covariance(0.2, times[i], times[j]),
            );
            let se = ((cii * cjj + cij * cij) / n).sqrt();
            assert!((c - cij).abs() < 3.0 * se, "({i},{j}) {c} vs {cij}");
        }
    }
}

#[test]
fn brownian_increments_have_variance_dt() {
    let spec = SimSpec {
        dim: 1,
        n_steps: 4,
        dt: 0.25,
        ..SimSpec::fbm(0.5, 10_000, 23)
    };
    let batch = simulate(&spec).unwrap();
    let n = batch.len() as f64;
    let inc = |k: usize| -> Vec<f64> {
        batch.items().iter().map(|s| s.row(k + 1)[0] - s.row(k)[0]).collect()
    };
    for k in 0..4 {
        let (_, v) = mean_var(&inc(k));
        assert!((v - 0.25).abs() < 3.0 * 0.25 * (2.0 / n).sqrt(), "{v}");
        for l in k + 1..4 {
            let c: f64 = inc(k).iter().zip(inc(l)).map(|(a, b)| a * b).sum::<f64>() / n;
            assert!(c.abs() < 3.0 * 0.25 / n.sqrt(), "{c}");
        }
    }
}

#[test]
fn bm_noise_has_unit_terminal_variance() {
    let batch = simulate_bm_noise(2, 16, 10_000, 24, false).unwrap();
    assert_eq!(batch.times().len(), 17);
    for c in 0..2 {
        let (_, v) = mean_var(&marginal(&batch, 16, c));
        assert!((v - 1.0).abs() < 3.0 * (2.0 / 10_000f64).sqrt(), "{v}");
    }
    let single = simulate_bm_noise(1, 1, 10_000, 25, false).unwrap();
    let (_, v) = mean_var(&marginal(&single, 1, 0));
    assert!((v - 1.0).abs() < 3.0 * (2.0 / 10_000f64).sqrt());
    let scaled = simulate_bm_noise(1, 16, 200, 26, true).unwrap();
    assert!(scaled.items().iter().all(|s| s.values().iter().all(|v| v.abs() <= 1.0)));
}

#[test]
fn seeds_reproduce_batches_bitwise() {
    for spec in [SimSpec::ou(5, 1), SimSpec::fbm(0.3, 5, 1), SimSpec::roughvol(5, 1), SimSpec::bm(2, 10, 5, 1)] {
        assert_eq!(simulate(&spec).unwrap(), simulate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 2;
        assert_ne!(simulate(&spec).unwrap(), simulate(&other).unwrap());
    }
}

#[test]
fn rough_volatility_price_is_a_martingale() {
    let batch = simulate(&SimSpec::roughvol(10_000, 27)).unwrap();
    let last = batch.times().len() - 1;
    let ratio: Vec<f64> = batch
        .items()
        .iter()
        .map(|s| (s.row(last)[0] - s.row(0)[0]).exp())
        .collect();
    let (m, v) = mean_var(&ratio);
    assert!((m - 1.0).abs() < 4.0 * (v / 10_000.0).sqrt(), "{m}");
}

#[test]
fn rough_volatility_without_vol_of_vol_is_flat() {
    let mut spec = SimSpec::roughvol(20, 28);
    if let SimKind::Roughvol { eta, .. } = &mut spec.kind {
        *eta = 0.0;
    }
    let batch = simulate(&spec).unwrap();
    for s in batch.items() {
        let v0 = s.row(0)[1];
        assert!(s.rows().all(|r| (r[1] - v0).abs() < 1e-12));
    }
}

#[test]
fn volterra_process_variance_approaches_t_to_the_2h() {
    let h = 0.25;
    let batch = simulate_volterra(h, 200, 0.005, 10_000, 29).unwrap();
    let (_, v) = mean_var(&marginal(&batch, 200, 0));
    assert!((v - 1.0).abs() < 0.05, "{v}");
}
