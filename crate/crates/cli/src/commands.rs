use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use pcf_core::disc::{train_discriminator, DiscConfig};
use pcf_core::eval::{marginal_report, sig_mmd, sig_mmd_test};
use pcf_core::gan::{run, GanConfig, GanMode, GanState, Update};
use pcf_core::io::{load_batch, load_descriptor, write_csv, CsvLayout};
use pcf_core::lie::ScalarLaw;
use pcf_core::paths::PathBatch;
use pcf_core::pcfd::{epcfd_ceiling, epcfd_sq, mmd_oracle, EpcfdParams, KernelRoute, Lift};
use pcf_core::rng::child_seed;
use pcf_core::sim::{simulate, SimSpec};
use pcf_core::testing::{permutation_test, power_sweep, PowerConfig};

use crate::manifest::{sibling, Run};
use crate::{Command, LiftArgs};

fn emit(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read(run: &mut Run, path: &Path) -> Result<PathBatch> {
    let batch = load_batch(path).with_context(|| format!("loading {}", path.display()))?;
    run.input(path)?;
    Ok(batch)
}

fn write(run: &mut Run, batch: &PathBatch, path: &Path) -> Result<()> {
    run.output(path);
    write_csv(batch, path, CsvLayout::Long).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_text(run: &mut Run, path: &Path, text: &str) -> Result<()> {
    run.output(path);
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

impl From<LiftArgs> for Lift {
    fn from(a: LiftArgs) -> Self {
        Lift {
            add_time: !a.no_time,
            anchor: a.anchor,
        }
    }
}

/// Largest possible EPCFD^2 for order `m`: 2m^2, except at m = 1 where
/// it is 4.
fn init_law(std: f64) -> ScalarLaw {
    if std == 1.0 {
        ScalarLaw::StandardNormal
    } else {
        ScalarLaw::Normal { mean: 0.0, std }
    }
}

fn stated_bound(m: usize) -> f64 {
    (2.0 * (m * m) as f64).max(epcfd_ceiling(m))
}

pub fn dispatch(cmd: &Command, run: &mut Run) -> Result<()> {
    match cmd {
        Command::Simulate {
            kind,
            params_json,
            n,
            steps,
            dt,
            dim,
            seed,
            out,
        } => simulate_cmd(run, kind, params_json.as_deref(), *n, *steps, *dt, *dim, *seed, out),
        Command::Pcfd {
            x,
            y,
            m,
            k,
            seed,
            load_params,
            oracle,
            lift,
        } => pcfd_cmd(run, x, y, *m, *k, *seed, load_params.as_deref(), *oracle, (*lift).into()),
        Command::TrainDisc {
            x,
            y,
            iters,
            lr,
            init_std,
            m,
            k,
            batch_size,
            seed,
            lift,
            out,
        } => {
            let cfg = DiscConfig {
                iters: *iters,
                lr: *lr,
                init: init_law(*init_std),
                m: *m,
                k: *k,
                batch_size: *batch_size,
                seed: *seed,
                lift: (*lift).into(),
                ..DiscConfig::default()
            };
            train_disc_cmd(run, x, y, cfg, out)
        }
        Command::Test {
            x,
            y,
            params,
            n_perm,
            alpha,
            seed,
            train_iters,
            m,
            k,
            lr,
            init_std,
            lift,
        } => {
            let cfg = DiscConfig {
                iters: *train_iters,
                lr: *lr,
                init: init_law(*init_std),
                m: *m,
                k: *k,
                seed: child_seed(*seed, "disc", 0),
                lift: (*lift).into(),
                ..DiscConfig::default()
            };
            test_cmd(run, x, y, params.as_deref(), *n_perm, *alpha, *seed, cfg)
        }
        Command::PowerSweep {
            h_list,
            paths,
            steps,
            dim,
            reps,
            train_iters,
            n_perm,
            alpha,
            m,
            k,
            lr,
            init_std,
            seed,
            out,
        } => {
            let cfg = PowerConfig {
                paths: *paths,
                steps: *steps,
                dim: *dim,
                reps: *reps,
                n_perm: *n_perm,
                alpha: *alpha,
                train_iters: *train_iters,
                m: *m,
                k: *k,
                lr: *lr,
                init: init_law(*init_std),
                seed: *seed,
                ..PowerConfig::default()
            };
            power_cmd(run, h_list, cfg, out.as_deref())
        }
        Command::TrainGan {
            mode,
            data,
            config,
            iters,
            seed,
            samples,
            out_dir,
        } => train_gan_cmd(run, mode.as_deref(), data, config.as_deref(), *iters, *seed, *samples, out_dir),
        Command::Reconstruct { state, x, out } => reconstruct_cmd(run, state, x, out),
        Command::Eval {
            x,
            y,
            depth,
            metrics,
            t_list,
            bandwidth,
            n_perm,
            alpha,
            seed,
            out,
        } => eval_cmd(
            run, x, y, *depth, metrics, t_list, *bandwidth, *n_perm, *alpha, *seed, out,
        ),
        Command::Selfcheck { seed, fixtures } => selfcheck_cmd(run, *seed, *fixtures),
    }
}

fn parse_json_arg(arg: &str) -> Result<Value> {
    match serde_json::from_str(arg) {
        Ok(v) => Ok(v),
        Err(_) => {
            let text = std::fs::read_to_string(arg).with_context(|| format!("`{arg}` is neither JSON nor a readable file"))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn merge(base: &mut Value, overlay: &Value) -> Result<()> {
    let (Some(b), Some(o)) = (base.as_object_mut(), overlay.as_object()) else {
        bail!("parameters must be a JSON object");
    };
    for (key, v) in o {
        b.insert(key.clone(), v.clone());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    run: &mut Run,
    kind: &str,
    params: Option<&str>,
    n: usize,
    steps: Option<usize>,
    dt: Option<f64>,
    dim: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let preset = match kind {
        "ou" => SimSpec::ou(n, seed),
        "fbm" => SimSpec::fbm(0.5, n, seed),
        "bm" => SimSpec::bm(1, steps.unwrap_or(50), n, seed),
        _ => SimSpec::roughvol(n, seed),
    };
    let mut spec = serde_json::to_value(&preset)?;
    if let Some(p) = params {
        let overlay = parse_json_arg(p)?;
        if overlay.get("kind").is_some_and(|k| k != kind) {
            bail!("--params-json names kind {} but --kind is {kind}", overlay["kind"]);
        }
        merge(&mut spec, &overlay)?;
    }
    let mut spec: SimSpec = serde_json::from_value(spec).context("invalid simulator parameters")?;
    spec.n_samples = n;
    spec.seed = seed;
    if let Some(s) = steps {
        spec.n_steps = s;
    }
    if let Some(d) = dt {
        spec.dt = d;
    }
    if let Some(d) = dim {
        spec.dim = d;
    }
    run.config(&spec)?;
    run.seed("root", seed);
    let batch = simulate(&spec)?;
    write(run, &batch, out)?;
    emit(&json!({
        "spec": spec,
        "out": out,
        "samples": batch.len(),
        "points": batch.times().len(),
        "dim": batch.dim(),
    }))
}

#[allow(clippy::too_many_arguments)]
fn pcfd_cmd(
    run: &mut Run,
    x: &Path,
    y: &Path,
    m: usize,
    k: usize,
    seed: u64,
    load: Option<&Path>,
    oracle: bool,
    lift: Lift,
) -> Result<()> {
    run.config(&json!({ "x": x, "y": y, "m": m, "k": k, "seed": seed, "load_params": load, "oracle": oracle, "lift": lift }))?;
    run.seed("root", seed);
    let (bx, by) = (read(run, x)?, read(run, y)?);
    let params = match load {
        Some(p) => {
            run.input(p)?;
            EpcfdParams::load(p)?
        }
        None => EpcfdParams::for_data(bx.dim(), m, k, seed, lift)?,
    };
    let start = Instant::now();
    let value = epcfd_sq(&bx, &by, &params)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let oracle_value = if oracle {
        Some(mmd_oracle(&bx, &by, &params, KernelRoute::PathConcat)?)
    } else {
        None
    };
    let mut out = json!({
        "epcfd_sq": value,
        "bound": stated_bound(params.m()),
        "m": params.m(),
        "k": params.k(),
        "wall_ms": wall_ms,
    });
    if let Some(o) = oracle_value {
        out["oracle"] = json!(o);
    }
    emit(&out)
}

fn train_disc_cmd(run: &mut Run, x: &Path, y: &Path, cfg: DiscConfig, out: &Path) -> Result<()> {
    run.config(&cfg)?;
    run.seed("root", cfg.seed);
    let (bx, by) = (read(run, x)?, read(run, y)?);
    let result = train_discriminator(&bx, &by, &cfg)?;
    run.output(out);
    result.params.save(out)?;
    let trace_path = sibling(out, "trace.csv");
    let mut trace = String::from("iteration,epcfd_sq\n");
    for (i, v) in result.trace.iter().enumerate() {
        trace.push_str(&format!("{i},{v}\n"));
    }
    write_text(run, &trace_path, &trace)?;
    let full = epcfd_sq(&bx, &by, &result.params)?;
    emit(&json!({
        "out": out,
        "trace": trace_path,
        "iters": cfg.iters,
        "first": result.trace.first(),
        "last": result.trace.last(),
        "epcfd_sq_full": full,
    }))
}

fn halves(b: &PathBatch) -> Result<(PathBatch, PathBatch)> {
    if b.len() < 4 {
        bail!("need at least 4 samples per side to split into training and test halves");
    }
    Ok(b.split_at(b.len() / 2)?)
}

#[allow(clippy::too_many_arguments)]
fn test_cmd(
    run: &mut Run,
    x: &Path,
    y: &Path,
    params: Option<&Path>,
    n_perm: usize,
    alpha: f64,
    seed: u64,
    disc: DiscConfig,
) -> Result<()> {
    run.config(&json!({ "x": x, "y": y, "params": params, "n_perm": n_perm, "alpha": alpha, "seed": seed, "train": disc }))?;
    run.seed("root", seed);
    let (bx, by) = (read(run, x)?, read(run, y)?);
    let (trained, tx, ty, p) = match params {
        Some(path) => {
            run.input(path)?;
            (false, bx, by, EpcfdParams::load(path)?)
        }
        None => {
            let ((x_train, x_test), (y_train, y_test)) = (halves(&bx)?, halves(&by)?);
            eprintln!(
                "training on {} + {} samples, testing on {} + {}",
                x_train.len(),
                y_train.len(),
                x_test.len(),
                y_test.len()
            );
            let p = train_discriminator(&x_train, &y_train, &disc)?.params;
            (true, x_test, y_test, p)
        }
    };
    let result = permutation_test(&tx, &ty, &p, n_perm, alpha, child_seed(seed, "perm", 0))?;
    let mut out = serde_json::to_value(&result)?;
    out["rejects"] = json!(result.rejects());
    out["trained_on_split"] = json!(trained);
    out["n_x"] = json!(tx.len());
    out["n_y"] = json!(ty.len());
    emit(&out)
}

fn power_cmd(run: &mut Run, h_list: &[f64], cfg: PowerConfig, out: Option<&Path>) -> Result<()> {
    run.config(&json!({ "h_list": h_list, "power": cfg }))?;
    run.seed("root", cfg.seed);
    eprintln!("power sweep over {h_list:?}, {} reps each", cfg.reps);
    let rows = power_sweep(h_list, &cfg)?;
    let mut csv = String::from("h,power,type1\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.h, r.power, r.type1));
    }
    match out {
        Some(path) => {
            write_text(run, path, &csv)?;
            emit(&json!({ "out": path, "rows": rows }))
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn load_data(run: &mut Run, path: &Path) -> Result<(PathBatch, Option<SimSpec>)> {
    if path.extension().is_some_and(|e| e == "json") {
        let value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        run.input(path)?;
        if value.get("kind").is_some() {
            let spec: SimSpec = serde_json::from_value(value).context("invalid simulator spec")?;
            return Ok((simulate(&spec)?, Some(spec)));
        }
        return Ok((load_descriptor(path)?, None));
    }
    Ok((read(run, path)?, None))
}

#[allow(clippy::too_many_arguments)]
fn train_gan_cmd(
    run: &mut Run,
    mode: Option<&str>,
    data: &Path,
    config: Option<&Path>,
    iters: Option<usize>,
    seed: Option<u64>,
    samples: Option<usize>,
    out_dir: &Path,
) -> Result<()> {
    let mut cfg: GanConfig = match config {
        Some(p) => {
            let c = serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?;
            run.input(p)?;
            c
        }
        None => GanConfig::default(),
    };
    match mode {
        Some("basic") => cfg.mode = GanMode::Basic,
        Some(_) => cfg.mode = GanMode::Autoencoder,
        None => {}
    }
    if let Some(i) = iters {
        cfg.iters = i;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (batch, spec) = load_data(run, data)?;
    let n_samples = samples.unwrap_or(batch.len());
    run.config(&json!({ "gan": cfg, "data": data, "simulated": spec, "samples": n_samples }))?;
    run.seed("root", cfg.seed);
    std::fs::create_dir_all(out_dir)?;
    let mut state = GanState::init(cfg.clone(), batch.dim(), batch.times().to_vec())?;
    state.fit_scaler(&batch);
    let every = (cfg.iters / 10).max(1);
    eprintln!("training {:?} game for {} iterations on {} series", cfg.mode, cfg.iters, batch.len());
    run_training(&mut state, &batch, every)?;
    state.save(out_dir)?;
    let sample_seed = child_seed(cfg.seed, "samples", 0);
    run.seed("samples", sample_seed);
    let generated = state.generate(n_samples, sample_seed)?;
    write(run, &generated, &out_dir.join("samples.csv"))?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(out_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    files.sort();
    for f in &files {
        if f.file_name().is_some_and(|n| n != "samples.csv") {
            run.output(f);
        }
    }
    let t = &state.traces;
    emit(&json!({
        "out_dir": out_dir,
        "iterations": state.iteration,
        "final": {
            "generator": t.generator.last(),
            "recovery": t.recovery.last(),
            "regularization": t.regularization.last(),
        },
        "files": files,
    }))
}

fn run_training(state: &mut GanState, data: &PathBatch, every: usize) -> Result<()> {
    let total = state.config.iters;
    run(state, data, &mut |u, s| {
        if u == Update::Generator && (s.iteration + 1) % every == 0 {
            let t = &s.traces;
            eprintln!(
                "iter {}/{}: generator {:.5}{}",
                s.iteration + 1,
                total,
                t.generator.last().copied().unwrap_or(f64::NAN),
                t.recovery
                    .last()
                    .map(|r| format!(", recovery {r:.5}, regularization {:.5}", t.regularization.last().unwrap_or(&f64::NAN)))
                    .unwrap_or_default()
            );
        }
    })?;
    Ok(())
}

fn reconstruct_cmd(run: &mut Run, state_dir: &Path, x: &Path, out: &Path) -> Result<()> {
    run.config(&json!({ "state": state_dir, "x": x, "out": out }))?;
    for name in ["state.json", "generator.ckpt", "embedder.ckpt"] {
        let p = state_dir.join(name);
        if p.is_file() {
            run.input(&p)?;
        }
    }
    let state = GanState::load(state_dir).with_context(|| format!("loading state from {}", state_dir.display()))?;
    let batch = read(run, x)?;
    let rec = state.reconstruct(&batch)?;
    write(run, &rec, out)?;
    let n = batch.len() as f64;
    let mse: f64 = batch
        .items()
        .iter()
        .zip(rec.items())
        .map(|(a, b)| {
            let sq: f64 = a.values().iter().zip(b.values()).map(|(u, v)| (u - v).powi(2)).sum();
            sq / a.values().len() as f64
        })
        .sum::<f64>()
        / n;
    emit(&json!({ "out": out, "samples": batch.len(), "mse": mse }))
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    run: &mut Run,
    x: &Path,
    y: &Path,
    depth: usize,
    metrics: &[String],
    t_list: &[f64],
    bandwidth: Option<f64>,
    n_perm: usize,
    alpha: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    for m in metrics {
        if m != "sig-mmd" && m != "marginals" {
            bail!("unknown metric `{m}`; expected sig-mmd or marginals");
        }
    }
    let wants = |name: &str| metrics.iter().any(|m| m == name);
    if wants("marginals") && t_list.is_empty() {
        bail!("the marginals metric needs --t-list");
    }
    run.config(&json!({
        "x": x, "y": y, "depth": depth, "metrics": metrics, "t_list": t_list,
        "bandwidth": bandwidth, "n_perm": n_perm, "alpha": alpha, "seed": seed,
    }))?;
    run.seed("root", seed);
    let (bx, by) = (read(run, x)?, read(run, y)?);
    let mut report = json!({
        "not_computed": {
            "discriminative": "not computed",
            "predictive": "not computed",
        },
        "metadata": {
            "signature_features": "time-augmented, basepointed paths; no further feature normalisation",
            "sig_mmd_estimator": "unbiased U-statistic, can be slightly negative",
            "depth": depth,
            "n_x": bx.len(),
            "n_y": by.len(),
        },
    });
    if wants("sig-mmd") {
        report["sig_mmd"] = serde_json::to_value(sig_mmd(&bx, &by, depth, bandwidth)?)?;
        if n_perm > 0 {
            let t = sig_mmd_test(&bx, &by, depth, bandwidth, n_perm, alpha, seed)?;
            report["sig_mmd_test"] = json!({
                "statistic": t.statistic,
                "p_value": t.p_value,
                "n_permutations": t.n_permutations,
                "alpha": t.alpha,
                "rejects": t.rejects(),
            });
        }
    }
    if wants("marginals") {
        report["marginals"] = serde_json::to_value(marginal_report(&bx, &by, t_list)?)?;
    }
    write_text(run, out, &serde_json::to_string_pretty(&report)?)?;
    emit(&report)
}

fn selfcheck_cmd(run: &mut Run, seed: u64, fixtures: usize) -> Result<()> {
    run.config(&json!({ "seed": seed, "fixtures": fixtures }))?;
    run.seed("root", seed);
    let report = pcf_core::selfcheck::run(seed, fixtures)?;
    emit(&report)?;
    if !report.passed {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(pcf_core::Error::Numerical(format!("selfcheck failed: {}", failed.join(", "))).into());
    }
    Ok(())
}
