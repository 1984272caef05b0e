//! `pcfgan`: simulate, measure, test and train from the command line.
//!
//! Machine-readable JSON goes to stdout and logs to stderr. Exit codes:
//! 0 on success, 1 on invalid input or usage, 2 on numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

mod commands;
mod manifest;

use manifest::{sibling, Run};

#[derive(Debug, Parser)]
#[command(name = "pcfgan", version)]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Single-threaded run whose outputs are bitwise reproducible.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Where to write the run manifest for subcommands without an output
    /// target. Without it the manifest is logged to stderr.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct LiftArgs {
    /// Do not add the normalised time channel.
    #[arg(long)]
    pub no_time: bool,
    /// Develop an extra segment from the origin to the first point.
    #[arg(long)]
    pub anchor: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a batch of paths and write it as long-format CSV.
    Simulate {
        #[arg(long, value_parser = ["ou", "fbm", "bm", "roughvol"])]
        kind: String,
        /// JSON object overriding model parameters, inline or as a file path.
        #[arg(long)]
        params_json: Option<String>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// EPCFD^2 between two batches under sampled or loaded parameters.
    Pcfd {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        load_params: Option<PathBuf>,
        /// Also evaluate the kernel (MMD) form.
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        lift: LiftArgs,
    },
    /// Train EPCFD parameters to separate two batches.
    TrainDisc {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Standard deviation of the initial map entries.
        #[arg(long, default_value_t = 1.0)]
        init_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        lift: LiftArgs,
        /// Parameters JSON; the loss trace goes to `<out>.trace.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Permutation two-sample test. Without `--params`, each input is
    /// split in half and parameters are trained on the first halves.
    Test {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        n_perm: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        train_iters: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        /// Standard deviation of the initial map entries.
        #[arg(long, default_value_t = 1.0)]
        init_std: f64,
        #[command(flatten)]
        lift: LiftArgs,
    },
    /// Power of the trained test, Brownian motion against fBM(h).
    PowerSweep {
        #[arg(long, value_delimiter = ',', required = true)]
        h_list: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        paths: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 100)]
        train_iters: usize,
        #[arg(long, default_value_t = 500)]
        n_perm: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        /// Standard deviation of the initial map entries.
        #[arg(long, default_value_t = 1.0)]
        init_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV `h,power,type1`; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a PCF-GAN and save its state.
    TrainGan {
        #[arg(long, value_parser = ["basic", "autoencoder"])]
        mode: Option<String>,
        /// CSV, batch descriptor JSON, or simulator spec JSON.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Generated samples written to `samples.csv`; defaults to the
        /// data size.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Reconstruct series through a trained autoencoder state.
    Reconstruct {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Signature MMD and marginal diagnostics between two batches.
    Eval {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        #[arg(long, value_delimiter = ',', default_value = "sig-mmd,marginals")]
        metrics: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        t_list: Vec<f64>,
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Permutations for a Sig-MMD test; 0 skips the test.
        #[arg(long, default_value_t = 0)]
        n_perm: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suite on seeded fixtures.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        fixtures: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Pcfd { .. } => "pcfd",
            Command::TrainDisc { .. } => "train-disc",
            Command::Test { .. } => "test",
            Command::PowerSweep { .. } => "power-sweep",
            Command::TrainGan { .. } => "train-gan",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Eval { .. } => "eval",
            Command::Selfcheck { .. } => "selfcheck",
        }
    }

    fn manifest_path(&self, explicit: Option<PathBuf>) -> Option<PathBuf> {
        match self {
            Command::Simulate { out, .. }
            | Command::TrainDisc { out, .. }
            | Command::Reconstruct { out, .. }
            | Command::Eval { out, .. } => Some(sibling(out, "manifest.json")),
            Command::PowerSweep { out: Some(out), .. } => Some(sibling(out, "manifest.json")),
            Command::TrainGan { out_dir, .. } => Some(out_dir.join("manifest.json")),
            _ => explicit,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    let numerical = err
        .chain()
        .any(|e| e.downcast_ref::<pcf_core::Error>().is_some_and(pcf_core::Error::is_numerical));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                ExitCode::SUCCESS
            } else {
                eprint!("{e}");
                ExitCode::from(1)
            };
        }
    };
    let threads = if cli.deterministic { 1 } else { cli.threads };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    let effective = rayon::current_num_threads();
    let mut run = Run::new(
        cli.command.name(),
        effective,
        cli.deterministic,
        cli.command.manifest_path(cli.manifest.clone()),
    );
    let start = Instant::now();
    let result = commands::dispatch(&cli.command, &mut run);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let (code, message) = match &result {
        Ok(()) => (0, None),
        Err(e) => {
            let code = exit_code(e);
            eprintln!("error: {e:#}");
            println!("{}", serde_json::json!({ "error": format!("{e:#}"), "exit_code": code }));
            (code, Some(format!("{e:#}")))
        }
    };
    if let Err(e) = run.finish(code, message, wall_ms) {
        eprintln!("error: {e:#}");
        return ExitCode::from(if code == 0 { 1 } else { code as u8 });
    }
    ExitCode::from(code as u8)
}
