//! Command-line entry point. Every subcommand writes CSV to `--out` (stdout by default).
//! Single-run subcommands use the first value of `--widths`, `--samples` and `--seeds`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use barlow_ntk::harness::{self, ConfigFile, DataSource, ModelSpec, SweepSpec};
use barlow_ntk::trainer::{fmt_f64, fmt_opt};
use barlow_ntk::{bounds, lindyn, network, Activation};

#[derive(Parser)]
#[command(name = "bt-ntk", version, about = "Barlow Twins training and NTK diagnostics for two-layer networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its per-epoch trajectory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also record uᵀ𝐊u at every recorded epoch (assembles 𝐊 each time).
        #[arg(long)]
        record_qform: bool,
        /// Save the final parameters as a binary checkpoint.
        #[arg(long)]
        save_params: Option<PathBuf>,
    },
    /// Grid over widths × sample sizes × seeds; one row per run.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Per-(N, M) median/mean/std summary CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Skip the frozen-kernel model (no rep_diff column values).
        #[arg(long)]
        no_kernel_model: bool,
    },
    /// NTK change from initialization to convergence for one run.
    NtkDrift {
        #[command(flatten)]
        common: Common,
        /// Dump 𝐊(0) as a dense little-endian f64 matrix.
        #[arg(long)]
        dump_ntk: Option<PathBuf>,
    },
    /// Network versus frozen-kernel model for one run.
    KernelModel {
        #[command(flatten)]
        common: Common,
        /// Per-point representations of both models.
        #[arg(long)]
        reps_out: Option<PathBuf>,
    },
    /// Population-bound quantities for one converged run.
    Bound {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        /// Pairs used in the variance estimate (default: all N).
        #[arg(long)]
        n_prime: Option<usize>,
    },
    /// Simulate the linear cross-moment gradient flow on a random instance.
    Lindyn {
        #[command(flatten)]
        common: Common,
        /// Input dimension p of the linear map.
        #[arg(long, default_value_t = 5)]
        p: usize,
        /// Dimension of ker Γ.
        #[arg(long, default_value_t = 1)]
        null_dim: usize,
        #[arg(long, default_value_t = 5.0)]
        t_end: f64,
        /// RK4 step (default: from the initial rate).
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        spec_lo: f64,
        #[arg(long, default_value_t = 0.95)]
        spec_hi: f64,
    },
    /// Calibrate the relu first-layer scale and check L(0) per seed.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Target E[C_kk] (default (2K−1)/(2K)).
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        probe_width: usize,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat key = value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Widths M, e.g. "50,100,1000".
    #[arg(long)]
    widths: Option<String>,
    /// Sample sizes N, e.g. "10,50,100".
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// tanh or relu.
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Seeds, e.g. "0-9" or "1,4".
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// IDX image file; otherwise synthetic data is used.
    #[arg(long)]
    mnist: Option<PathBuf>,
    #[arg(long)]
    synthetic_dim: Option<usize>,
    /// Augmentation noise scale.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    init_variance: Option<f64>,
    #[arg(long)]
    first_layer_scale: Option<f64>,
    /// Subsample NTK diagnostics above this 2NK.
    #[arg(long)]
    ntk_budget: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
}

const CONFIG_KEYS: [&str; 18] = [
    "widths",
    "samples",
    "embed-dim",
    "activation",
    "lr",
    "delta",
    "max-epochs",
    "seeds",
    "out",
    "jobs",
    "mnist",
    "synthetic-dim",
    "noise",
    "init-variance",
    "first-layer-scale",
    "ntk-budget",
    "record-every",
    "summary",
];

/// Flags merged over the config file over defaults.
struct Settings {
    spec: SweepSpec,
    out: Option<PathBuf>,
    config: ConfigFile,
}

fn pick<T: std::str::FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str, default: T) -> Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => cfg.get(key)?.unwrap_or(default),
    })
}

fn pick_list(flag: &Option<String>, cfg: &ConfigFile, key: &str, default: &str) -> Result<Vec<u64>> {
    let text = flag.as_deref().or(cfg.raw(key)).unwrap_or(default);
    Ok(harness::parse_int_list(text).with_context(|| format!("--{key}"))?)
}

fn resolve(c: &Common) -> Result<Settings> {
    let cfg = match &c.config {
        Some(p) => ConfigFile::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ConfigFile::default(),
    };
    cfg.check_keys(&CONFIG_KEYS)?;
    let noise = pick(c.noise, &cfg, "noise", 0.1)?;
    let mnist: Option<PathBuf> = c.mnist.clone().or(cfg.get("mnist")?);
    let source = match mnist {
        Some(path) => DataSource::Mnist { path, noise },
        None => DataSource::Synthetic { dim: pick(c.synthetic_dim, &cfg, "synthetic-dim", 784)?, noise },
    };
    let to_usize = |v: Vec<u64>| v.into_iter().map(|x| x as usize).collect::<Vec<_>>();
    let mut spec = SweepSpec::new(
        to_usize(pick_list(&c.widths, &cfg, "widths", "1000")?),
        to_usize(pick_list(&c.samples, &cfg, "samples", "50")?),
        pick_list(&c.seeds, &cfg, "seeds", "0-9")?,
        source,
    );
    spec.model = ModelSpec {
        embed_dim: pick(c.embed_dim, &cfg, "embed-dim", 1)?,
        activation: pick(c.activation, &cfg, "activation", Activation::Tanh)?,
        init_variance: pick(c.init_variance, &cfg, "init-variance", 1.0)?,
        first_layer_scale: pick(c.first_layer_scale, &cfg, "first-layer-scale", 1.0)?,
    };
    spec.train.lr = pick(c.lr, &cfg, "lr", 0.5)?;
    spec.train.delta = pick(c.delta, &cfg, "delta", 1e-5)?;
    spec.train.max_epochs = pick(c.max_epochs, &cfg, "max-epochs", 10_000)?;
    spec.train.record_every = pick(c.record_every, &cfg, "record-every", 1)?;
    spec.jobs = pick(c.jobs, &cfg, "jobs", 1)?;
    spec.ntk_budget = pick(c.ntk_budget, &cfg, "ntk-budget", harness::DEFAULT_NTK_BUDGET)?;
    spec.validate()?;
    let out = c.out.clone().or(cfg.get("out")?);
    Ok(Settings { spec, out, config: cfg })
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn single(s: &Settings) -> (usize, usize, u64) {
    (s.spec.sample_sizes[0], s.spec.widths[0], s.spec.seeds[0])
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { common, record_qform, save_params } => {
            let mut s = resolve(&common)?;
            s.spec.train.diagnostics.quadratic_form = record_qform;
            s.spec.kernel_model = false;
            let (n, m, seed) = single(&s);
            let cell = harness::run_cell(&s.spec, n, m, seed)?;
            let Some(run) = cell.run else {
                bail!("training diverged at epoch {} (loss {})", cell.row.epochs, cell.row.final_loss);
            };
            eprintln!(
                "{} after {} epochs, final loss {:.3e}, eta {}",
                cell.row.status, run.epochs, run.final_loss, fmt_opt(run.eta.or(cell.row.eta_estimate))
            );
            run.trajectory.write_csv(open_out(&s.out)?)?;
            if let Some(p) = save_params {
                run.final_params.save(&p)?;
            }
        }
        Command::Sweep { common, summary, no_kernel_model } => {
            let mut s = resolve(&common)?;
            s.spec.kernel_model = !no_kernel_model;
            let rows = harness::run_sweep(&s.spec)?;
            harness::write_sweep_csv(&rows, open_out(&s.out)?)?;
            let summary: Option<PathBuf> = summary.or(s.config.get("summary")?);
            if let Some(p) = summary {
                harness::write_summary_csv(&harness::summarize(&rows), open_out(&Some(p))?)?;
            }
        }
        Command::NtkDrift { common, dump_ntk } => {
            let mut s = resolve(&common)?;
            s.spec.kernel_model = false;
            let (n, m, seed) = single(&s);
            let cell = harness::run_cell(&s.spec, n, m, seed)?;
            harness::write_sweep_csv(&[cell.row], open_out(&s.out)?)?;
            if let (Some(p), Some(report)) = (dump_ntk, &cell.ntk) {
                report.k0.write_dense(p)?;
            }
        }
        Command::KernelModel { common, reps_out } => {
            let s = resolve(&common)?;
            let (n, m, seed) = single(&s);
            let cell = harness::run_cell(&s.spec, n, m, seed)?;
            harness::write_sweep_csv(&[cell.row.clone()], open_out(&s.out)?)?;
            if let (Some(p), Some(run), Some(lin)) = (reps_out, &cell.run, &cell.linear) {
                let mut w = open_out(&Some(p))?;
                writeln!(w, "point,k,network,kernel_model")?;
                let g = lin.reps();
                for j in 0..g.ncols() {
                    for k in 0..g.nrows() {
                        writeln!(w, "{j},{k},{},{}", fmt_f64(run.final_reps[(k, j)]), fmt_f64(g[(k, j)]))?;
                    }
                }
            }
        }
        Command::Bound { common, eps, n_prime } => {
            let s = resolve(&common)?;
            let (n, m, seed) = single(&s);
            let cell = harness::run_cell(&s.spec, n, m, seed)?;
            let (Some(run), Some(lin)) = (&cell.run, &cell.linear) else {
                bail!("run {} (status {}); no bound without a converged network and kernel model", seed, cell.row.status_field());
            };
            let report = harness::run_bound_report(
                &cell.dataset,
                &cell.params0,
                run,
                lin,
                s.spec.train.delta,
                eps,
                n_prime.unwrap_or(n),
            )?;
            harness::write_bound_csv(&report, open_out(&s.out)?)?;
        }
        Command::Lindyn { common, p, null_dim, t_end, h, spec_lo, spec_hi } => {
            let s = resolve(&common)?;
            let state = lindyn::random_instance(s.spec.model.embed_dim, p, null_dim, spec_lo, spec_hi, s.spec.seeds[0])?;
            let h = h.unwrap_or_else(|| lindyn::default_step(&state));
            let traj = lindyn::integrate(&state, t_end, h)?;
            eprintln!(
                "eta {}, envelope holds: {:?}, spectrum monotone: {}",
                fmt_opt(traj.eta),
                traj.within_envelope(1e-6),
                lindyn::eigen_monotonicity_check(&traj)
            );
            traj.write_csv(open_out(&s.out)?)?;
        }
        Command::Calibrate { common, target, probe_width } => {
            let s = resolve(&common)?;
            if s.spec.model.activation != Activation::Relu {
                bail!("calibration relies on relu homogeneity; pass --activation relu");
            }
            let k = s.spec.model.embed_dim;
            let n = s.spec.sample_sizes[0];
            let m = s.spec.widths[0];
            let mut w = open_out(&s.out)?;
            writeln!(w, "seed,N,M,K,target,scale,estimate_unit,initial_loss")?;
            for &seed in &s.spec.seeds {
                let data = s.spec.source.load(n, seed)?;
                let cal = bounds::calibrate_first_layer_scale(&data, k, target, s.spec.model.init_variance, probe_width, seed)?;
                let params = network::init_gaussian(m, k, data.dim(), Activation::Relu, s.spec.model.init_variance, cal.scale, seed)?;
                let reps = network::forward_batch(&params, data.points())?;
                let l0 = barlow_ntk::bt_loss::loss(&barlow_ntk::bt_loss::cross_moment_of(&reps)?);
                writeln!(
                    w,
                    "{seed},{n},{m},{k},{},{},{},{}",
                    fmt_f64(cal.target),
                    fmt_f64(cal.scale),
                    fmt_f64(cal.estimate_unit),
                    fmt_f64(l0)
                )?;
            }
        }
    }
    Ok(())
}
