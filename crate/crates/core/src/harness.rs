//! Experiment harness: width × sample-size sweeps, per-cell summaries, bound
//! reports, and the flat `key = value` config files used by the command line.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;

use crate::bounds::{self, BoundInputs, Slack};
use crate::data::{self, AugmentSpec, PairedDataset};
use crate::linear_model::{self, FrozenKernelState, LinearRun};
use crate::network::{self, Activation, NetworkParams};
use crate::seeding::{self, Stream};
use crate::trainer::{self, fmt_f64, fmt_opt, RunResult, TrainConfig};
use crate::{Error, Result};

/// Default budget on `2NK` above which NTK diagnostics use a subsample of pairs.
pub const DEFAULT_NTK_BUDGET: usize = 4000;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { dim: usize, noise: f64 },
    /// IDX image file; the first N images form the pairs.
    Mnist { path: PathBuf, noise: f64 },
}

impl DataSource {
    /// Datasets depend on `(N, seed)` only, so different widths see the same data.
    pub fn load(&self, n: usize, seed: u64) -> Result<PairedDataset> {
        match self {
            DataSource::Synthetic { dim, noise } => data::synthetic_pairs(n, *dim, *noise, seed),
            DataSource::Mnist { path, noise } => data::load_mnist_pairs(path, n, AugmentSpec::new(*noise)?, seed),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic { dim, noise } => write!(f, "synthetic(d={dim}, noise={noise})"),
            DataSource::Mnist { path, noise } => write!(f, "idx({}, noise={noise})", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub activation: Activation,
    pub init_variance: f64,
    pub first_layer_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { embed_dim: 1, activation: Activation::Tanh, init_variance: 1.0, first_layer_scale: 1.0 }
    }
}

impl ModelSpec {
    pub fn init(&self, m: usize, d: usize, seed: u64) -> Result<NetworkParams> {
        network::init_gaussian(m, self.embed_dim, d, self.activation, self.init_variance, self.first_layer_scale, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub widths: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub source: DataSource,
    pub ntk_budget: usize,
    /// Compute NTK drift, `λ_min(𝐊(0))` and η.
    pub ntk: bool,
    /// Train the frozen-kernel model and report the representation difference.
    pub kernel_model: bool,
    pub jobs: usize,
}

impl SweepSpec {
    pub fn new(widths: Vec<usize>, sample_sizes: Vec<usize>, seeds: Vec<u64>, source: DataSource) -> Self {
        Self {
            widths,
            sample_sizes,
            seeds,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            source,
            ntk_budget: DEFAULT_NTK_BUDGET,
            ntk: true,
            kernel_model: true,
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.sample_sizes.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("widths, sample sizes and seeds must be nonempty".into()));
        }
        if self.widths.contains(&0) || self.sample_sizes.contains(&0) {
            return Err(Error::InvalidArgument("widths and sample sizes must be positive".into()));
        }
        if self.model.embed_dim == 0 || self.jobs == 0 || self.ntk_budget < 2 * self.model.embed_dim {
            return Err(Error::InvalidArgument("embed dim and jobs must be >= 1 and the NTK budget >= 2K".into()));
        }
        self.train.validate()
    }

    /// Cells in `(N, M, seed)` order.
    pub fn cells(&self) -> Vec<(usize, usize, u64)> {
        let mut out = Vec::new();
        for &n in &self.sample_sizes {
            for &m in &self.widths {
                for &seed in &self.seeds {
                    out.push((n, m, seed));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxEpochs,
    Diverged,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxEpochs => "max_epochs",
            RunStatus::Diverged => "diverged",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub status: RunStatus,
    /// NTK diagnostics were computed on a subsample of this many pairs.
    pub ntk_subsample: Option<usize>,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub activation: Activation,
    pub lr: f64,
    pub delta: f64,
    pub epochs: usize,
    pub final_loss: f64,
    pub ntk_drift_abs: Option<f64>,
    pub ntk_drift_rel: Option<f64>,
    pub lambda_min_k0: Option<f64>,
    pub theta_drift: Option<f64>,
    pub rep_diff: Option<f64>,
    pub eta_estimate: Option<f64>,
}

pub const SWEEP_COLUMNS: [&str; 16] = [
    "status",
    "seed",
    "N",
    "M",
    "K",
    "activation",
    "lr",
    "delta",
    "epochs",
    "final_loss",
    "ntk_drift_abs",
    "ntk_drift_rel",
    "lambda_min_K0",
    "theta_drift",
    "rep_diff",
    "eta_estimate",
];

impl SweepRow {
    pub fn status_field(&self) -> String {
        match self.ntk_subsample {
            Some(p) => format!("{}+ntk_subsample_{p}", self.status),
            None => self.status.to_string(),
        }
    }

    pub fn csv_line(&self) -> String {
        [
            self.status_field(),
            self.seed.to_string(),
            self.n.to_string(),
            self.m.to_string(),
            self.k.to_string(),
            self.activation.to_string(),
            fmt_f64(self.lr),
            fmt_f64(self.delta),
            self.epochs.to_string(),
            fmt_f64(self.final_loss),
            fmt_opt(self.ntk_drift_abs),
            fmt_opt(self.ntk_drift_rel),
            fmt_opt(self.lambda_min_k0),
            fmt_opt(self.theta_drift),
            fmt_opt(self.rep_diff),
            fmt_opt(self.eta_estimate),
        ]
        .join(",")
    }
}

/// Everything a single `(N, M, seed)` cell produced.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub row: SweepRow,
    pub dataset: PairedDataset,
    pub params0: NetworkParams,
    /// `None` when training diverged.
    pub run: Option<RunResult>,
    pub ntk: Option<trainer::NtkReport>,
    pub linear: Option<LinearRun>,
}

fn subsample_pairs(n: usize, k: usize, budget: usize, seed: u64) -> Option<Vec<usize>> {
    if 2 * n * k <= budget {
        return None;
    }
    let keep = (budget / (2 * k)).max(1);
    let mut rng = seeding::rng(seed, Stream::Subsample);
    let mut picked = index::sample(&mut rng, n, keep).into_vec();
    picked.sort_unstable();
    Some(picked)
}

pub fn run_cell(spec: &SweepSpec, n: usize, m: usize, seed: u64) -> Result<CellOutcome> {
    let dataset = spec.source.load(n, seed)?;
    let params0 = spec.model.init(m, dataset.dim(), seed)?;
    let k = spec.model.embed_dim;
    let config = TrainConfig { seed, ..spec.train.clone() };
    let mut row = SweepRow {
        status: RunStatus::Diverged,
        ntk_subsample: None,
        seed,
        n,
        m,
        k,
        activation: spec.model.activation,
        lr: config.lr,
        delta: config.delta,
        epochs: 0,
        final_loss: f64::NAN,
        ntk_drift_abs: None,
        ntk_drift_rel: None,
        lambda_min_k0: None,
        theta_drift: None,
        rep_diff: None,
        eta_estimate: None,
    };
    let run = match trainer::train(&params0, &dataset, &config) {
        Ok(run) => run,
        Err(Error::Divergence { epoch, loss }) => {
            row.epochs = epoch;
            row.final_loss = loss;
            return Ok(CellOutcome { row, dataset, params0, run: None, ntk: None, linear: None });
        }
        Err(e) => return Err(e),
    };
    row.status = if run.converged { RunStatus::Converged } else { RunStatus::MaxEpochs };
    row.epochs = run.epochs;
    row.final_loss = run.final_loss;
    row.theta_drift = Some(run.theta_drift());

    let pairs = subsample_pairs(n, k, spec.ntk_budget, seed);
    let ntk = if spec.ntk {
        let report = match &pairs {
            Some(p) => {
                row.ntk_subsample = Some(p.len());
                trainer::ntk_report(&params0, &run.final_params, &dataset.select(p)?, run.initial_loss, n)?
            }
            None => trainer::ntk_report(&params0, &run.final_params, &dataset, run.initial_loss, n)?,
        };
        row.ntk_drift_abs = Some(report.drift.absolute);
        row.ntk_drift_rel = Some(report.drift.relative);
        row.lambda_min_k0 = Some(report.lambda_min_k0);
        row.eta_estimate = report.eta;
        Some(report)
    } else {
        None
    };

    // The kernel model needs the full 𝐊(0); skip it when that exceeds the budget.
    let linear = if spec.kernel_model && pairs.is_none() {
        let state = match &ntk {
            Some(report) => FrozenKernelState::new(report.k0.clone(), &network::forward_batch(&params0, dataset.points())?)?,
            None => linear_model::frozen_state(&params0, &dataset)?,
        };
        match linear_model::train_function_space(state, &config) {
            Ok(lin) => {
                row.rep_diff = Some(linear_model::rep_difference(&run.final_reps, &lin.reps())?);
                Some(lin)
            }
            Err(Error::Divergence { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    Ok(CellOutcome { row, dataset, params0, run: Some(run), ntk, linear })
}

/// Run every cell, at most `spec.jobs` at a time; rows come back in `(N, M, seed)` order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    spec.validate()?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| cells.par_iter().map(|&(n, m, seed)| run_cell(spec, n, m, seed).map(|c| c.row)).collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{}", SWEEP_COLUMNS.join(","))?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let mu = mean(values)?;
    Some((values.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / values.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub count: usize,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        Self { count: values.len(), median: median(values), mean: mean(values), std: std_dev(values) }
    }
}

pub const SUMMARY_METRICS: [&str; 8] = [
    "epochs",
    "final_loss",
    "ntk_drift_abs",
    "ntk_drift_rel",
    "lambda_min_K0",
    "theta_drift",
    "rep_diff",
    "eta_estimate",
];

fn metric(row: &SweepRow, name: &str) -> Option<f64> {
    match name {
        "epochs" => Some(row.epochs as f64),
        "final_loss" => Some(row.final_loss),
        "ntk_drift_abs" => row.ntk_drift_abs,
        "ntk_drift_rel" => row.ntk_drift_rel,
        "lambda_min_K0" => row.lambda_min_k0,
        "theta_drift" => row.theta_drift,
        "rep_diff" => row.rep_diff,
        "eta_estimate" => row.eta_estimate,
        _ => None,
    }
}

/// Aggregates across seeds for one `(N, M)` cell; diverged runs are counted but
/// excluded from the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub activation: Activation,
    pub runs: usize,
    pub converged: usize,
    pub diverged: usize,
    pub metrics: Vec<(&'static str, MetricSummary)>,
}

impl CellSummary {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|(n, _)| *n == name).map(|(_, s)| s)
    }
}

pub fn summarize(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.n, r.m)) {
            cells.push((r.n, r.m));
        }
    }
    cells
        .into_iter()
        .map(|(n, m)| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.n == n && r.m == m).collect();
            let live: Vec<&SweepRow> = group.iter().copied().filter(|r| r.status != RunStatus::Diverged).collect();
            let metrics = SUMMARY_METRICS
                .iter()
                .map(|&name| {
                    let vals: Vec<f64> = live.iter().filter_map(|r| metric(r, name)).filter(|v| v.is_finite()).collect();
                    (name, MetricSummary::of(&vals))
                })
                .collect();
            CellSummary {
                n,
                m,
                k: group[0].k,
                activation: group[0].activation,
                runs: group.len(),
                converged: group.iter().filter(|r| r.status == RunStatus::Converged).count(),
                diverged: group.len() - live.len(),
                metrics,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summaries: &[CellSummary], mut out: W) -> Result<()> {
    let mut header = vec!["N", "M", "K", "activation", "runs", "converged", "diverged"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for m in SUMMARY_METRICS {
        header.extend([format!("{m}_median"), format!("{m}_mean"), format!("{m}_std")]);
    }
    writeln!(out, "{}", header.join(","))?;
    for s in summaries {
        let mut fields = vec![
            s.n.to_string(),
            s.m.to_string(),
            s.k.to_string(),
            s.activation.to_string(),
            s.runs.to_string(),
            s.converged.to_string(),
            s.diverged.to_string(),
        ];
        for (_, ms) in &s.metrics {
            fields.extend([fmt_opt(ms.median), fmt_opt(ms.mean), fmt_opt(ms.std)]);
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub slack: Slack,
    pub nn_bound: f64,
}

/// Assemble bound inputs from a converged network run and its kernel-model twin.
///
/// S is the largest trace-kernel feature norm over the training points, B is
/// `‖θ_T − θ₀‖ + 1`, and ζ the largest entrywise network/kernel-model deviation
/// on the training points. The bound is conditional on this B.
pub fn run_bound_report(
    dataset: &PairedDataset,
    params0: &NetworkParams,
    run: &RunResult,
    linear: &LinearRun,
    delta: f64,
    eps: f64,
    n_prime: usize,
) -> Result<BoundReport> {
    if !run.converged {
        return Err(Error::NotConverged(format!(
            "network run stopped at epoch {} with loss {:.3e} >= delta; the bound needs a converged run",
            run.epochs, run.final_loss
        )));
    }
    if !linear.converged {
        return Err(Error::NotConverged(format!(
            "kernel model stopped at epoch {} with loss {:.3e}",
            linear.epochs, linear.final_loss
        )));
    }
    let gram = bounds::trace_kernel_gram(params0, dataset)?;
    let inputs = BoundInputs {
        n: dataset.len(),
        n_prime,
        eps,
        delta,
        b: run.final_params.distance(params0) + 1.0,
        s: gram.feature_radius(),
        v_hat: bounds::v_hat(&gram, n_prime)?,
        zeta: linear_model::max_abs_deviation(&run.final_reps, &linear.reps())?,
        k: params0.embed_dim(),
    };
    Ok(BoundReport { slack: bounds::slack(&inputs)?, nn_bound: bounds::nn_population_bound(&inputs)?, inputs })
}

pub const BOUND_COLUMNS: [&str; 11] =
    ["N", "N_prime", "eps", "delta", "B", "S", "V_hat", "zeta", "K", "nu_full", "nn_bound"];

pub fn write_bound_csv<W: Write>(report: &BoundReport, mut out: W) -> Result<()> {
    let i = &report.inputs;
    writeln!(out, "{}", BOUND_COLUMNS.join(","))?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{}",
        i.n,
        i.n_prime,
        fmt_f64(i.eps),
        fmt_f64(i.delta),
        fmt_f64(i.b),
        fmt_f64(i.s),
        fmt_f64(i.v_hat),
        fmt_f64(i.zeta),
        i.k,
        fmt_f64(report.slack.nu_full),
        fmt_f64(report.nn_bound)
    )?;
    Ok(())
}

/// Parse `"1,2,5"` or ranges such as `"0-9"` (inclusive) into integers.
pub fn parse_int_list(text: &str) -> Result<Vec<u64>> {
    let bad = |item: &str| Error::InvalidArgument(format!("cannot parse list item {item:?} in {text:?}"));
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad(item))?, b.trim().parse().map_err(|_| bad(item))?);
                if a > b {
                    return Err(bad(item));
                }
                out.extend(a..=b);
            }
            None => out.push(item.parse().map_err(|_| bad(item))?),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("empty list {text:?}")));
    }
    Ok(out)
}

/// Flat `key = value` settings; `#` starts a comment. Keys may be written with
/// or without leading dashes and with `_` or `-`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches('-').replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            let key = normalize_key(k);
            if key.is_empty() {
                return Err(Error::Format(format!("config line {}: empty key", lineno + 1)));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize_key(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| Error::InvalidArgument(format!("config {key}: cannot parse {v:?}"))))
            .transpose()
    }

    /// Reject keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::InvalidArgument(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }
}
