//! Command-line front end.
//!
//! Every command reads an optional TOML config (top-level `seed`, `out_dir`
//! and one table per command), applies command-line overrides on top, writes
//! its outputs atomically into the output directory together with a
//! `run.toml` snapshot of the resolved configuration.
//!
//! Exit codes: 0 success, 1 other runtime error, 2 usage or config error,
//! 3 training divergence, 4 dimension mismatch, 5 entropy sandwich violation,
//! 6 pushforward violation, 7 gradient check failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::infotheory::{bench_mixture, sandwich_check};
use crate::normality::{normality_sweep, sweep_plot_svg, SweepOutput};
use crate::numerics::{GaussianDensity, RngStream, RNG_ALGORITHM};
use crate::pushforward::check_pushforward;
use crate::report::{write_atomic, Cell, CsvTable};
use crate::spline_net::{MlpNetwork, CHECKPOINT_VERSION};
use crate::ssl_objectives::{gradcheck, LossSpec, VicregParams};
use crate::training::{make_manifold_dataset, metrics_table, train, Manifold, ManifoldDataset, Optimizer, TrainConfig, DATASET_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_DIM_MISMATCH: i32 = 4;
pub const EXIT_SANDWICH: i32 = 5;
pub const EXIT_PUSHFORWARD: i32 = 6;
pub const EXIT_GRADCHECK: i32 = 7;

/// Containment above which a pushforward cell counts towards pass/fail.
pub const CONTAINMENT_GATE: f64 = 1.0 - 1e-4;
/// Allowed relative moment error for gated cells.
pub const MOMENT_TOLERANCE: f64 = 0.05;
/// Maximum relative gradient error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(name = "infomax-lab", version, about = "Information-theoretic probes of self-supervised piecewise-affine networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on a toy manifold dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        loss: Option<LossName>,
        /// Load the dataset from a file instead of generating it.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Test output normality of a checkpoint under growing input noise.
    NormalitySweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated noise coefficients.
        #[arg(long, value_delimiter = ',')]
        coeffs: Option<Vec<f64>>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Compare mixture entropy estimators on random mixtures.
    EntropyBench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        max_dim: Option<usize>,
        #[arg(long)]
        max_components: Option<usize>,
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Check analytic Gaussian pushforwards against sampling.
    PushforwardCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated input standard deviations.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        sigmas: Option<Vec<f64>>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        centers: Option<usize>,
    },
    /// Compare analytic loss gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use a freshly initialized network instead of a checkpoint.
        #[arg(long)]
        random: bool,
        /// Comma-separated layer widths for `--random`.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long, value_enum)]
        loss: Option<LossName>,
        #[arg(long)]
        h: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Vicreg,
    Infonce,
    /// VICReg with only the invariance term.
    Invariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VicregSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_inv: f64,
    pub hinge_target: f64,
    pub eps: f64,
}

impl Default for VicregSection {
    fn default() -> Self {
        let p = VicregParams::default();
        Self { alpha: p.alpha, beta: p.beta, gamma_inv: p.gamma_inv, hinge_target: p.hinge_target, eps: p.eps }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub kind: LossName,
    pub temperature: f64,
    pub vicreg: VicregSection,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { kind: LossName::Vicreg, temperature: 0.2, vicreg: VicregSection::default() }
    }
}

impl LossSection {
    pub fn spec(&self) -> LossSpec {
        let v = &self.vicreg;
        let p = VicregParams { alpha: v.alpha, beta: v.beta, gamma_inv: v.gamma_inv, hinge_target: v.hinge_target, eps: v.eps };
        match self.kind {
            LossName::Vicreg => LossSpec::Vicreg(p),
            LossName::Invariance => LossSpec::Vicreg(VicregParams { alpha: 0.0, beta: 0.0, ..p }),
            LossName::Infonce => LossSpec::InfoNce { temperature: self.temperature },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub manifold: Manifold,
    pub n_prototypes: usize,
    pub ambient_dim: usize,
    pub tangent_rank: usize,
    pub base_sigma: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { manifold: Manifold::Circle, n_prototypes: 64, ambient_dim: 8, tangent_rank: 1, base_sigma: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Existing dataset file; when unset a dataset is generated from `dataset`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub leaky_slope: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerName,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub noise_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale_prime: Option<f64>,
    pub loss: LossSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset_path: None,
            dataset: DatasetSection::default(),
            hidden: vec![32, 32],
            output_dim: 8,
            leaky_slope: 0.1,
            epochs: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerName::Adam,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            noise_scale: 1.0,
            noise_scale_prime: None,
            loss: LossSection::default(),
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: match self.optimizer {
                OptimizerName::Sgd => Optimizer::Sgd { momentum: self.momentum },
                OptimizerName::Adam => Optimizer::Adam { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps },
            },
            noise_scale: self.noise_scale,
            noise_scale_prime: self.noise_scale_prime,
            seed,
            loss: self.loss.spec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub coeffs: Vec<f64>,
    pub samples: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { checkpoint: None, dataset: None, coeffs: vec![0.25, 0.5, 1.0, 2.0, 4.0], samples: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropySection {
    pub trials: usize,
    pub max_dim: usize,
    pub max_components: usize,
    pub mc_samples: usize,
}

impl Default for EntropySection {
    fn default() -> Self {
        Self { trials: 50, max_dim: 8, max_components: 6, mc_samples: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PushforwardSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Layer widths of the random network used when no checkpoint is given.
    pub random_dims: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub samples: usize,
    pub centers: usize,
}

impl Default for PushforwardSection {
    fn default() -> Self {
        Self { checkpoint: None, random_dims: vec![4, 32, 32, 8], sigmas: vec![1e-6, 1e-3, 10.0], samples: 100_000, centers: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub random_dims: Vec<usize>,
    pub leaky_slope: f64,
    pub batch: usize,
    pub h: f64,
    pub loss: LossSection,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self { checkpoint: None, random_dims: vec![8, 32, 32, 8], leaky_slope: 0.1, batch: 32, h: 1e-5, loss: LossSection::default() }
    }
}

/// Full configuration file layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub train: TrainSection,
    pub normality_sweep: SweepSection,
    pub entropy_bench: EntropySection,
    pub pushforward_check: PushforwardSection,
    pub gradcheck: GradcheckSection,
}

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

type CmdResult = std::result::Result<i32, Failure>;

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DivergenceDetected { .. } => EXIT_DIVERGENCE,
            Error::DimensionMismatch { .. } => EXIT_DIM_MISMATCH,
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::UnsupportedVersion { .. } | Error::InvalidRank { .. } => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        fail(code, e.to_string())
    }
}

/// Resolved global settings plus the directory relative paths are read from.
struct Context {
    config: ConfigFile,
    base_dir: PathBuf,
    seed: u64,
    out_dir: PathBuf,
}

fn load_context(common: &Common) -> std::result::Result<Context, Failure> {
    let (config, base_dir) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| fail(EXIT_USAGE, format!("cannot read config {}: {e}", path.display())))?;
            let config: ConfigFile = toml::from_str(&text)
                .map_err(|e| fail(EXIT_USAGE, format!("invalid config {}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (config, base)
        }
        None => (ConfigFile::default(), PathBuf::new()),
    };
    let seed = common.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let out_dir = match (&common.out_dir, &config.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => base_dir.join(p),
        (None, None) => PathBuf::from("out"),
    };
    Ok(Context { config, base_dir, seed, out_dir })
}

impl Context {
    /// Paths from the config file are relative to the file; command-line paths to the cwd.
    fn config_path(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> std::result::Result<(), Failure> {
        write_atomic(&self.out_dir.join(name), bytes).map_err(|e| fail(EXIT_RUNTIME, format!("writing {name}: {e}")))
    }

    fn write_snapshot<T: Serialize>(&self, command: &str, section: &T) -> std::result::Result<(), Failure> {
        let text = snapshot_toml(command, self.seed, section)?;
        self.write("run.toml", text.as_bytes())
    }
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    seed: u64,
    crate_version: &'a str,
    rng_algorithm: &'a str,
    checkpoint_format_version: u32,
    dataset_format_version: u32,
}

fn snapshot_toml<T: Serialize>(command: &str, seed: u64, section: &T) -> std::result::Result<String, Failure> {
    let info = RunInfo {
        command,
        seed,
        crate_version: env!("CARGO_PKG_VERSION"),
        rng_algorithm: RNG_ALGORITHM,
        checkpoint_format_version: CHECKPOINT_VERSION,
        dataset_format_version: DATASET_VERSION,
    };
    let err = |e: toml::ser::Error| fail(EXIT_RUNTIME, format!("config snapshot: {e}"));
    let mut table = toml::Table::new();
    table.insert("run".into(), toml::Value::try_from(&info).map_err(err)?);
    table.insert(command.replace('-', "_"), toml::Value::try_from(section).map_err(err)?);
    toml::to_string(&table).map_err(err)
}

fn load_checkpoint(path: &Path) -> std::result::Result<MlpNetwork, Failure> {
    MlpNetwork::load(path).map_err(|e| fail(EXIT_USAGE, format!("cannot load checkpoint {}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> std::result::Result<ManifoldDataset, Failure> {
    ManifoldDataset::load(path).map_err(|e| fail(EXIT_USAGE, format!("cannot load dataset {}: {e}", path.display())))
}

fn network_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

fn cmd_train(
    common: &Common,
    lr: Option<f64>,
    epochs: Option<usize>,
    loss: Option<LossName>,
    dataset: Option<PathBuf>,
) -> CmdResult {
    let ctx = load_context(common)?;
    let mut sec = ctx.config.train.clone();
    if let Some(v) = lr {
        sec.learning_rate = v;
    }
    if let Some(v) = epochs {
        sec.epochs = v;
    }
    if let Some(v) = loss {
        sec.loss.kind = v;
    }
    let dataset_path = match dataset {
        Some(p) => Some(p),
        None => sec.dataset_path.as_ref().map(|p| ctx.config_path(p)),
    };
    sec.dataset_path = dataset_path.clone();
    let ds = match &dataset_path {
        Some(p) => load_dataset(p)?,
        None => {
            let d = &sec.dataset;
            let mut rng = RngStream::derive(ctx.seed, "dataset", 0);
            make_manifold_dataset(d.n_prototypes, d.ambient_dim, d.tangent_rank, d.manifold, d.base_sigma, &mut rng)?
        }
    };
    if !ds.is_well_separated() {
        eprintln!(
            "warning: nearest prototypes are {:.3e} apart, below {}x base_sigma; components overlap",
            ds.min_separation(),
            crate::training::SEPARATION_SIGMAS
        );
    }
    let dims = network_dims(ds.ambient_dim, &sec.hidden, sec.output_dim);
    let init = MlpNetwork::random(&dims, sec.leaky_slope, &mut RngStream::derive(ctx.seed, "init", 0))?;
    let cfg = sec.train_config(ctx.seed);
    let outcome = train(&init, &ds, &cfg)?;
    ctx.write("metrics.csv", &metrics_table(&outcome.log).to_bytes())?;
    ctx.write("dataset.json", ds.to_json().as_bytes())?;
    ctx.write("checkpoint.json", outcome.net.to_json().as_bytes())?;
    ctx.write_snapshot("train", &sec)?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        println!("steps {}  loss {:.6} -> {:.6}", outcome.log.len(), first.total, last.total);
    }
    println!("wrote {}", ctx.out_dir.display());
    Ok(EXIT_OK)
}

fn cmd_normality_sweep(
    common: &Common,
    checkpoint: Option<PathBuf>,
    dataset: Option<PathBuf>,
    coeffs: Option<Vec<f64>>,
    samples: Option<usize>,
) -> CmdResult {
    let ctx = load_context(common)?;
    let mut sec = ctx.config.normality_sweep.clone();
    sec.checkpoint = checkpoint.or_else(|| sec.checkpoint.as_ref().map(|p| ctx.config_path(p)));
    sec.dataset = dataset.or_else(|| sec.dataset.as_ref().map(|p| ctx.config_path(p)));
    if let Some(c) = coeffs {
        sec.coeffs = c;
    }
    if let Some(m) = samples {
        sec.samples = m;
    }
    let ck = sec.checkpoint.clone().ok_or_else(|| fail(EXIT_USAGE, "normality-sweep needs --checkpoint"))?;
    let dp = sec.dataset.clone().ok_or_else(|| fail(EXIT_USAGE, "normality-sweep needs --dataset"))?;
    let net = load_checkpoint(&ck)?;
    let ds = load_dataset(&dp)?;
    if net.input_dim() != ds.ambient_dim {
        return Err(fail(
            EXIT_DIM_MISMATCH,
            format!("checkpoint input dimension {} does not match dataset dimension {}", net.input_dim(), ds.ambient_dim),
        ));
    }
    let out: SweepOutput =
        normality_sweep(&net, &ds, &sec.coeffs, sec.samples, &mut RngStream::derive(ctx.seed, "normality-sweep", 0))?;
    ctx.write("cells.csv", &out.cells_table().to_bytes())?;
    ctx.write("aggregate.csv", &out.aggregate_table().to_bytes())?;
    ctx.write("sweep.svg", sweep_plot_svg(&[("mean p", &out)]).as_bytes())?;
    ctx.write_snapshot("normality-sweep", &sec)?;
    for r in &out.rows {
        println!("coeff {:<8} mean p {:.6}  excluded {}", r.noise_coeff, r.mean_p, r.n_excluded);
    }
    Ok(EXIT_OK)
}

fn cmd_entropy_bench(
    common: &Common,
    trials: Option<usize>,
    max_dim: Option<usize>,
    max_components: Option<usize>,
    mc_samples: Option<usize>,
) -> CmdResult {
    let ctx = load_context(common)?;
    let mut sec = ctx.config.entropy_bench.clone();
    sec.trials = trials.unwrap_or(sec.trials);
    sec.max_dim = max_dim.unwrap_or(sec.max_dim);
    sec.max_components = max_components.unwrap_or(sec.max_components);
    sec.mc_samples = mc_samples.unwrap_or(sec.mc_samples);
    if sec.trials == 0 || sec.max_dim == 0 || sec.max_components == 0 {
        return Err(fail(EXIT_USAGE, "trials, max_dim and max_components must be positive"));
    }
    let mut table = CsvTable::new(&["mixture_id", "d", "n_components", "kind", "value", "mc_std_err", "seed"]);
    let mut violations = Vec::new();
    for i in 0..sec.trials {
        let mixture_seed = RngStream::derive(ctx.seed, "entropy-bench", i as u64).next_u64();
        let gmm = bench_mixture(mixture_seed, sec.max_dim, sec.max_components)?;
        let check = sandwich_check(&gmm, sec.mc_samples, &mut RngStream::derive(mixture_seed, "mc", 0))?;
        for est in [&check.mc, &check.moment_upper, &check.cond_lower, &check.cond_upper] {
            table.push(vec![
                Cell::from(i),
                Cell::from(gmm.dim()),
                Cell::from(gmm.len()),
                Cell::from(est.kind.as_str()),
                Cell::Float(est.value),
                est.mc_std_err.map_or(Cell::from(""), Cell::Float),
                Cell::from(mixture_seed),
            ]);
        }
        if !check.holds || check.tight == Some(false) {
            violations.push((i, mixture_seed));
        }
    }
    ctx.write("entropy.csv", &table.to_bytes())?;
    ctx.write_snapshot("entropy-bench", &sec)?;
    if violations.is_empty() {
        println!("sandwich holds for all {} mixtures", sec.trials);
        Ok(EXIT_OK)
    } else {
        for (i, s) in &violations {
            eprintln!("sandwich violated: mixture {i} (mixture seed {s})");
        }
        Ok(EXIT_SANDWICH)
    }
}

fn cmd_pushforward_check(
    common: &Common,
    checkpoint: Option<PathBuf>,
    sigmas: Option<Vec<f64>>,
    samples: Option<usize>,
    centers: Option<usize>,
) -> CmdResult {
    let ctx = load_context(common)?;
    let mut sec = ctx.config.pushforward_check.clone();
    sec.checkpoint = checkpoint.or_else(|| sec.checkpoint.as_ref().map(|p| ctx.config_path(p)));
    if let Some(s) = sigmas {
        sec.sigmas = s;
    }
    sec.samples = samples.unwrap_or(sec.samples);
    sec.centers = centers.unwrap_or(sec.centers);
    if sec.sigmas.is_empty() {
        return Err(fail(EXIT_USAGE, "pushforward-check needs at least one sigma"));
    }
    if sec.sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || sec.centers == 0 {
        return Err(fail(EXIT_USAGE, "sigmas must be positive and centers nonzero"));
    }
    let net = match &sec.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => MlpNetwork::random(&sec.random_dims, 0.1, &mut RngStream::derive(ctx.seed, "pushforward-net", 0))?,
    };
    let mut center_rng = RngStream::derive(ctx.seed, "pushforward-centers", 0);
    let centers: Vec<_> = (0..sec.centers).map(|_| center_rng.normal_vector(net.input_dim())).collect();
    let mut table =
        CsvTable::new(&["sigma", "center_id", "containment", "mean_err_std", "cov_frob_err", "gated", "pass"]);
    let mut violations = 0;
    let mut cell = 0u64;
    for &sigma in &sec.sigmas {
        for (c, center) in centers.iter().enumerate() {
            let g = GaussianDensity::isotropic(center.clone(), sigma * sigma)?;
            let mut rng = RngStream::derive(ctx.seed, "pushforward-check", cell);
            cell += 1;
            let r = check_pushforward(&net, &g, sec.samples, &mut rng)?;
            let gated = r.containment >= CONTAINMENT_GATE;
            let pass = r.moments.mean_in_std <= MOMENT_TOLERANCE && r.moments.cov_frobenius <= MOMENT_TOLERANCE;
            if gated && !pass {
                violations += 1;
                eprintln!(
                    "pushforward mismatch: sigma {sigma} center {c}: mean error {:.3e} std, cov error {:.3e}",
                    r.moments.mean_in_std, r.moments.cov_frobenius
                );
            }
            table.push(vec![
                Cell::Float(sigma),
                Cell::from(c),
                Cell::Float(r.containment),
                Cell::Float(r.moments.mean_in_std),
                Cell::Float(r.moments.cov_frobenius),
                Cell::from(if gated { "1" } else { "0" }),
                Cell::from(if pass { "1" } else { "0" }),
            ]);
        }
    }
    ctx.write("pushforward.csv", &table.to_bytes())?;
    ctx.write_snapshot("pushforward-check", &sec)?;
    if violations == 0 {
        println!("all contained cells match their analytic pushforward");
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_PUSHFORWARD)
    }
}

fn cmd_gradcheck(
    common: &Common,
    checkpoint: Option<PathBuf>,
    random: bool,
    dims: Option<Vec<usize>>,
    loss: Option<LossName>,
    h: Option<f64>,
) -> CmdResult {
    let ctx = load_context(common)?;
    let mut sec = ctx.config.gradcheck.clone();
    sec.checkpoint = if random {
        None
    } else {
        checkpoint.or_else(|| sec.checkpoint.as_ref().map(|p| ctx.config_path(p)))
    };
    if let Some(d) = dims {
        sec.random_dims = d;
    }
    if let Some(l) = loss {
        sec.loss.kind = l;
    }
    sec.h = h.unwrap_or(sec.h);
    if sec.batch < 2 {
        return Err(fail(EXIT_USAGE, "gradcheck batch must be at least 2"));
    }
    let net = match &sec.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => MlpNetwork::random(&sec.random_dims, sec.leaky_slope, &mut RngStream::derive(ctx.seed, "gradcheck-net", 0))?,
    };
    let mut rng = RngStream::derive(ctx.seed, "gradcheck-data", 0);
    let x = rng.normal_matrix(sec.batch, net.input_dim());
    let x_prime = &x + rng.normal_matrix(sec.batch, net.input_dim()) * 0.1;
    let report = gradcheck(&net, &x, &x_prime, &sec.loss.spec(), sec.h)?;
    let worst = report.worst.map(|c| c.to_string()).unwrap_or_default();
    let mut table = CsvTable::new(&["loss", "h", "checked", "excluded", "max_rel_error", "worst"]);
    table.push(vec![
        Cell::from(sec.loss.spec().name()),
        Cell::Float(sec.h),
        Cell::from(report.checked),
        Cell::from(report.excluded),
        Cell::Float(report.max_rel_error),
        Cell::from(worst.as_str()),
    ]);
    ctx.write("gradcheck.csv", &table.to_bytes())?;
    ctx.write_snapshot("gradcheck", &sec)?;
    println!(
        "max relative error {:.3e} over {} parameters ({} excluded near boundaries)",
        report.max_rel_error, report.checked, report.excluded
    );
    if report.max_rel_error <= GRADCHECK_TOLERANCE {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "gradient check failed at {worst}: analytic {:.6e}, numeric {:.6e}",
            report.worst_analytic, report.worst_numeric
        );
        Ok(EXIT_GRADCHECK)
    }
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train { common, lr, epochs, loss, dataset } => cmd_train(&common, lr, epochs, loss, dataset),
        Command::NormalitySweep { common, checkpoint, dataset, coeffs, samples } => {
            cmd_normality_sweep(&common, checkpoint, dataset, coeffs, samples)
        }
        Command::EntropyBench { common, trials, max_dim, max_components, mc_samples } => {
            cmd_entropy_bench(&common, trials, max_dim, max_components, mc_samples)
        }
        Command::PushforwardCheck { common, checkpoint, sigmas, samples, centers } => {
            cmd_pushforward_check(&common, checkpoint, sigmas, samples, centers)
        }
        Command::Gradcheck { common, checkpoint, random, dims, loss, h } => {
            cmd_gradcheck(&common, checkpoint, random, dims, loss, h)
        }
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses a config file body; exposed for schema tests.
pub fn parse_config(text: &str) -> crate::Result<ConfigFile> {
    parse_toml(text, "config")
}

fn parse_toml<T: DeserializeOwned>(text: &str, what: &str) -> crate::Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse { what: what.into(), message: e.to_string() })
}
