//! The `fcl` command-line front-end.
//!
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 when a numerical
//! routine fails to converge or training diverges. The resolved configuration
//! of every run is echoed to stderr as JSON; reports go to `--out` (written
//! atomically) or stdout.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::calibrate::{apply_temperature, pgap, temperature_scan, TemperatureGrid};
use crate::data::{
    gen_gauss2, gen_moons, load_predictions, read_points_csv, write_points_csv, InputKind, PredictionSet,
    RowFormat, SyntheticConfig, SyntheticKind,
};
use crate::io::{fmt_f64, to_json_pretty, write_atomic};
use crate::losses::{LossFamily, LossSpec};
use crate::metrics::{
    auroc, ece, metric_report, reliability_csv, reliability_table, smce, BinScheme, BinningConfig, CwNorm,
    DEFAULT_BINS,
};
use crate::theory::{curve_csv, curve_grid, minimize_risk, optimal_curve, sigma_root, SigmaSpec};
use crate::train::{
    decision_grid, grid_csv, lambda_sweep, split_points, sweep_csv, train, Bounds, MLPConfig, ModelState,
};
use crate::{CalibError, ProbVector, Result};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "fcl",
    version,
    about = "Calibration metrics, temperature scaling and focal calibration loss tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// Calibration and classification metrics as a JSON report.
    Metrics(MetricsArgs),
    /// Reliability-diagram table as CSV (lo,hi,count,accuracy,confidence,gap).
    Reliability(ReliabilityArgs),
    /// Smooth calibration error with its optimal witness.
    Smce(SmceArgs),
    /// Grid-search a temperature on validation logits.
    TempScale(TempScaleArgs),
    /// Post-processing gap of a binary predictor.
    Pgap(PgapArgs),
    /// Minimize the pointwise risk for a posterior vector.
    Minimize(MinimizeArgs),
    /// Optimal binary prediction curve as CSV (q,p_hat_star).
    Curve(CurveArgs),
    /// Root of sigma(q) = (1-q)^g - g q ln q (1-q)^(g-1) - 2 l q.
    SigmaRoot(SigmaArgs),
    /// Generate a synthetic two-class dataset as CSV.
    Synth(SynthArgs),
    /// Train the small MLP on a point CSV.
    Train(TrainArgs),
    /// Decision grid of a trained model as CSV.
    Boundary(BoundaryArgs),
    /// Train one model per (gamma, lambda) and report pre/post temperature metrics.
    Sweep(SweepArgs),
    /// Mann-Whitney AUROC of positive vs negative scores.
    Auroc(AurocArgs),
}

#[derive(Debug, Args, Serialize)]
struct InputArgs {
    /// Prediction rows (JSON lines or CSV).
    #[arg(long)]
    input: PathBuf,
    /// rows-json or rows-csv; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<String>,
    /// probs or logits.
    #[arg(long, default_value = "probs")]
    input_kind: String,
}

impl InputArgs {
    fn load(&self) -> Result<PredictionSet> {
        load_set(&self.input, self.format.as_deref(), &self.input_kind)
    }
}

#[derive(Debug, Args, Serialize)]
struct MetricsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// equal_width or equal_mass.
    #[arg(long, default_value = "equal_width")]
    scheme: String,
    /// global or per-class weighting for classwise ECE.
    #[arg(long, default_value = "global")]
    cwece_norm: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReliabilityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value = "equal_width")]
    scheme: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SmceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TempScaleArgs {
    /// Validation rows with logits.
    #[arg(long)]
    val: PathBuf,
    /// Optional test rows with logits, evaluated at the chosen temperature.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0.1)]
    t_min: f64,
    #[arg(long, default_value_t = 10.0)]
    t_max: f64,
    #[arg(long, default_value_t = 0.1)]
    t_step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the `t,ece` grid as CSV.
    #[arg(long)]
    grid_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct LossArgs {
    /// ce, label_smoothing, brier, focal, flsd53 or fcl.
    #[arg(long, default_value = "fcl")]
    loss: String,
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Label smoothing factor.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
}

impl LossArgs {
    fn spec(&self) -> Result<LossSpec> {
        let family: LossFamily = self.loss.parse()?;
        LossSpec::from_parts(family, self.gamma, self.lambda, self.alpha)
    }
}

#[derive(Debug, Args, Serialize)]
struct PgapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    input: InputArgs,
    #[command(flatten)]
    #[serde(flatten)]
    loss: LossArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct MinimizeArgs {
    /// Posterior as a comma-separated list.
    #[arg(long)]
    eta: String,
    #[command(flatten)]
    #[serde(flatten)]
    loss: LossArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CurveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SigmaArgs {
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// moons or gauss2.
    #[arg(long, default_value = "moons")]
    kind: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    class_sep: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Point CSV as written by `synth`.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    loss: LossArgs,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long)]
    out_model: Option<PathBuf>,
    #[arg(long)]
    out_history: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct BoundaryArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    /// x0_min,x0_max,x1_min,x1_max
    #[arg(long)]
    bounds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated gammas.
    #[arg(long, default_value = "3")]
    gammas: String,
    /// Comma-separated lambdas; 0 trains plain focal loss.
    #[arg(long, default_value = "0,0.5,1,1.5")]
    lambdas: String,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct AurocArgs {
    /// File of positive-class scores, or a comma-separated list.
    #[arg(long)]
    pos: String,
    /// File of negative-class scores, or a comma-separated list.
    #[arg(long)]
    neg: String,
}

fn load_set(path: &Path, format: Option<&str>, kind: &str) -> Result<PredictionSet> {
    let format = match format {
        Some(f) => f.parse()?,
        None => RowFormat::infer(path),
    };
    let kind: InputKind = kind.parse()?;
    load_predictions(path, format, kind)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CalibError::invalid(format!("'{t}' is not a number"))))
        .collect()
}

fn scores_arg(arg: &str) -> Result<Vec<f64>> {
    let path = Path::new(arg);
    if path.is_file() {
        parse_list(&fs::read_to_string(path)?)
    } else {
        parse_list(arg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn binning(bins: usize, scheme: &str) -> Result<BinningConfig> {
    let scheme: BinScheme = scheme.parse()?;
    let cfg = BinningConfig { bins, scheme };
    if bins < 1 {
        return Err(CalibError::invalid("need at least one bin"));
    }
    Ok(cfg)
}

fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Metrics(a) => {
            let set = a.input.load()?;
            let norm: CwNorm = a.cwece_norm.parse()?;
            let report = metric_report(&set, &binning(a.bins, &a.scheme)?, norm)?;
            emit(a.out.as_deref(), &to_json_pretty(&report)?)
        }
        Command::Reliability(a) => {
            let set = a.input.load()?;
            let table = reliability_table(&set, &binning(a.bins, &a.scheme)?)?;
            emit(a.out.as_deref(), &reliability_csv(&table))
        }
        Command::Smce(a) => {
            let r = smce(&a.input.load()?)?;
            emit(a.out.as_deref(), &to_json_pretty(&r)?)
        }
        Command::TempScale(a) => {
            let fmt = a.format.as_deref();
            let val = load_set(&a.val, fmt, "logits")?;
            let cfg = BinningConfig::equal_width(a.bins);
            let grid = TemperatureGrid { t_min: a.t_min, t_max: a.t_max, t_step: a.t_step };
            let scan = temperature_scan(&val, &cfg, &grid)?;
            let mut report = json!({
                "best_t": scan.best_t,
                "pre_ece": scan.pre_ece,
                "post_ece": scan.post_ece,
                "grid": scan.grid,
            });
            if let Some(test) = &a.test {
                let test = load_set(test, fmt, "logits")?;
                report["test_pre_ece"] = json!(ece(&test, &cfg)?);
                report["test_post_ece"] = json!(ece(&apply_temperature(&test, scan.best_t)?, &cfg)?);
            }
            if let Some(p) = &a.grid_out {
                write_atomic(p, scan.grid_csv().as_bytes())?;
            }
            emit(a.out.as_deref(), &to_json_pretty(&report)?)
        }
        Command::Pgap(a) => {
            let r = pgap(&a.input.load()?, &a.loss.spec()?)?;
            emit(a.out.as_deref(), &to_json_pretty(&r)?)
        }
        Command::Minimize(a) => {
            let eta = ProbVector::new(parse_list(&a.eta)?)?;
            let r = minimize_risk(&a.loss.spec()?, &eta)?;
            if !r.converged {
                return Err(CalibError::NonConvergence {
                    iterations: r.iterations,
                    residual: r.kkt_residual,
                });
            }
            emit(a.out.as_deref(), &to_json_pretty(&r)?)
        }
        Command::Curve(a) => {
            let curve = optimal_curve(&a.loss.spec()?, &curve_grid(a.step)?)?;
            emit(a.out.as_deref(), &curve_csv(&curve))
        }
        Command::SigmaRoot(a) => {
            let root = sigma_root(&SigmaSpec::new(a.gamma, a.lambda)?)?;
            println!("{}", fmt_f64(root));
            Ok(())
        }
        Command::Synth(a) => {
            let kind: SyntheticKind = a.kind.parse()?;
            let cfg = SyntheticConfig { kind, n: a.n, noise: a.noise, seed: a.seed, class_sep: a.class_sep };
            let pts = match kind {
                SyntheticKind::Moons => gen_moons(&cfg)?,
                SyntheticKind::Gauss2 => gen_gauss2(&cfg)?,
            };
            emit(a.out.as_deref(), &write_points_csv(&pts))
        }
        Command::Train(a) => {
            let pts = read_points_csv(&fs::read_to_string(&a.data)?)?;
            let (tr, _val, test) = split_points(&pts, a.seed);
            let cfg = MLPConfig { epochs: a.epochs, seed: a.seed, lr: a.lr, ..MLPConfig::default() };
            let out = train(&cfg, &a.loss.spec()?, &tr, &test)?;
            if let Some(p) = &a.out_history {
                write_atomic(p, out.history.to_csv().as_bytes())?;
            }
            let model = out.model.to_json()?;
            emit(a.out_model.as_deref(), &model)
        }
        Command::Boundary(a) => {
            let model = ModelState::from_json(&fs::read_to_string(&a.model)?)?;
            let bounds = match &a.bounds {
                Some(s) => match parse_list(s)?.as_slice() {
                    &[x0_min, x0_max, x1_min, x1_max] => Bounds { x0_min, x0_max, x1_min, x1_max },
                    _ => return Err(CalibError::invalid("--bounds needs four numbers")),
                },
                None => Bounds::default(),
            };
            let cells = decision_grid(&model, &bounds, a.resolution)?;
            emit(a.out.as_deref(), &grid_csv(&cells))
        }
        Command::Sweep(a) => {
            let pts = read_points_csv(&fs::read_to_string(&a.data)?)?;
            let cfg = MLPConfig { epochs: a.epochs, seed: a.seed, ..MLPConfig::default() };
            let rows = lambda_sweep(&cfg, &parse_list(&a.gammas)?, &parse_list(&a.lambdas)?, &pts)?;
            emit(a.out.as_deref(), &sweep_csv(&rows))
        }
        Command::Auroc(a) => {
            let v = auroc(&scores_arg(&a.pos)?, &scores_arg(&a.neg)?)?;
            println!("{}", fmt_f64(v));
            Ok(())
        }
    }
}

/// Parses `args` (including the program name) and runs one subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Ok(cfg) = serde_json::to_string(&cli.command) {
        eprintln!("config: {cfg}");
    }
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}
