//! Deterministic small-MLP trainer for two-dimensional toy data.
//!
//! Training is full batch, so a run is a pure function of the config, the
//! loss and the data. Parameters start uniform in `±1/sqrt(fan_in)` from a
//! `ChaCha8Rng` seeded with `MLPConfig::seed`.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{apply_temperature, temperature_scan, TemperatureGrid};
use crate::data::{split_indices, LabeledPoint, PredictionSet};
use crate::losses::{logit_grad, loss_value, LossSpec};
use crate::metrics::{adaece, classwise_ece, ece, score_metrics, BinningConfig, CwNorm};
use crate::{softmax, CalibError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

impl FromStr for Activation {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(CalibError::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl FromStr for Optimizer {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(CalibError::invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPConfig {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for MLPConfig {
    fn default() -> Self {
        Self {
            layers: vec![2, 10, 10, 2],
            activation: Activation::Relu,
            seed: 1,
            epochs: 500,
            optimizer: Optimizer::Adam,
            lr: 1e-3,
            weight_decay: 0.0,
        }
    }
}

impl MLPConfig {
    fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return Err(CalibError::invalid("need at least input and output layers of width >= 1"));
        }
        if self.layers[0] != 2 {
            return Err(CalibError::invalid(format!(
                "first layer width must equal the input dimension 2, got {}",
                self.layers[0]
            )));
        }
        if *self.layers.last().unwrap() < 2 {
            return Err(CalibError::invalid("output layer needs at least 2 classes"));
        }
        if self.epochs < 1 {
            return Err(CalibError::invalid("need at least one epoch"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(CalibError::invalid("lr must be > 0 and weight_decay >= 0"));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        *self.layers.last().unwrap()
    }
}

/// Network parameters. `weights[l]` is row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: MLPConfig,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ModelState {
    pub fn init(config: &MLPConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in config.layers.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect());
            biases.push((0..fan_out).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Ok(Self { config: config.clone(), weights, biases })
    }

    fn zeros_like(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        )
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Flat parameter view: all weights layer by layer, then all biases.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for w in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            if i < w.len() {
                return &mut w[i];
            }
            i -= w.len();
        }
        panic!("parameter index out of range");
    }

    /// Pre-activations of every layer; the last entry is the logit vector.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let act = self.config.activation;
        let n_layers = self.weights.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut a: Vec<f64> = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let n_in = a.len();
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, &bo)| {
                    bo + w[o * n_in..(o + 1) * n_in].iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            a = if l + 1 < n_layers { z.iter().map(|&v| act.apply(v)).collect() } else { z.clone() };
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, x: [f64; 2]) -> Vec<f64> {
        self.forward(&x).pop().unwrap()
    }

    pub fn predict(&self, x: [f64; 2]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Predictions (with logits kept) for a batch of points.
    pub fn prediction_set(&self, points: &[LabeledPoint]) -> Result<PredictionSet> {
        let logits = points.iter().map(|p| self.logits(p.x)).collect();
        let labels: Vec<usize> = points.iter().map(|p| p.label).collect();
        PredictionSet::from_logits(logits, &labels)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::io::to_json_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.config.validate()?;
        let shapes_ok = m.weights.len() + 1 == m.config.layers.len()
            && m.biases.len() == m.weights.len()
            && m.config
                .layers
                .windows(2)
                .zip(m.weights.iter().zip(&m.biases))
                .all(|(pair, (w, b))| w.len() == pair[0] * pair[1] && b.len() == pair[1]);
        if !shapes_ok {
            return Err(CalibError::invalid("model parameters do not match the layer widths"));
        }
        if m.weights.iter().chain(&m.biases).flatten().any(|v| !v.is_finite()) {
            return Err(CalibError::NonFinite("model parameters"));
        }
        Ok(m)
    }
}

/// Mean loss over `points` and its gradient with respect to every parameter.
pub fn loss_and_grad(
    model: &ModelState,
    spec: &LossSpec,
    points: &[LabeledPoint],
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (mut gw, mut gb) = model.zeros_like();
    let act = model.config.activation;
    let k = model.config.k();
    let n = points.len() as f64;
    let mut total = 0.0;
    let mut target = vec![0.0; k];
    for p in points {
        let pre = model.forward(&p.x);
        let probs = softmax(pre.last().unwrap());
        target[p.label] = 1.0;
        total += loss_value(spec, &probs, &target);
        let mut delta: Vec<f64> = logit_grad(spec, &probs, &target).into_iter().map(|g| g / n).collect();
        target[p.label] = 0.0;
        for l in (0..model.weights.len()).rev() {
            let input: Vec<f64> =
                if l == 0 { p.x.to_vec() } else { pre[l - 1].iter().map(|&z| act.apply(z)).collect() };
            let n_in = input.len();
            for (o, &d) in delta.iter().enumerate() {
                gb[l][o] += d;
                for (i, &a) in input.iter().enumerate() {
                    gw[l][o * n_in + i] += d * a;
                }
            }
            if l > 0 {
                let w = &model.weights[l];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = delta.iter().enumerate().map(|(o, &d)| w[o * n_in + i] * d).sum();
                        back * act.derivative(pre[l - 1][i])
                    })
                    .collect();
            }
        }
    }
    (total / n, gw, gb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_ece: f64,
    pub test_nll: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        crate::io::csv_table(
            &["epoch", "train_loss", "test_loss", "test_ece", "test_nll", "test_error"],
            self.epochs.iter().enumerate().map(|(i, e)| {
                vec![(i + 1) as f64, e.train_loss, e.test_loss, e.test_ece, e.test_nll, e.test_error]
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: ModelState,
    pub history: TrainHistory,
}

fn mean_spec_loss(spec: &LossSpec, set: &PredictionSet) -> f64 {
    let k = set.k();
    let mut target = vec![0.0; k];
    let mut total = 0.0;
    for r in set.records() {
        target[r.label] = 1.0;
        total += loss_value(spec, r.probs.as_slice(), &target);
        target[r.label] = 0.0;
    }
    total / set.len() as f64
}

/// Full-batch training. `train_loss` in the history is measured before each
/// update, the test columns after it.
pub fn train(
    cfg: &MLPConfig,
    spec: &LossSpec,
    train_pts: &[LabeledPoint],
    test_pts: &[LabeledPoint],
) -> Result<TrainOutput> {
    spec.validate()?;
    if train_pts.is_empty() || test_pts.is_empty() {
        return Err(CalibError::invalid("training and test sets must be nonempty"));
    }
    let k = cfg.k();
    if let Some(p) = train_pts.iter().chain(test_pts).find(|p| p.label >= k) {
        return Err(CalibError::invalid(format!("label {} out of range for K={k}", p.label)));
    }
    let mut model = ModelState::init(cfg)?;
    let (mut m_w, mut m_b) = model.zeros_like();
    let (mut v_w, mut v_b) = model.zeros_like();
    let bins = BinningConfig::default();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let (loss, gw, gb) = loss_and_grad(&model, spec, train_pts);
        if !loss.is_finite() {
            return Err(CalibError::Diverged { epoch: epoch + 1 });
        }
        let step = (epoch + 1) as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(step);
        let bc2 = 1.0 - ADAM_BETA2.powi(step);
        let groups = model
            .weights
            .iter_mut()
            .zip(&gw)
            .zip(m_w.iter_mut().zip(v_w.iter_mut()))
            .chain(model.biases.iter_mut().zip(&gb).zip(m_b.iter_mut().zip(v_b.iter_mut())));
        for ((params, grads), (ms, vs)) in groups {
            for (((p, &g0), m), v) in params.iter_mut().zip(grads).zip(ms.iter_mut()).zip(vs.iter_mut()) {
                let g = g0 + cfg.weight_decay * *p;
                match cfg.optimizer {
                    Optimizer::Sgd => *p -= cfg.lr * g,
                    Optimizer::Adam => {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *p -= cfg.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        if model.weights.iter().chain(&model.biases).flatten().any(|v| !v.is_finite()) {
            return Err(CalibError::Diverged { epoch: epoch + 1 });
        }
        let test = model.prediction_set(test_pts).map_err(|_| CalibError::Diverged { epoch: epoch + 1 })?;
        let scores = score_metrics(&test);
        history.epochs.push(EpochRecord {
            train_loss: loss,
            test_loss: mean_spec_loss(spec, &test),
            test_ece: ece(&test, &bins)?,
            test_nll: scores.nll,
            test_error: scores.error,
        });
    }
    Ok(TrainOutput { model, history })
}

/// Axis-aligned rectangle `[x0_min, x0_max] × [x1_min, x1_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x0_min: f64,
    pub x0_max: f64,
    pub x1_min: f64,
    pub x1_max: f64,
}

impl Default for Bounds {
    /// Covers the two-moons data with noise 0.2.
    fn default() -> Self {
        Self { x0_min: -1.5, x0_max: 2.5, x1_min: -1.0, x1_max: 1.5 }
    }
}

impl Bounds {
    pub fn around(points: &[LabeledPoint], margin: f64) -> Result<Self> {
        let mut b = Self {
            x0_min: f64::INFINITY,
            x0_max: f64::NEG_INFINITY,
            x1_min: f64::INFINITY,
            x1_max: f64::NEG_INFINITY,
        };
        for p in points {
            b.x0_min = b.x0_min.min(p.x[0] - margin);
            b.x0_max = b.x0_max.max(p.x[0] + margin);
            b.x1_min = b.x1_min.min(p.x[1] - margin);
            b.x1_max = b.x1_max.max(p.x[1] + margin);
        }
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.x0_min, self.x0_max, self.x1_min, self.x1_max].iter().all(|v| v.is_finite())
            && self.x0_min < self.x0_max
            && self.x1_min < self.x1_max;
        if !ok {
            return Err(CalibError::invalid(format!("degenerate bounds {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub x: [f64; 2],
    pub probs: Vec<f64>,
}

/// Predictions on a `resolution × resolution` lattice, row-major with `x1`
/// as the row coordinate.
pub fn decision_grid(model: &ModelState, bounds: &Bounds, resolution: usize) -> Result<Vec<GridCell>> {
    bounds.validate()?;
    if resolution < 2 {
        return Err(CalibError::invalid("grid resolution must be >= 2"));
    }
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let mut out = Vec::with_capacity(resolution * resolution);
    for r in 0..resolution {
        let x1 = step(bounds.x1_min, bounds.x1_max, r);
        for c in 0..resolution {
            let x = [step(bounds.x0_min, bounds.x0_max, c), x1];
            out.push(GridCell { x, probs: model.predict(x) });
        }
    }
    Ok(out)
}

pub fn grid_csv(cells: &[GridCell]) -> String {
    let k = cells.first().map_or(0, |c| c.probs.len());
    let mut header = vec!["x0".to_string(), "x1".to_string()];
    header.extend((0..k).map(|i| format!("p_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    crate::io::csv_table(
        &header,
        cells.iter().map(|c| {
            let mut row = c.x.to_vec();
            row.extend_from_slice(&c.probs);
            row
        }),
    )
}

/// Fraction of cells whose top probability exceeds `threshold`.
pub fn confident_fraction(cells: &[GridCell], threshold: f64) -> f64 {
    let hits = cells.iter().filter(|c| c.probs.iter().copied().fold(0.0, f64::max) > threshold).count();
    hits as f64 / cells.len() as f64
}

/// Train/validation/test points from the seeded 60/20/20 split.
pub fn split_points(
    points: &[LabeledPoint],
    seed: u64,
) -> (Vec<LabeledPoint>, Vec<LabeledPoint>, Vec<LabeledPoint>) {
    let s = split_indices(points.len(), seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| points[i].clone()).collect::<Vec<_>>();
    (pick(&s.train), pick(&s.val), pick(&s.test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub lambda: f64,
    pub best_t: f64,
    pub pre_ece: f64,
    pub post_ece: f64,
    pub pre_adaece: f64,
    pub post_adaece: f64,
    pub pre_cwece: f64,
    pub post_cwece: f64,
    pub pre_nll: f64,
    pub post_nll: f64,
    pub error: f64,
}

pub const SWEEP_HEADER: [&str; 12] = [
    "gamma",
    "lambda",
    "best_t",
    "pre_ece",
    "post_ece",
    "pre_adaece",
    "post_adaece",
    "pre_cwece",
    "post_cwece",
    "pre_nll",
    "post_nll",
    "error",
];

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    crate::io::csv_table(
        &SWEEP_HEADER,
        rows.iter().map(|r| {
            vec![
                r.gamma,
                r.lambda,
                r.best_t,
                r.pre_ece,
                r.post_ece,
                r.pre_adaece,
                r.post_adaece,
                r.pre_cwece,
                r.post_cwece,
                r.pre_nll,
                r.post_nll,
                r.error,
            ]
        }),
    )
}

/// Trains one FCL model per `(γ, λ)` (λ = 0 is plain focal loss), fits a
/// temperature on the validation split and reports test metrics before and
/// after scaling. Rows are ordered by gamma, then lambda.
pub fn lambda_sweep(
    base: &MLPConfig,
    gammas: &[f64],
    lambdas: &[f64],
    points: &[LabeledPoint],
) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() || lambdas.is_empty() {
        return Err(CalibError::invalid("sweep needs at least one gamma and one lambda"));
    }
    let (tr, val, test) = split_points(points, base.seed);
    let bins = BinningConfig::default();
    let mut rows = Vec::with_capacity(gammas.len() * lambdas.len());
    for &gamma in gammas {
        for &lambda in lambdas {
            let spec = if lambda == 0.0 { LossSpec::focal(gamma) } else { LossSpec::fcl(gamma, lambda) };
            let out = train(base, &spec, &tr, &test)?;
            let val_set = out.model.prediction_set(&val)?;
            let scan = temperature_scan(&val_set, &bins, &TemperatureGrid::default())?;
            let pre = out.model.prediction_set(&test)?;
            let post = apply_temperature(&pre, scan.best_t)?;
            rows.push(SweepRow {
                gamma,
                lambda,
                best_t: scan.best_t,
                pre_ece: ece(&pre, &bins)?,
                post_ece: ece(&post, &bins)?,
                pre_adaece: adaece(&pre, bins.bins)?,
                post_adaece: adaece(&post, bins.bins)?,
                pre_cwece: classwise_ece(&pre, &bins, CwNorm::Global)?,
                post_cwece: classwise_ece(&post, &bins, CwNorm::Global)?,
                pre_nll: score_metrics(&pre).nll,
                post_nll: score_metrics(&post).nll,
                error: score_metrics(&pre).error,
            });
        }
    }
    Ok(rows)
}
