//! Surrogate losses and their analytic gradients.
//!
//! Every loss is evaluated per sample against a target on the simplex (one-hot
//! or soft). Log terms use probabilities floored at [`LOG_FLOOR`]; the
//! quadratic calibration term always sees the raw values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::PredictionSet;
use crate::{softmax, CalibError, ProbVector, Result};

pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Ce,
    LabelSmoothing,
    Brier,
    Focal,
    Flsd53,
    Fcl,
}

impl FromStr for LossFamily {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" | "cross-entropy" => Ok(LossFamily::Ce),
            "ls" | "label-smoothing" | "label_smoothing" => Ok(LossFamily::LabelSmoothing),
            "brier" => Ok(LossFamily::Brier),
            "focal" | "fl" => Ok(LossFamily::Focal),
            "flsd53" | "flsd-53" => Ok(LossFamily::Flsd53),
            "fcl" => Ok(LossFamily::Fcl),
            other => Err(CalibError::invalid(format!("unknown loss family '{other}'"))),
        }
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossFamily::Ce => "ce",
            LossFamily::LabelSmoothing => "label_smoothing",
            LossFamily::Brier => "brier",
            LossFamily::Focal => "focal",
            LossFamily::Flsd53 => "flsd53",
            LossFamily::Fcl => "fcl",
        };
        f.write_str(s)
    }
}

/// A loss family with its hyperparameters. Unused parameters stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl LossSpec {
    fn raw(family: LossFamily) -> Self {
        Self { family, gamma: 0.0, lambda: 0.0, alpha: 0.0 }
    }

    pub fn ce() -> Self {
        Self::raw(LossFamily::Ce)
    }

    pub fn brier() -> Self {
        Self::raw(LossFamily::Brier)
    }

    pub fn flsd53() -> Self {
        Self::raw(LossFamily::Flsd53)
    }

    pub fn label_smoothing(alpha: f64) -> Self {
        Self { alpha, ..Self::raw(LossFamily::LabelSmoothing) }
    }

    pub fn focal(gamma: f64) -> Self {
        Self { gamma, ..Self::raw(LossFamily::Focal) }
    }

    pub fn fcl(gamma: f64, lambda: f64) -> Self {
        Self { gamma, lambda, ..Self::raw(LossFamily::Fcl) }
    }

    /// Builds a spec from a family name, ignoring parameters it does not use.
    pub fn from_parts(family: LossFamily, gamma: f64, lambda: f64, alpha: f64) -> Result<Self> {
        let spec = match family {
            LossFamily::Ce => Self::ce(),
            LossFamily::Brier => Self::brier(),
            LossFamily::Flsd53 => Self::flsd53(),
            LossFamily::LabelSmoothing => Self::label_smoothing(alpha),
            LossFamily::Focal => Self::focal(gamma),
            LossFamily::Fcl => Self::fcl(gamma, lambda),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(CalibError::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CalibError::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(CalibError::invalid(format!("alpha must be in [0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Whether the per-sample loss is convex in the predicted probabilities.
    /// FLSD-53 switches gamma on a threshold and is excluded.
    pub fn is_convex(&self) -> bool {
        !matches!(self.family, LossFamily::Flsd53)
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            LossFamily::Focal => write!(f, "focal(gamma={})", self.gamma),
            LossFamily::Fcl => write!(f, "fcl(gamma={}, lambda={})", self.gamma, self.lambda),
            LossFamily::LabelSmoothing => write!(f, "label_smoothing(alpha={})", self.alpha),
            other => write!(f, "{other}"),
        }
    }
}

/// Value and logit gradient of one per-sample loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossEval {
    pub value: f64,
    pub grad_logits: Vec<f64>,
}

#[inline]
fn neg_log(p: f64) -> f64 {
    -p.max(LOG_FLOOR).ln()
}

/// d/dp of -log(max(p, floor)).
#[inline]
fn neg_log_grad(p: f64) -> f64 {
    if p > LOG_FLOOR {
        -1.0 / p
    } else {
        0.0
    }
}

/// Focal term `(1 - p)^gamma * -log p` for one class.
#[inline]
pub(crate) fn focal_term(p: f64, gamma: f64) -> f64 {
    let w = if gamma == 0.0 { 1.0 } else { (1.0 - p).max(0.0).powf(gamma) };
    w * neg_log(p)
}

/// Derivative of [`focal_term`] with respect to `p`.
#[inline]
pub(crate) fn focal_term_grad(p: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return neg_log_grad(p);
    }
    let one_minus = (1.0 - p).max(0.0);
    let w = one_minus.powf(gamma);
    // -gamma (1-p)^(gamma-1) * (-log p); vanishes as p -> 1 for every gamma > 0.
    let dw = if one_minus > 0.0 { -gamma * one_minus.powf(gamma - 1.0) } else { 0.0 };
    dw * neg_log(p) + w * neg_log_grad(p)
}

/// FLSD-53: gamma 5 when the true-class probability is below 0.2, else 3.
fn flsd53_gamma(probs: &[f64], target: &[f64]) -> f64 {
    let y = argmax(target);
    if probs[y] < 0.2 {
        5.0
    } else {
        3.0
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn smoothed_target(target: &[f64], alpha: f64) -> Vec<f64> {
    let k = target.len() as f64;
    target.iter().map(|&t| (1.0 - alpha) * t + alpha / k).collect()
}

fn focal_value(probs: &[f64], target: &[f64], gamma: f64) -> f64 {
    probs.iter().zip(target).filter(|(_, &t)| t != 0.0).map(|(&p, &t)| t * focal_term(p, gamma)).sum()
}

fn ce_value(probs: &[f64], target: &[f64]) -> f64 {
    probs.iter().zip(target).filter(|(_, &t)| t != 0.0).map(|(&p, &t)| t * neg_log(p)).sum()
}

fn brier_value(probs: &[f64], target: &[f64]) -> f64 {
    probs.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum()
}

/// Loss value on raw slices. Callers guarantee matching lengths.
pub(crate) fn loss_value(spec: &LossSpec, probs: &[f64], target: &[f64]) -> f64 {
    match spec.family {
        LossFamily::Ce => ce_value(probs, target),
        LossFamily::LabelSmoothing => ce_value(probs, &smoothed_target(target, spec.alpha)),
        LossFamily::Brier => brier_value(probs, target),
        LossFamily::Focal => focal_value(probs, target, spec.gamma),
        LossFamily::Flsd53 => focal_value(probs, target, flsd53_gamma(probs, target)),
        LossFamily::Fcl => focal_value(probs, target, spec.gamma) + spec.lambda * brier_value(probs, target),
    }
}

fn focal_prob_grad(probs: &[f64], target: &[f64], gamma: f64) -> Vec<f64> {
    probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * focal_term_grad(p, gamma) })
        .collect()
}

fn ce_prob_grad(probs: &[f64], target: &[f64]) -> Vec<f64> {
    probs.iter().zip(target).map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * neg_log_grad(p) }).collect()
}

fn brier_prob_grad(probs: &[f64], target: &[f64]) -> Vec<f64> {
    probs.iter().zip(target).map(|(&p, &t)| 2.0 * (p - t)).collect()
}

/// Gradient of the loss with respect to the probability vector, treating each
/// entry as a free variable.
pub(crate) fn prob_grad(spec: &LossSpec, probs: &[f64], target: &[f64]) -> Vec<f64> {
    match spec.family {
        LossFamily::Ce => ce_prob_grad(probs, target),
        LossFamily::LabelSmoothing => ce_prob_grad(probs, &smoothed_target(target, spec.alpha)),
        LossFamily::Brier => brier_prob_grad(probs, target),
        LossFamily::Focal => focal_prob_grad(probs, target, spec.gamma),
        LossFamily::Flsd53 => focal_prob_grad(probs, target, flsd53_gamma(probs, target)),
        LossFamily::Fcl => {
            let mut g = focal_prob_grad(probs, target, spec.gamma);
            for (gi, bi) in g.iter_mut().zip(brier_prob_grad(probs, target)) {
                *gi += spec.lambda * bi;
            }
            g
        }
    }
}

/// d/dκ of the binary loss at class-1 probability `kappa` with label `y`,
/// using unfloored logs so the derivative diverges at the boundary instead of
/// flattening. Used by solvers that bisect on the derivative.
pub(crate) fn binary_kappa_grad(spec: &LossSpec, kappa: f64, y: usize) -> f64 {
    let probs = [1.0 - kappa, kappa];
    let (p_true, sign) = if y == 1 { (kappa, 1.0) } else { (1.0 - kappa, -1.0) };
    let unfloored_focal = |gamma: f64| -> f64 {
        // d/dp of (1-p)^gamma * -ln p for the true class.
        let one_minus = 1.0 - p_true;
        let w = if gamma == 0.0 { 1.0 } else { one_minus.powf(gamma) };
        let dw = if gamma == 0.0 || one_minus <= 0.0 { 0.0 } else { -gamma * one_minus.powf(gamma - 1.0) };
        let nl = if p_true > 0.0 { -p_true.ln() } else { f64::INFINITY };
        let dterm = if dw == 0.0 { 0.0 } else { dw * nl };
        dterm - w / p_true
    };
    let brier = 2.0 * (2.0 * kappa - 2.0 * if y == 1 { 1.0 } else { 0.0 });
    match spec.family {
        LossFamily::Brier => brier,
        LossFamily::Ce => sign * unfloored_focal(0.0),
        LossFamily::Focal => sign * unfloored_focal(spec.gamma),
        LossFamily::Fcl => sign * unfloored_focal(spec.gamma) + spec.lambda * brier,
        LossFamily::LabelSmoothing => {
            let t = smoothed_target(if y == 1 { &[0.0, 1.0] } else { &[1.0, 0.0] }, spec.alpha);
            let term = |c: f64, p: f64| if c == 0.0 { 0.0 } else { c / p };
            term(t[0], probs[0]) - term(t[1], probs[1])
        }
        LossFamily::Flsd53 => {
            let target = if y == 1 { [0.0, 1.0] } else { [1.0, 0.0] };
            let g = prob_grad(spec, &probs, &target);
            g[1] - g[0]
        }
    }
}

/// Pulls a probability-space gradient back through softmax.
fn through_softmax(probs: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_p).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad_p).map(|(&p, &g)| p * (g - dot)).collect()
}

/// Logit gradient on raw slices, given `probs = softmax(logits)`.
pub(crate) fn logit_grad(spec: &LossSpec, probs: &[f64], target: &[f64]) -> Vec<f64> {
    match spec.family {
        LossFamily::Ce => probs.iter().zip(target).map(|(p, t)| p - t).collect(),
        LossFamily::LabelSmoothing => {
            probs.iter().zip(smoothed_target(target, spec.alpha)).map(|(p, t)| p - t).collect()
        }
        LossFamily::Fcl => {
            let focal = through_softmax(probs, &focal_prob_grad(probs, target, spec.gamma));
            let calib = through_softmax(probs, &brier_prob_grad(probs, target));
            focal.into_iter().zip(calib).map(|(f, c)| f + spec.lambda * c).collect()
        }
        _ => through_softmax(probs, &prob_grad(spec, probs, target)),
    }
}

fn check_dims(spec: &LossSpec, k: usize, target: &ProbVector) -> Result<()> {
    spec.validate()?;
    if target.k() != k {
        return Err(CalibError::Dimension { expected: k, got: target.k() });
    }
    Ok(())
}

pub fn eval_loss(spec: &LossSpec, probs: &ProbVector, target: &ProbVector) -> Result<f64> {
    check_dims(spec, probs.k(), target)?;
    let v = loss_value(spec, probs.as_slice(), target.as_slice());
    if !v.is_finite() {
        return Err(CalibError::NonFinite("loss value"));
    }
    Ok(v)
}

pub fn eval_loss_grad(spec: &LossSpec, logits: &[f64], target: &ProbVector) -> Result<LossEval> {
    check_dims(spec, logits.len(), target)?;
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(CalibError::NonFinite("logits"));
    }
    let probs = softmax(logits);
    let t = target.as_slice();
    let value = loss_value(spec, &probs, t);
    let grad_logits = logit_grad(spec, &probs, t);
    if !value.is_finite() || grad_logits.iter().any(|g| !g.is_finite()) {
        return Err(CalibError::NonFinite("loss gradient"));
    }
    Ok(LossEval { value, grad_logits })
}

/// Mean per-record loss against one-hot labels.
pub fn mean_loss(spec: &LossSpec, set: &PredictionSet) -> Result<f64> {
    spec.validate()?;
    let k = set.k();
    let mut target = vec![0.0; k];
    let mut total = 0.0;
    for r in set.records() {
        target[r.label] = 1.0;
        total += loss_value(spec, r.probs.as_slice(), &target);
        target[r.label] = 0.0;
    }
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyBound {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Checks `focal(p, t) >= KL(t || p) + H[t] - gamma * H[p]` for `gamma >= 1`.
pub fn entropy_bound_check(probs: &ProbVector, target: &ProbVector, gamma: f64) -> Result<EntropyBound> {
    if !(gamma >= 1.0) {
        return Err(CalibError::invalid(format!("entropy bound needs gamma >= 1, got {gamma}")));
    }
    if target.k() != probs.k() {
        return Err(CalibError::Dimension { expected: probs.k(), got: target.k() });
    }
    let p = probs.as_slice();
    let t = target.as_slice();
    if p.iter().any(|&x| x <= 0.0) {
        return Err(CalibError::invalid("entropy bound needs strictly positive probabilities"));
    }
    let lhs = focal_value(p, t, gamma);
    let kl: f64 = t.iter().zip(p).filter(|(&ti, _)| ti > 0.0).map(|(&ti, &pi)| ti * (ti / pi).ln()).sum();
    let rhs = kl + entropy(t) - gamma * entropy(p);
    Ok(EntropyBound { holds: lhs >= rhs - 1e-12, lhs, rhs })
}
