//! Calibration and classification metrics.
//!
//! Binned metrics assign each sample to a bin by a score in `[0, 1]`. Equal
//! width bins are half-open intervals `(lo, hi]` with `0` placed in the first
//! bin. Equal mass bins sort samples by score (stable, so ties keep input
//! order) and cut the sorted run into `M` contiguous pieces whose sizes differ
//! by at most one, larger pieces first. Empty bins carry zero weight.
//!
//! All sums run sequentially in record order.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::PredictionSet;
use crate::losses::LOG_FLOOR;
use crate::{CalibError, Result};

pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScheme {
    EqualWidth,
    EqualMass,
}

impl FromStr for BinScheme {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal_width" | "equal-width" | "width" => Ok(BinScheme::EqualWidth),
            "equal_mass" | "equal-mass" | "mass" => Ok(BinScheme::EqualMass),
            other => Err(CalibError::invalid(format!("unknown binning scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub bins: usize,
    pub scheme: BinScheme,
}

impl BinningConfig {
    pub fn equal_width(bins: usize) -> Self {
        Self { bins, scheme: BinScheme::EqualWidth }
    }

    pub fn equal_mass(bins: usize) -> Self {
        Self { bins, scheme: BinScheme::EqualMass }
    }

    fn validate(&self) -> Result<()> {
        if self.bins < 1 {
            return Err(CalibError::invalid("need at least one bin"));
        }
        Ok(())
    }
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self::equal_width(DEFAULT_BINS)
    }
}

/// One bin of a reliability table. `accuracy` and `confidence` are zero for
/// empty bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

impl BinSummary {
    pub fn gap(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.accuracy - self.confidence).abs()
        }
    }
}

/// Equal-width bin index for a score, `(lo, hi]` with 0 in bin 0.
fn width_bin(score: f64, m: usize) -> usize {
    let mf = m as f64;
    let mut b = ((score * mf).ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
    // Correct rounding at edges using the exact edge values b/M.
    while b > 0 && score <= b as f64 / mf {
        b -= 1;
    }
    while b + 1 < m && score > (b + 1) as f64 / mf {
        b += 1;
    }
    b
}

fn summarize(lo: f64, hi: f64, members: impl Iterator<Item = (f64, f64)>) -> BinSummary {
    let mut count = 0usize;
    let mut hit = 0.0;
    let mut conf = 0.0;
    for (s, h) in members {
        count += 1;
        hit += h;
        conf += s;
    }
    let (accuracy, confidence) =
        if count > 0 { (hit / count as f64, conf / count as f64) } else { (0.0, 0.0) };
    BinSummary { lo, hi, count, accuracy, confidence }
}

/// Bins `(score, hit)` pairs; `hit` is 1 for a positive outcome.
pub fn bin_scores(scores: &[f64], hits: &[f64], cfg: &BinningConfig) -> Result<Vec<BinSummary>> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(CalibError::invalid("cannot bin an empty set"));
    }
    let m = cfg.bins;
    match cfg.scheme {
        BinScheme::EqualWidth => {
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
            for (i, &s) in scores.iter().enumerate() {
                members[width_bin(s, m)].push(i);
            }
            Ok(members
                .iter()
                .enumerate()
                .map(|(b, idx)| {
                    summarize(
                        b as f64 / m as f64,
                        (b + 1) as f64 / m as f64,
                        idx.iter().map(|&i| (scores[i], hits[i])),
                    )
                })
                .collect())
        }
        BinScheme::EqualMass => {
            let n = scores.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            let (base, extra) = (n / m, n % m);
            let mut out = Vec::with_capacity(m);
            let mut start = 0;
            for b in 0..m {
                let size = base + usize::from(b < extra);
                let run = &order[start..start + size];
                let (lo, hi) = match (run.first(), run.last()) {
                    (Some(&f), Some(&l)) => (scores[f], scores[l]),
                    _ => {
                        let edge = if start > 0 { scores[order[start - 1]] } else { 0.0 };
                        (edge, edge)
                    }
                };
                out.push(summarize(lo, hi, run.iter().map(|&i| (scores[i], hits[i]))));
                start += size;
            }
            Ok(out)
        }
    }
}

fn top_label_pairs(set: &PredictionSet) -> (Vec<f64>, Vec<f64>) {
    set.records().iter().map(|r| (r.confidence(), if r.is_correct() { 1.0 } else { 0.0 })).unzip()
}

/// Top-label bins: score is the max probability, hit is top-1 correctness.
pub fn bin_predictions(set: &PredictionSet, cfg: &BinningConfig) -> Result<Vec<BinSummary>> {
    let (s, h) = top_label_pairs(set);
    bin_scores(&s, &h, cfg)
}

/// Same bins as [`bin_predictions`]; the gap column comes from
/// [`BinSummary::gap`] and [`reliability_csv`].
pub fn reliability_table(set: &PredictionSet, cfg: &BinningConfig) -> Result<Vec<BinSummary>> {
    bin_predictions(set, cfg)
}

pub fn reliability_csv(bins: &[BinSummary]) -> String {
    crate::io::csv_table(
        &["lo", "hi", "count", "accuracy", "confidence", "gap"],
        bins.iter().map(|b| vec![b.lo, b.hi, b.count as f64, b.accuracy, b.confidence, b.gap()]),
    )
}

fn weighted_gap(bins: &[BinSummary], n: usize) -> f64 {
    bins.iter().filter(|b| b.count > 0).map(|b| b.count as f64 / n as f64 * b.gap()).sum()
}

/// Expected calibration error with the binning given by `cfg`.
pub fn ece(set: &PredictionSet, cfg: &BinningConfig) -> Result<f64> {
    Ok(weighted_gap(&bin_predictions(set, cfg)?, set.len()))
}

/// ECE over equal-mass bins.
pub fn adaece(set: &PredictionSet, bins: usize) -> Result<f64> {
    ece(set, &BinningConfig::equal_mass(bins))
}

pub fn mce(set: &PredictionSet, cfg: &BinningConfig) -> Result<f64> {
    Ok(bin_predictions(set, cfg)?.iter().filter(|b| b.count > 0).map(BinSummary::gap).fold(0.0, f64::max))
}

/// Weighting of the per-class terms in classwise ECE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CwNorm {
    /// `|B_km| / N` with `N` the total sample count.
    #[default]
    Global,
    /// `|B_km| / N_k` with `N_k` the number of samples labelled `k`; classes
    /// with no samples contribute zero.
    PerClass,
}

impl FromStr for CwNorm {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(CwNorm::Global),
            "per-class" | "per_class" => Ok(CwNorm::PerClass),
            other => Err(CalibError::invalid(format!("unknown classwise norm '{other}'"))),
        }
    }
}

pub fn classwise_ece(set: &PredictionSet, cfg: &BinningConfig, norm: CwNorm) -> Result<f64> {
    let k = set.k();
    let n = set.len();
    let mut total = 0.0;
    for class in 0..k {
        let (scores, hits): (Vec<f64>, Vec<f64>) = set
            .records()
            .iter()
            .map(|r| (r.probs.get(class), if r.label == class { 1.0 } else { 0.0 }))
            .unzip();
        let bins = bin_scores(&scores, &hits, cfg)?;
        let denom = match norm {
            CwNorm::Global => n,
            CwNorm::PerClass => set.records().iter().filter(|r| r.label == class).count(),
        };
        if denom > 0 {
            total += weighted_gap(&bins, denom);
        }
    }
    Ok(total / k as f64)
}

/// Piecewise-linear witness `η` on `[0, 1]` given by its values at knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzWitness {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl LipschitzWitness {
    /// Checks the 1-Lipschitz chain constraint and the `[-1, 1]` box.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.knots.len() == self.values.len()
            && self.values.iter().all(|v| v.abs() <= 1.0 + tol)
            && self
                .knots
                .windows(2)
                .zip(self.values.windows(2))
                .all(|(k, v)| k[1] > k[0] && (v[1] - v[0]).abs() <= k[1] - k[0] + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmceResult {
    pub value: f64,
    pub witness: LipschitzWitness,
}

/// Residuals `y_k - p_k` pooled over samples and classes, merged at equal
/// prediction values. Returns sorted unique knots and their summed weights.
pub fn smce_residuals(set: &PredictionSet) -> (Vec<f64>, Vec<f64>) {
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(set.len() * set.k());
    for r in set.records() {
        for (k, &p) in r.probs.as_slice().iter().enumerate() {
            let y = if k == r.label { 1.0 } else { 0.0 };
            pairs.push((p, y - p));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut knots: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (u, w) in pairs {
        match knots.last() {
            Some(&last) if last == u => *weights.last_mut().unwrap() += w,
            _ => {
                knots.push(u);
                weights.push(w);
            }
        }
    }
    (knots, weights)
}

/// Concave piecewise-linear function on `[-1, 1]`.
#[derive(Debug, Clone)]
struct ConcavePwl {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl ConcavePwl {
    fn linear(w: f64) -> Self {
        Self { xs: vec![-1.0, 1.0], ys: vec![-w, w] }
    }

    fn eval(&self, x: f64) -> f64 {
        let i = self.xs.partition_point(|&v| v < x);
        if i == 0 {
            return self.ys[0];
        }
        if i >= self.xs.len() {
            return *self.ys.last().unwrap();
        }
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (y0, y1) = (self.ys[i - 1], self.ys[i]);
        if x1 == x0 {
            return y1.max(y0);
        }
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    fn argmax(&self) -> f64 {
        let mut best = 0;
        for i in 1..self.ys.len() {
            if self.ys[i] > self.ys[best] {
                best = i;
            }
        }
        self.xs[best]
    }

    /// `x -> max { f(x') : |x' - x| <= d, x' in [-1, 1] }`.
    fn window_max(&self, m: f64, d: f64) -> Self {
        let peak = self.eval(m);
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(self.xs.len() + 4);
        let lo = (m - d).max(-1.0);
        let hi = (m + d).min(1.0);
        if lo > -1.0 {
            pts.push((-1.0, self.eval(-1.0 + d)));
            for (&x, &y) in self.xs.iter().zip(&self.ys) {
                if x < m && x - d > -1.0 {
                    pts.push((x - d, y));
                }
            }
        }
        pts.push((lo, peak));
        pts.push((hi, peak));
        if hi < 1.0 {
            for (&x, &y) in self.xs.iter().zip(&self.ys) {
                if x > m && x + d < 1.0 {
                    pts.push((x + d, y));
                }
            }
            pts.push((1.0, self.eval(1.0 - d)));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut xs = Vec::with_capacity(pts.len());
        let mut ys: Vec<f64> = Vec::with_capacity(pts.len());
        for (x, y) in pts {
            match xs.last() {
                Some(&lx) if x - lx <= 1e-15 => {
                    let ly = ys.last_mut().unwrap();
                    *ly = ly.max(y);
                }
                _ => {
                    xs.push(x);
                    ys.push(y);
                }
            }
        }
        Self { xs, ys }
    }

    fn add_linear(&mut self, w: f64) {
        for (x, y) in self.xs.iter().zip(self.ys.iter_mut()) {
            *y += w * x;
        }
    }

    /// Drops interior breakpoints that lie on the segment through their
    /// neighbours.
    fn prune(&mut self) {
        if self.xs.len() <= 2 {
            return;
        }
        let mut xs = vec![self.xs[0]];
        let mut ys = vec![self.ys[0]];
        for i in 1..self.xs.len() - 1 {
            let (x0, y0) = (*xs.last().unwrap(), *ys.last().unwrap());
            let (x1, y1) = (self.xs[i], self.ys[i]);
            let (x2, y2) = (self.xs[i + 1], self.ys[i + 1]);
            let cross = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
            if cross.abs() > 1e-14 * (1.0 + y0.abs() + y1.abs() + y2.abs()) {
                xs.push(x1);
                ys.push(y1);
            }
        }
        xs.push(*self.xs.last().unwrap());
        ys.push(*self.ys.last().unwrap());
        self.xs = xs;
        self.ys = ys;
    }
}

/// Solves `max Σ w_i η_i` subject to `|η_{i+1} - η_i| <= u_{i+1} - u_i` and
/// `|η_i| <= 1` exactly by dynamic programming over concave piecewise-linear
/// value functions. `knots` must be strictly increasing.
pub fn max_lipschitz_correlation(knots: &[f64], weights: &[f64]) -> LipschitzWitness {
    let n = knots.len();
    if n == 0 {
        return LipschitzWitness { knots: Vec::new(), values: Vec::new() };
    }
    let mut argmaxes = Vec::with_capacity(n);
    let mut value = ConcavePwl::linear(weights[0]);
    for j in 1..n {
        let m = value.argmax();
        argmaxes.push(m);
        let d = knots[j] - knots[j - 1];
        value = value.window_max(m, d);
        value.add_linear(weights[j]);
        value.prune();
    }
    let mut eta = vec![0.0; n];
    eta[n - 1] = value.argmax();
    for j in (0..n - 1).rev() {
        let d = knots[j + 1] - knots[j];
        let next = eta[j + 1];
        eta[j] = argmaxes[j].clamp((next - d).max(-1.0), (next + d).min(1.0));
    }
    LipschitzWitness { knots: knots.to_vec(), values: eta }
}

/// Smooth calibration error: the largest correlation between residuals and a
/// 1-Lipschitz witness bounded by 1, pooled over classes and divided by the
/// number of samples.
pub fn smce(set: &PredictionSet) -> Result<SmceResult> {
    let (knots, weights) = smce_residuals(set);
    let witness = max_lipschitz_correlation(&knots, &weights);
    let attained: f64 = weights.iter().zip(&witness.values).map(|(w, e)| w * e).sum();
    Ok(SmceResult { value: (attained / set.len() as f64).max(0.0), witness })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub nll: f64,
    pub brier: f64,
    pub error: f64,
}

/// Mean NLL, multiclass Brier score and top-1 error (ties to lowest class).
pub fn score_metrics(set: &PredictionSet) -> Scores {
    let n = set.len() as f64;
    let (mut nll, mut brier, mut err) = (0.0, 0.0, 0.0);
    for r in set.records() {
        let p = r.probs.as_slice();
        nll += -p[r.label].max(LOG_FLOOR).ln();
        brier += p
            .iter()
            .enumerate()
            .map(|(k, &pk)| {
                let d = pk - if k == r.label { 1.0 } else { 0.0 };
                d * d
            })
            .sum::<f64>();
        if !r.is_correct() {
            err += 1.0;
        }
    }
    Scores { nll: nll / n, brier: brier / n, error: err / n }
}

/// Mann-Whitney AUROC with half credit for ties.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(CalibError::invalid("AUROC needs at least one positive and one negative"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(CalibError::NonFinite("AUROC scores"));
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Twice the U statistic, kept integral.
    let mut twice_u: u128 = 0;
    for &s in pos {
        let below = sorted.partition_point(|&x| x < s);
        let not_above = sorted.partition_point(|&x| x <= s);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_u as f64 / 2.0 / (pos.len() as f64 * neg.len() as f64))
}

/// Fixed-key bundle of every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ece: f64,
    pub mce: f64,
    pub adaece: f64,
    pub cwece: f64,
    pub smce: f64,
    pub nll: f64,
    pub brier: f64,
    pub error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    pub bins: Vec<BinSummary>,
}

/// Builds a report. `cfg.bins` also sets the AdaECE bin count; the scheme in
/// `cfg` applies to ECE, MCE, classwise ECE and the reported bins.
pub fn metric_report(set: &PredictionSet, cfg: &BinningConfig, norm: CwNorm) -> Result<MetricReport> {
    let bins = bin_predictions(set, cfg)?;
    let scores = score_metrics(set);
    Ok(MetricReport {
        ece: weighted_gap(&bins, set.len()),
        mce: bins.iter().filter(|b| b.count > 0).map(BinSummary::gap).fold(0.0, f64::max),
        adaece: adaece(set, cfg.bins)?,
        cwece: classwise_ece(set, cfg, norm)?,
        smce: smce(set)?.value,
        nll: scores.nll,
        brier: scores.brier,
        error: scores.error,
        auroc: None,
        bins,
    })
}
