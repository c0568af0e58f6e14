//! Temperature scaling and the post-processing gap.

use serde::{Deserialize, Serialize};

use crate::data::{PredictionRecord, PredictionSet};
use crate::losses::{binary_kappa_grad, loss_value, LossSpec};
use crate::metrics::{ece, BinningConfig};
use crate::{softmax_scaled, CalibError, ProbVector, Result};

/// Temperature grid bounds. Defaults cover `(0, 10]` in steps of 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub t_step: f64,
}

impl Default for TemperatureGrid {
    fn default() -> Self {
        Self { t_min: 0.1, t_max: 10.0, t_step: 0.1 }
    }
}

impl TemperatureGrid {
    /// Grid points `t_min + i * t_step`, snapped to 1e-9 so that round
    /// values such as 1.0 appear exactly.
    pub fn points(&self) -> Result<Vec<f64>> {
        let TemperatureGrid { t_min, t_max, t_step } = *self;
        if !(t_min > 0.0 && t_step > 0.0 && t_max >= t_min && t_max.is_finite()) {
            return Err(CalibError::invalid(format!(
                "empty temperature grid (t_min={t_min}, t_max={t_max}, t_step={t_step})"
            )));
        }
        let count = ((t_max - t_min) / t_step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| ((t_min + i as f64 * t_step) * 1e9).round() / 1e9).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScanResult {
    pub best_t: f64,
    pub grid: Vec<(f64, f64)>,
    pub pre_ece: f64,
    pub post_ece: f64,
}

impl TemperatureScanResult {
    pub fn grid_csv(&self) -> String {
        crate::io::csv_table(&["t", "ece"], self.grid.iter().map(|&(t, e)| vec![t, e]))
    }
}

/// Replaces every record's probabilities with `softmax(z / t)`.
pub fn apply_temperature(set: &PredictionSet, t: f64) -> Result<PredictionSet> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(CalibError::invalid(format!("temperature must be > 0, got {t}")));
    }
    let records = set
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let z = r.logits.as_ref().ok_or_else(|| CalibError::Row {
                row: i + 1,
                msg: "temperature scaling needs logits".into(),
            })?;
            Ok(PredictionRecord {
                probs: ProbVector::new(softmax_scaled(z, t))?,
                label: r.label,
                eta: r.eta.clone(),
                logits: Some(z.clone()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(records)
}

/// Grid search for the temperature with the lowest ECE. Ties prefer the
/// temperature closest to 1.0, then the smaller one.
pub fn temperature_scan(
    val: &PredictionSet,
    cfg: &BinningConfig,
    grid: &TemperatureGrid,
) -> Result<TemperatureScanResult> {
    if !val.has_logits() {
        return Err(CalibError::invalid("temperature scaling needs logits"));
    }
    let ts = grid.points()?;
    let pre_ece = ece(&apply_temperature(val, 1.0)?, cfg)?;
    let mut rows = Vec::with_capacity(ts.len());
    for &t in &ts {
        rows.push((t, ece(&apply_temperature(val, t)?, cfg)?));
    }
    let mut best = rows[0];
    for &(t, e) in &rows[1..] {
        let closer =
            (t - 1.0).abs() < (best.0 - 1.0).abs() || ((t - 1.0).abs() == (best.0 - 1.0).abs() && t < best.0);
        if e < best.1 || (e == best.1 && closer) {
            best = (t, e);
        }
    }
    Ok(TemperatureScanResult { best_t: best.0, grid: rows, pre_ece, post_ece: best.1 })
}

/// Post-processing map `κ` at the sorted distinct predicted values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostProcessMap {
    pub knots: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl PostProcessMap {
    pub fn identity(knots: Vec<f64>) -> Self {
        let kappa = knots.clone();
        Self { knots, kappa }
    }

    /// Checks `κ ∈ [0, 1]` and that `δ = κ - id` is 1-Lipschitz between knots.
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.kappa.iter().all(|&k| (-tol..=1.0 + tol).contains(&k))
            && self.knots.windows(2).zip(self.kappa.windows(2)).all(|(u, k)| {
                let d = u[1] - u[0];
                ((k[1] - u[1]) - (k[0] - u[0])).abs() <= d + tol
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PGapResult {
    pub raw_risk: f64,
    pub optimized_risk: f64,
    pub pgap: f64,
    pub map: PostProcessMap,
}

/// Binary instance grouped by distinct class-1 prediction.
#[derive(Debug, Clone)]
pub(crate) struct BinaryGroups {
    pub knots: Vec<f64>,
    /// `(count of label 0, count of label 1)` per knot.
    pub counts: Vec<(usize, usize)>,
    pub n: usize,
}

impl BinaryGroups {
    pub fn from_set(set: &PredictionSet) -> Result<Self> {
        if set.k() != 2 {
            return Err(CalibError::invalid(format!(
                "post-processing gap is defined for binary predictors, got K={}",
                set.k()
            )));
        }
        let pairs: Vec<(f64, usize)> = set.records().iter().map(|r| (r.probs.get(1), r.label)).collect();
        Ok(Self::from_pairs(pairs))
    }

    pub fn from_pairs(mut pairs: Vec<(f64, usize)>) -> Self {
        let n = pairs.len();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut knots: Vec<f64> = Vec::new();
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for (u, y) in pairs {
            if knots.last() != Some(&u) {
                knots.push(u);
                counts.push((0, 0));
            }
            let c = counts.last_mut().unwrap();
            if y == 1 {
                c.1 += 1;
            } else {
                c.0 += 1;
            }
        }
        Self { knots, counts, n }
    }

    /// Mean loss when knot `j` is mapped to `kappa[j]`.
    pub fn risk(&self, spec: &LossSpec, kappa: &[f64]) -> f64 {
        let mut total = 0.0;
        for (&(c0, c1), &k) in self.counts.iter().zip(kappa) {
            let p = [1.0 - k, k];
            if c0 > 0 {
                total += c0 as f64 * loss_value(spec, &p, &[1.0, 0.0]);
            }
            if c1 > 0 {
                total += c1 as f64 * loss_value(spec, &p, &[0.0, 1.0]);
            }
        }
        total / self.n as f64
    }

    fn knot_grad(&self, spec: &LossSpec, j: usize, k: f64) -> f64 {
        let (c0, c1) = self.counts[j];
        let mut g = 0.0;
        if c0 > 0 {
            g += c0 as f64 * binary_kappa_grad(spec, k, 0);
        }
        if c1 > 0 {
            g += c1 as f64 * binary_kappa_grad(spec, k, 1);
        }
        g
    }
}

/// Exact solver for the chain-constrained program
/// `min Σ_j g_j(κ_j)` with `0 <= κ_{j+1} - κ_j <= 2 (u_{j+1} - u_j)` and
/// `κ ∈ [0, 1]`, where each `g_j` is convex.
///
/// Works on derivatives: the cost-to-go `F_j` satisfies
/// `F_{j+1} = g_{j+1} + min_{κ' ∈ [κ - 2d_j, κ]} F_j(κ')`, and the inner
/// minimum has derivative `F_j'(κ)` left of the minimizer `m_j`, zero on
/// `[m_j, m_j + 2d_j]` and `F_j'(κ - 2d_j)` beyond. Each minimizer is found by
/// bisection on that derivative.
struct ChainSolver<'a> {
    groups: &'a BinaryGroups,
    spec: &'a LossSpec,
    minimizers: Vec<f64>,
}

impl<'a> ChainSolver<'a> {
    fn new(groups: &'a BinaryGroups, spec: &'a LossSpec) -> Self {
        Self { groups, spec, minimizers: Vec::with_capacity(groups.knots.len()) }
    }

    fn gap(&self, j: usize) -> f64 {
        2.0 * (self.groups.knots[j + 1] - self.groups.knots[j])
    }

    /// `F_j'(κ)` using the minimizers of levels `< j`.
    fn cost_grad(&self, j: usize, mut k: f64) -> f64 {
        let mut total = 0.0;
        let mut level = j;
        loop {
            total += self.groups.knot_grad(self.spec, level, k);
            if level == 0 {
                return total;
            }
            level -= 1;
            let m = self.minimizers[level];
            let span = self.gap(level);
            if k < m {
                continue;
            }
            if k <= m + span {
                return total;
            }
            k -= span;
        }
    }

    fn argmin(&self, j: usize) -> f64 {
        if self.cost_grad(j, 0.0) >= 0.0 {
            return 0.0;
        }
        if self.cost_grad(j, 1.0) <= 0.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cost_grad(j, mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn solve(mut self) -> Vec<f64> {
        let n = self.groups.knots.len();
        for j in 0..n {
            let m = self.argmin(j);
            self.minimizers.push(m);
        }
        let mut kappa = vec![0.0; n];
        kappa[n - 1] = self.minimizers[n - 1];
        for j in (0..n - 1).rev() {
            let next = kappa[j + 1];
            kappa[j] = self.minimizers[j].clamp((next - self.gap(j)).max(0.0), next);
        }
        kappa
    }
}

pub(crate) fn pgap_groups(groups: &BinaryGroups, spec: &LossSpec) -> Result<PGapResult> {
    spec.validate()?;
    if !spec.is_convex() {
        return Err(CalibError::NonConvex(spec.to_string()));
    }
    let identity = PostProcessMap::identity(groups.knots.clone());
    let raw_risk = groups.risk(spec, &identity.kappa);
    let kappa = ChainSolver::new(groups, spec).solve();
    let optimized = groups.risk(spec, &kappa);
    // The identity map is feasible; keep it when the solver cannot beat it.
    let (optimized_risk, kappa) =
        if optimized <= raw_risk { (optimized, kappa) } else { (raw_risk, identity.kappa) };
    Ok(PGapResult {
        raw_risk,
        optimized_risk,
        pgap: raw_risk - optimized_risk,
        map: PostProcessMap { knots: groups.knots.clone(), kappa },
    })
}

/// Post-processing gap of a binary predictor under a convex loss: the drop in
/// mean loss achievable by remapping the class-1 probability through `κ`
/// where `κ - id` is 1-Lipschitz.
pub fn pgap(set: &PredictionSet, spec: &LossSpec) -> Result<PGapResult> {
    pgap_groups(&BinaryGroups::from_set(set)?, spec)
}

/// Same as [`pgap`] from raw `(class-1 probability, label)` pairs.
pub fn pgap_pairs(pairs: &[(f64, usize)], spec: &LossSpec) -> Result<PGapResult> {
    if pairs.is_empty() {
        return Err(CalibError::invalid("post-processing gap needs at least one sample"));
    }
    if let Some(&(u, y)) = pairs.iter().find(|&&(u, y)| !(0.0..=1.0).contains(&u) || y > 1) {
        return Err(CalibError::invalid(format!("bad binary sample ({u}, {y})")));
    }
    pgap_groups(&BinaryGroups::from_pairs(pairs.to_vec()), spec)
}
