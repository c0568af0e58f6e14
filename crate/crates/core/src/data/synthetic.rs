use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{CalibError, ProbVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Moons,
    Gauss2,
}

impl FromStr for SyntheticKind {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" => Ok(SyntheticKind::Moons),
            "gauss2" => Ok(SyntheticKind::Gauss2),
            other => Err(CalibError::invalid(format!("unknown synthetic kind '{other}'"))),
        }
    }
}

/// Parameters of a synthetic two-class dataset.
///
/// `noise` is the per-coordinate Gaussian standard deviation for `moons` and
/// the isotropic component spread for `gauss2`. All randomness comes from a
/// `ChaCha8Rng` seeded with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
    pub class_sep: f64,
}

impl SyntheticConfig {
    pub fn moons(n: usize, noise: f64, seed: u64) -> Self {
        Self { kind: SyntheticKind::Moons, n, noise, seed, class_sep: 0.0 }
    }

    pub fn gauss2(n: usize, spread: f64, class_sep: f64, seed: u64) -> Self {
        Self { kind: SyntheticKind::Gauss2, n, noise: spread, seed, class_sep }
    }

    fn validate(&self, kind: SyntheticKind) -> Result<()> {
        if self.kind != kind {
            return Err(CalibError::invalid(format!(
                "config kind {:?} does not match generator {kind:?}",
                self.kind
            )));
        }
        if self.n < 2 {
            return Err(CalibError::invalid(format!("need n >= 2, got {}", self.n)));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(CalibError::invalid(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: [f64; 2],
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<ProbVector>,
}

fn linspace_pi(count: usize) -> impl Iterator<Item = f64> {
    (0..count).map(move |i| if count == 1 { 0.0 } else { PI * i as f64 / (count - 1) as f64 })
}

/// Two interleaving half circles: class 0 on the upper unit arc, class 1 on
/// the lower arc centred at (1, 0.5). Class 0 gets the extra point when `n`
/// is odd.
pub fn gen_moons(cfg: &SyntheticConfig) -> Result<Vec<LabeledPoint>> {
    cfg.validate(SyntheticKind::Moons)?;
    let n_outer = cfg.n.div_ceil(2);
    let n_inner = cfg.n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n);
    let arcs = linspace_pi(n_outer)
        .map(|t| ([t.cos(), t.sin()], 0))
        .chain(linspace_pi(n_inner).map(|t| ([1.0 - t.cos(), 0.5 - t.sin()], 1)));
    for (base, label) in arcs {
        let mut x = base;
        if cfg.noise > 0.0 {
            for c in &mut x {
                let z: f64 = rng.sample(StandardNormal);
                *c += cfg.noise * z;
            }
        }
        out.push(LabeledPoint { x, label, eta: None });
    }
    Ok(out)
}

/// Exact class posterior for the equal-prior Gaussian pair with means
/// `(±sep/2, 0)` and spread `sigma`.
pub fn gauss2_posterior(x: [f64; 2], class_sep: f64, sigma: f64) -> ProbVector {
    // log p1(x) - log p0(x) = sep * x0 / sigma^2; the x1 terms cancel.
    let log_ratio = class_sep * x[0] / (sigma * sigma);
    let eta1 = if log_ratio >= 0.0 {
        1.0 / (1.0 + (-log_ratio).exp())
    } else {
        let e = log_ratio.exp();
        e / (1.0 + e)
    };
    // Both entries lie in [0,1] and sum to one by construction.
    ProbVector::with_tolerance(vec![1.0 - eta1, eta1], 1e-12).expect("valid posterior")
}

/// Equal-prior two-component isotropic Gaussian mixture with known posterior.
pub fn gen_gauss2(cfg: &SyntheticConfig) -> Result<Vec<LabeledPoint>> {
    cfg.validate(SyntheticKind::Gauss2)?;
    if !(cfg.class_sep >= 0.0) {
        return Err(CalibError::invalid(format!("class_sep must be >= 0, got {}", cfg.class_sep)));
    }
    if cfg.noise <= 0.0 {
        return Err(CalibError::invalid("gauss2 needs a positive spread"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.class_sep / 2.0;
    let mut out = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let label = usize::from(rng.random::<bool>());
        let mean = if label == 1 { half } else { -half };
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let x = [mean + cfg.noise * z0, cfg.noise * z1];
        let eta = gauss2_posterior(x, cfg.class_sep, cfg.noise);
        out.push(LabeledPoint { x, label, eta: Some(eta) });
    }
    Ok(out)
}

/// Index partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 60/20/20 shuffle split. Validation and test each get `floor(n/5)`.
pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_hold = n / 5;
    let test = idx.split_off(n - n_hold);
    let val = idx.split_off(n - 2 * n_hold);
    Split { train: idx, val, test }
}

/// CSV with header `x0,x1,label` (plus `eta_0,eta_1` when every point has a
/// posterior).
pub fn write_points_csv(points: &[LabeledPoint]) -> String {
    let with_eta = !points.is_empty() && points.iter().all(|p| p.eta.is_some());
    let mut out = String::from(if with_eta { "x0,x1,label,eta_0,eta_1\n" } else { "x0,x1,label\n" });
    for p in points {
        out.push_str(&format!("{},{},{}", p.x[0], p.x[1], p.label));
        if let (true, Some(eta)) = (with_eta, &p.eta) {
            out.push_str(&format!(",{},{}", eta.get(0), eta.get(1)));
        }
        out.push('\n');
    }
    out
}

pub fn read_points_csv(text: &str) -> Result<Vec<LabeledPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let with_eta = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["x0", "x1", "label"] => false,
        ["x0", "x1", "label", "eta_0", "eta_1"] => true,
        _ => return Err(CalibError::invalid(format!("unexpected point CSV header '{}'", header.join(",")))),
    };
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CalibError::Row { row, msg: e.to_string() })?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CalibError::Row { row, msg: format!("bad numeric field {j}") })
        };
        let label = rec
            .get(2)
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&l| l < 2)
            .ok_or_else(|| CalibError::Row { row, msg: "label must be 0 or 1".into() })?;
        let eta = if with_eta {
            Some(
                ProbVector::new(vec![num(3)?, num(4)?])
                    .map_err(|e| CalibError::Row { row, msg: e.to_string() })?,
            )
        } else {
            None
        };
        out.push(LabeledPoint { x: [num(0)?, num(1)?], label, eta });
    }
    if out.len() < 2 {
        return Err(CalibError::invalid("point file needs at least 2 rows"));
    }
    Ok(out)
}
