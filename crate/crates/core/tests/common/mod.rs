//! Helpers shared by the integration tests: independent oracles, random
//! instance generators, the CLI golden table and the toy experiment.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::Command;

use fcl_core::data::{gen_moons, LabeledPoint, PredictionSet, SyntheticConfig};
use fcl_core::losses::LossSpec;
use fcl_core::metrics::{ece, BinningConfig};
use fcl_core::train::{split_points, train, MLPConfig, TrainOutput};
use fcl_core::ProbVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point on the simplex (normalized exponentials).
pub fn random_simplex(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Random prediction set; some rows are snapped to a 0.05 lattice so that
/// scores land on equal-width bin edges.
pub fn random_set(r: &mut ChaCha8Rng, n: usize, k: usize) -> PredictionSet {
    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = random_simplex(r, k);
        if r.random_bool(0.3) {
            let mut units: Vec<u32> = p.iter().map(|x| (x * 20.0).floor() as u32).collect();
            let used: u32 = units.iter().sum();
            units[0] += 20 - used;
            p = units.iter().map(|&u| u as f64 / 20.0).collect();
        }
        probs.push(p);
        labels.push(r.random_range(0..k));
    }
    PredictionSet::from_probs(probs, &labels).unwrap()
}

// ---------------------------------------------------------------------------
// Naive metric oracles

fn in_width_bin(s: f64, b: usize, m: usize) -> bool {
    let lo = b as f64 / m as f64;
    let hi = (b + 1) as f64 / m as f64;
    (s > lo || (b == 0 && s >= 0.0)) && s <= hi
}

fn gap_terms(scores: &[f64], hits: &[f64], members: &[Vec<usize>]) -> Vec<(usize, f64)> {
    members
        .iter()
        .filter(|idx| !idx.is_empty())
        .map(|idx| {
            let c = idx.len() as f64;
            let acc = idx.iter().map(|&i| hits[i]).sum::<f64>() / c;
            let conf = idx.iter().map(|&i| scores[i]).sum::<f64>() / c;
            (idx.len(), (acc - conf).abs())
        })
        .collect()
}

fn width_members(scores: &[f64], m: usize) -> Vec<Vec<usize>> {
    (0..m).map(|b| (0..scores.len()).filter(|&i| in_width_bin(scores[i], b, m)).collect()).collect()
}

fn mass_members(scores: &[f64], m: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let n = scores.len();
    let mut out = Vec::new();
    let mut start = 0;
    for b in 0..m {
        let size = n / m + if b < n % m { 1 } else { 0 };
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    out
}

fn top(set: &PredictionSet) -> (Vec<f64>, Vec<f64>) {
    let mut s = Vec::new();
    let mut h = Vec::new();
    for r in set.records() {
        let p = r.probs.as_slice();
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        s.push(p[best]);
        h.push(if best == r.label { 1.0 } else { 0.0 });
    }
    (s, h)
}

pub fn naive_ece(set: &PredictionSet, m: usize) -> f64 {
    let (s, h) = top(set);
    gap_terms(&s, &h, &width_members(&s, m)).iter().map(|&(c, g)| c as f64 * g).sum::<f64>()
        / set.len() as f64
}

pub fn naive_mce(set: &PredictionSet, m: usize) -> f64 {
    let (s, h) = top(set);
    gap_terms(&s, &h, &width_members(&s, m)).iter().map(|t| t.1).fold(0.0, f64::max)
}

pub fn naive_adaece(set: &PredictionSet, m: usize) -> f64 {
    let (s, h) = top(set);
    gap_terms(&s, &h, &mass_members(&s, m)).iter().map(|&(c, g)| c as f64 * g).sum::<f64>() / set.len() as f64
}

/// Classwise ECE; `per_class` divides each class term by its label count.
pub fn naive_cwece(set: &PredictionSet, m: usize, per_class: bool) -> f64 {
    let mut total = 0.0;
    for k in 0..set.k() {
        let s: Vec<f64> = set.records().iter().map(|r| r.probs.as_slice()[k]).collect();
        let h: Vec<f64> = set.records().iter().map(|r| if r.label == k { 1.0 } else { 0.0 }).collect();
        let denom = if per_class { h.iter().sum::<f64>() } else { set.len() as f64 };
        if denom == 0.0 {
            continue;
        }
        let weighted: f64 = gap_terms(&s, &h, &width_members(&s, m)).iter().map(|&(c, g)| c as f64 * g).sum();
        total += weighted / denom;
    }
    total / set.k() as f64
}

pub fn naive_nll(set: &PredictionSet) -> f64 {
    set.records().iter().map(|r| -r.probs.as_slice()[r.label].max(1e-12).ln()).sum::<f64>() / set.len() as f64
}

pub fn naive_brier(set: &PredictionSet) -> f64 {
    let mut total = 0.0;
    for r in set.records() {
        for (k, p) in r.probs.as_slice().iter().enumerate() {
            let t = if k == r.label { 1.0 } else { 0.0 };
            total += (p - t).powi(2);
        }
    }
    total / set.len() as f64
}

pub fn naive_error(set: &PredictionSet) -> f64 {
    let (_, h) = top(set);
    h.iter().filter(|&&x| x == 0.0).count() as f64 / set.len() as f64
}

/// Pairwise Mann-Whitney statistic: returns `(2U, n_pos * n_neg)`.
pub fn pairwise_twice_u(pos: &[f64], neg: &[f64]) -> (u64, u64) {
    let mut twice = 0u64;
    for &p in pos {
        for &q in neg {
            if p > q {
                twice += 2;
            } else if p == q {
                twice += 1;
            }
        }
    }
    (twice, (pos.len() * neg.len()) as u64)
}

// ---------------------------------------------------------------------------
// Grid dynamic-programming oracles

/// Extreme of `v` over the window `[i - left, i + right]` for every `i`,
/// with a monotone deque. `better(a, b)` is true when `a` should win over `b`.
fn sliding(v: &[f64], left: usize, right: usize, better: fn(f64, f64) -> bool) -> Vec<f64> {
    let n = v.len();
    let mut out = Vec::with_capacity(n);
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for i in 0..n {
        let hi = (i + right).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&b| !better(v[b], v[next])) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&f| f + left < i) {
            dq.pop_front();
        }
        out.push(v[*dq.front().unwrap()]);
    }
    out
}

/// `max Σ w_i η_i` over `η_i` on the grid `{-1, -1+h, ..., 1}` with steps
/// between consecutive knots limited to `floor(d_i / h)` grid cells.
pub fn smce_grid_oracle(knots: &[f64], weights: &[f64], h: f64) -> f64 {
    let g = (2.0 / h).round() as usize;
    let value = |i: usize| -1.0 + i as f64 * h;
    let mut best: Vec<f64> = (0..=g).map(|i| weights[0] * value(i)).collect();
    for j in 1..knots.len() {
        let w = ((knots[j] - knots[j - 1]) / h + 1e-9).floor() as usize;
        let reach = sliding(&best, w, w, |a, b| a > b);
        best = (0..=g).map(|i| reach[i] + weights[j] * value(i)).collect();
    }
    best.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Per-sample binary loss with class-1 probability `kappa`.
pub fn binary_loss(spec: &LossSpec, kappa: f64, y: usize) -> f64 {
    let p = ProbVector::new(vec![1.0 - kappa, kappa]).unwrap();
    let t = ProbVector::one_hot(2, y).unwrap();
    fcl_core::losses::eval_loss(spec, &p, &t).unwrap()
}

/// Brute-force optimum of the post-processing program with `κ` restricted to
/// the grid `{0, h, ..., 1}`. Knots must lie on the same grid so the chain
/// constraint `0 <= κ_{j+1} - κ_j <= 2 d_j` is exact in grid units.
pub fn pgap_grid_oracle(pairs: &[(f64, usize)], spec: &LossSpec, h: f64) -> f64 {
    let g = (1.0 / h).round() as usize;
    let mut knots: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let cost = |u: f64| -> Vec<f64> {
        (0..=g)
            .map(|i| {
                let kappa = i as f64 * h;
                pairs.iter().filter(|p| p.0 == u).map(|&(_, y)| binary_loss(spec, kappa, y)).sum::<f64>()
            })
            .collect()
    };
    let mut best = cost(knots[0]);
    for j in 1..knots.len() {
        let w = (2.0 * (knots[j] - knots[j - 1]) / h).round() as usize;
        let c = cost(knots[j]);
        let reach = sliding(&best, w, 0, |a, b| a < b);
        best = (0..=g).map(|i| reach[i] + c[i]).collect();
    }
    best.into_iter().fold(f64::INFINITY, f64::min) / pairs.len() as f64
}

// ---------------------------------------------------------------------------
// Finite differences

/// Relative error with a floor on the denominator so that near-zero gradient
/// entries are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

pub fn loss_at_logits(spec: &LossSpec, z: &[f64], target: &ProbVector) -> f64 {
    let p = ProbVector::from_logits(z).unwrap();
    fcl_core::losses::eval_loss(spec, &p, target).unwrap()
}

/// Largest relative error between the analytic logit gradient and central
/// differences with step `h`.
pub fn fd_gradient_error(spec: &LossSpec, z: &[f64], target: &ProbVector, h: f64) -> f64 {
    let g = fcl_core::losses::eval_loss_grad(spec, z, target).unwrap().grad_logits;
    let mut worst = 0.0f64;
    for i in 0..z.len() {
        let mut up = z.to_vec();
        let mut dn = z.to_vec();
        up[i] += h;
        dn[i] -= h;
        let fd = (loss_at_logits(spec, &up, target) - loss_at_logits(spec, &dn, target)) / (2.0 * h);
        worst = worst.max(rel_err(g[i], fd));
    }
    worst
}

// ---------------------------------------------------------------------------
// Toy experiment

pub struct ToyRun {
    pub output: TrainOutput,
    pub val: Vec<LabeledPoint>,
    pub test: Vec<LabeledPoint>,
    pub train: Vec<LabeledPoint>,
}

/// moons(n=1000, noise=0.2, seed=1), default MLP for 500 epochs.
pub fn toy_run(spec: &LossSpec) -> ToyRun {
    let pts = gen_moons(&SyntheticConfig::moons(1000, 0.2, 1)).unwrap();
    let (tr, val, test) = split_points(&pts, 1);
    let cfg = MLPConfig { seed: 1, epochs: 500, ..MLPConfig::default() };
    let output = train(&cfg, spec, &tr, &test).unwrap();
    ToyRun { output, val, test, train: tr }
}

pub fn test_ece(run: &ToyRun) -> f64 {
    let set = run.output.model.prediction_set(&run.test).unwrap();
    ece(&set, &BinningConfig::default()).unwrap()
}

// ---------------------------------------------------------------------------
// CLI golden table

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// `(golden file, arguments)`; `{f}` expands to the fixtures directory and
/// `{o}` to the output file. Commands without `{o}` are compared on stdout.
pub const GOLDEN_CASES: &[(&str, &str)] = &[
    ("metrics.json", "metrics --input {f}/probs.jsonl --bins 15 --out {o}"),
    ("metrics_perfect.json", "metrics --input {f}/perfect.jsonl --out {o}"),
    (
        "metrics_logits.json",
        "metrics --input {f}/logits.csv --input-kind logits --scheme equal_mass --cwece-norm per-class --out {o}",
    ),
    ("reliability.csv", "reliability --input {f}/probs.jsonl --bins 10 --out {o}"),
    ("smce.json", "smce --input {f}/probs.jsonl --out {o}"),
    ("temp_scale.json", "temp-scale --val {f}/val_doubled.jsonl --test {f}/test_doubled.jsonl --out {o}"),
    ("pgap.json", "pgap --input {f}/binary.jsonl --loss fcl --gamma 3 --lambda 0.5 --out {o}"),
    ("minimize.json", "minimize --eta 0.6,0.3,0.1 --loss brier"),
    ("curve.csv", "curve --loss fcl --gamma 3 --lambda 0.5 --step 0.05 --out {o}"),
    ("sigma_root.txt", "sigma-root --gamma 3 --lambda 0.5"),
    ("sigma_root_linear.txt", "sigma-root --gamma 0 --lambda 1"),
    ("synth_moons.csv", "synth --kind moons --n 60 --noise 0.2 --seed 7 --out {o}"),
    ("synth_gauss2.csv", "synth --kind gauss2 --n 40 --noise 1 --class-sep 2 --seed 3 --out {o}"),
    ("model.json", "train --data {f}/points.csv --loss fcl --epochs 30 --seed 2 --out-model {o}"),
    ("boundary.csv", "boundary --model {f}/model.json --resolution 5 --out {o}"),
    ("sweep.csv", "sweep --data {f}/points.csv --gammas 3 --lambdas 0,0.5 --epochs 20 --out {o}"),
    ("auroc.txt", "auroc --pos {f}/pos.txt --neg {f}/neg.txt"),
];

/// Runs the `fcl` binary and returns `(exit code, produced bytes)`.
pub fn run_case(bin: &str, args: &str, out_dir: &Path, name: &str) -> (i32, Vec<u8>) {
    let out = out_dir.join(name);
    let fdir = fixture("");
    let expanded = args.replace("{f}", fdir.to_str().unwrap()).replace("{o}", out.to_str().unwrap());
    let to_file = args.contains("{o}");
    let res = Command::new(bin).args(expanded.split_whitespace()).output().unwrap();
    let code = res.status.code().unwrap_or(-1);
    let bytes = if to_file { std::fs::read(&out).unwrap_or_default() } else { res.stdout };
    (code, bytes)
}
