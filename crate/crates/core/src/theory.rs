//! Pointwise risk minimizers and the inequality checks around them.
//!
//! Every convex loss in [`LossFamily`] has a pointwise risk that separates
//! across coordinates, `Σ_k h_k(q_k)`, with each `h_k` convex. The minimizer
//! over the simplex is found by water-filling: bisect on the multiplier `μ`
//! until `Σ_k argmin_x (h_k(x) - μ x) = 1`.

use serde::{Deserialize, Serialize};

use crate::losses::{focal_term_grad, loss_value, LossFamily, LossSpec};
use crate::{CalibError, ProbVector, Result};

const KKT_TOL: f64 = 1e-8;
const BOUNDARY: f64 = 1e-12;

pub fn pointwise_risk(spec: &LossSpec, q: &ProbVector, eta: &ProbVector) -> Result<f64> {
    spec.validate()?;
    if q.k() != eta.k() {
        return Err(CalibError::Dimension { expected: q.k(), got: eta.k() });
    }
    let k = q.k();
    let mut target = vec![0.0; k];
    let mut total = 0.0;
    for (y, &w) in eta.as_slice().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        target[y] = 1.0;
        total += w * loss_value(spec, q.as_slice(), &target);
        target[y] = 0.0;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerResult {
    pub q_star: ProbVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative KKT residual `max_k |h_k'(q_k) - μ| / max(1, |μ|)` over
    /// coordinates off the boundary.
    pub kkt_residual: f64,
    /// Some coordinate sits within 1e-12 of 0 or 1.
    pub boundary: bool,
}

/// Derivative of the separable risk term for one coordinate.
struct CoordTerm {
    spec: LossSpec,
    /// Weight on `-log x` (CE, label smoothing) or on the focal term.
    log_weight: f64,
    /// `η_k`, used by the quadratic part.
    eta: f64,
    /// Weight on the quadratic part `x^2 - 2 η_k x`.
    quad_weight: f64,
}

impl CoordTerm {
    fn new(spec: &LossSpec, eta: f64, k: usize) -> Self {
        let (log_weight, quad_weight) = match spec.family {
            LossFamily::Ce | LossFamily::Focal => (eta, 0.0),
            LossFamily::LabelSmoothing => ((1.0 - spec.alpha) * eta + spec.alpha / k as f64, 0.0),
            LossFamily::Brier => (0.0, 1.0),
            LossFamily::Fcl => (eta, spec.lambda),
            LossFamily::Flsd53 => unreachable!("rejected as non-convex"),
        };
        Self { spec: *spec, log_weight, eta, quad_weight }
    }

    fn grad(&self, x: f64) -> f64 {
        let mut g = 0.0;
        if self.log_weight != 0.0 {
            let gamma = match self.spec.family {
                LossFamily::Focal | LossFamily::Fcl => self.spec.gamma,
                _ => 0.0,
            };
            g += self.log_weight * unfloored_focal_grad(x, gamma);
        }
        if self.quad_weight != 0.0 {
            g += self.quad_weight * (2.0 * x - 2.0 * self.eta);
        }
        g
    }

    /// Smallest `x ∈ [0, 1]` with `h'(x) >= μ`.
    fn solve(&self, mu: f64) -> f64 {
        if self.grad(0.0) >= mu {
            return 0.0;
        }
        if self.grad(1.0) < mu {
            return 1.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-17 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.grad(mid) >= mu {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// d/dx of `(1 - x)^γ (-ln x)` without the log floor: `-∞` at 0.
fn unfloored_focal_grad(x: f64, gamma: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x > crate::losses::LOG_FLOOR {
        focal_term_grad(x, gamma)
    } else {
        let w = if gamma == 0.0 { 1.0 } else { (1.0 - x).powf(gamma) };
        gamma * (1.0 - x).powf(gamma - 1.0) * x.ln() - w / x
    }
}

/// Minimizes the pointwise risk over the simplex.
pub fn minimize_risk(spec: &LossSpec, eta: &ProbVector) -> Result<MinimizerResult> {
    spec.validate()?;
    if !spec.is_convex() {
        return Err(CalibError::NonConvex(spec.to_string()));
    }
    let k = eta.k();
    let terms: Vec<CoordTerm> = eta.as_slice().iter().map(|&e| CoordTerm::new(spec, e, k)).collect();
    let mass = |mu: f64| -> (Vec<f64>, f64) {
        let xs: Vec<f64> = terms.iter().map(|t| t.solve(mu)).collect();
        let s = xs.iter().sum();
        (xs, s)
    };

    let mut iterations = 0usize;
    let mut lo = -1.0f64;
    while mass(lo).1 > 1.0 {
        lo *= 2.0;
        iterations += 1;
        if iterations > 2000 {
            return Err(CalibError::NonConvergence { iterations, residual: f64::NAN });
        }
    }
    let mut hi = 1.0f64;
    while mass(hi).1 < 1.0 {
        hi *= 2.0;
        iterations += 1;
        if iterations > 2000 {
            return Err(CalibError::NonConvergence { iterations, residual: f64::NAN });
        }
    }
    while hi - lo > 1e-15 * hi.abs().max(lo.abs()).max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let (_, s) = mass(mid);
        if s == 1.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if s < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Interpolate between the two bracket solutions so the mass is exactly
    // one even where S(μ) jumps (flat coordinates).
    let (x_lo, s_lo) = mass(lo);
    let (x_hi, s_hi) = mass(hi);
    let theta = if s_hi > s_lo { ((1.0 - s_lo) / (s_hi - s_lo)).clamp(0.0, 1.0) } else { 0.0 };
    let q: Vec<f64> = x_lo.iter().zip(&x_hi).map(|(a, b)| a + theta * (b - a)).collect();
    let mu = 0.5 * (lo + hi);

    let mut residual = 0.0f64;
    let mut boundary = false;
    for (t, &x) in terms.iter().zip(&q) {
        if x <= BOUNDARY || x >= 1.0 - BOUNDARY {
            boundary = true;
            continue;
        }
        let g = t.grad(x);
        // Flat coordinates (zero weight everywhere) satisfy KKT for any x.
        if t.log_weight == 0.0 && t.quad_weight == 0.0 {
            continue;
        }
        residual = residual.max((g - mu).abs() / mu.abs().max(1.0));
    }
    let q_star = ProbVector::with_tolerance(q, 1e-10)?;
    let objective = pointwise_risk(spec, &q_star, eta)?;
    Ok(MinimizerResult {
        q_star,
        objective,
        iterations,
        converged: residual <= KKT_TOL,
        kkt_residual: residual,
        boundary,
    })
}

/// Parameters of `σ(q) = (1-q)^γ - γ q ln q (1-q)^(γ-1) - 2λ q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSpec {
    pub gamma: f64,
    pub lambda: f64,
}

impl SigmaSpec {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite() && lambda >= 0.0 && lambda.is_finite()) {
            return Err(CalibError::invalid(format!(
                "sigma needs gamma >= 0 and lambda >= 0, got ({gamma}, {lambda})"
            )));
        }
        Ok(Self { gamma, lambda })
    }
}

pub fn sigma_eval(spec: &SigmaSpec, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(CalibError::invalid(format!("sigma is defined on (0, 1), got {q}")));
    }
    let SigmaSpec { gamma, lambda } = *spec;
    let middle = if gamma == 0.0 { 0.0 } else { gamma * q * q.ln() * (1.0 - q).powf(gamma - 1.0) };
    Ok((1.0 - q).powf(gamma) - middle - 2.0 * lambda * q)
}

/// Zero of `σ` by bisection on `(1e-12, 1 - 1e-12)`.
pub fn sigma_root(spec: &SigmaSpec) -> Result<f64> {
    if spec.lambda <= 0.0 {
        return Err(CalibError::invalid(
            "sigma has no interior root for lambda = 0 (it tends to the boundary q -> 1)",
        ));
    }
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
    let f_lo = sigma_eval(spec, lo)?;
    let f_hi = sigma_eval(spec, hi)?;
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(CalibError::invalid(format!(
            "sigma does not change sign on the bracket ({f_lo}, {f_hi})"
        )));
    }
    let mut iterations = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = sigma_eval(spec, mid)?;
        if f == 0.0 {
            return Ok(mid);
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
        if iterations > 2000 {
            return Err(CalibError::NonConvergence { iterations, residual: hi - lo });
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Ground-truth grid `0, step, 2·step, ..., 1`.
pub fn curve_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(CalibError::invalid(format!("grid step must be in (0, 1], got {step}")));
    }
    let count = (1.0 / step + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=count).map(|i| ((i as f64 * step) * 1e12).round() / 1e12).collect();
    if *out.last().unwrap() < 1.0 {
        out.push(1.0);
    }
    Ok(out)
}

/// Binary optimal prediction `p̂*(q)`: the class-0 probability minimizing
/// `q·loss(p, e_0) + (1-q)·loss(p, e_1)`.
pub fn optimal_curve(spec: &LossSpec, q_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    q_grid
        .iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(CalibError::invalid(format!("ground truth {q} outside [0, 1]")));
            }
            let eta = ProbVector::new(vec![q, 1.0 - q])?;
            let r = minimize_risk(spec, &eta)?;
            Ok((q, r.q_star.get(0)))
        })
        .collect()
}

pub fn curve_csv(curve: &[(f64, f64)]) -> String {
    crate::io::csv_table(&["q", "p_hat_star"], curve.iter().map(|&(q, p)| vec![q, p]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceBound {
    /// `|max_k p̂_k - max_k η_k|`.
    pub lhs: f64,
    /// `‖p̂ - η‖_∞`, the intermediate step of the bound.
    pub linf: f64,
    pub rhs_l2: f64,
    pub holds: bool,
}

/// Over/underconfidence is bounded by the Euclidean distance to the posterior.
pub fn oc_uc_bound(p_hat: &ProbVector, eta: &ProbVector) -> Result<ConfidenceBound> {
    if p_hat.k() != eta.k() {
        return Err(CalibError::Dimension { expected: p_hat.k(), got: eta.k() });
    }
    let lhs = (p_hat.top().1 - eta.top().1).abs();
    let diffs = p_hat.as_slice().iter().zip(eta.as_slice()).map(|(a, b)| a - b);
    let (mut linf, mut sq) = (0.0f64, 0.0);
    for d in diffs {
        linf = linf.max(d.abs());
        sq += d * d;
    }
    let rhs_l2 = sq.sqrt();
    Ok(ConfidenceBound { lhs, linf, rhs_l2, holds: lhs <= rhs_l2 + 1e-12 })
}

/// Whether the risk minimizer ranks classes exactly as `eta` does. `eta`
/// must have distinct entries.
pub fn order_preservation_check(spec: &LossSpec, eta: &ProbVector) -> Result<bool> {
    let e = eta.as_slice();
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            if e[i] == e[j] {
                return Err(CalibError::invalid("order preservation needs distinct eta entries"));
            }
        }
    }
    let r = minimize_risk(spec, eta)?;
    if !r.converged {
        return Err(CalibError::NonConvergence { iterations: r.iterations, residual: r.kkt_residual });
    }
    let q = r.q_star.as_slice();
    Ok((0..e.len()).all(|i| (0..e.len()).all(|j| !(e[i] > e[j]) || q[i] > q[j])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn risk_with_one_hot_eta_is_loss() {
        let q = pv(&[0.3, 0.7]);
        let spec = LossSpec::fcl(2.0, 1.0);
        let r = pointwise_risk(&spec, &q, &pv(&[0.0, 1.0])).unwrap();
        let l = crate::losses::eval_loss(&spec, &q, &pv(&[0.0, 1.0])).unwrap();
        assert_eq!(r, l);
    }

    #[test]
    fn ce_risk_at_eta_is_entropy() {
        let eta = pv(&[0.2, 0.5, 0.3]);
        let h: f64 = eta.as_slice().iter().map(|p| -p * p.ln()).sum();
        assert!((pointwise_risk(&LossSpec::ce(), &eta, &eta).unwrap() - h).abs() < 1e-15);
    }

    #[test]
    fn fcl_risk_hand_sum() {
        // 0.7 * (0.25 ln2 + 0.5) + 0.3 * (0.25 ln2 + 0.5)
        let expected = 0.25 * std::f64::consts::LN_2 + 0.5;
        let r = pointwise_risk(&LossSpec::fcl(2.0, 1.0), &pv(&[0.5, 0.5]), &pv(&[0.7, 0.3])).unwrap();
        assert!((r - expected).abs() < 1e-15);
    }

    #[test]
    fn uniform_eta_gives_uniform_minimizer() {
        for spec in [LossSpec::ce(), LossSpec::focal(3.0), LossSpec::fcl(2.0, 0.5), LossSpec::brier()] {
            let r = minimize_risk(&spec, &ProbVector::uniform(4).unwrap()).unwrap();
            for &q in r.q_star.as_slice() {
                assert!((q - 0.25).abs() < 1e-12, "{spec}");
            }
            assert!(r.converged);
        }
    }

    #[test]
    fn ce_and_brier_recover_eta() {
        let eta = pv(&[0.6, 0.25, 0.15]);
        for spec in [LossSpec::ce(), LossSpec::brier(), LossSpec::fcl(0.0, 1.0)] {
            let r = minimize_risk(&spec, &eta).unwrap();
            for (a, b) in r.q_star.as_slice().iter().zip(eta.as_slice()) {
                assert!((a - b).abs() < 1e-10, "{spec}");
            }
        }
    }

    #[test]
    fn focal_minimizer_is_underconfident() {
        let r = minimize_risk(&LossSpec::focal(2.0), &pv(&[0.9, 0.1])).unwrap();
        // 1-D oracle: scan q on a 1e-5 grid.
        let risk = |q: f64| 0.9 * (1.0 - q).powi(2) * -q.ln() + 0.1 * q.powi(2) * -(1.0 - q).ln();
        let best =
            (1..100_000).map(|i| i as f64 * 1e-5).min_by(|a, b| risk(*a).total_cmp(&risk(*b))).unwrap();
        assert!((r.q_star.get(0) - best).abs() < 2e-5);
        assert!(r.q_star.get(0) < 0.9);
    }

    #[test]
    fn flsd53_is_rejected() {
        assert!(matches!(
            minimize_risk(&LossSpec::flsd53(), &pv(&[0.7, 0.3])),
            Err(CalibError::NonConvex(_))
        ));
    }

    #[test]
    fn one_hot_eta_hits_boundary() {
        let r = minimize_risk(&LossSpec::focal(2.0), &pv(&[1.0, 0.0])).unwrap();
        assert!((r.q_star.get(0) - 1.0).abs() < 1e-9);
        assert!(r.boundary);
    }

    #[test]
    fn sigma_linear_case() {
        let s = SigmaSpec::new(0.0, 1.0).unwrap();
        assert!((sigma_eval(&s, 0.25).unwrap() - 0.5).abs() < 1e-15);
        assert!((sigma_root(&s).unwrap() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn sigma_errors() {
        let s = SigmaSpec::new(2.0, 0.0).unwrap();
        assert!(sigma_eval(&s, 0.0).is_err());
        assert!(sigma_eval(&s, 1.0).is_err());
        assert!(sigma_root(&s).is_err());
        assert!(SigmaSpec::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn ce_curve_is_diagonal() {
        let grid = curve_grid(0.01).unwrap();
        assert_eq!(grid.len(), 101);
        for (q, p) in optimal_curve(&LossSpec::ce(), &grid).unwrap() {
            assert!((p - q).abs() < 1e-9, "{q} -> {p}");
        }
    }

    #[test]
    fn focal_curve_shrinks_toward_half() {
        let c = optimal_curve(&LossSpec::focal(3.0), &[0.9]).unwrap();
        assert!(c[0].1 > 0.5 && c[0].1 < 0.9);
    }

    #[test]
    fn oc_uc_examples() {
        let p = pv(&[0.6, 0.4]);
        let b = oc_uc_bound(&p, &p).unwrap();
        assert_eq!((b.lhs, b.rhs_l2, b.holds), (0.0, 0.0, true));
        let b = oc_uc_bound(&p, &pv(&[0.4, 0.6])).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert!((b.rhs_l2 - 0.08f64.sqrt()).abs() < 1e-15);
        assert!(b.holds);
    }

    #[test]
    fn order_preservation_examples() {
        assert!(order_preservation_check(&LossSpec::fcl(3.0, 0.5), &pv(&[0.5, 0.3, 0.2])).unwrap());
        assert!(order_preservation_check(&LossSpec::focal(2.0), &pv(&[0.6, 0.4])).unwrap());
        assert!(order_preservation_check(&LossSpec::ce(), &pv(&[0.4, 0.4, 0.2])).is_err());
    }
}
