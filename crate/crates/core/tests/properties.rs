use fcl_core::calibrate::{apply_temperature, pgap_pairs, temperature_scan, TemperatureGrid};
use fcl_core::data::PredictionSet;
use fcl_core::losses::{eval_loss, eval_loss_grad, LossSpec};
use fcl_core::metrics::{auroc, ece, mce, smce, BinningConfig};
use fcl_core::theory::{minimize_risk, oc_uc_bound};
use fcl_core::train::{MLPConfig, ModelState};
use fcl_core::ProbVector;
use proptest::prelude::*;

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(normalize)
}

fn logit_set() -> impl Strategy<Value = PredictionSet> {
    (2usize..5).prop_flat_map(|k| {
        prop::collection::vec((prop::collection::vec(-6.0f64..6.0, k), 0..k), 1..60).prop_map(|rows| {
            let (z, y): (Vec<Vec<f64>>, Vec<usize>) = rows.into_iter().unzip();
            PredictionSet::from_logits(z, &y).unwrap()
        })
    })
}

fn spec() -> impl Strategy<Value = LossSpec> {
    prop_oneof![
        Just(LossSpec::ce()),
        Just(LossSpec::brier()),
        Just(LossSpec::flsd53()),
        (0.0f64..0.5).prop_map(LossSpec::label_smoothing),
        (0.0f64..6.0).prop_map(LossSpec::focal),
        (0.0f64..6.0, 0.0f64..2.0).prop_map(|(g, l)| LossSpec::fcl(g, l)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn temperature_keeps_argmax(set in logit_set(), t in 0.05f64..20.0) {
        let scaled = apply_temperature(&set, t).unwrap();
        for (a, b) in set.records().iter().zip(scaled.records()) {
            prop_assert_eq!(a.probs.argmax(), b.probs.argmax());
        }
        let same = apply_temperature(&set, 1.0).unwrap();
        for (a, b) in set.records().iter().zip(same.records()) {
            prop_assert_eq!(a.probs.as_slice(), b.probs.as_slice());
        }
    }

    #[test]
    fn scan_reports_its_own_ece(set in logit_set()) {
        let cfg = BinningConfig::default();
        let r = temperature_scan(&set, &cfg, &TemperatureGrid::default()).unwrap();
        let again = ece(&apply_temperature(&set, r.best_t).unwrap(), &cfg).unwrap();
        prop_assert_eq!(r.post_ece.to_bits(), again.to_bits());
        prop_assert!(r.post_ece <= r.pre_ece);
        prop_assert_eq!(r.grid.len(), 100);
    }

    #[test]
    fn ece_is_bounded_by_mce(set in logit_set(), bins in 1usize..30) {
        let cfg = BinningConfig::equal_width(bins);
        let e = ece(&set, &cfg).unwrap();
        let m = mce(&set, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(e <= m + 1e-15);
    }

    #[test]
    fn smce_is_nonnegative_with_feasible_witness(set in logit_set()) {
        let r = smce(&set).unwrap();
        prop_assert!(r.value >= 0.0);
        prop_assert!(r.witness.is_feasible(1e-12));
    }

    #[test]
    fn pgap_is_nonnegative_and_feasible(
        pairs in prop::collection::vec((0.0f64..=1.0, 0usize..2), 1..50),
        g in 0.0f64..5.0,
        l in 0.0f64..2.0,
    ) {
        for s in [LossSpec::ce(), LossSpec::brier(), LossSpec::focal(g), LossSpec::fcl(g, l)] {
            let r = pgap_pairs(&pairs, &s).unwrap();
            prop_assert!(r.pgap >= 0.0);
            prop_assert!(r.optimized_risk <= r.raw_risk);
            prop_assert!(r.map.is_feasible(1e-9));
        }
    }

    #[test]
    fn logit_gradient_sums_to_zero(s in spec(), z in prop::collection::vec(-5.0f64..5.0, 2..7), seed in 0usize..100) {
        let k = z.len();
        let target = ProbVector::one_hot(k, seed % k).unwrap();
        let r = eval_loss_grad(&s, &z, &target).unwrap();
        prop_assert!(r.value >= 0.0);
        let total: f64 = r.grad_logits.iter().sum();
        prop_assert!(total.abs() < 1e-9, "sum {}", total);
    }

    #[test]
    fn losses_vanish_only_at_the_target(s in spec(), k in 2usize..6, y in 0usize..6) {
        let y = y % k;
        let t = ProbVector::one_hot(k, y).unwrap();
        if s.alpha == 0.0 {
            prop_assert_eq!(eval_loss(&s, &t, &t).unwrap(), 0.0);
        }
        let u = ProbVector::uniform(k).unwrap();
        prop_assert!(eval_loss(&s, &u, &t).unwrap() > 0.0);
    }

    #[test]
    fn brier_recovers_eta(eta in (2usize..6).prop_flat_map(simplex)) {
        let eta = ProbVector::new(eta).unwrap();
        let r = minimize_risk(&LossSpec::brier(), &eta).unwrap();
        prop_assert!(r.converged);
        for (q, e) in r.q_star.as_slice().iter().zip(eta.as_slice()) {
            prop_assert!((q - e).abs() < 1e-8);
        }
    }

    #[test]
    fn confidence_gap_is_bounded(k in 2usize..10, a in any::<u64>(), b in any::<u64>()) {
        let p = simplex_from_seed(k, a);
        let e = simplex_from_seed(k, b);
        let r = oc_uc_bound(&p, &e).unwrap();
        prop_assert!(r.holds && r.lhs <= r.linf + 1e-15 && r.linf <= r.rhs_l2 + 1e-15);
    }

    #[test]
    fn auroc_is_antisymmetric(
        pos in prop::collection::vec(0u8..10, 1..30),
        neg in prop::collection::vec(0u8..10, 1..30),
    ) {
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        let a = auroc(&pos, &neg).unwrap();
        let b = auroc(&neg, &pos).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_json_roundtrip(seed in any::<u64>()) {
        let cfg = MLPConfig { seed, layers: vec![2, 5, 3], ..MLPConfig::default() };
        let m = ModelState::init(&cfg).unwrap();
        let back = ModelState::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(m, back);
    }

    #[test]
    fn prob_vector_serde_roundtrip(p in (2usize..8).prop_flat_map(simplex)) {
        let v = ProbVector::new(p).unwrap();
        let text = serde_json::to_string(&v).unwrap();
        let back: ProbVector = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(v, back);
    }
}

fn simplex_from_seed(k: usize, seed: u64) -> ProbVector {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 1e-9).collect();
    ProbVector::new(normalize(raw)).unwrap()
}
