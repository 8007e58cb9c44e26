//! Confidence calibration and the complexity router.

mod support;

use finrag::reason::decompose::{fallback_decomposition, parse_decomposition};
use finrag::reason::fit_calibration;
use finrag::router::{derive_labels, extract_features, route, train_router, GbdtConfig};
use finrag::{Lexicon, Route, RouterModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::learning::{minmax_isotonic, separable};

#[test]
fn hand_computed_fit() {
    let m = fit_calibration(&[(0.2, false), (0.4, true), (0.6, false), (0.8, true)]);
    let fitted: Vec<f64> = [0.2, 0.4, 0.6, 0.8].iter().map(|&x| m.apply(x)).collect();
    assert_eq!(fitted, vec![0.0, 0.5, 0.5, 1.0]);
}

#[test]
fn random_fits_are_monotone_and_match_the_minmax_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let pairs: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let x = (rng.random_range(0..20) as f64) / 20.0;
                (x, rng.random_bool(0.2 + 0.6 * x))
            })
            .collect();
        let m = fit_calibration(&pairs);
        let grid: Vec<f64> = (0..=100).map(|i| m.apply(i as f64 / 100.0)).collect();
        assert!(grid.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!(grid.iter().all(|v| (0.0..=1.0).contains(v)));
        for (x, want) in minmax_isotonic(&pairs) {
            assert!((m.apply(x) - want).abs() < 1e-12, "x={x}");
        }
    }
}

#[test]
fn calibration_survives_json() {
    let m = fit_calibration(&[(0.1, false), (0.5, true), (0.9, true), (0.7, false)]);
    let back = finrag::CalibrationModel::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn label_truth_table() {
    let ids = ["both", "loop_only", "single_only", "neither"];
    let single = vec![(ids[0].into(), true), (ids[1].into(), false), (ids[2].into(), true), (ids[3].into(), false)];
    let full = vec![(ids[0].into(), true), (ids[1].into(), true), (ids[2].into(), false), (ids[3].into(), false)];
    let labels = derive_labels(&single, &full).unwrap();
    let got: Vec<Route> = labels.iter().map(|l| l.1).collect();
    assert_eq!(got, vec![Route::Simple, Route::Complex, Route::Simple, Route::Simple]);
    assert!(derive_labels(&single, &full[..3]).is_err());
}

#[test]
fn router_learns_separable_data() {
    let (x, y) = separable(200, 9);
    let (model, report) = train_router(&x, &y, &GbdtConfig::default()).unwrap();
    assert_eq!(report.n, 200);
    assert_eq!(report.fold_accuracy.len(), 5);
    assert!(report.cv_accuracy >= 0.95, "cv accuracy {}", report.cv_accuracy);

    let (tx, ty) = separable(100, 10);
    let m = RouterModel::Gbdt(model);
    let hits = tx.iter().zip(&ty).filter(|(f, l)| route(f, &m).route == **l).count();
    assert!(hits >= 95);
    let again = train_router(&x, &y, &GbdtConfig::default()).unwrap();
    assert_eq!(again.1, report);
}

#[test]
fn heuristic_routes_the_fixture_questions() {
    let lex = Lexicon::builtin();
    let companies = vec!["Acme Corp".to_string()];
    let lookup = "What was Acme Corp net income in 2019?";
    let cagr = "What was the compound annual growth rate (CAGR) of operating expenses from 2018 to 2020?";

    let d = parse_decomposition(lookup, "R: Acme Corp net income 2019");
    assert_eq!(route(&extract_features(lookup, &d, lex, &companies), &RouterModel::Heuristic).route, Route::Simple);
    let d = parse_decomposition(
        cagr,
        "R: operating expenses 2018\nR: operating expenses 2020\nC: CAGR of operating expenses from 2018 to 2020",
    );
    assert_eq!(route(&extract_features(cagr, &d, lex, &companies), &RouterModel::Heuristic).route, Route::Complex);

    // the same split holds without a model-written decomposition
    for (q, want) in [(lookup, Route::Simple), (cagr, Route::Complex)] {
        let f = extract_features(q, &fallback_decomposition(q), lex, &companies);
        assert_eq!(route(&f, &RouterModel::Heuristic).route, want, "{q}");
    }
}
