use condmean_core::sim::SampleDesign;
use condmean_core::survival::{nelson_aalen, partial_likelihood};
use condmean_core::{breslow_baseline, fit_cox, generate_sample, kaplan_meier, CoxOptions, SubjectRecord};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Breslow-ties partial likelihood for one covariate, written as the textbook
/// double sum.
fn brute_partial_likelihood(recs: &[SubjectRecord], beta: f64) -> f64 {
    recs.iter()
        .filter(|r| r.delta)
        .map(|ri| {
            let risk: f64 = recs.iter().filter(|rj| rj.t >= ri.t).map(|rj| (beta * rj.z[0]).exp()).sum();
            beta * ri.z[0] - risk.ln()
        })
        .sum()
}

fn six_records() -> Vec<SubjectRecord> {
    [
        (1.0, true, 0.5),
        (2.0, true, 1.2),
        (3.0, false, -0.3),
        (4.0, true, 0.8),
        (5.0, true, -1.0),
        (6.0, false, 0.1),
    ]
    .into_iter()
    .map(|(t, d, z)| SubjectRecord { t, delta: d, z: vec![z], y: None })
    .collect()
}

#[test]
fn cox_matches_grid_search() {
    let recs = six_records();
    let (mut best, mut best_ll) = (f64::NAN, f64::NEG_INFINITY);
    for k in 0..=6000 {
        let beta = -3.0 + k as f64 * 1e-3;
        let ll = brute_partial_likelihood(&recs, beta);
        if ll > best_ll {
            best = beta;
            best_ll = ll;
        }
    }
    assert!(best > -2.99 && best < 2.99, "grid maximizer on boundary: {best}");
    let fit = fit_cox(&recs, CoxOptions::default()).unwrap();
    assert!(fit.converged);
    assert!((fit.log_hazard_ratios[0] - best).abs() < 1e-2, "{} vs {best}", fit.log_hazard_ratios[0]);
    assert!((fit.log_partial_likelihood - brute_partial_likelihood(&recs, fit.log_hazard_ratios[0])).abs() < 1e-12);
}

#[test]
fn partial_likelihood_matches_brute_force_with_ties() {
    let mut recs = six_records();
    recs[2].t = 2.0;
    recs[3].t = 2.0;
    for beta in [-1.3, 0.0, 0.4, 2.2] {
        let a = partial_likelihood(&recs, &[beta]).unwrap();
        let b = brute_partial_likelihood(&recs, beta);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn newton_ascends_from_zero() {
    let recs = generate_sample(&SampleDesign { n: 300, log_hr: -1.0, ..SampleDesign::default() }, 4).unwrap();
    let fit = fit_cox(&recs, CoxOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.gradient_norm <= 1e-8);
    assert!(fit.log_partial_likelihood >= partial_likelihood(&recs, &[0.0]).unwrap());
}

#[test]
fn cox_is_consistent_on_simulated_data() {
    // About 550 events with P(z = 1) = 0.25 put the standard error near 0.1.
    let design = SampleDesign { n: 1000, log_hr: 1.0, ..SampleDesign::default() };
    let estimates: Vec<f64> = (0..100)
        .map(|seed| {
            let recs = generate_sample(&design, seed).unwrap();
            fit_cox(&recs, CoxOptions::default()).unwrap().log_hazard_ratios[0]
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / 100.0;
    assert!((mean - 1.0).abs() < 0.04, "mean estimate {mean}");
    let hits = estimates.iter().filter(|e| (*e - 1.0).abs() <= 0.3).count();
    assert!(hits >= 95, "only {hits}/100 fits within 0.3 of 1");
}

#[test]
fn permuted_covariate_carries_no_signal() {
    let design = SampleDesign { n: 1000, log_hr: 1.5, ..SampleDesign::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let small = (0..100)
        .filter(|&seed| {
            let mut recs = generate_sample(&design, 1000 + seed).unwrap();
            let mut zs: Vec<Vec<f64>> = recs.iter().map(|r| r.z.clone()).collect();
            zs.shuffle(&mut rng);
            for (r, z) in recs.iter_mut().zip(zs) {
                r.z = z;
            }
            fit_cox(&recs, CoxOptions::default()).unwrap().log_hazard_ratios[0].abs() < 0.2
        })
        .count();
    assert!(small >= 90, "only {small}/100 permutation fits had |lambda| < 0.2");
}

#[test]
fn fitted_baselines_are_survival_functions() {
    for (seed, log_hr) in [(1, -2.0), (2, 0.0), (3, 2.0)] {
        let recs = generate_sample(&SampleDesign { n: 400, log_hr, ..SampleDesign::default() }, seed).unwrap();
        let fit = fit_cox(&recs, CoxOptions::default()).unwrap();
        let probs = fit.baseline.probs();
        assert!(probs.iter().all(|p| *p > 0.0 && *p <= 1.0));
        assert!(probs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(fit.baseline.eval(0.0), 1.0);
    }
}

fn arb_records(max_z: bool) -> impl Strategy<Value = Vec<SubjectRecord>> {
    // integer-valued times force ties
    prop::collection::vec((0u8..30, any::<bool>(), -2.0f64..2.0), 1..60).prop_map(move |v| {
        v.into_iter()
            .map(|(t, d, z)| SubjectRecord {
                t: t as f64 * 0.1,
                delta: d,
                z: if max_z { vec![z] } else { vec![] },
                y: None,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn km_is_a_survival_function(recs in arb_records(false)) {
        let km = kaplan_meier(&recs).unwrap();
        let probs = km.probs();
        prop_assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(probs.windows(2).all(|w| w[1] <= w[0]));
        if let Some(&first) = km.times().first() {
            prop_assert_eq!(km.eval(first - 1e-9), 1.0);
        }
    }

    #[test]
    fn km_event_only_is_empirical(times in prop::collection::vec(0u16..500, 1..80)) {
        let recs: Vec<_> = times.iter().map(|&t| SubjectRecord::event(t as f64)).collect();
        let km = kaplan_meier(&recs).unwrap();
        let n = recs.len();
        for &g in km.times() {
            let beyond = recs.iter().filter(|r| r.t > g).count();
            prop_assert_eq!(km.eval(g), beyond as f64 / n as f64);
        }
    }

    #[test]
    fn breslow_at_zero_is_exp_nelson_aalen(recs in arb_records(true)) {
        prop_assume!(recs.iter().any(|r| r.delta));
        let (times, cumhaz) = nelson_aalen(&recs).unwrap();
        let curve = breslow_baseline(&recs, &[0.0]).unwrap();
        prop_assert_eq!(curve.times(), times.as_slice());
        for (s, h) in curve.probs().iter().zip(&cumhaz) {
            prop_assert_eq!(*s, (-h).exp());
        }
    }
}
