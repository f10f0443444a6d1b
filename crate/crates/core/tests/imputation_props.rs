use condmean_core::{Formula, ImputationGrid, ImputationSpec, Indicator, StepConvention, SurvivalCurve};
use proptest::prelude::*;

/// A random grid with a strictly positive nonincreasing curve on it, plus a
/// censoring value on the grid, read under either step convention.
fn arb_fit() -> impl Strategy<Value = (ImputationGrid, f64)> {
    (3usize..40)
        .prop_flat_map(|m| {
            (
                prop::collection::vec(0.001f64..0.5, m),
                prop::collection::vec(0.0f64..0.3, m),
                0..m - 2,
                prop::sample::select(StepConvention::ALL.to_vec()),
            )
        })
        .prop_map(|(gaps, drops, ci, convention)| {
            let mut times = Vec::with_capacity(gaps.len());
            let mut t = 0.0;
            for g in gaps {
                t += g;
                times.push(t);
            }
            let mut s = 1.0;
            let probs: Vec<f64> = drops
                .iter()
                .map(|d| {
                    s *= 1.0 - d;
                    s
                })
                .collect();
            let c = times[ci];
            let curve = SurvivalCurve::new(times.clone(), probs).unwrap();
            (ImputationGrid::with_convention(times, &curve, convention).unwrap(), c)
        })
}

fn value(grid: &ImputationGrid, c: f64, hr: f64, f: Formula, i: Indicator) -> f64 {
    grid.conditional_mean(c, hr, ImputationSpec::new(f, i)).unwrap().value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn correct_never_below_censoring_value((grid, c) in arb_fit(), eta in -3.0f64..3.0) {
        for ind in Indicator::ALL {
            prop_assert!(value(&grid, c, eta.exp(), Formula::Correct, ind) >= c);
        }
    }

    #[test]
    fn atem_sign_follows_hazard_ratio((grid, c) in arb_fit(), eta in -3.0f64..3.0) {
        prop_assume!(eta.abs() > 1e-3);
        let hr = eta.exp();
        let correct = grid.terms(hr, Formula::Correct);
        let atem = grid.terms(hr, Formula::Atem2017);
        for (a, b) in atem.iter().zip(&correct) {
            if hr < 1.0 {
                prop_assert!(a <= b);
            } else {
                prop_assert!(a >= b);
            }
        }
        for ind in Indicator::ALL {
            let a = value(&grid, c, hr, Formula::Atem2017, ind);
            let b = value(&grid, c, hr, Formula::Correct, ind);
            if hr < 1.0 { prop_assert!(a < b, "{} !< {}", a, b); } else { prop_assert!(a > b, "{} !> {}", a, b); }
        }
    }

    #[test]
    fn amz_sign_follows_hazard_ratio((grid, c) in arb_fit(), eta in -3.0f64..3.0) {
        prop_assume!(eta.abs() > 1e-3);
        let hr = eta.exp();
        for ind in Indicator::ALL {
            let a = value(&grid, c, hr, Formula::Amz2019, ind);
            let b = value(&grid, c, hr, Formula::Correct, ind);
            prop_assert_eq!((a - b).signum(), (1.0 - hr).signum());
        }
    }

    #[test]
    fn amz_relative_deviation_grows_with_linear_predictor((grid, c) in arb_fit(), eta in 0.05f64..2.5) {
        // (AMZ - Correct) / (Correct - C) = 2 (1/2)^h - 1 along a ray in z
        let rel = |eta: f64| {
            let hr = eta.exp();
            let a = value(&grid, c, hr, Formula::Amz2019, Indicator::Inclusive);
            let b = value(&grid, c, hr, Formula::Correct, Indicator::Inclusive);
            ((a - b) / (b - c)).abs()
        };
        for side in [-1.0, 1.0] {
            let (near, far) = (rel(side * eta * 0.5), rel(side * eta));
            prop_assert!(far >= near - 1e-12, "side {}: {} < {}", side, far, near);
            let want = (2.0 * 0.5f64.powf((side * eta).exp()) - 1.0).abs();
            prop_assert!((far - want).abs() < 1e-9);
        }
    }

    #[test]
    fn exclusive_gap_identity((grid, c) in arb_fit(), eta in -3.0f64..3.0) {
        let hr = eta.exp();
        let inc = value(&grid, c, hr, Formula::Correct, Indicator::Inclusive);
        let exc = value(&grid, c, hr, Formula::Correct, Indicator::Exclusive);
        let gap = grid.indicator_gap(c, hr).unwrap();
        prop_assert!(gap > 0.0);
        prop_assert!(exc < inc);
        prop_assert!((inc - exc - gap).abs() <= 1e-12 * inc.abs());
    }

    #[test]
    fn asg_ignores_hazard_ratio((grid, c) in arb_fit(), e1 in -3.0f64..3.0, e2 in -3.0f64..3.0) {
        for ind in Indicator::ALL {
            prop_assert_eq!(
                value(&grid, c, e1.exp(), Formula::Asg2019, ind),
                value(&grid, c, e2.exp(), Formula::Asg2019, ind)
            );
        }
    }

    #[test]
    fn all_formulas_coincide_at_unit_hazard_ratio((grid, c) in arb_fit()) {
        for ind in Indicator::ALL {
            let reference = value(&grid, c, 1.0, Formula::Correct, ind);
            for f in Formula::ALL {
                prop_assert_eq!(value(&grid, c, 1.0, f, ind).to_bits(), reference.to_bits());
            }
        }
    }
}
