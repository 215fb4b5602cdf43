//! Property-based invariants over randomized inputs.

use eqlaw::laws::{self, Law};
use eqlaw::market::{StrategyCurve, StrategyMode};
use eqlaw::preferences::{self, Preference};
use proptest::prelude::*;

fn discrete_law_strategy(n: usize) -> impl Strategy<Value = Law> {
    prop::collection::vec((0.05_f64..5.0, 0.05_f64..1.0), 1..=n).prop_map(|mut pts| {
        let total: f64 = pts.iter().map(|p| p.1).sum();
        for p in pts.iter_mut() {
            p.1 /= total;
        }
        let leak: f64 = pts.iter().map(|p| p.1).sum();
        pts[0].1 += 1.0 - leak;
        Law::discrete(pts).expect("normalized points form a law")
    })
}

proptest! {
    #[test]
    fn expectation_is_linear_in_the_mixture(
        a in discrete_law_strategy(6),
        b in discrete_law_strategy(6),
    ) {
        // <f, s a + (1-s) b> = s <f, a> + (1-s) <f, b> on an 11-point s grid.
        let f = |x: f64| x * x - 0.3 * x + 1.0;
        let ea = a.expect(f).unwrap();
        let eb = b.expect(f).unwrap();
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            let mixed = laws::mixture(&a, &b, s).unwrap();
            let em = mixed.expect(f).unwrap();
            prop_assert!(
                (em - (s * ea + (1.0 - s) * eb)).abs() < 1e-12 * (1.0 + em.abs()),
                "s={s}: {em} vs {}", s * ea + (1.0 - s) * eb
            );
        }
    }

    #[test]
    fn quadrature_rules_are_normalized_and_symmetric(order in 2usize..=96) {
        let rule = laws::gauss_hermite(order).unwrap();
        let total: f64 = rule.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        // Nodes come in +- pairs (or zero), so odd moments vanish exactly.
        let m1 = rule.integrate(|x| x);
        let m3 = rule.integrate(|x| x * x * x);
        prop_assert!(m1.abs() < 1e-12 && m3.abs() < 1e-10);
        for (i, &x) in rule.nodes().iter().enumerate() {
            let mirror = rule.nodes()[order - 1 - i];
            prop_assert!((x + mirror).abs() < 1e-13);
        }
    }

    #[test]
    fn certainty_equivalents_scale_with_wealth(
        law in discrete_law_strategy(5),
        lambda in 0.2_f64..5.0,
        gamma in -2.0_f64..0.8,
    ) {
        let pref = Preference::crra_dirac(gamma).unwrap();
        let base = preferences::evaluate(&pref, &law).unwrap();
        let scaled = preferences::evaluate(&pref, &law.scale(lambda).unwrap()).unwrap();
        prop_assert!(
            (scaled - lambda * base).abs() < 1e-9 * (1.0 + lambda * base.abs()),
            "lambda={lambda} gamma={gamma}: {scaled} vs {}", lambda * base
        );
    }

    #[test]
    fn perturb_then_invert_is_identity(
        n in 2usize..40,
        start_frac in 0.0_f64..1.0,
        len_frac in 0.0_f64..1.0,
        phi in -3.0_f64..3.0,
        base in -2.0_f64..2.0,
    ) {
        let strat = StrategyCurve::constant(StrategyMode::Proportion, n, vec![base]).unwrap();
        let start = ((start_frac * n as f64) as usize).min(n - 1);
        let len = ((len_frac * (n - start) as f64) as usize).min(n - start);
        let there = strat.perturb(start, len, &[phi]).unwrap();
        let back = there.perturb(start, len, &[-phi]).unwrap();
        prop_assert_eq!(back.values(), strat.values());
    }
}
