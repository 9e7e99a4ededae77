//! Property checks of the model invariants.

use catrl::caipw::{caipw_final, caipw_intermediate, pseudo_outcome, CaipwMatrix};
use catrl::data::{build_history, StageRecord, Trajectory};
use catrl::eval::rmst_km;
use catrl::nuisance::fit_km;
use catrl::nuisance::propensity::{clip_and_renormalize, PropensityClip};
use catrl::policy_tree::{grow, Hyperparams, PolicyNode, PolicyTree};
use catrl::simgen::{assemble_observed, stage1_propensity, stage2_propensity, N_COVARIATES};
use proptest::prelude::*;

fn covariates() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-500.0f64..500.0, N_COVARIATES)
}

fn survival_sample() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u32..20, any::<bool>()), 1..40).prop_map(|v| {
        let t = v.iter().map(|(t, _)| f64::from(*t) * 0.5).collect();
        let e = v.iter().map(|(_, e)| *e).collect();
        (t, e)
    })
}

/// Random CAIPW matrix plus histories with `p` features.
fn tree_instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, usize)> {
    (2usize..=3, 1usize..=3, 10usize..80).prop_flat_map(|(m, p, n)| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, p), n),
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, m), n),
            Just(p),
        )
    })
}

fn matrix(rows: &[Vec<f64>]) -> CaipwMatrix {
    CaipwMatrix::from_rows(0, (0..rows.len()).collect(), rows).unwrap()
}

fn structure(t: &PolicyTree) -> Vec<(usize, u64, usize)> {
    t.nodes
        .iter()
        .map(|n| match *n {
            PolicyNode::Split { feature, threshold, left, .. } => (feature, threshold.to_bits(), left),
            PolicyNode::Leaf { arm, n, .. } => (usize::MAX, arm as u64, n),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn true_propensities_lie_on_the_simplex(x in covariates(), t1 in 0.0f64..500.0, m in 2usize..=3) {
        for p in [stage1_propensity(&x, m), stage2_propensity(&x, t1, m)] {
            prop_assert_eq!(p.len(), m);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn clipped_propensities_stay_on_the_simplex(raw in prop::collection::vec(0.0f64..1.0, 2..=3)) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 1e-6);
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let q = clip_and_renormalize(&p, PropensityClip::default());
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn observed_bookkeeping(t1 in 0.01f64..100.0, t2 in 0.01f64..100.0, c in 0.01f64..250.0) {
        let o = assemble_observed(t1, t2, c);
        prop_assert_eq!(o.eta, t1 < c);
        prop_assert_eq!(o.r2.is_some(), o.eta);
        prop_assert_eq!(o.delta2.is_some(), o.eta);
        let sum = o.r1 + o.r2.unwrap_or(0.0);
        prop_assert!((o.total - sum).abs() <= 1e-12 * o.total.max(1.0));
        let truth = if o.eta { t1 + t2 } else { t1 };
        prop_assert_eq!(o.total, truth.min(c));
        prop_assert_eq!(o.r1, if o.total < t1 { o.total } else { t1 });
    }

    #[test]
    fn km_is_a_survival_function((t, e) in survival_sample()) {
        let c = fit_km(&t, &e).unwrap();
        let mut prev = 1.0;
        for &v in c.values() {
            prop_assert!((0.0..=prev).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn km_without_censoring_is_the_empirical_survival(t in prop::collection::vec(0u32..15, 1..40)) {
        let times: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
        let c = fit_km(&times, &vec![true; times.len()]).unwrap();
        let n = times.len() as f64;
        for q in 0..16 {
            let q = f64::from(q) + 0.5;
            let ecdf = times.iter().filter(|&&s| s > q).count() as f64 / n;
            prop_assert!((c.at(q) - ecdf).abs() <= 1e-12, "t={} km={} ecdf={}", q, c.at(q), ecdf);
        }
    }

    #[test]
    fn rmst_is_bounded_and_monotone((t, e) in survival_sample(), tau in 0.1f64..15.0, extra in 0.0f64..5.0) {
        let a = rmst_km(&t, &e, tau).unwrap();
        let b = rmst_km(&t, &e, tau + extra).unwrap();
        prop_assert!(a <= tau + 1e-12);
        prop_assert!(b + 1e-12 >= a);
    }

    #[test]
    fn caipw_collapses_to_the_outcome(y in 0.0f64..100.0, mu in -50.0f64..50.0, a in 0usize..3) {
        prop_assert_eq!(caipw_final(a, true, 1.0, 1.0, y, mu, a), y);
        prop_assert_eq!(caipw_intermediate(a, true, 1.0, 1.0, y, mu, a), y);
    }

    #[test]
    fn pseudo_outcome_with_matching_means(r in 0.0f64..100.0, mu in 0.0f64..50.0) {
        prop_assert_eq!(pseudo_outcome(true, r, mu, mu), r);
    }

    #[test]
    fn histories_distinguish_prefixes(
        x in prop::collection::vec(0.0f64..10.0, 3),
        a in 0usize..2,
        r in 0.1f64..10.0,
        which in 0usize..5,
    ) {
        let traj = |x1: Vec<f64>, a1: usize, r1: f64| Trajectory {
            stages: vec![
                StageRecord { covariates: x1, treatment: a1, duration: r1, event: true },
                StageRecord { covariates: vec![1.0, 2.0, 3.0], treatment: 0, duration: 1.0, event: true },
            ],
            total_time: r1 + 1.0,
        };
        let base = traj(x.clone(), a, r);
        let other = match which {
            0 => traj(vec![x[0] + 1.0, x[1], x[2]], a, r),
            1 => traj(vec![x[0], x[1], x[2] - 1.0], a, r),
            2 => traj(x.clone(), 1 - a, r),
            3 => traj(x.clone(), a, r + 0.5),
            _ => traj(vec![x[0], x[1] + 0.25, x[2]], a, r),
        };
        prop_assert_ne!(build_history(&base, 1).unwrap(), build_history(&other, 1).unwrap());
    }

    #[test]
    fn grown_trees_obey_stopping_rules(
        (x, rows, p) in tree_instance(),
        n0 in 1usize..8,
        depth in 1usize..5,
        lambda in prop::option::of(0.0f64..0.5),
    ) {
        let m = matrix(&rows);
        let hp = Hyperparams { n0, lambda, max_depth: depth, ..Hyperparams::default() };
        let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let features: Vec<usize> = (0..p).collect();
        let tree = grow(&x, &features, &m, &hp, &names).unwrap();
        prop_assert!(tree.audit().is_empty(), "{:?}", tree.audit());
        prop_assert!(tree.depth() <= depth);
    }

    #[test]
    fn constant_shift_moves_values_only((x, rows, p) in tree_instance(), c in -20i32..20) {
        let m = matrix(&rows);
        let shifted = m.shifted(f64::from(c));
        let hp = Hyperparams { n0: 3, lambda: Some(0.05), max_depth: 3, ..Hyperparams::default() };
        let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let features: Vec<usize> = (0..p).collect();
        let a = grow(&x, &features, &m, &hp, &names).unwrap();
        let b = grow(&x, &features, &shifted, &hp, &names).unwrap();
        prop_assert_eq!(structure(&a), structure(&b));
        for (u, v) in a.nodes.iter().zip(&b.nodes) {
            if let (PolicyNode::Leaf { value: va, .. }, PolicyNode::Leaf { value: vb, .. }) = (u, v) {
                prop_assert!((vb - va - f64::from(c)).abs() < 1e-9);
            }
        }
    }
}
