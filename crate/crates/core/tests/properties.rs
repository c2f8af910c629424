use proptest::prelude::*;

use hetmean::mechanisms::em_intervals;
use hetmean::{
    certify_kappa, f_bin, generate_population, ideal_weights, initial_mean_radius, optimize_threshold,
    threshold_objective, truncated_weighted_mean, truncation_interval, weighted_laplace_variance, KProfile,
    LocalSensitivityBound, MetaDistribution, MetaKind, Population, RandomSource, TruncatedCoreParams,
};
use hetmean::concentration::bernstein_radius;

fn sigmas_and_widths() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(0.01f64..1.0, n),
        )
    })
}

fn max_weight(sigmas: &[f64], t: f64) -> f64 {
    ideal_weights(sigmas, t).unwrap().into_iter().fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_sum_to_one((sigmas, _) in sigmas_and_widths(), t in 1e-3f64..1e3) {
        let total: f64 = ideal_weights(&sigmas, t).unwrap().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn larger_cap_never_lowers_the_largest_weight(
        (sigmas, _) in sigmas_and_widths(),
        t in 1e-3f64..1e3,
        factor in 1.0f64..10.0,
    ) {
        prop_assert!(max_weight(&sigmas, t) <= max_weight(&sigmas, t * factor) + 1e-12);
    }

    #[test]
    fn optimised_threshold_beats_a_dense_grid((sigmas, widths) in sigmas_and_widths(), eps in 0.1f64..5.0) {
        let t = optimize_threshold(&sigmas, &widths, eps).unwrap();
        let best = threshold_objective(&sigmas, &widths, eps, t);
        let (lo, hi) = sigmas.iter().fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(1.0 / s), b.max(1.0 / s)));
        let (lo, hi) = ((lo / 100.0).ln(), (hi * 100.0).ln());
        const POINTS: usize = 20_000;
        let grid_min = (0..=POINTS)
            .map(|i| threshold_objective(&sigmas, &widths, eps, (lo + (hi - lo) * i as f64 / POINTS as f64).exp()))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best <= grid_min * (1.0 + 1e-9), "optimised {best} vs grid {grid_min}");
    }

    #[test]
    fn prediction_parts_add_up(
        (sigmas, widths) in sigmas_and_widths(),
        eps in 0.1f64..5.0,
    ) {
        let weights = ideal_weights(&sigmas, 1.0).unwrap();
        let sigma2: Vec<f64> = sigmas.iter().map(|s| s * s).collect();
        let p = weighted_laplace_variance(&weights, &sigma2, &widths, eps, 1.0);
        prop_assert_eq!(p.total, p.nonprivate + p.privacy);
    }

    #[test]
    fn initial_radius_shrinks_with_more_users_and_budget(
        p in 0.0f64..1.0,
        m in 1usize..10_000,
        extra in 1usize..1000,
        eps in 0.05f64..5.0,
        factor in 1.0f64..4.0,
        beta in 0.001f64..0.5,
    ) {
        let r = initial_mean_radius(p, m, eps, beta);
        prop_assert!(initial_mean_radius(p, m + extra, eps, beta) <= r);
        prop_assert!(initial_mean_radius(p, m, eps * factor, beta) <= r);
    }

    #[test]
    fn order_statistic_law_is_normalised_and_tiles_the_domain(
        ks in prop::collection::vec(1u64..60, 1..40),
        rank_frac in 0.0f64..1.0,
        extra in 0u64..40,
        eps in 0.01f64..10.0,
    ) {
        let rank = 1 + ((ks.len() - 1) as f64 * rank_frac) as usize;
        let k_max = ks.iter().max().unwrap() + extra;
        let ivs = em_intervals(&ks, rank, k_max, eps).unwrap();
        let total: f64 = ivs.iter().map(|iv| iv.probability).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        let mut spans: Vec<(u64, u64)> = ivs.iter().map(|iv| (iv.lo, iv.hi)).collect();
        spans.sort_unstable();
        prop_assert_eq!(spans[0].0, 1);
        prop_assert_eq!(spans.last().unwrap().1, k_max);
        prop_assert!(spans.windows(2).all(|w| w[1].0 == w[0].1 + 1));
    }

    #[test]
    fn truncation_interval_stays_in_the_unit_range(c in -0.5f64..1.5, alpha in 0.0f64..0.5, f in 0.0f64..0.5) {
        let iv = truncation_interval(c, alpha, f);
        prop_assert!(0.0 <= iv.lo && iv.lo <= iv.hi && iv.hi <= 1.0);
        // Endpoints are rounded separately, so the width may gain an ulp.
        prop_assert!(iv.width() <= (2.0 * alpha + 2.0 * f) * (1.0 + 4.0 * f64::EPSILON) + f64::EPSILON);
    }

    #[test]
    fn exact_binomial_radius_is_below_bernstein(k in 1u64..3000, p in 0.001f64..0.999, beta in 0.001f64..0.5) {
        prop_assert!(f_bin(k, p, beta).unwrap() <= bernstein_radius(k, p, beta) + 1e-6);
    }

    #[test]
    fn populations_are_sorted_and_reproducible(
        ks in prop::collection::vec(1u64..30, 1..60),
        seed in any::<u64>(),
        stream in any::<u64>(),
    ) {
        let meta = MetaDistribution::two_point(0.4, 0.1).unwrap();
        let profile = KProfile::Explicit(ks.clone());
        let a = generate_population(&meta, &profile, ks.len(), RandomSource::new(seed, stream)).unwrap();
        let b = generate_population(&meta, &profile, ks.len(), RandomSource::new(seed, stream)).unwrap();
        prop_assert_eq!(&a.population, &b.population);
        prop_assert_eq!(&a.truth.p_i, &b.truth.p_i);
        let got = a.population.ks();
        prop_assert!(got.windows(2).all(|w| w[0] >= w[1]));
        let mut want = ks;
        want.sort_unstable_by(|x, y| y.cmp(x));
        prop_assert_eq!(got, want);
        let text = a.population.to_text();
        prop_assert_eq!(Population::from_text(&text).unwrap(), a.population);
    }
}

// Local sensitivity of the capped weighted mean, brute-forced on a grid.

const GRID_VALUES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const GRID_COUNTS: [u64; 3] = [1, 2, 3];

fn grid_records() -> impl Iterator<Item = (f64, u64)> {
    GRID_VALUES.iter().flat_map(|&x| GRID_COUNTS.iter().map(move |&k| (x, k)))
}

/// Largest change from replacing one record with a grid record.
fn grid_local_sensitivity(records: &[(f64, u64)], params: &TruncatedCoreParams) -> f64 {
    let base = truncated_weighted_mean(records, params).unwrap();
    let mut worst = 0.0f64;
    let mut d = records.to_vec();
    for i in 0..records.len() {
        for r in grid_records() {
            d[i] = r;
            worst = worst.max((truncated_weighted_mean(&d, params).unwrap() - base).abs());
        }
        d[i] = records[i];
    }
    worst
}

fn core_case() -> impl Strategy<Value = (Vec<(f64, u64)>, TruncatedCoreParams)> {
    let record = (0usize..GRID_VALUES.len(), 0usize..GRID_COUNTS.len()).prop_map(|(x, k)| (GRID_VALUES[x], GRID_COUNTS[k]));
    (
        prop::collection::vec(record, 2..5),
        1u64..4,
        0.1f64..0.9,
        0.0f64..0.2,
        0.0f64..0.05,
        0usize..3,
    )
        .prop_map(|(records, k_cap, center, alpha, sigma_p2, fam)| {
            let family = [MetaKind::PointMass, MetaKind::TwoPoint, MetaKind::TruncatedGaussian { w: 2.0 }][fam];
            let params = TruncatedCoreParams {
                k_cap,
                group_size: records.len(),
                center,
                sigma_p2,
                alpha,
                beta: 0.1,
                family,
            };
            (records, params)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sensitivity_bound_holds_across_the_neighbourhood((records, params) in core_case()) {
        let bound = LocalSensitivityBound::new(&records, &params).unwrap();
        let b0 = bound.at(0);
        let b1 = bound.at(1);
        prop_assert!(b0 <= b1);
        prop_assert!(grid_local_sensitivity(&records, &params) <= b0);
        let mut d = records.clone();
        for i in 0..records.len() {
            for r in grid_records() {
                d[i] = r;
                prop_assert!(grid_local_sensitivity(&d, &params) <= b1);
            }
            d[i] = records[i];
        }
    }

    #[test]
    fn certified_radius_respects_the_proposal((records, params) in core_case(), scale in 0.5f64..3.0) {
        let lambda = LocalSensitivityBound::new(&records, &params).unwrap().at(0) * scale;
        let cert = certify_kappa(&records, &params, lambda).unwrap();
        let bound = LocalSensitivityBound::new(&records, &params).unwrap();
        if bound.at(0) <= lambda {
            prop_assert!(bound.at(cert.kappa) <= lambda);
        } else {
            prop_assert_eq!(cert.kappa, 0);
        }
        if !cert.unbounded {
            prop_assert!(cert.kappa == bound.group_size() || bound.at(cert.kappa + 1) > lambda);
        }
    }
}
