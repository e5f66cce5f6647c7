//! Property tests for the invariants of each module.

use approx::assert_relative_eq;
use proptest::prelude::*;

use pvnet::corpus::{
    fit_normalizer, load_engine_dataset, split, Cleaning, Column, ConstantColumns, Dataset,
    EmissionPattern, Provenance, Source, SplitPolicy, DEFAULT_RANGE,
};
use pvnet::engine_metrics::{brake_power, bsfc, summarize};
use pvnet::featurizer::{featurize, FeatureMapKind};
use pvnet::mlp::{
    gradient_check, pattern_error, train, LayerSizes, NetworkSpec, NetworkState,
    PresentationOrder, TrainingConfig, TrainingPattern, UpdateMode,
};

fn unit_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 1..=max_len)
}

fn pair_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 2..=8)
}

fn net(input: usize, hidden: usize, output: usize, bias: bool, seed: u64) -> NetworkState {
    let mut spec = NetworkSpec::new(LayerSizes::new(input, hidden, output));
    spec.bias = bias;
    NetworkState::init(&spec, seed).unwrap()
}

proptest! {
    #[test]
    fn feature_length_matches_dimensionality(x in pair_vec()) {
        for kind in FeatureMapKind::ALL {
            let v = featurize(&x, kind).unwrap();
            prop_assert_eq!(v.len(), kind.dimensionality(x.len()));
        }
    }

    #[test]
    fn composite_maps_concatenate_their_blocks(x in pair_vec()) {
        let get = |k| featurize(&x, k).unwrap().values;
        let nl1 = get(FeatureMapKind::Nl1);
        let nl2 = get(FeatureMapKind::Nl2);
        prop_assert_eq!(get(FeatureMapKind::Nl3), [nl1.clone(), nl2.clone()].concat());
        prop_assert_eq!(get(FeatureMapKind::Nl4), [x.clone(), nl1.clone()].concat());
        prop_assert_eq!(get(FeatureMapKind::Nl5), [x.clone(), nl2.clone()].concat());
        prop_assert_eq!(get(FeatureMapKind::Nl6), [x.clone(), nl1, nl2].concat());
    }

    #[test]
    fn product_maps_scale_quadratically(x in pair_vec(), c in -3.0..3.0f64) {
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        for kind in [FeatureMapKind::Nl1, FeatureMapKind::Nl2, FeatureMapKind::Nl3] {
            let base = featurize(&x, kind).unwrap().values;
            let got = featurize(&scaled, kind).unwrap().values;
            for (g, b) in got.iter().zip(&base) {
                assert_relative_eq!(*g, c * c * b, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn zero_input_maps_to_zero(nf in 2usize..9) {
        for kind in FeatureMapKind::ALL {
            let v = featurize(&vec![0.0; nf], kind).unwrap();
            prop_assert!(v.values.iter().all(|&f| f == 0.0));
        }
    }

    #[test]
    fn activations_stay_in_open_unit_interval(
        x in unit_vec(14),
        hidden in 1usize..12,
        bias in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let state = net(x.len(), hidden, 3, bias, seed);
        let a = state.forward(&x).unwrap();
        prop_assert!(a.hidden.iter().chain(&a.output).all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn pattern_error_nonnegative_and_order_free(
        pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..8),
        rot in 0usize..8,
    ) {
        let (d, o): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let e = pattern_error(&d, &o).unwrap();
        prop_assert!(e >= 0.0);
        let k = rot % d.len();
        let mut d2 = d.clone();
        let mut o2 = o.clone();
        d2.rotate_left(k);
        o2.rotate_left(k);
        d2.reverse();
        o2.reverse();
        assert_relative_eq!(pattern_error(&d2, &o2).unwrap(), e, max_relative = 1e-12);
    }

    #[test]
    fn simultaneous_step_follows_the_gradient(
        x in unit_vec(9),
        d in prop::collection::vec(0.05..0.95f64, 1..4),
        hidden in 1usize..8,
        bias in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let state = net(x.len(), hidden, d.len(), bias, seed);
        let err = gradient_check(&state, &x, &d, 1e-5).unwrap();
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn sequential_and_simultaneous_differ_at_second_order(
        x in prop::collection::vec(0.05..0.95f64, 2..6),
        d in prop::collection::vec(0.05..0.95f64, 1..3),
        seed in any::<u64>(),
    ) {
        let gap = |eta: f64| {
            let mut a = net(x.len(), 4, d.len(), false, seed);
            a.eta = eta;
            let mut b = a.clone();
            a.mode = UpdateMode::PaperSequential;
            b.mode = UpdateMode::TextbookSimultaneous;
            a.train_pattern(&x, &d).unwrap();
            b.train_pattern(&x, &d).unwrap();
            a.input_hidden
                .iter()
                .zip(&b.input_hidden)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (gap(1e-4), gap(1e-5));
        prop_assume!(fine > 1e-15);
        let ratio = coarse / fine;
        prop_assert!((90.0..110.0).contains(&ratio), "ratio {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_is_deterministic(seed in any::<u64>(), shuffled in any::<bool>()) {
        let data: Vec<TrainingPattern> = (0..5)
            .map(|i| {
                let t = 0.1 + 0.15 * i as f64;
                TrainingPattern { input: vec![t, 1.0 - t], target: vec![t * t] }
            })
            .collect();
        let cfg = TrainingConfig {
            target_mse: 1e-9,
            max_epochs: 200,
            order: if shuffled { PresentationOrder::Shuffled } else { PresentationOrder::Sequential },
        };
        let run = || train(net(2, 3, 1, true, seed), &data, &cfg).unwrap();
        let (s1, r1) = run();
        let (s2, r2) = run();
        prop_assert_eq!(s1, s2);
        prop_assert_eq!(&r1.mse_trace, &r2.mse_trace);
        prop_assert!(r1.best_mse_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

fn emission_data() -> impl Strategy<Value = Dataset<EmissionPattern>> {
    prop::collection::vec((0.0..100.0f64, 0.0..50.0f64, 0.0..0.5f64), 2..20).prop_filter_map(
        "needs spread in every column",
        |rows| {
            let patterns: Vec<EmissionPattern> = rows
                .into_iter()
                .map(|(blend_pct, hc, co)| EmissionPattern { blend_pct, hc, co })
                .collect();
            let spread = |f: fn(&EmissionPattern) -> f64| {
                let v: Vec<f64> = patterns.iter().map(f).collect();
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                hi - lo > 1e-6
            };
            (spread(|p| p.blend_pct) && spread(|p| p.hc) && spread(|p| p.co))
                .then(|| Dataset::new(patterns, Provenance::ExternalFile("gen".into()), vec![]).unwrap())
        },
    )
}

const EMISSION_COLUMNS: [Column; 3] = [Column::BlendPct, Column::Hc, Column::Co];

proptest! {
    #[test]
    fn normalized_rows_fall_in_range_and_round_trip(data in emission_data()) {
        let params =
            fit_normalizer(&data, &EMISSION_COLUMNS, DEFAULT_RANGE, ConstantColumns::Reject).unwrap();
        for row in data.rows(&EMISSION_COLUMNS).unwrap() {
            let z = params.normalize(&row).unwrap();
            prop_assert!(z.iter().all(|&v| (0.05 - 1e-12..=0.95 + 1e-12).contains(&v)));
            let back = params.denormalize(&z).unwrap();
            for (b, r) in back.values.iter().zip(&row) {
                assert_relative_eq!(*b, *r, epsilon = 1e-9, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn denormalize_inverts_normalize_outside_range(
        data in emission_data(),
        z in prop::collection::vec(-0.5..1.5f64, 3),
    ) {
        let params =
            fit_normalizer(&data, &EMISSION_COLUMNS, DEFAULT_RANGE, ConstantColumns::Reject).unwrap();
        let raw = params.denormalize(&z).unwrap();
        for (flag, v) in raw.extrapolated.iter().zip(&z) {
            prop_assert_eq!(*flag, !(0.05..=0.95).contains(v));
        }
        let again = params.normalize(&raw.values).unwrap();
        for (a, v) in again.iter().zip(&z) {
            assert_relative_eq!(*a, *v, epsilon = 1e-9);
        }
    }

    #[test]
    fn leave_rows_out_partitions_in_order(
        data in emission_data(),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..4),
    ) {
        let n = data.len();
        let mut held: Vec<usize> = picks.iter().map(|i| i.index(n) + 1).collect();
        held.sort_unstable();
        held.dedup();
        prop_assume!(held.len() < n);
        let policy = SplitPolicy::LeaveRowsOut(held.clone());
        let a = split(&data, &policy).unwrap();
        let b = split(&data, &policy).unwrap();
        prop_assert_eq!(&a.test_rows, &held);
        prop_assert_eq!(&a.train_rows, &b.train_rows);
        prop_assert_eq!(a.train.len() + a.test.len(), n);
        let mut all: Vec<usize> = a.train_rows.iter().chain(&a.test_rows).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (1..=n).collect::<Vec<_>>());
        prop_assert!(a.train_rows.windows(2).all(|w| w[0] < w[1]));
        for (r, p) in a.test_rows.iter().zip(&a.test) {
            prop_assert_eq!(p, &data.patterns()[r - 1]);
        }
    }

    #[test]
    fn brake_power_is_bilinear(n in 500.0..4000.0f64, t in 1.0..100.0f64, k in 0.1..10.0f64) {
        let p = brake_power(n, t).unwrap();
        assert_relative_eq!(brake_power(k * n, t).unwrap(), k * p, max_relative = 1e-12);
        assert_relative_eq!(brake_power(n, k * t).unwrap(), k * p, max_relative = 1e-12);
    }

    #[test]
    fn bsfc_is_scale_invariant(f in 0.1..50.0f64, p in 0.1..100.0f64, k in 0.01..100.0f64) {
        assert_relative_eq!(bsfc(k * f, k * p).unwrap(), bsfc(f, p).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn summary_maxima_ignore_row_order(perm in Just((0..36).collect::<Vec<usize>>()).prop_shuffle()) {
        let data = load_engine_dataset(&Source::Bundled, Cleaning::ComplementFill).unwrap();
        let shuffled: Vec<_> = perm.iter().map(|&i| data.patterns()[i]).collect();
        let shuffled = Dataset::new(shuffled, Provenance::BundledTable1, vec![]).unwrap();
        let a = summarize(&data, true).unwrap();
        let b = summarize(&shuffled, true).unwrap();
        prop_assert_eq!(a.max_power_kw.value, b.max_power_kw.value);
        prop_assert_eq!(a.max_torque_nm.value, b.max_torque_nm.value);
        prop_assert_eq!(a.blends.len(), b.blends.len());
        for (x, y) in a.blends.iter().zip(&b.blends) {
            prop_assert_eq!(x.blend_pct, y.blend_pct);
            prop_assert_eq!(x.rows, y.rows);
            prop_assert_eq!(x.max_power_kw.value, y.max_power_kw.value);
            prop_assert_eq!(x.max_torque_nm.value, y.max_torque_nm.value);
        }
        prop_assert_eq!(a.deltas_vs_b0, b.deltas_vs_b0);
    }
}
