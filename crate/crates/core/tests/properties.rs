mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sspfield::baselines::{idw_estimate, idw_weights, mean_estimate, IdwConfig};
use sspfield::datamodel::{
    interpolate_profile, mean_reference_profile, GeoCoordinate, Reference, ReferenceSet, Sample, SoundSpeedProfile,
    YearMonth,
};
use sspfield::diffcore::{stab_softmax, Checkpoint, Tape};
use sspfield::evaluation::{compare_methods, ecdf, rmse_eq33, EvalOptions, Estimator};
use sspfield::exec::Execution;
use sspfield::ingest::{build_samples, load_grid, save_grid, synthesize_field, MonthRange, SplitSpec, SynthSpec};
use sspfield::training::{generator_loss, lr_schedule, LrSchedule};
use sspfield::baselines::{IdwEstimator, MeanEstimator};

use common::{random_profile, random_sample, rng, small_split};

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn refset(profiles: Vec<SoundSpeedProfile>) -> ReferenceSet {
    ReferenceSet::new(
        profiles
            .into_iter()
            .enumerate()
            .map(|(i, profile)| Reference {
                coord: GeoCoordinate::new(i as f64, 0.0).unwrap(),
                sst: 10.0,
                profile,
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(cfg(128))]

    #[test]
    fn interpolation_exact_for_dyadic_affine(
        knots in prop::collection::btree_set(0u32..2000, 2..40),
        slope_k in -256i32..256,
        base in 1400i32..1600,
    ) {
        let depths: Vec<f64> = knots.iter().map(|&k| k as f64).collect();
        let slope = slope_k as f64 / 64.0;
        let f = |z: f64| base as f64 + slope * z;
        let speeds: Vec<f64> = depths.iter().map(|&z| f(z)).collect();
        let p = interpolate_profile(&depths, &speeds, 1.0).unwrap();
        prop_assert_eq!(p.depth_count(), (depths[depths.len() - 1] - depths[0]) as usize + 1);
        for (i, v) in p.speeds().iter().enumerate() {
            prop_assert_eq!(*v, f(depths[0] + i as f64));
        }
    }

    #[test]
    fn interpolation_affine_general_and_knots(
        gaps in prop::collection::vec(0.5f64..50.0, 1..30),
        a in 1400.0f64..1600.0,
        b in -0.3f64..0.3,
    ) {
        let mut depths = vec![0.0];
        for g in &gaps {
            depths.push(depths[depths.len() - 1] + g);
        }
        let speeds: Vec<f64> = depths.iter().map(|z| a + b * z).collect();
        let p = interpolate_profile(&depths, &speeds, 1.0).unwrap();
        for (i, v) in p.speeds().iter().enumerate() {
            let z = i as f64;
            prop_assert!((v - (a + b * z)).abs() <= 1e-12 * a.abs().max(1.0));
            if let Some(k) = depths.iter().position(|d| *d == z) {
                prop_assert_eq!(*v, speeds[k]);
            }
        }
    }

    #[test]
    fn mean_profile_commutes_with_permutation(seed in any::<u64>(), d in 1usize..40) {
        let mut r = rng(seed);
        let mut ps: Vec<SoundSpeedProfile> = (0..8).map(|_| random_profile(&mut r, d)).collect();
        let m = mean_reference_profile(&refset(ps.clone())).unwrap();
        for k in 0..d {
            let oracle = ps.iter().map(|p| p.speeds()[k]).sum::<f64>() / 8.0;
            prop_assert!((m.speeds()[k] - oracle).abs() <= 1e-12);
        }
        ps.shuffle(&mut r);
        let mp = mean_reference_profile(&refset(ps)).unwrap();
        for (x, y) in m.speeds().iter().zip(mp.speeds()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_bit_exact_at_f32(vals in prop::collection::vec(-1e6f32..1e6, 1..64)) {
        let dir = tempfile::tempdir().unwrap();
        let as_f64: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
        let mut ck = Checkpoint::default();
        ck.push("x", &[vals.len()], &as_f64);
        let stem = dir.path().join("c");
        ck.save(&stem).unwrap();
        let back = Checkpoint::load(&stem).unwrap();
        prop_assert_eq!(back.values_f64("x").unwrap(), as_f64);
    }

    #[test]
    fn idw_weights_normalized_and_convex(seed in any::<u64>(), p in 0.5f64..4.0) {
        let mut r = rng(seed);
        let s = random_sample(&mut r, 12);
        let c = IdwConfig { p, ..IdwConfig::default() };
        let w = idw_weights(&s, &c).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let est = idw_estimate(&s, &c).unwrap();
        for k in 0..12 {
            let vals: Vec<f64> = s.refs.entries().iter().map(|e| e.profile.speeds()[k]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(est.speeds()[k] >= lo - 1e-9 && est.speeds()[k] <= hi + 1e-9);
        }
    }

    #[test]
    fn idw_equals_mean_for_equidistant_refs(seed in any::<u64>(), radius in 0.1f64..3.0, p in 0.5f64..4.0) {
        let mut r = rng(seed);
        let target = GeoCoordinate::new(20.0, -45.0).unwrap();
        let refs = (0..8).map(|k| {
            let a = k as f64 * std::f64::consts::PI / 4.0 + 0.1;
            Reference {
                coord: GeoCoordinate::new(target.lon + radius * a.cos(), target.lat + radius * a.sin()).unwrap(),
                sst: 5.0,
                profile: random_profile(&mut r, 10),
            }
        }).collect();
        let s = Sample::new(target, 5.0, ReferenceSet::new(refs).unwrap(), None, YearMonth::new(2022, 1).unwrap()).unwrap();
        let a = idw_estimate(&s, &IdwConfig { p, ..IdwConfig::default() }).unwrap();
        let b = mean_estimate(&s).unwrap();
        for (x, y) in a.speeds().iter().zip(b.speeds()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn rmse_nonnegative_and_zero_iff_equal(seed in any::<u64>(), n in 1usize..10, perturb in any::<bool>()) {
        let mut r = rng(seed);
        let truths: Vec<SoundSpeedProfile> = (0..n).map(|_| random_profile(&mut r, 8)).collect();
        let mut preds = truths.clone();
        if perturb {
            let i = r.gen_range(0..n);
            let mut v = preds[i].speeds().to_vec();
            v[r.gen_range(0..8)] += 0.25;
            preds[i] = SoundSpeedProfile::new(v).unwrap();
        }
        let e = rmse_eq33(&preds, &truths).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert_eq!(e == 0.0, !perturb);
    }

    #[test]
    fn ecdf_matches_count_oracle(errs in prop::collection::vec(0.0f64..5.0, 1..60), seed in any::<u64>()) {
        let c = ecdf(&errs).unwrap();
        prop_assert!(c.fractions.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*c.fractions.last().unwrap(), 1.0);
        let mut r = rng(seed);
        let n = errs.len() as f64;
        for _ in 0..100 {
            let x: f64 = r.gen_range(-0.5..5.5);
            let oracle = errs.iter().filter(|e| **e <= x).count() as f64 / n;
            prop_assert!((c.at(x) - oracle).abs() <= 1e-12);
        }
        for &e in &errs {
            let oracle = errs.iter().filter(|v| **v <= e).count() as f64 / n;
            prop_assert!((c.at(e) - oracle).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        rows in 1usize..6,
        cols in 1usize..12,
        scale in 1e-3f64..1e4,
        shift in -1000i32..1000,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        // logits on a 2^-20 lattice so adding an integer shift is exact
        let x: Vec<f64> = (0..rows * cols)
            .map(|_| (r.gen_range(-1.0..1.0) * scale * 1048576.0).round() / 1048576.0)
            .collect();
        let shift = shift as f64;
        let t = Tape::new();
        let y = stab_softmax(t.constant(x.clone(), &[rows, cols])).value();
        let ys = stab_softmax(t.constant(x.iter().map(|v| v + shift).collect(), &[rows, cols])).value();
        for row in 0..rows {
            let sl = &y[row * cols..(row + 1) * cols];
            prop_assert!(sl.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!((sl.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        for (a, b) in y.iter().zip(&ys) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn softplus_loss_positive_and_asymptotic(x in -30.0f64..30.0) {
        let t = Tape::new();
        let sp = t.scalar(x).softplus().item();
        prop_assert!(sp > 0.0);
        prop_assert!(sp >= x);
        // generator adversarial term is -softplus(l_fake - l_real)
        let lr = t.constant(vec![0.0], &[1, 1]);
        let lf = t.constant(vec![x], &[1, 1]);
        let l = generator_loss(lr, lf, t.zeros(&[1, 4]), 0.0).item();
        let oracle = -(1.0 + x.exp()).ln();
        prop_assert!((l - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
    }

    #[test]
    fn schedule_continuous_and_bounded(
        eta_max in 1e-5f64..1e-2,
        warm in 1usize..50,
        extra in 1usize..200,
    ) {
        let total = (warm + extra) as f64;
        let s = LrSchedule::new(eta_max, 1e-7, warm as f64, total).unwrap();
        let w = warm as f64;
        let left = lr_schedule(w, &s).unwrap();
        let right = lr_schedule(w + 1e-12 * total, &s).unwrap();
        prop_assert!((left - eta_max).abs() <= 1e-15);
        prop_assert!((right - eta_max).abs() <= 1e-15 + eta_max * 1e-9);
        for k in 0..=40 {
            let v = lr_schedule(total * k as f64 / 40.0, &s).unwrap();
            prop_assert!((0.0..=eta_max * (1.0 + 1e-12)).contains(&v));
        }
    }
}

proptest! {
    #![proptest_config(cfg(12))]

    #[test]
    fn windows_have_eight_same_month_refs_and_disjoint_centres(
        seed in any::<u64>(),
        n_lon in 5usize..12,
        n_lat in 5usize..12,
        offset in 1usize..3,
    ) {
        let f = synthesize_field(&SynthSpec::new(seed, n_lon, n_lat, 4, 6)).unwrap();
        let ym = |k| YearMonth::new(2022, 1).unwrap().plus_months(k);
        let sp = build_samples(&f, &SplitSpec {
            train_months: MonthRange::new(ym(0), ym(1)).unwrap(),
            test_months: MonthRange::new(ym(2), ym(3)).unwrap(),
            train_stride_deg: 3.0,
            test_offset_deg: offset as f64,
        });
        let Ok(sp) = sp else { return Ok(()); };
        let key = |s: &Sample| ((s.target_coord.lon * 2.0).round() as i64, (s.target_coord.lat * 2.0).round() as i64);
        let tr: HashSet<_> = sp.train.iter().map(key).collect();
        let te: HashSet<_> = sp.test.iter().map(key).collect();
        prop_assert!(tr.is_disjoint(&te));
        for s in sp.train.iter().chain(&sp.test) {
            prop_assert_eq!(s.refs.len(), 8);
            let m = f.month_index(s.epoch_tag).unwrap();
            for r in s.refs.entries() {
                let (i, j) = f.locate(r.coord).unwrap();
                prop_assert_eq!(&f.cell(m, i, j).unwrap().profile, &r.profile);
            }
        }
        prop_assert!(sp.train.iter().all(|s| s.epoch_tag <= ym(1)));
        prop_assert!(sp.test.iter().all(|s| s.epoch_tag >= ym(2)));
    }

    #[test]
    fn loading_is_row_order_independent(seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let f = synthesize_field(&SynthSpec::new(seed % 1000, 4, 3, 2, 5)).unwrap();
        let (ssp, sst) = (dir.path().join("ssp.csv"), dir.path().join("sst.csv"));
        save_grid(&f, &ssp, &sst).unwrap();
        let a = load_grid(&ssp, &sst).unwrap();
        let mut r = rng(seed);
        for p in [&ssp, &sst] {
            let text = std::fs::read_to_string(p).unwrap();
            let mut lines: Vec<&str> = text.lines().collect();
            lines[2..].shuffle(&mut r);
            std::fs::write(p, lines.join("\n") + "\n").unwrap();
        }
        let b = load_grid(&ssp, &sst).unwrap();
        prop_assert_eq!(&a, &b);
        // a second save/load cycle is a fixed point
        save_grid(&b, &ssp, &sst).unwrap();
        prop_assert_eq!(&load_grid(&ssp, &sst).unwrap(), &a);
    }

    #[test]
    fn compare_methods_ignores_sample_order(seed in any::<u64>()) {
        let mut test = small_split(3, 8).test;
        let idw = IdwEstimator::default();
        let methods: [&dyn Estimator; 2] = [&idw, &MeanEstimator];
        let opts = EvalOptions { depths_m: vec![0.0, 7.0], exec: Execution::Sequential, report_timing: false };
        let a = compare_methods(&test, &methods, &opts).unwrap();
        test.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = compare_methods(&test, &methods, &opts).unwrap();
        prop_assert_eq!(a.overall_csv(), b.overall_csv());
        prop_assert_eq!(a.per_depth_csv(), b.per_depth_csv());
        prop_assert_eq!(a.per_location_csv(), b.per_location_csv());
        prop_assert_eq!(a.ecdf_csv(7.0), b.ecdf_csv(7.0));
    }
}
