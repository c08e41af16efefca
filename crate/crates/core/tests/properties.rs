use hom_core::coincidence_model::{
    averaged_interference_factor, broadened_signal, integrated_residual, peak_ratio, BroadeningParams,
};
use hom_core::constants::{DEFAULT_DECAY_RATE, MICROKELVIN, NANOSECOND};
use hom_core::experiment_sim::{CoincidenceHistogram, Configuration};
use hom_core::inference::displacement_model;
use hom_core::photon_field::coincidence_density_closed;
use hom_core::spatial_mode::{displacement_scan, overlap, GaussianMode};
use proptest::prelude::*;

fn hist_from(counts: &[u8]) -> CoincidenceHistogram {
    let mut h = CoincidenceHistogram::centered(1.2e-9, 30e-9, 3, Configuration::Mixer50_50).unwrap();
    for (c, v) in h.counts.iter_mut().zip(counts.iter().cycle()) {
        *c = *v as u64;
    }
    h.total_pulse_cycles = counts.len() as u64;
    h
}

proptest! {
    #[test]
    fn closed_density_is_bounded_and_even(
        tau in -200e-9..200e-9f64,
        k in 0.0..=1.0f64,
        dw in -1e9..1e9f64,
    ) {
        let g = DEFAULT_DECAY_RATE;
        let v = coincidence_density_closed(tau, k, dw, g).unwrap();
        let env = (-g * tau.abs()).exp();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= env * (1.0 + k * k) * (1.0 + 1e-12));
        if (dw * tau).cos() >= 0.0 {
            prop_assert!(v <= env * (1.0 + 1e-12));
        }
        prop_assert_eq!(v, coincidence_density_closed(-tau, k, dw, g).unwrap());
    }

    #[test]
    fn zero_delay_contrast_is_exact(k in 0.0..=1.0f64, dw in -1e9..1e9f64) {
        let g = DEFAULT_DECAY_RATE;
        let v = coincidence_density_closed(0.0, k, dw, g).unwrap();
        let flat = coincidence_density_closed(0.0, 0.0, dw, g).unwrap();
        prop_assert_eq!(v, (1.0 - k * k) * flat);
    }

    #[test]
    fn overlap_is_symmetric_and_normalized(
        dx in -200e-6..200e-6f64,
        dy in -200e-6..200e-6f64,
        dz in -0.05..0.05f64,
        mismatch in 0.7..1.4f64,
    ) {
        let a = GaussianMode::with_waist(90e-6).unwrap();
        let mut b = a.translated(dx, dy, dz);
        b.waist *= mismatch;
        let k1 = overlap(&a, &b).unwrap();
        let k2 = overlap(&b, &a).unwrap();
        prop_assert_eq!(k1, k2);
        prop_assert!((0.0..=1.0).contains(&k1));
    }

    #[test]
    fn overlap_falls_with_offset(d1 in 0.0..300e-6f64, extra in 0.0..300e-6f64) {
        let a = GaussianMode::with_waist(90e-6).unwrap();
        let near = overlap(&a, &a.translated(d1, 0.0, 0.0)).unwrap();
        let far = overlap(&a, &a.translated(d1 + extra, 0.0, 0.0)).unwrap();
        prop_assert!(far <= near);
    }

    #[test]
    fn interference_factor_in_unit_interval(tau in -500e-9..500e-9f64, t_uk in 0.0..1000.0f64) {
        let p = BroadeningParams::at_temperature(t_uk * MICROKELVIN).unwrap();
        let c = averaged_interference_factor(tau, &p).unwrap();
        prop_assert!(c > 0.0 && c <= 1.0);
        prop_assert_eq!(c, averaged_interference_factor(-tau, &p).unwrap());
    }

    #[test]
    fn broadened_signal_is_nonnegative_with_cold_limit(
        tau in -300e-9..300e-9f64,
        k in 0.0..=1.0f64,
        t_uk in 0.0..1000.0f64,
    ) {
        let p = BroadeningParams::at_temperature(t_uk * MICROKELVIN).unwrap();
        prop_assert!(broadened_signal(tau, k, &p).unwrap() >= 0.0);
        let cold = BroadeningParams::at_temperature(0.0).unwrap();
        let ratio = broadened_signal(tau, k, &cold).unwrap()
            / coincidence_density_closed(tau, k, 0.0, cold.decay_rate).unwrap();
        if k < 1.0 {
            prop_assert!((ratio - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn residual_grows_with_temperature(k in 0.0..0.99f64, t1 in 0.0..500.0f64, dt in 0.0..500.0f64) {
        let hw = 26.0 * NANOSECOND;
        let lo = integrated_residual(k, &BroadeningParams::at_temperature(t1 * MICROKELVIN).unwrap(), hw).unwrap();
        let hi = integrated_residual(k, &BroadeningParams::at_temperature((t1 + dt) * MICROKELVIN).unwrap(), hw).unwrap();
        prop_assert!(hi >= lo * (1.0 - 1e-12));
    }

    #[test]
    fn ratio_law_in_range(k in 0.0..=1.0f64) {
        let r = peak_ratio(k).unwrap();
        prop_assert!((0.0..=0.5).contains(&r));
        prop_assert_eq!(r, 0.5 * (1.0 - k * k));
    }

    #[test]
    fn scan_tends_to_half(k in 0.0..=1.0f64, c in -50e-6..50e-6f64) {
        prop_assert!((displacement_model(5e-3, k, c, 90e-6) - 0.5).abs() < 1e-15);
        let mode = GaussianMode::with_waist(90e-6).unwrap();
        let s = displacement_scan(&mode, k, &[0.0, 1.0]).unwrap();
        prop_assert!((s[0].ratio - peak_ratio(k).unwrap()).abs() < 1e-15);
        prop_assert!((s[1].ratio - 0.5).abs() < 1e-15);
    }

    #[test]
    fn histogram_merge_is_associative_and_commutative(
        a in proptest::collection::vec(any::<u8>(), 1..40),
        b in proptest::collection::vec(any::<u8>(), 1..40),
        c in proptest::collection::vec(any::<u8>(), 1..40),
    ) {
        let (ha, hb, hc) = (hist_from(&a), hist_from(&b), hist_from(&c));
        let mut left = ha.clone();
        left.merge(&hb).unwrap();
        left.merge(&hc).unwrap();
        let mut right = hc.clone();
        let mut bc = hb.clone();
        bc.merge(&ha).unwrap();
        right.merge(&bc).unwrap();
        prop_assert_eq!(&left.counts, &right.counts);
        prop_assert_eq!(left.total_pulse_cycles, right.total_pulse_cycles);
    }

    #[test]
    fn rebin_preserves_counts(a in proptest::collection::vec(any::<u8>(), 1..40)) {
        let h = hist_from(&a);
        prop_assert_eq!(h.rebin(3).unwrap().total(), h.total());
    }
}
