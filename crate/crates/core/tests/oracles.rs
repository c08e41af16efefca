//! Closed forms checked against independent numerical routes.

use hom_core::coincidence_model::{averaged_interference_factor, broadened_signal, BroadeningParams};
use hom_core::constants::{DEFAULT_DECAY_RATE, HBAR, K_B, MICROKELVIN, NANOSECOND};
use hom_core::photon_field::{coincidence_density_closed, coincidence_density_integral, PhotonWavepacket};
use hom_core::spatial_mode::{overlap, GaussianMode};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

#[test]
fn quadrature_matches_closed_form_on_random_tuples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let gamma = DEFAULT_DECAY_RATE * rng.random_range(0.5..2.0);
        let k = rng.random_range(0.0..=1.0);
        let dw = 2.0 * std::f64::consts::PI * rng.random_range(-20e6..20e6);
        let tau = rng.random_range(-100e-9..100e-9);
        let w1 = PhotonWavepacket::new(gamma, dw, 0.0).unwrap();
        let w2 = PhotonWavepacket::new(gamma, 0.0, 0.0).unwrap();
        let num = coincidence_density_integral(&w1, &w2, k, tau).unwrap();
        let exact = coincidence_density_closed(tau, k, dw, gamma).unwrap();
        let rel = (num - exact).abs() / exact.abs().max(1e-3 * (-gamma * tau.abs()).exp());
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-6, "worst relative deviation {worst:e}");
}

/// Brute-force field overlap on a transverse grid of ±5 w with 512² points.
fn grid_overlap(m1: &GaussianMode, m2: &GaussianMode) -> f64 {
    let n = 512;
    let w = m1.waist.max(m2.waist);
    let half = 5.0 * w;
    let cx = 0.5 * (m1.focus[0] + m2.focus[0]);
    let cy = 0.5 * (m1.focus[1] + m2.focus[1]);
    let z = 0.5 * (m1.focus[2] + m2.focus[2]);
    let h = 2.0 * half / n as f64;
    let (mut cross, mut n1, mut n2) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
    for i in 0..n {
        let x = cx - half + (i as f64 + 0.5) * h;
        for j in 0..n {
            let y = cy - half + (j as f64 + 0.5) * h;
            let f1 = m1.field(x, y, z);
            let f2 = m2.field(x, y, z);
            cross += f1.conj() * f2;
            n1 += f1.norm_sqr();
            n2 += f2.norm_sqr();
        }
    }
    cross.norm() / (n1 * n2).sqrt()
}

#[test]
fn overlap_matches_grid_quadrature() {
    let w = 90e-6;
    let base = GaussianMode::with_waist(w).unwrap();
    let cases = [
        base.translated(w, 0.0, 0.0),
        base.translated(0.3 * w, -0.2 * w, 0.0),
        GaussianMode {
            waist: 1.16 * w,
            ..base
        },
        base.translated(0.0, 0.0, 0.5 * base.rayleigh_range()),
        base.tilted_x(0.5 * base.divergence()),
    ];
    for m2 in cases {
        let k = overlap(&base, &m2).unwrap();
        let g = grid_overlap(&base, &m2);
        assert!((k - g).abs() <= 1e-6, "closed {k} grid {g} for {m2:?}");
    }
    let k = overlap(&base, &base.translated(w, 0.0, 0.0)).unwrap();
    assert!((k - (-0.5f64).exp()).abs() < 1e-12);
}

fn gamma_shift(params: &BroadeningParams) -> Gamma<f64> {
    Gamma::new(3.0, 0.5 * K_B * params.temperature).unwrap()
}

#[test]
fn interference_factor_matches_sampled_pairs() {
    let params = BroadeningParams::at_temperature(180.0 * MICROKELVIN).unwrap();
    let g = gamma_shift(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dw: Vec<f64> = (0..1_000_000)
        .map(|_| params.differential_shift_factor * (g.sample(&mut rng) - g.sample(&mut rng)) / HBAR)
        .collect();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let tau = i as f64 * 1.5 * NANOSECOND;
        let mc = dw.iter().map(|w| (w * tau).cos()).sum::<f64>() / dw.len() as f64;
        let c = averaged_interference_factor(tau, &params).unwrap();
        worst = worst.max((mc - c).abs());
    }
    assert!(worst <= 0.01, "max deviation {worst}");
    let t_star = 2.0 * HBAR / (K_B * params.temperature);
    assert!((averaged_interference_factor(t_star, &params).unwrap() - 0.125).abs() < 1e-12);
}

#[test]
fn broadened_signal_matches_sampled_density() {
    let k = 0.7;
    let params = BroadeningParams::at_temperature(180.0 * MICROKELVIN).unwrap();
    let g = gamma_shift(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dw: Vec<f64> = (0..1_000_000)
        .map(|_| (g.sample(&mut rng) - g.sample(&mut rng)) / HBAR)
        .collect();
    let mut worst = 0.0f64;
    for i in 1..=100 {
        let tau = i as f64 * NANOSECOND;
        let mc = dw
            .iter()
            .map(|&w| coincidence_density_closed(tau, k, w, params.decay_rate).unwrap())
            .sum::<f64>()
            / dw.len() as f64;
        let exact = broadened_signal(tau, k, &params).unwrap();
        worst = worst.max((mc - exact).abs() / exact);
        let cold = (-params.decay_rate * tau).exp() * (1.0 - k * k);
        assert!(exact > cold, "broadened curve must exceed the cold one at τ = {tau:e}");
    }
    assert!(worst <= 0.01, "max relative deviation {worst}");
}
