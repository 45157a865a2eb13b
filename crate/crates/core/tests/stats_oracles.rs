use std::f64::consts::PI;
use std::sync::Arc;

use ispec_core::stats::{
    correlation_sequence, equilibrium_integral, green_kubo, mixing_check, orbit_correlation,
    sample_equilibrium,
};
use ispec_core::transfer::{
    leading_eigendata, EigenOptions, NormalizedOperator, NormalizedPotential, Stencil,
};
use ispec_core::{
    CircleMap, Grid, Observable, Potential, RpfData, TransferOperator, VelocityProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(map: &CircleMap, m: usize) -> (RpfData, NormalizedPotential, NormalizedOperator) {
    let f = Potential::zero();
    let op = TransferOperator::new(
        Arc::new(Stencil::new(map, Grid::new(m).unwrap()).unwrap()),
        &f,
    );
    let rpf = leading_eigendata(map, &op, &f, &EigenOptions::default()).unwrap();
    let np = NormalizedPotential::new(map, &f, &rpf).unwrap();
    let nt = np.operator(&op);
    (rpf, np, nt)
}

fn m1() -> CircleMap {
    CircleMap::new(VelocityProfile::manneville_pomeau(1.0).unwrap()).unwrap()
}

#[test]
fn doubling_cosine_correlations() {
    let map = CircleMap::new(VelocityProfile::doubling_oracle()).unwrap();
    let (rpf, _, nt) = setup(&map, 4096);
    let c = Observable::from_fn(&rpf.grid(), |x| (2.0 * PI * x).cos());
    let cs = correlation_sequence(&nt, &rpf.mu, &c, &c, 20);
    assert!((cs[0] - 0.5).abs() < 1e-9, "{}", cs[0]);
    assert!(cs[1..].iter().all(|v| v.abs() < 1e-9), "{cs:?}");
    let (gk, _) = green_kubo(&cs);
    assert!((gk - cs[0]).abs() < 1e-6);
}

#[test]
fn variance_identity() {
    let map = m1();
    let (rpf, _, nt) = setup(&map, 2048);
    let phi = Observable::from_fn(&rpf.grid(), |x| (2.0 * PI * x).sin() + x);
    let c0 = correlation_sequence(&nt, &rpf.mu, &phi, &phi, 0)[0];
    let mean = equilibrium_integral(&phi, &rpf.mu);
    let second = equilibrium_integral(&phi.map(|v| v * v), &rpf.mu);
    assert!((c0 - (second - mean * mean)).abs() < 1e-12);
}

#[test]
fn backward_chain_birkhoff_average_matches_equilibrium() {
    let map = m1();
    // the grid ν of this singular measure converges like 1/M, so refine
    let (rpf, np, _) = setup(&map, 16384);
    let phi = Observable::from_fn(&rpf.grid(), |x| x);
    let want = equilibrium_integral(&phi, &rpf.mu);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = 0.5;
    let (burn, n) = (1000, 2_000_000);
    let mut sum = 0.0;
    for k in 0..burn + n {
        let ys = map.preimages(x).unwrap();
        let w0 = np.eval(ys[0]).exp();
        let w1 = np.eval(ys[1]).exp();
        x = if rng.gen::<f64>() * (w0 + w1) < w0 {
            ys[0]
        } else {
            ys[1]
        };
        if k >= burn {
            sum += x;
        }
    }
    let avg = sum / n as f64;
    assert!((avg - want).abs() < 2e-3, "{avg} vs {want}");
}

#[test]
fn orbit_and_operator_correlations_agree() {
    // for 2x mod 1 and φ = ψ = x, C(n) = 2^{-n} / 12; x jumps at 0, which
    // costs the interpolated operator a few 1e-5
    let map = CircleMap::new(VelocityProfile::doubling_oracle()).unwrap();
    let (rpf, _, nt) = setup(&map, 4096);
    let phi = Observable::from_fn(&rpf.grid(), |x| x);
    let cs = correlation_sequence(&nt, &rpf.mu, &phi, &phi, 10);
    for (n, c) in cs.iter().enumerate() {
        let want = 0.5f64.powi(n as i32) / 12.0;
        let o = orbit_correlation(&map, &rpf.mu, &phi, &phi, n);
        assert!((o - want).abs() < 1e-5, "n = {n}: orbit {o} vs {want}");
        assert!((c - want).abs() < 1e-4, "n = {n}: operator {c} vs {want}");
    }
}

#[test]
fn m1_is_mixing() {
    let map = m1();
    let (rpf, _, nt) = setup(&map, 4096);
    let g = rpf.grid();
    let phi = Observable::from_fn(&g, |x| (2.0 * PI * x).cos());
    let psi = Observable::from_fn(&g, |x| x * x);
    let r = mixing_check(&nt, &rpf.mu, &phi, &psi, 60);
    assert!(r.converged, "{} > {}", r.tail_max, r.threshold);
}

#[test]
fn equilibrium_samples_are_deterministic() {
    let map = m1();
    let (rpf, _, _) = setup(&map, 512);
    let a = sample_equilibrium(&rpf.mu, 1000, 9);
    assert_eq!(a, sample_equilibrium(&rpf.mu, 1000, 9));
    assert_ne!(a, sample_equilibrium(&rpf.mu, 1000, 10));
    assert!(a.iter().all(|&x| (0.0..1.0).contains(&x)));
}

#[test]
fn m1_centered_identity_is_mixing() {
    let map = m1();
    let (rpf, _, nt) = setup(&map, 4096);
    let x = Observable::from_fn(&rpf.grid(), |x| x);
    let centered = x.shift(-equilibrium_integral(&x, &rpf.mu));
    let r = mixing_check(&nt, &rpf.mu, &centered, &centered, 60);
    assert!(r.converged, "{} > {}", r.tail_max, r.threshold);
}

#[test]
fn constants_and_fourier_pairs_mix_at_once() {
    let map = CircleMap::new(VelocityProfile::doubling_oracle()).unwrap();
    let (rpf, _, nt) = setup(&map, 1024);
    let g = rpf.grid();
    let one = Observable::constant(&g, 1.0);
    let c = Observable::from_fn(&g, |x| (2.0 * PI * x).cos());
    let s = Observable::from_fn(&g, |x| (2.0 * PI * x).sin());
    let flat = correlation_sequence(&nt, &rpf.mu, &one, &c, 10);
    assert!(flat.iter().all(|v| v.abs() < 1e-15), "{flat:?}");
    for (a, b) in [(&one, &c), (&c, &s), (&c, &c)] {
        let r = mixing_check(&nt, &rpf.mu, a, b, 2);
        assert!(r.converged && r.correlations[1].abs() < 1e-12);
    }
}

#[test]
fn m1_sample_mean_matches_equilibrium() {
    let map = m1();
    let (rpf, _, _) = setup(&map, 4096);
    let xs = sample_equilibrium(&rpf.mu, 100_000, 21);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let want = equilibrium_integral(&Observable::from_fn(&rpf.grid(), |x| x), &rpf.mu);
    assert!(
        (mean - want).abs() < 3.0 * sd / n.sqrt(),
        "{mean} vs {want}"
    );
}
