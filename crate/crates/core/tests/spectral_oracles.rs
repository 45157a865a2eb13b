use std::sync::Arc;

use ispec_core::moduli::{default_d_grid, seminorm, seminorm_exhaustive, ModulusFamily};
use ispec_core::spectral::{gap_estimate, tau, test_battery, theta_limit_check, theta_sequence};
use ispec_core::transfer::{leading_eigendata, EigenOptions, NormalizedPotential, Stencil};
use ispec_core::{
    CircleMap, Grid, Modulus, Observable, Potential, TransferOperator, VelocityProfile,
};

fn setup(
    map: &CircleMap,
    m: usize,
) -> (
    TransferOperator,
    ispec_core::RpfData,
    ispec_core::transfer::NormalizedOperator,
) {
    let f = Potential::zero();
    let op = TransferOperator::new(
        Arc::new(Stencil::new(map, Grid::new(m).unwrap()).unwrap()),
        &f,
    );
    let rpf = leading_eigendata(map, &op, &f, &EigenOptions::default()).unwrap();
    let nt = NormalizedPotential::new(map, &f, &rpf)
        .unwrap()
        .operator(&op);
    (op, rpf, nt)
}

#[test]
fn doubling_gap_is_one_over_root_two() {
    let map = CircleMap::new(VelocityProfile::doubling_oracle()).unwrap();
    let (_, rpf, nt) = setup(&map, 4096);
    let big_omega = Modulus::power(0.5).unwrap();
    let battery = test_battery(&rpf.grid(), &big_omega, 17);
    let gap = gap_estimate(&nt, &big_omega, &rpf, &battery, 60).unwrap();
    assert!(
        (gap.rho_hat - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.05,
        "{gap:?}"
    );
    assert!(gap.r2 >= 0.9);
}

#[test]
fn theta_on_m1() {
    let map = CircleMap::new(VelocityProfile::manneville_pomeau(1.0).unwrap()).unwrap();
    let (op, rpf, nt) = setup(&map, 4096);
    let th = theta_sequence(&map, &op, rpf.chi, 20);
    assert!((th[1] - 0.809).abs() < 1e-3, "{}", th[1]);
    assert!(th[20] < th[5]);
    let t = theta_limit_check(&map, &nt, 30);
    assert!(t.strictly_decreasing, "{:?}", t.first_failure);
}

#[test]
fn tau_is_homogeneous_for_powers() {
    let g = default_d_grid();
    for p in [0.1, 0.3, 0.5, 0.9] {
        let m = Modulus::power(p).unwrap();
        for th in [0.01, 0.2, 0.7] {
            assert!((tau(&m, th, &g) - th.powf(p)).abs() < 1e-12);
        }
    }
    // monotone in θ for a slowly varying Ω
    let s = Modulus::new(ModulusFamily::slowly_varying_big_omega(0.5)).unwrap();
    let ts: Vec<f64> = [0.05, 0.1, 0.3, 0.6, 1.0]
        .iter()
        .map(|&t| tau(&s, t, &g))
        .collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]), "{ts:?}");
}

#[test]
fn constants_have_zero_seminorm() {
    let map = CircleMap::new(VelocityProfile::manneville_pomeau(0.5).unwrap()).unwrap();
    let (_, rpf, nt) = setup(&map, 1024);
    let big_omega = Modulus::power(0.3).unwrap();
    let one = Observable::constant(&rpf.grid(), 1.0);
    assert_eq!(seminorm(&one, &big_omega, 5000).value, 0.0);
    assert_eq!(seminorm_exhaustive(&one, &big_omega, 512).value, 0.0);
    let mut v = one;
    for _ in 0..10 {
        v = nt.apply(&v);
    }
    assert!(seminorm_exhaustive(&v, &big_omega, 512).value < 1e-9);
}

#[test]
fn doubling_dfly_within_formula_gamma() {
    use ispec_core::moduli::{compatibility_certificate, CertificateParams};
    use ispec_core::spectral::{dfly_check, DflyParams, TestObservable};
    let map = CircleMap::new(VelocityProfile::doubling_oracle()).unwrap();
    let (op, rpf, nt) = setup(&map, 1024);
    let omega = Modulus::power(0.8).unwrap();
    let big_omega = Modulus::power(0.5).unwrap();
    let cert =
        compatibility_certificate(&map, &omega, &big_omega, &CertificateParams::default()).unwrap();
    let g = rpf.grid();
    let battery = vec![
        TestObservable {
            name: "cos1".into(),
            phi: Observable::from_fn(&g, |x| (2.0 * std::f64::consts::PI * x).cos()),
        },
        TestObservable {
            name: "one".into(),
            phi: Observable::constant(&g, 1.0),
        },
    ];
    let params = DflyParams {
        n_list: &[3],
        pair_budget: 10_000,
        seed: 3,
    };
    let r = dfly_check(
        &map, &op, &nt, &big_omega, &rpf, &cert, 0.0, &battery, &params,
    );
    assert_eq!(r.violations, 0);
    assert!(
        r.gamma_empirical <= r.gamma_formula,
        "{} > {}",
        r.gamma_empirical,
        r.gamma_formula
    );
    let one = r.rows.iter().find(|row| row.observable == "one").unwrap();
    assert!(one.gamma_empirical < 1e-9);
    assert!(r.rows.iter().all(|row| row.pairs >= 10_000));
}

#[test]
fn m1_eigenfunction_is_in_the_flat_cone() {
    use ispec_core::transfer::cone_membership;
    let map = CircleMap::new(VelocityProfile::manneville_pomeau(1.0).unwrap()).unwrap();
    let (_, rpf, _) = setup(&map, 4096);
    assert!((rpf.pressure - 2f64.ln()).abs() < 1e-9);
    let r = cone_membership(&rpf.h, 0.0, &Modulus::power(0.3).unwrap(), 0.1);
    assert!(r.worst_excess < 1e-6, "{}", r.worst_excess);
}
