//! The DFLY ingredients `θ(n)`, `τ(n)`, a pointwise check of the DFLY
//! inequality and spectral gap estimates on centered observables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::map::{circle_dist, CircleMap};
use crate::moduli::{
    orderly_profile, seminorm, seminorm_exhaustive, CompatibilityCertificate, Modulus,
};
use crate::observable::{Grid, Observable};
use crate::transfer::{NormalizedOperator, RpfData, TransferOperator};

/// `θ(n) = χ^{-n} ‖L^n_{f − log(1+V)} 𝟙‖_∞` for `n = 0..=n_max`.
pub fn theta_sequence(map: &CircleMap, op: &TransferOperator, chi: f64, n_max: usize) -> Vec<f64> {
    let damped = op.reweighted(|y| 1.0 / (1.0 + map.velocity(y)));
    let mut v = vec![1.0; op.grid().len()];
    let mut log_scale = 0.0f64;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(1.0);
    for _ in 0..n_max {
        let mut u = damped.apply_slice(&v);
        u.iter_mut().for_each(|x| *x /= chi);
        let s = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        // keep the iterate at unit size and carry the scale in log form
        if s > 0.0 && !(1e-100..=1e100).contains(&s) {
            u.iter_mut().for_each(|x| *x /= s);
            log_scale += s.ln();
            out.push(log_scale.exp());
        } else {
            out.push((log_scale.exp()) * s);
        }
        v = u;
    }
    out
}

/// `τ(θ) = sup_d Ω(θ d) / Ω(d)` on the grid.
pub fn tau(big_omega: &Modulus, theta: f64, d_grid: &[f64]) -> f64 {
    orderly_profile(big_omega, theta, d_grid)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaLimitTable {
    /// `‖L^n_{f̃ − log(1+V)} 𝟙‖_∞` for `n = 0..=n_max`.
    pub sup_norms: Vec<f64>,
    pub strictly_decreasing: bool,
    /// First `(n, node)` where `L^n 𝟙 ≥ L^{n-1} 𝟙`.
    pub first_failure: Option<(usize, usize)>,
}

/// Verifies that `L^n_{f̃ − log(1+V)} 𝟙` decreases strictly at every node.
pub fn theta_limit_check(
    map: &CircleMap,
    normalized: &NormalizedOperator,
    n_max: usize,
) -> ThetaLimitTable {
    let damped = normalized.reweighted(|y| 1.0 / (1.0 + map.velocity(y)));
    let mut v = vec![1.0; normalized.grid().len()];
    let mut sup_norms = vec![1.0];
    let mut first_failure = None;
    for n in 1..=n_max {
        let u = damped.apply_slice(&v);
        if first_failure.is_none() {
            if let Some(i) = u.iter().zip(&v).position(|(a, b)| !(a < b)) {
                first_failure = Some((n, i));
            }
        }
        sup_norms.push(u.iter().fold(0.0f64, |a, x| a.max(x.abs())));
        v = u;
    }
    ThetaLimitTable {
        sup_norms,
        strictly_decreasing: first_failure.is_none(),
        first_failure,
    }
}

/// A named test observable.
#[derive(Debug, Clone)]
pub struct TestObservable {
    pub name: String,
    pub phi: Observable,
}

/// Observables used to probe the operator: low Fourier modes, `Ω`-cones at
/// three centers, a seeded random piecewise linear field, the lacunary
/// series `Σ_k Ω(2^{-k}) cos(2π 2^k x)` over `2^k ≤ M/8` and its top mode
/// `cos(2π 2^K x)` alone.
pub fn test_battery(grid: &Grid, big_omega: &Modulus, seed: u64) -> Vec<TestObservable> {
    use std::f64::consts::PI;
    let mut out = Vec::new();
    for k in 1..=4 {
        let w = 2.0 * PI * k as f64;
        out.push(TestObservable {
            name: format!("cos{k}"),
            phi: Observable::from_fn(grid, |x| (w * x).cos()),
        });
        out.push(TestObservable {
            name: format!("sin{k}"),
            phi: Observable::from_fn(grid, |x| (w * x).sin()),
        });
    }
    for c in [0.0, 0.37, 0.71] {
        out.push(TestObservable {
            name: format!("cone{c}"),
            phi: Observable::from_fn(grid, |x| big_omega.value(circle_dist(x, c))),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let knots: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let field = Observable::new(knots).expect("16 finite knots");
    out.push(TestObservable {
        name: "random".into(),
        phi: Observable::from_fn(grid, |x| field.interpolate(x)),
    });
    let mut k = 0u32;
    let mut terms = Vec::new();
    while (1usize << k) * 8 <= grid.len() {
        terms.push((big_omega.value(0.5f64.powi(k as i32)), (1u64 << k) as f64));
        k += 1;
    }
    let top = terms.last().map_or(1.0, |t| t.1);
    out.push(TestObservable {
        name: "lacunary".into(),
        phi: Observable::from_fn(grid, |x| {
            terms
                .iter()
                .map(|(a, f)| a * (2.0 * PI * f * x).cos())
                .sum()
        }),
    });
    out.push(TestObservable {
        name: "top".into(),
        phi: Observable::from_fn(grid, |x| (2.0 * PI * top * x).cos()),
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DflyRow {
    pub observable: String,
    pub n: usize,
    pub theta: f64,
    pub tau: f64,
    pub gamma_empirical: f64,
    pub violations: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DflyReport {
    pub n_values: Vec<usize>,
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
    pub kappa_f: f64,
    pub gamma_formula: f64,
    /// Largest empirical Γ over all observables and `n`.
    pub gamma_empirical: f64,
    pub violations: usize,
    pub pairs_tested: usize,
    /// Whether `θ` was non-increasing over the tested `n`.
    pub theta_monotone: bool,
    pub rows: Vec<DflyRow>,
}

impl DflyReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// `Γ = max{2κ e^{2κ Ω(1/2)}, ⌈max h / min h⌉}`.
pub fn formula_gamma(kappa: f64, big_omega: &Modulus, h: &Observable) -> f64 {
    let a = 2.0 * kappa * (2.0 * kappa * big_omega.value(0.5)).exp();
    let b = (h.max() / h.min()).ceil();
    a.max(b)
}

#[derive(Debug, Clone, Copy)]
pub struct DflyParams<'a> {
    pub n_list: &'a [usize],
    pub pair_budget: usize,
    pub seed: u64,
}

#[allow(clippy::too_many_arguments)]
/// Checks `|L^n φ(x) − L^n φ(y)| ≤ Γ (|φ|_Ω Ω(θ(n) d) + ‖φ‖_∞ Ω(d))` for all
/// adjacent node pairs plus `pair_budget` random pairs with `d < ϱ_1`.
pub fn dfly_check(
    map: &CircleMap,
    op: &TransferOperator,
    normalized: &NormalizedOperator,
    big_omega: &Modulus,
    rpf: &RpfData,
    certificate: &CompatibilityCertificate,
    f_seminorm: f64,
    battery: &[TestObservable],
    params: &DflyParams,
) -> DflyReport {
    let m = rpf.grid().len();
    let kappa = f_seminorm / certificate.c1;
    let gamma_formula = formula_gamma(kappa, big_omega, &rpf.h);
    let n_top = params.n_list.iter().copied().max().unwrap_or(0);
    let thetas = theta_sequence(map, op, rpf.chi, n_top);
    let d_grid = crate::moduli::default_d_grid();
    let kmax = (((certificate.rho1 * m as f64).ceil() as usize).saturating_sub(1)).clamp(1, m / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pairs: Vec<(usize, usize)> = (0..m).map(|i| (i, 1)).collect();
    pairs.extend((0..params.pair_budget).map(|_| (rng.gen_range(0..m), rng.gen_range(1..=kmax))));
    let om: Vec<f64> = (0..=kmax)
        .map(|k| big_omega.value(k as f64 / m as f64))
        .collect();

    let mut rows = Vec::new();
    for obs in battery {
        let semi = seminorm_exhaustive(&obs.phi, big_omega, m / 2).value;
        let sup = obs.phi.sup_norm();
        let mut psi = obs.phi.samples().to_vec();
        let mut done = 0;
        for &n in params.n_list {
            while done < n {
                psi = normalized.apply_slice(&psi);
                done += 1;
            }
            let theta = thetas[n];
            let om_theta: Vec<f64> = (0..=kmax)
                .map(|k| big_omega.value(theta * k as f64 / m as f64))
                .collect();
            let (gamma, violations) = pairs
                .par_iter()
                .map(|&(i, k)| {
                    let j = (i + k) % m;
                    let lhs = (psi[i] - psi[j]).abs();
                    let unit = semi * om_theta[k] + sup * om[k];
                    let g = if unit > 0.0 {
                        lhs / unit
                    } else if lhs > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    };
                    let v = usize::from(lhs > gamma_formula * unit + 1e-9);
                    (g, v)
                })
                .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
            rows.push(DflyRow {
                observable: obs.name.clone(),
                n,
                theta,
                tau: tau(big_omega, theta, &d_grid),
                gamma_empirical: gamma,
                violations,
                pairs: pairs.len(),
            });
        }
    }
    let theta: Vec<f64> = params.n_list.iter().map(|&n| thetas[n]).collect();
    let taus: Vec<f64> = theta.iter().map(|&t| tau(big_omega, t, &d_grid)).collect();
    DflyReport {
        n_values: params.n_list.to_vec(),
        theta_monotone: thetas.windows(2).all(|w| w[1] <= w[0]),
        theta,
        tau: taus,
        kappa_f: kappa,
        gamma_formula,
        gamma_empirical: rows.iter().map(|r| r.gamma_empirical).fold(0.0, f64::max),
        violations: rows.iter().map(|r| r.violations).sum(),
        pairs_tested: rows.iter().map(|r| r.pairs).sum(),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableGap {
    pub name: String,
    /// `‖L^n φ‖_Ω` for `n = 0..=n_max` (`n = 0` is 1 after normalization, or
    /// 0 for observables that vanish once centered).
    pub norms: Vec<f64>,
    pub rho: Option<f64>,
    pub r2: Option<f64>,
    pub fit_range: Option<(usize, usize)>,
    /// Whether `‖L^n φ‖_Ω ≤ 2/3` for some `n ≤ n_max`.
    pub contracted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapEstimate {
    pub rho_hat: f64,
    pub r2: f64,
    /// Observable attaining `ρ̂`.
    pub worst: String,
    pub unit_ball_contracted: bool,
    pub pass: bool,
    pub observables: Vec<ObservableGap>,
}

const GAP_PAIR_BUDGET: usize = 20_000;
const BLOWUP: f64 = 1e6;
const NORM_FLOOR: f64 = 1e-10;

/// `‖φ‖_Ω = ‖φ‖_∞ + |φ|_Ω` with the multi-scale seminorm estimate.
pub fn omega_norm(phi: &Observable, big_omega: &Modulus) -> f64 {
    phi.sup_norm() + seminorm(phi, big_omega, GAP_PAIR_BUDGET).value
}

/// Fits `log ‖L^n φ‖_Ω` against `n` after discarding the first 20% of the
/// usable range (the norms above `1e-10`).
fn fit_norms(norms: &[f64]) -> Option<(f64, f64, (usize, usize))> {
    let last = (1..norms.len())
        .take_while(|&n| norms[n] > NORM_FLOOR)
        .last()?;
    let first = ((0.2 * last as f64).ceil() as usize).max(1);
    if last < first + 2 {
        return None;
    }
    let ns: Vec<f64> = (first..=last).map(|n| n as f64).collect();
    let ys: Vec<f64> = (first..=last).map(|n| norms[n].ln()).collect();
    let f = linear_fit(&ns, &ys)?;
    Some((f.slope.exp(), f.r2, (first, last)))
}

/// Estimates the spectral radius of `L_{f̃}` on `μ`-centered observables.
pub fn gap_estimate(
    normalized: &NormalizedOperator,
    big_omega: &Modulus,
    rpf: &RpfData,
    battery: &[TestObservable],
    n_max: usize,
) -> Result<GapEstimate> {
    let mut observables = Vec::new();
    for obs in battery {
        let mean = rpf.integrate_mu(&obs.phi);
        let centered = obs.phi.shift(-mean);
        let norm0 = omega_norm(&centered, big_omega);
        let mut norms = Vec::with_capacity(n_max + 1);
        if norm0 <= NORM_FLOOR {
            norms.resize(n_max + 1, 0.0);
        } else {
            let mut psi = centered.scale(1.0 / norm0);
            norms.push(1.0);
            for n in 1..=n_max {
                psi = normalized.apply(&psi);
                let v = omega_norm(&psi, big_omega);
                if !(v <= BLOWUP) {
                    return Err(Error::SeminormBlowup {
                        observable: obs.name.clone(),
                        n,
                        norm: v,
                    });
                }
                norms.push(v);
            }
        }
        let fit = fit_norms(&norms);
        observables.push(ObservableGap {
            name: obs.name.clone(),
            contracted: norms.iter().skip(1).any(|&v| v <= 2.0 / 3.0),
            rho: fit.map(|f| f.0),
            r2: fit.map(|f| f.1),
            fit_range: fit.map(|f| f.2),
            norms,
        });
    }
    let (worst, rho_hat, r2) = observables
        .iter()
        .filter_map(|o| Some((o.name.clone(), o.rho?, o.r2?)))
        .fold((String::new(), f64::NAN, f64::NAN), |a, b| {
            if a.1.is_nan() || b.1 > a.1 {
                b
            } else {
                a
            }
        });
    let unit_ball_contracted = observables.iter().all(|o| o.contracted);
    let pass = rho_hat <= 1.0 - 1e-3 && r2 >= 0.9;
    Ok(GapEstimate {
        rho_hat,
        r2,
        worst,
        unit_ball_contracted,
        pass,
        observables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::VelocityProfile;
    use crate::transfer::{
        leading_eigendata, EigenOptions, NormalizedPotential, Potential, Stencil,
    };
    use std::sync::Arc;

    fn setup(map: &CircleMap, m: usize) -> (TransferOperator, RpfData, NormalizedOperator) {
        let zero = Potential::zero();
        let st = Arc::new(Stencil::new(map, Grid::new(m).unwrap()).unwrap());
        let op = TransferOperator::new(st, &zero);
        let rpf = leading_eigendata(map, &op, &zero, &EigenOptions::default()).unwrap();
        let nt = NormalizedPotential::new(map, &zero, &rpf)
            .unwrap()
            .operator(&op);
        (op, rpf, nt)
    }

    #[test]
    fn theta_examples() {
        let map = CircleMap::new(VelocityProfile::manneville_pomeau(1.0).unwrap()).unwrap();
        let (op, rpf, _) = setup(&map, 4096);
        let th = theta_sequence(&map, &op, rpf.chi, 20);
        assert_eq!(th[0], 1.0);
        // sup over x of (1/2) Σ 1/(1 + y_b(x)), y_b from the quadratic formula
        let oracle = (0..=100_000)
            .map(|i| {
                let x = i as f64 / 100_000.0;
                let y0 = ((1.0 + 4.0 * x).sqrt() - 1.0) / 2.0;
                let y1 = ((1.0 + 4.0 * (x + 1.0)).sqrt() - 1.0) / 2.0;
                0.5 * (1.0 / (1.0 + y0) + 1.0 / (1.0 + y1))
            })
            .fold(0.0, f64::max);
        assert!((th[1] - oracle).abs() < 1e-3, "{} vs {oracle}", th[1]);
        assert!((oracle - 0.809).abs() < 1e-3);
        assert!(th[20] < th[5]);
    }

    #[test]
    fn tau_examples() {
        let g = crate::moduli::default_d_grid();
        let p = Modulus::power(0.3).unwrap();
        assert!((tau(&p, 0.2, &g) - 0.2f64.powf(0.3)).abs() < 1e-12);
        assert!((tau(&p, 1.0, &g) - 1.0).abs() < 1e-12);
        let big_s =
            Modulus::new(crate::moduli::ModulusFamily::slowly_varying_big_omega(0.5)).unwrap();
        assert!(tau(&big_s, 0.5, &g) < 1.0);
        assert!((tau(&big_s, 1.0, &g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theta_limit_doubling() {
        let map = CircleMap::new(VelocityProfile::doubling_oracle()).unwrap();
        let (_, _, nt) = setup(&map, 256);
        let t = theta_limit_check(&map, &nt, 30);
        assert!(t.strictly_decreasing);
        assert_eq!(t.sup_norms[0], 1.0);
        assert!((t.sup_norms[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fit_norms_discards_transient() {
        let norms: Vec<f64> = (0..=40).map(|n| 0.7f64.powi(n)).collect();
        let (rho, r2, range) = fit_norms(&norms).unwrap();
        assert!((rho - 0.7).abs() < 1e-12 && r2 > 0.999_999);
        assert_eq!(range, (8, 40));
    }
}
