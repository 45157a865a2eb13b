//! Correlation decay, exponential fits, the empirical CLT and strong mixing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::map::CircleMap;
use crate::observable::{Grid, Observable};
use crate::transfer::{NormalizedOperator, Potential, RpfData};

/// `Σ_i φ(x_i) μ_i`.
pub fn equilibrium_integral(phi: &Observable, mu: &[f64]) -> f64 {
    phi.integrate(mu)
}

/// `C(n) = ∫ ψ · L^n_{f̃} φ dμ − ∫φ dμ ∫ψ dμ` for `n = 0..=n_max`, which
/// equals `∫ φ · ψ∘T^n dμ − ∫φ dμ ∫ψ dμ`.
pub fn correlation_sequence(
    normalized: &NormalizedOperator,
    mu: &[f64],
    phi: &Observable,
    psi: &Observable,
    n_max: usize,
) -> Vec<f64> {
    let mean = equilibrium_integral(phi, mu) * equilibrium_integral(psi, mu);
    let weighted: Vec<f64> = psi.samples().iter().zip(mu).map(|(a, b)| a * b).collect();
    let mut v = phi.samples().to_vec();
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        if n > 0 {
            v = normalized.apply_slice(&v);
        }
        let s: f64 = v.iter().zip(&weighted).map(|(a, b)| a * b).sum();
        out.push(s - mean);
    }
    out
}

/// `∫ φ · ψ∘T^n dμ − ∫φ dμ ∫ψ dμ` by composing `T` forward on the nodes.
pub fn orbit_correlation(
    map: &CircleMap,
    mu: &[f64],
    phi: &Observable,
    psi: &Observable,
    n: usize,
) -> f64 {
    let g = phi.grid();
    let mean = equilibrium_integral(phi, mu) * equilibrium_integral(psi, mu);
    let s: f64 = (0..g.len())
        .map(|i| {
            let mut x = g.node(i);
            for _ in 0..n {
                x = map.eval(x);
            }
            phi.samples()[i] * psi.interpolate(x) * mu[i]
        })
        .sum();
    s - mean
}

/// Twice the largest `|C(n)|` over the last 10% of the sequence, and at
/// least `1e-15 |C(0)|`.
pub fn noise_floor(c: &[f64]) -> f64 {
    let n = c.len();
    let tail = (n / 10).max(1);
    let plateau = c[n - tail..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (2.0 * plateau).max(1e-15 * c.first().map_or(0.0, |v| v.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub k: f64,
    pub rho: f64,
    pub r2: f64,
    /// First `n ≥ 1` with `|C(n)| ≤ noise_floor` (or the sequence length).
    pub floor_n: usize,
    pub points: usize,
    pub pass: bool,
}

/// Least squares of `log |C(n)|` on `n` over `1 ≤ n < floor_n`. `c[0]` is
/// `C(0)` and is not fitted.
pub fn decay_fit(c: &[f64], noise_floor: f64) -> Result<DecayFit> {
    let floor_n = (1..c.len())
        .find(|&n| !(c[n].abs() > noise_floor))
        .unwrap_or(c.len());
    let points = floor_n.saturating_sub(1);
    if points < 5 {
        return Err(Error::InsufficientSignal {
            usable: points,
            needed: 5,
        });
    }
    let ns: Vec<f64> = (1..floor_n).map(|n| n as f64).collect();
    let ys: Vec<f64> = (1..floor_n).map(|n| c[n].abs().ln()).collect();
    let f = linear_fit(&ns, &ys).ok_or(Error::InsufficientSignal {
        usable: points,
        needed: 5,
    })?;
    let rho = f.slope.exp();
    Ok(DecayFit {
        k: f.intercept.exp(),
        rho,
        r2: f.r2,
        floor_n,
        points,
        pass: rho <= 1.0 - 1e-3 && f.r2 >= 0.9,
    })
}

/// Inverse-CDF sampling of the cell density `μ_i / |c_i|`.
pub fn sample_equilibrium(mu: &[f64], count: usize, seed: u64) -> Vec<f64> {
    let cdf = cumulative(mu);
    let m = mu.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            (draw_cell(&cdf, u) as f64 + v) / m
        })
        .collect()
}

fn cumulative(mu: &[f64]) -> Vec<f64> {
    let total: f64 = mu.iter().sum();
    let mut acc = 0.0;
    mu.iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

fn draw_cell(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// How Birkhoff sums are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrbitMode {
    /// Start from `z_0 ~ μ` and pull back along pre-images chosen with
    /// probability `e^{f̃(y)}`; `(z_n, …, z_1)` is then distributed as an
    /// orbit segment `(x, …, T^{n-1} x)` with `x ~ μ`. Stable in floating
    /// point, unlike forward orbits of maps such as `2x mod 1`.
    #[default]
    Reversed,
    /// Forward iteration of `T` from `x ~ μ`.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltParams {
    pub n_orbit: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Lags used for the Green-Kubo sum.
    pub gk_n_max: usize,
    pub mode: OrbitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub n_orbit: usize,
    pub n_samples: usize,
    pub mean: f64,
    pub variance_gk: f64,
    pub gamma_gk: f64,
    pub gamma_fit: f64,
    pub gk_lags: usize,
    pub ks: f64,
    pub ratio: f64,
    pub pass: bool,
    /// `S_n(φ − ∫φ dμ)/√n` per sample.
    pub samples: Vec<f64>,
}

/// Green-Kubo variance `C(0) + 2 Σ_{1 ≤ n < floor_n} C(n)` and the lag count.
pub fn green_kubo(c: &[f64]) -> (f64, usize) {
    let floor = noise_floor(c);
    let floor_n = (1..c.len())
        .find(|&n| !(c[n].abs() > floor))
        .unwrap_or(c.len());
    let s: f64 = c[1..floor_n].iter().sum();
    (c[0] + 2.0 * s, floor_n - 1)
}

/// Kolmogorov-Smirnov distance of `samples` to `N(0, σ²)`.
pub fn ks_distance(samples: &[f64], sigma: f64) -> f64 {
    let normal = Normal::new(0.0, sigma).expect("positive scale");
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Empirical CLT for `φ` under `μ`.
pub fn clt_test(
    map: &CircleMap,
    potential: &Potential,
    normalized: &NormalizedOperator,
    rpf: &RpfData,
    phi: &Observable,
    params: &CltParams,
) -> Result<CltReport> {
    if params.n_orbit == 0 || params.n_samples < 2 {
        return Err(Error::PreconditionViolated(
            "need n_orbit ≥ 1 and n_samples ≥ 2".into(),
        ));
    }
    let mean = equilibrium_integral(phi, &rpf.mu);
    let centered = phi.shift(-mean);
    let c = correlation_sequence(normalized, &rpf.mu, &centered, &centered, params.gk_n_max);
    let (variance_gk, gk_lags) = green_kubo(&c);
    if !(variance_gk >= 1e-10) {
        return Err(Error::DegenerateVariance {
            variance: variance_gk,
        });
    }
    let cdf = cumulative(&rpf.mu);
    let m = rpf.mu.len() as f64;
    let nb = map.branch_count();
    let h = &rpf.h;
    let scale = (params.n_orbit as f64).sqrt();
    let samples = (0..params.n_samples)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(k as u64);
            let (u, v): (f64, f64) = (rng.gen(), rng.gen());
            let mut x = (draw_cell(&cdf, u) as f64 + v) / m;
            let mut sum = 0.0;
            match params.mode {
                OrbitMode::Reversed => {
                    let mut ys = vec![0.0; nb];
                    let mut ws = vec![0.0; nb];
                    for _ in 0..params.n_orbit {
                        let mut total = 0.0;
                        for b in 0..nb {
                            ys[b] = map.inverse_branch(x, b)?;
                            ws[b] = potential.eval(ys[b]).exp() * h.interpolate(ys[b]);
                            total += ws[b];
                        }
                        let mut r = rng.gen::<f64>() * total;
                        let mut pick = nb - 1;
                        for b in 0..nb {
                            if r < ws[b] {
                                pick = b;
                                break;
                            }
                            r -= ws[b];
                        }
                        x = ys[pick];
                        sum += centered.interpolate(x);
                    }
                }
                OrbitMode::Forward => {
                    for _ in 0..params.n_orbit {
                        sum += centered.interpolate(x);
                        x = map.eval(x);
                    }
                }
            }
            Ok(sum / scale)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = samples.len() as f64;
    let sample_mean = samples.iter().sum::<f64>() / n;
    let gamma_fit = (samples
        .iter()
        .map(|s| (s - sample_mean).powi(2))
        .sum::<f64>()
        / (n - 1.0))
        .sqrt();
    let gamma_gk = variance_gk.sqrt();
    let ks = ks_distance(&samples, gamma_gk);
    let ratio = gamma_gk / gamma_fit;
    Ok(CltReport {
        n_orbit: params.n_orbit,
        n_samples: params.n_samples,
        mean,
        variance_gk,
        gamma_gk,
        gamma_fit,
        gk_lags,
        ks,
        ratio,
        pass: ks < 0.05 && (0.9..=1.1).contains(&ratio),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub correlations: Vec<f64>,
    pub tail_max: f64,
    pub threshold: f64,
    pub converged: bool,
}

/// Checks that the centered correlation is below ten times the quadrature
/// noise over `n ∈ [n_max/2, n_max]`.
pub fn mixing_check(
    normalized: &NormalizedOperator,
    mu: &[f64],
    phi: &Observable,
    psi: &Observable,
    n_max: usize,
) -> MixingReport {
    let correlations = correlation_sequence(normalized, mu, phi, psi, n_max);
    let var_phi = correlation_sequence(normalized, mu, phi, phi, 0)[0].max(0.0);
    let var_psi = correlation_sequence(normalized, mu, psi, psi, 0)[0].max(0.0);
    let m = mu.len() as f64;
    let noise = ((var_phi * var_psi).sqrt() / m).max(1e-12 * phi.sup_norm() * psi.sup_norm());
    let threshold = 10.0 * noise;
    let tail_max = correlations[n_max / 2..]
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    MixingReport {
        tail_max,
        threshold,
        converged: tail_max <= threshold,
        correlations,
    }
}

/// Lebesgue cell weights, useful for synthetic checks.
pub fn uniform_weights(grid: &Grid) -> Vec<f64> {
    vec![1.0 / grid.len() as f64; grid.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_fit_examples() {
        let c: Vec<f64> = (0..=30).map(|n| 0.3 * 0.5f64.powi(n)).collect();
        let f = decay_fit(&c, 0.0).unwrap();
        assert!(
            (f.k - 0.3).abs() < 1e-10 && (f.rho - 0.5).abs() < 1e-10 && (f.r2 - 1.0).abs() < 1e-10
        );
        assert!(f.pass);

        let c: Vec<f64> = (0..=30)
            .map(|n| if n == 0 { 1.0 } else { 1.0 / n as f64 })
            .collect();
        assert!(!decay_fit(&c, 0.0).unwrap().pass);

        let c: Vec<f64> = (0..=30).map(|n| 0.3 * (-0.6f64).powi(n)).collect();
        assert!((decay_fit(&c, 0.0).unwrap().rho - 0.6).abs() < 1e-10);

        let c = vec![1.0, 0.5, 0.25, 0.0, 0.0, 0.0];
        assert!(matches!(
            decay_fit(&c, 1e-12),
            Err(Error::InsufficientSignal { .. })
        ));
    }

    #[test]
    fn sampling_examples() {
        let g = Grid::new(64).unwrap();
        let mu = uniform_weights(&g);
        let xs = sample_equilibrium(&mu, 100_000, 3);
        let mut s = xs.clone();
        s.sort_by(f64::total_cmp);
        let worst = s
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / s.len() as f64).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01);
        assert_eq!(xs, sample_equilibrium(&mu, 100_000, 3));

        let mut spike = vec![0.0; 64];
        spike[17] = 1.0;
        assert!(sample_equilibrium(&spike, 1000, 1)
            .iter()
            .all(|&x| (17.0 / 64.0..18.0 / 64.0).contains(&x)));
    }

    #[test]
    fn green_kubo_truncates_at_floor() {
        let c = vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(green_kubo(&c), (0.5, 0));
        let c: Vec<f64> = (0..100).map(|n| 0.5f64.powi(n)).collect();
        let (v, _) = green_kubo(&c);
        assert!((v - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let normal = Normal::new(0.0, 2.0).unwrap();
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        assert!(ks_distance(&xs, 2.0) <= 0.5 / n as f64 + 1e-6);
        assert!(ks_distance(&xs, 1.0) > 0.1);
    }
}
