//! The transfer operator `L_f φ(x) = Σ_{T y = x} e^{f(y)} φ(y)` on a grid.
//!
//! `L_f` is discretized matrix-free by collocation: at every node the
//! pre-images are computed once, stored in a [`Stencil`], and `φ` is
//! interpolated linearly at them. An Ulam discretization is kept as an
//! independent cross-check of `χ`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{circle_dist, CircleMap};
use crate::moduli::{Modulus, ModulusFamily};
use crate::observable::{Grid, Observable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    /// `a cos 2πx`.
    CosineScaled {
        amplitude: f64,
    },
    /// `c ω(d(x, x*))`, which has `|f|_ω = c` when `ω` is subadditive.
    ModulusCone {
        center: f64,
        scale: f64,
        modulus: ModulusFamily,
    },
    /// Samples at the cell midpoints of a grid, linearly interpolated.
    Custom {
        samples: Vec<f64>,
    },
}

/// An evaluable potential `f`.
#[derive(Debug, Clone)]
pub struct Potential {
    spec: PotentialSpec,
    modulus: Option<Modulus>,
    table: Option<Observable>,
}

impl Potential {
    pub fn new(spec: PotentialSpec) -> Result<Self> {
        let mut modulus = None;
        let mut table = None;
        match &spec {
            PotentialSpec::Zero => {}
            PotentialSpec::CosineScaled { amplitude } => {
                if !amplitude.is_finite() {
                    return Err(Error::PreconditionViolated(
                        "amplitude must be finite".into(),
                    ));
                }
            }
            PotentialSpec::ModulusCone {
                center,
                scale,
                modulus: fam,
            } => {
                if !(center.is_finite() && scale.is_finite()) {
                    return Err(Error::PreconditionViolated(
                        "cone parameters must be finite".into(),
                    ));
                }
                modulus = Some(Modulus::new(fam.clone())?);
            }
            PotentialSpec::Custom { samples } => table = Some(Observable::new(samples.clone())?),
        }
        Ok(Self {
            spec,
            modulus,
            table,
        })
    }

    pub fn zero() -> Self {
        Self::new(PotentialSpec::Zero).unwrap()
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.spec {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::CosineScaled { amplitude } => {
                amplitude * (2.0 * std::f64::consts::PI * x).cos()
            }
            PotentialSpec::ModulusCone { center, scale, .. } => {
                scale
                    * self
                        .modulus
                        .as_ref()
                        .unwrap()
                        .value(circle_dist(x, *center))
            }
            PotentialSpec::Custom { .. } => self.table.as_ref().unwrap().interpolate(x),
        }
    }

    /// `|f|_ω` when it is known in closed form for the given modulus.
    pub fn known_seminorm(&self, omega: &Modulus) -> Option<f64> {
        match &self.spec {
            PotentialSpec::Zero => Some(0.0),
            PotentialSpec::ModulusCone { scale, modulus, .. }
                if modulus == omega.family() && omega.is_subadditive() =>
            {
                Some(scale.abs())
            }
            _ => None,
        }
    }
}

/// Pre-images of every node with their interpolation coefficients.
#[derive(Debug, Clone)]
pub struct Stencil {
    grid: Grid,
    branches: usize,
    preimages: Vec<f64>,
    left: Vec<u32>,
    frac: Vec<f64>,
}

impl Stencil {
    pub fn new(map: &CircleMap, grid: Grid) -> Result<Self> {
        let n = map.branch_count();
        let rows = (0..grid.len())
            .into_par_iter()
            .map(|i| map.preimages(grid.node(i)))
            .collect::<Result<Vec<_>>>()?;
        let preimages: Vec<f64> = rows.into_iter().flatten().collect();
        let (left, frac) = preimages
            .iter()
            .map(|&y| {
                let (l, t) = grid.stencil(y);
                (l as u32, t)
            })
            .unzip();
        Ok(Self {
            grid,
            branches: n,
            preimages,
            left,
            frac,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    /// `y_{i,b}`: pre-image of node `i` on branch `b`.
    pub fn preimage(&self, i: usize, b: usize) -> f64 {
        self.preimages[i * self.branches + b]
    }

    pub fn preimages(&self) -> &[f64] {
        &self.preimages
    }

    fn interp(&self, phi: &[f64], k: usize) -> f64 {
        let l = self.left[k] as usize;
        let r = if l + 1 == phi.len() { 0 } else { l + 1 };
        let t = self.frac[k];
        (1.0 - t) * phi[l] + t * phi[r]
    }
}

/// `φ ↦ Σ_b w_{i,b} φ(y_{i,b})` with fixed positive weights.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    stencil: Arc<Stencil>,
    weights: Vec<f64>,
}

impl TransferOperator {
    /// `L_f` with weights `e^{f(y)}`.
    pub fn new(stencil: Arc<Stencil>, potential: &Potential) -> Self {
        Self::from_log_weight(stencil, |y| potential.eval(y))
    }

    /// Weights `e^{g(y)}` at the stored pre-images.
    pub fn from_log_weight(stencil: Arc<Stencil>, g: impl Fn(f64) -> f64 + Sync) -> Self {
        let weights = stencil.preimages.par_iter().map(|&y| g(y).exp()).collect();
        Self { stencil, weights }
    }

    /// Weights given per `(node, branch)`.
    pub fn from_weights(stencil: Arc<Stencil>, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), stencil.preimages.len());
        Self { stencil, weights }
    }

    pub fn stencil(&self) -> &Arc<Stencil> {
        &self.stencil
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> Grid {
        self.stencil.grid
    }

    /// Multiplies every weight by `m(y)`.
    pub fn reweighted(&self, m: impl Fn(f64) -> f64 + Sync) -> Self {
        let weights = self
            .weights
            .par_iter()
            .zip(self.stencil.preimages.par_iter())
            .map(|(w, &y)| w * m(y))
            .collect();
        Self {
            stencil: self.stencil.clone(),
            weights,
        }
    }

    pub fn apply_slice(&self, phi: &[f64]) -> Vec<f64> {
        let s = &*self.stencil;
        assert_eq!(
            phi.len(),
            s.grid.len(),
            "observable lives on a different grid"
        );
        let nb = s.branches;
        (0..s.grid.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for k in i * nb..(i + 1) * nb {
                    acc += self.weights[k] * s.interp(phi, k);
                }
                acc
            })
            .collect()
    }

    pub fn apply(&self, phi: &Observable) -> Observable {
        Observable::from_vec_unchecked(self.apply_slice(phi.samples()))
    }

    /// Transposed action `ν ↦ νA` of the collocation matrix `A`, i.e. the
    /// discrete dual operator on cell weights.
    pub fn apply_adjoint(&self, nu: &[f64]) -> Vec<f64> {
        let s = &*self.stencil;
        let m = s.grid.len();
        let nb = s.branches;
        let mut out = vec![0.0; m];
        for (i, &v) in nu.iter().enumerate() {
            for k in i * nb..(i + 1) * nb {
                let l = s.left[k] as usize;
                let r = if l + 1 == m { 0 } else { l + 1 };
                let t = s.frac[k];
                let w = v * self.weights[k];
                out[l] += w * (1.0 - t);
                out[r] += w * t;
            }
        }
        out
    }
}

/// Nonnegative Ulam matrix `U(i, j) = ∫_{c_i ∩ T^{-1} c_j} e^{f} F' dx / |c_j|`
/// with `i` the source cell and `j` the target cell. Stored by target
/// column; for `f = 0` every column sums to `N_V`.
#[derive(Debug, Clone)]
pub struct UlamMatrix {
    cells: usize,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

impl UlamMatrix {
    pub fn new(map: &CircleMap, potential: &Potential, grid: Grid) -> Result<Self> {
        let m = grid.len();
        let mf = m as f64;
        // every source cell is cut at the pre-images of the target boundaries
        let per_source = (0..m)
            .into_par_iter()
            .map(|i| -> Result<Vec<(u32, f64)>> {
                let lo = i as f64 / mf;
                let hi = (i + 1) as f64 / mf;
                let (tlo, thi) = (map.lift(lo), map.lift(hi));
                let mut out = Vec::new();
                let mut t0 = tlo;
                let mut x0 = lo;
                while t0 < thi {
                    let k = (t0 * mf).floor();
                    let t1 = ((k + 1.0) / mf).min(thi);
                    let x1 = if t1 >= thi {
                        hi
                    } else {
                        map.preimage_of_lift(t1)?
                    };
                    let x1 = if x1 < x0 { hi } else { x1 };
                    let w = potential.eval(0.5 * (x0 + x1)).exp();
                    let j = (k as i64).rem_euclid(m as i64) as u32;
                    out.push((j, w * (t1 - t0) * mf));
                    t0 = t1;
                    x0 = x1;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut counts = vec![0usize; m + 1];
        for row in &per_source {
            for &(j, _) in row {
                counts[j as usize + 1] += 1;
            }
        }
        for j in 0..m {
            counts[j + 1] += counts[j];
        }
        let nnz = counts[m];
        let mut next = counts.clone();
        let mut rows = vec![0u32; nnz];
        let mut vals = vec![0.0; nnz];
        for (i, row) in per_source.iter().enumerate() {
            for &(j, v) in row {
                let p = next[j as usize];
                rows[p] = i as u32;
                vals[p] = v;
                next[j as usize] += 1;
            }
        }
        Ok(Self {
            cells: m,
            col_ptr: counts,
            rows,
            vals,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.cells)
            .map(|j| self.vals[self.col_ptr[j]..self.col_ptr[j + 1]].iter().sum())
            .collect()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (self.col_ptr[j]..self.col_ptr[j + 1])
            .filter(|&p| self.rows[p] as usize == i)
            .map(|p| self.vals[p])
            .sum()
    }

    /// Action on functions: `(Lφ)_j = Σ_i U(i, j) φ_i`.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.cells)
            .into_par_iter()
            .map(|j| {
                (self.col_ptr[j]..self.col_ptr[j + 1])
                    .map(|p| self.vals[p] * phi[self.rows[p] as usize])
                    .sum()
            })
            .collect()
    }

    /// Action on cell masses: `(L^*ν)_i = Σ_j U(i, j) ν_j`.
    pub fn apply_dual(&self, nu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cells];
        for j in 0..self.cells {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                out[self.rows[p] as usize] += self.vals[p] * nu[j];
            }
        }
        out
    }

    /// Leading eigenvalue by power iteration on functions.
    pub fn leading_eigenvalue(&self, tol: f64, max_iter: usize) -> Result<f64> {
        let mut v = vec![1.0; self.cells];
        let mut prev = f64::NAN;
        for it in 0..max_iter {
            let u = self.apply(&v);
            let chi = sup(&u);
            let res = residual(&u, &v, chi);
            if (chi - prev).abs() < tol * chi && res < tol {
                return Ok(chi);
            }
            if it + 1 == max_iter {
                return Err(Error::NoConvergence {
                    iterations: max_iter,
                    delta: (chi - prev).abs(),
                    residual: res,
                });
            }
            prev = chi;
            v = u.iter().map(|x| x / chi).collect();
        }
        unreachable!()
    }

    /// Leading left measure, normalized to total mass 1.
    pub fn leading_measure(&self, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
        power_measure(|v| self.apply_dual(v), self.cells, tol, max_iter)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn residual(u: &[f64], v: &[f64], chi: f64) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - chi * b).abs())
        .fold(0.0, f64::max)
        / chi
}

fn power_measure(
    op: impl Fn(&[f64]) -> Vec<f64>,
    m: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut nu = vec![1.0 / m as f64; m];
    for it in 0..max_iter {
        let mut next = op(&nu);
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let diff: f64 = next.iter().zip(&nu).map(|(a, b)| (a - b).abs()).sum();
        nu = next;
        if diff < tol {
            return Ok((nu, it + 1));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        delta: f64::NAN,
        residual: f64::NAN,
    })
}

/// How the eigenmeasure `ν` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DualScheme {
    /// Left Perron vector of the collocation matrix, so that
    /// `Σ ν (Lφ) = χ Σ ν φ` holds exactly on the grid.
    #[default]
    Collocation,
    /// Left Perron vector of the Ulam matrix.
    Ulam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub dual: DualScheme,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            dual: DualScheme::Collocation,
        }
    }
}

/// Leading eigendata `(χ, h, ν, μ = hν)` of `L_f` on a grid.
#[derive(Debug, Clone)]
pub struct RpfData {
    pub chi: f64,
    pub pressure: f64,
    /// Positive eigenfunction scaled so that `Σ h ν = 1`.
    pub h: Observable,
    /// Cell weights of the eigenmeasure, summing to 1.
    pub nu: Vec<f64>,
    /// Cell weights of the equilibrium measure, summing to 1.
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub dual_iterations: usize,
    /// `‖L_f h − χ h‖_∞ / (χ ‖h‖_∞)` at the last iterate.
    pub residual: f64,
    /// Last change `|χ_k − χ_{k−1}|`.
    pub delta: f64,
    /// Aitken extrapolation of the `χ` iterates.
    pub chi_aitken: f64,
}

impl RpfData {
    /// Rebuilds eigendata from stored columns (for example a saved CSV).
    pub fn from_parts(chi: f64, h: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        let h = Observable::new(h)?;
        if let Some((index, &value)) = h.samples().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonpositiveEigenfunction { index, value });
        }
        if nu.len() != h.len() {
            return Err(Error::InvalidGrid("h and ν have different lengths".into()));
        }
        let mu = hadamard_normalized(h.samples(), &nu);
        Ok(Self {
            chi,
            pressure: chi.ln(),
            h,
            nu,
            mu,
            iterations: 0,
            dual_iterations: 0,
            residual: f64::NAN,
            delta: f64::NAN,
            chi_aitken: chi,
        })
    }

    pub fn grid(&self) -> Grid {
        self.h.grid()
    }

    pub fn integrate_mu(&self, phi: &Observable) -> f64 {
        phi.integrate(&self.mu)
    }

    pub fn integrate_nu(&self, phi: &Observable) -> f64 {
        phi.integrate(&self.nu)
    }
}

fn hadamard_normalized(h: &[f64], nu: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = h.iter().zip(nu).map(|(a, b)| a * b).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Power iteration for `(χ, h)` from `𝟙`, then the dual iteration for `ν`.
pub fn leading_eigendata(
    map: &CircleMap,
    op: &TransferOperator,
    potential: &Potential,
    opts: &EigenOptions,
) -> Result<RpfData> {
    if !(opts.tol >= 1e-12) {
        return Err(Error::PreconditionViolated(format!(
            "tolerance {} below 1e-12",
            opts.tol
        )));
    }
    let m = op.grid().len();
    let mut v = vec![1.0; m];
    let mut chis: Vec<f64> = Vec::new();
    let mut found = None;
    for it in 0..opts.max_iter {
        let u = op.apply_slice(&v);
        let chi = sup(&u);
        let res = residual(&u, &v, chi);
        let delta = chis.last().map_or(f64::INFINITY, |p| (chi - p).abs());
        chis.push(chi);
        if chis.len() > 3 {
            chis.remove(0);
        }
        if delta < opts.tol * chi && res < opts.tol {
            found = Some((chi, v, it + 1, res, delta));
            break;
        }
        if it + 1 == opts.max_iter {
            return Err(Error::NoConvergence {
                iterations: opts.max_iter,
                delta,
                residual: res,
            });
        }
        v = u.iter().map(|x| x / chi).collect();
    }
    let (chi, h, iterations, res, delta) = found.unwrap();
    if let Some((index, &value)) = h.iter().enumerate().find(|(_, x)| !(**x > 0.0)) {
        return Err(Error::NonpositiveEigenfunction { index, value });
    }
    let chi_aitken = match chis.as_slice() {
        [a, b, c] if (c - 2.0 * b + a).abs() > 0.0 => c - (c - b) * (c - b) / (c - 2.0 * b + a),
        _ => chi,
    };
    let (nu, dual_iterations) = match opts.dual {
        DualScheme::Collocation => {
            power_measure(|x| op.apply_adjoint(x), m, opts.tol, opts.max_iter)?
        }
        DualScheme::Ulam => {
            UlamMatrix::new(map, potential, op.grid())?.leading_measure(opts.tol, opts.max_iter)?
        }
    };
    let scale: f64 = h.iter().zip(&nu).map(|(a, b)| a * b).sum();
    let h: Vec<f64> = h.iter().map(|x| x / scale).collect();
    let mu = hadamard_normalized(&h, &nu);
    Ok(RpfData {
        chi,
        pressure: chi.ln(),
        h: Observable::from_vec_unchecked(h),
        nu,
        mu,
        iterations,
        dual_iterations,
        residual: res,
        delta,
        chi_aitken,
    })
}

/// `f̃ = f + log h − log h∘T − log χ` as an evaluable function, with `h`
/// interpolated on the grid.
#[derive(Debug, Clone)]
pub struct NormalizedPotential {
    map: CircleMap,
    potential: Potential,
    log_h: Observable,
    log_chi: f64,
}

impl NormalizedPotential {
    pub fn new(map: &CircleMap, potential: &Potential, rpf: &RpfData) -> Result<Self> {
        if let Some((index, &value)) = rpf
            .h
            .samples()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0))
        {
            return Err(Error::NonpositiveEigenfunction { index, value });
        }
        Ok(Self {
            map: map.clone(),
            potential: potential.clone(),
            log_h: rpf.h.map(f64::ln),
            log_chi: rpf.chi.ln(),
        })
    }

    fn h(&self, x: f64) -> f64 {
        self.log_h.interpolate(x).exp()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.potential.eval(x) + self.h(x).ln() - self.h(self.map.eval(x)).ln() - self.log_chi
    }

    /// `L_{f̃}` on the grid, realised as `φ ↦ A(hφ) / (χ h)` with `A` the
    /// collocation matrix of `L_f`. This is `L_{f̃}` up to interpolation
    /// error, and on the grid `μ = hν` is exactly its invariant measure.
    pub fn operator(&self, base: &TransferOperator) -> NormalizedOperator {
        NormalizedOperator {
            inner: base.clone(),
            h: self.log_h.samples().iter().map(|x| x.exp()).collect(),
            chi: self.log_chi.exp(),
        }
    }
}

/// The normalized operator `L_{f̃}` (or a reweighting of it) on the grid.
#[derive(Debug, Clone)]
pub struct NormalizedOperator {
    inner: TransferOperator,
    h: Vec<f64>,
    chi: f64,
}

impl NormalizedOperator {
    pub fn grid(&self) -> Grid {
        self.inner.grid()
    }

    pub fn inner(&self) -> &TransferOperator {
        &self.inner
    }

    /// The same conjugation applied to `L_f` with weights multiplied by `m(y)`,
    /// e.g. `m = 1/(1+V)` for `L_{f̃ − log(1+V)}`.
    pub fn reweighted(&self, m: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            inner: self.inner.reweighted(m),
            h: self.h.clone(),
            chi: self.chi,
        }
    }

    pub fn apply_slice(&self, phi: &[f64]) -> Vec<f64> {
        let hphi: Vec<f64> = phi.iter().zip(&self.h).map(|(a, b)| a * b).collect();
        let mut out = self.inner.apply_slice(&hphi);
        out.iter_mut()
            .zip(&self.h)
            .for_each(|(v, h)| *v /= self.chi * h);
        out
    }

    pub fn apply(&self, phi: &Observable) -> Observable {
        Observable::from_vec_unchecked(self.apply_slice(phi.samples()))
    }
}

/// `‖L_{f̃} 𝟙 − 𝟙‖_∞`.
pub fn check_normalization(normalized: &NormalizedOperator) -> f64 {
    let one = vec![1.0; normalized.grid().len()];
    normalized
        .apply_slice(&one)
        .iter()
        .fold(0.0, |a, v| a.max((v - 1.0).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeReport {
    pub holds: bool,
    /// `max log(h(x)/h(y)) − κ Ω(d(x, y))` over the tested pairs.
    pub worst_excess: f64,
    pub worst_pair: (f64, f64),
    pub pairs_tested: usize,
}

const CONE_TOL: f64 = 1e-6;

/// Checks `h(x) ≤ h(y) e^{κ Ω(d(x,y))}` for all node pairs with `d < ϱ_1`.
pub fn cone_membership(h: &Observable, kappa: f64, big_omega: &Modulus, rho1: f64) -> ConeReport {
    let g = h.grid();
    let m = g.len();
    let kmax = ((rho1 * m as f64).ceil() as usize)
        .saturating_sub(1)
        .clamp(1, m / 2);
    let log_h: Vec<f64> = h.samples().iter().map(|v| v.ln()).collect();
    let table: Vec<f64> = (0..=kmax)
        .map(|k| kappa * big_omega.value(k as f64 / m as f64))
        .collect();
    let (excess, i, j) = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, i, i);
            for k in 1..=kmax {
                let j = (i + k) % m;
                let e1 = log_h[i] - log_h[j] - table[k];
                let e2 = log_h[j] - log_h[i] - table[k];
                if e1 > best.0 {
                    best = (e1, i, j);
                }
                if e2 > best.0 {
                    best = (e2, j, i);
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, 0, 0),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            },
        );
    ConeReport {
        holds: excess <= CONE_TOL,
        worst_excess: excess,
        worst_pair: (g.node(i), g.node(j)),
        pairs_tested: m * kmax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::VelocityProfile;
    use std::f64::consts::PI;

    fn m1() -> CircleMap {
        CircleMap::new(VelocityProfile::manneville_pomeau(1.0).unwrap()).unwrap()
    }

    fn doubling() -> CircleMap {
        CircleMap::new(VelocityProfile::doubling_oracle()).unwrap()
    }

    fn operator(map: &CircleMap, m: usize, f: &Potential) -> TransferOperator {
        let st = Arc::new(Stencil::new(map, Grid::new(m).unwrap()).unwrap());
        TransferOperator::new(st, f)
    }

    #[test]
    fn apply_examples() {
        let zero = Potential::zero();
        let op = operator(&m1(), 256, &zero);
        let g = op.grid();
        let out = op.apply(&Observable::constant(&g, 1.0));
        assert!(out.samples().iter().all(|&v| v == 2.0));

        let op = operator(&doubling(), 256, &zero);
        let c = Observable::from_fn(&g, |x| (2.0 * PI * x).cos());
        assert!(op.apply(&c).sup_norm() < 1e-10);

        // node 0.5 of a grid with an even number of cells lies between nodes; use M = 2^k + offset grid check
        let map = m1();
        let st = Stencil::new(&map, Grid::new(16).unwrap()).unwrap();
        let i = 7; // node 15/32
        let x = st.grid().node(i);
        for b in 0..2 {
            let y = st.preimage(i, b);
            assert!((map.eval(y) - x).abs() < 1e-13);
        }
    }

    #[test]
    fn ulam_column_sums() {
        let zero = Potential::zero();
        let u = UlamMatrix::new(&doubling(), &zero, Grid::new(16).unwrap()).unwrap();
        assert!(u.column_sums().iter().all(|s| (s - 2.0).abs() < 1e-12));
        let u = UlamMatrix::new(&m1(), &zero, Grid::new(256).unwrap()).unwrap();
        assert!(u.column_sums().iter().all(|s| (s - 2.0).abs() < 1e-12));
        let a = UlamMatrix::new(&m1(), &zero, Grid::new(64).unwrap()).unwrap();
        let b = UlamMatrix::new(&m1(), &zero, Grid::new(128).unwrap()).unwrap();
        let (ca, cb) = (
            a.leading_eigenvalue(1e-12, 10_000).unwrap(),
            b.leading_eigenvalue(1e-12, 10_000).unwrap(),
        );
        assert!((ca - 2.0).abs() < 1e-3 && (ca - cb).abs() < 1e-3);
    }

    #[test]
    fn eigendata_f_zero() {
        let zero = Potential::zero();
        for map in [m1(), doubling()] {
            let op = operator(&map, 1024, &zero);
            let rpf = leading_eigendata(&map, &op, &zero, &EigenOptions::default()).unwrap();
            assert!((rpf.chi - 2.0).abs() < 1e-9);
            assert!(rpf.h.samples().iter().all(|v| (v - 1.0).abs() < 1e-6));
            assert!((rpf.mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let nt = NormalizedPotential::new(&map, &zero, &rpf).unwrap();
            assert!(check_normalization(&nt.operator(&op)) < 1e-12);
        }
        let map = doubling();
        let op = operator(&map, 256, &zero);
        let rpf = leading_eigendata(&map, &op, &zero, &EigenOptions::default()).unwrap();
        assert!(rpf.nu.iter().all(|w| (w - 1.0 / 256.0).abs() < 1e-12));
        let nt = NormalizedPotential::new(&map, &zero, &rpf).unwrap();
        assert!((nt.eval(0.3) + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cone_of_constant() {
        let g = Grid::new(64).unwrap();
        let h = Observable::constant(&g, 1.0);
        let r = cone_membership(&h, 0.0, &Modulus::power(0.3).unwrap(), 0.1);
        assert!(r.holds && r.worst_excess == 0.0);
    }
}
