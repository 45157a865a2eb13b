//! Moduli of continuity and the dynamical compatibility machinery.
//!
//! Closed-form families are evaluated analytically from their defining
//! formula near the origin. Most of them are only concave (or only defined)
//! on some `(0, x_c]`, so each [`Modulus`] carries a cutoff `x_c` past which
//! it continues along the tangent line at `x_c`. The continuation keeps the
//! modulus non-decreasing and, when the germ is concave, concave on all of
//! `[0, 1/2]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_fit, log_grid};
use crate::map::{circle_dist, wrap, CircleMap, VelocityProfile};
use crate::observable::Observable;

/// Upper end of the modulus domain.
pub const X_MAX: f64 = 0.5;

/// Slowly varying factor `θ` of [`ModulusFamily::PowerTimesTheta`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Theta {
    /// `θ ≡ 1`, the Hölder moduli.
    One,
    /// `θ(x) = (1 + |log x|)^e`; `e = 1` gives the locally Hölder class.
    OnePlusAbsLog { exponent: f64 },
}

/// One factor `(log^depth 1/x)^{-exponent}` of a [`ModulusFamily::LogPower`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFactor {
    pub depth: u32,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModulusFamily {
    /// `x^a`.
    Power { exponent: f64 },
    /// `x^P θ(x)`.
    PowerTimesTheta { power: f64, theta: Theta },
    /// `x^s ∏_j (log^{d_j} 1/x)^{-e_j}`, with `log^d` the `d`-fold iterated logarithm.
    LogPower { power: f64, factors: Vec<LogFactor> },
    /// `c · base(x)`.
    Scaled {
        factor: f64,
        base: Box<ModulusFamily>,
    },
    /// `x^s · base(x)`.
    PowerScaled { s: f64, base: Box<ModulusFamily> },
    /// Piecewise linear through tabulated samples; held constant past the
    /// last sample and undefined below the first positive one.
    Custom { xs: Vec<f64>, ys: Vec<f64> },
}

impl ModulusFamily {
    /// `ω_0(x) = (log^k 1/x)^{-1} (log 1/x)^{-1} (log^2 1/x)^{-2}` of the
    /// slowly varying example, times `x^s`.
    pub fn slowly_varying_omega(k: u32, s: f64) -> Self {
        let mut factors = vec![LogFactor {
            depth: k,
            exponent: 1.0,
        }];
        factors.push(LogFactor {
            depth: 1,
            exponent: 1.0,
        });
        factors.push(LogFactor {
            depth: 2,
            exponent: 2.0,
        });
        ModulusFamily::LogPower { power: s, factors }
    }

    /// `Ω_0(x) = (log^2 1/x)^{-1}`, times `x^s`.
    pub fn slowly_varying_big_omega(s: f64) -> Self {
        ModulusFamily::LogPower {
            power: s,
            factors: vec![LogFactor {
                depth: 2,
                exponent: 1.0,
            }],
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModulus(m));
        match self {
            ModulusFamily::Power { exponent } => {
                if !(exponent.is_finite() && *exponent > 0.0) {
                    return bad(format!("power exponent must be positive, got {exponent}"));
                }
            }
            ModulusFamily::PowerTimesTheta { power, theta } => {
                if !(power.is_finite() && *power > 0.0) {
                    return bad(format!("power must be positive, got {power}"));
                }
                if let Theta::OnePlusAbsLog { exponent } = theta {
                    if !exponent.is_finite() {
                        return bad("theta exponent must be finite".into());
                    }
                }
            }
            ModulusFamily::LogPower { power, factors } => {
                if !(power.is_finite() && *power >= 0.0) {
                    return bad(format!("power must be nonnegative, got {power}"));
                }
                for f in factors {
                    if f.depth == 0 || f.depth > 4 || !f.exponent.is_finite() {
                        return bad(format!("log factor {f:?} must have depth 1..=4"));
                    }
                }
                if *power == 0.0 && !factors.iter().any(|f| f.exponent > 0.0) {
                    return bad("a modulus must vanish at 0".into());
                }
            }
            ModulusFamily::Scaled { factor, base } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    return bad(format!("scale factor must be positive, got {factor}"));
                }
                base.validate()?;
            }
            ModulusFamily::PowerScaled { s, base } => {
                if !(s.is_finite() && *s > 0.0) {
                    return bad(format!("power scaling must be positive, got {s}"));
                }
                base.validate()?;
            }
            ModulusFamily::Custom { xs, ys } => {
                if xs.len() < 2 || xs.len() != ys.len() {
                    return bad("custom modulus needs at least two samples".into());
                }
                if xs.windows(2).any(|w| !(w[1] > w[0])) || xs[0] < 0.0 {
                    return bad(
                        "custom abscissae must be nonnegative and strictly increasing".into(),
                    );
                }
                if ys.windows(2).any(|w| w[1] < w[0])
                    || ys.iter().any(|y| !y.is_finite() || *y < 0.0)
                {
                    return bad(
                        "custom values must be finite, nonnegative and non-decreasing".into(),
                    );
                }
                if xs[0] == 0.0 && ys[0] != 0.0 {
                    return bad("a modulus must vanish at 0".into());
                }
            }
        }
        Ok(())
    }

    /// `(f, f', f'')` of the defining formula at `x > 0`; NaN outside its domain.
    fn raw(&self, x: f64) -> (f64, f64, f64) {
        const NAN3: (f64, f64, f64) = (f64::NAN, f64::NAN, f64::NAN);
        match self {
            ModulusFamily::Power { exponent: a } => {
                let f = x.powf(*a);
                (f, a * f / x, a * (a - 1.0) * f / (x * x))
            }
            ModulusFamily::PowerTimesTheta { power: p, theta } => match theta {
                Theta::One => ModulusFamily::Power { exponent: *p }.raw(x),
                Theta::OnePlusAbsLog { exponent: e } => {
                    let l = 1.0 + x.ln().abs();
                    let f = x.powf(*p) * l.powf(*e);
                    // on (0, 1): dl/dx = -1/x
                    let a = p - e / l;
                    let f1 = f * a / x;
                    let f2 = f / (x * x) * (a * a - a - e / (l * l));
                    (f, f1, f2)
                }
            },
            ModulusFamily::LogPower { power, factors } => {
                let depth = factors.iter().map(|f| f.depth).max().unwrap_or(0) as usize;
                let mut logs = [0.0f64; 4];
                if depth > 0 {
                    logs[0] = -x.ln();
                    for j in 1..depth {
                        if !(logs[j - 1] > 0.0) {
                            return NAN3;
                        }
                        logs[j] = logs[j - 1].ln();
                    }
                    if !(logs[depth - 1] > 0.0) {
                        return NAN3;
                    }
                }
                // P_j = L_1 ... L_j
                let mut prods = [0.0f64; 4];
                let mut acc = 1.0;
                for j in 0..depth {
                    acc *= logs[j];
                    prods[j] = acc;
                }
                let mut log_f = power * x.ln();
                let mut a = *power;
                let mut b = 0.0;
                for fac in factors {
                    let j = fac.depth as usize - 1;
                    log_f -= fac.exponent * logs[j].ln();
                    a += fac.exponent / prods[j];
                    let inner: f64 = (0..=j).map(|i| 1.0 / prods[i]).sum();
                    b += fac.exponent / prods[j] * inner;
                }
                let f = log_f.exp();
                (f, f * a / x, f / (x * x) * (a * a - a + b))
            }
            ModulusFamily::Scaled { factor, base } => {
                let (f, f1, f2) = base.raw(x);
                (factor * f, factor * f1, factor * f2)
            }
            ModulusFamily::PowerScaled { s, base } => {
                let (g, g1, g2) = base.raw(x);
                let p = x.powf(*s);
                let f = p * g;
                let f1 = s * p / x * g + p * g1;
                let f2 = s * (s - 1.0) * p / (x * x) * g + 2.0 * s * p / x * g1 + p * g2;
                (f, f1, f2)
            }
            ModulusFamily::Custom { xs, ys } => {
                if x < xs[0] {
                    return NAN3;
                }
                let n = xs.len();
                if x >= xs[n - 1] {
                    return (ys[n - 1], 0.0, 0.0);
                }
                let k = xs.partition_point(|&v| v <= x).saturating_sub(1).min(n - 2);
                let slope = (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]);
                (ys[k] + slope * (x - xs[k]), slope, 0.0)
            }
        }
    }

    fn smallest_sample(&self) -> Option<f64> {
        match self {
            ModulusFamily::Custom { xs, .. } => Some(xs[0]),
            ModulusFamily::Scaled { base, .. } | ModulusFamily::PowerScaled { base, .. } => {
                base.smallest_sample()
            }
            _ => None,
        }
    }

    fn is_tabulated(&self) -> bool {
        self.smallest_sample().is_some()
    }
}

/// Where the closed form hands over to its tangent-line continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    /// Largest `x_c ≤ 1/2` such that the formula is defined, increasing and
    /// (when its germ at 0 is concave) concave on `(0, x_c]`.
    Auto,
    /// A fixed cutoff chosen by the caller.
    At(f64),
}

/// A modulus of continuity on `[0, 1/2]`.
#[derive(Debug, Clone)]
pub struct Modulus {
    family: ModulusFamily,
    cutoff: f64,
    cut_value: f64,
    cut_slope: f64,
    concave: bool,
}

impl Modulus {
    pub fn new(family: ModulusFamily) -> Result<Self> {
        Self::with_cutoff(family, Cutoff::Auto)
    }

    pub fn power(exponent: f64) -> Result<Self> {
        Self::new(ModulusFamily::Power { exponent })
    }

    pub fn with_cutoff(family: ModulusFamily, cutoff: Cutoff) -> Result<Self> {
        family.validate()?;
        let cutoff = if family.is_tabulated() {
            X_MAX
        } else {
            match cutoff {
                Cutoff::At(x) => {
                    if !(x > 0.0 && x <= X_MAX) {
                        return Err(Error::InvalidModulus(format!(
                            "cutoff {x} outside (0, 1/2]"
                        )));
                    }
                    let (f, f1, _) = family.raw(x);
                    if !(f.is_finite() && f > 0.0 && f1.is_finite() && f1 >= 0.0) {
                        return Err(Error::InvalidModulus(format!(
                            "formula is not increasing at the cutoff {x}"
                        )));
                    }
                    x
                }
                Cutoff::Auto => auto_cutoff(&family)?,
            }
        };
        let (cut_value, cut_slope) = if family.is_tabulated() {
            (f64::NAN, 0.0)
        } else {
            let (f, f1, _) = family.raw(cutoff);
            (f, f1)
        };
        let mut m = Self {
            family,
            cutoff,
            cut_value,
            cut_slope,
            concave: false,
        };
        m.concave = m.midpoint_concave();
        Ok(m)
    }

    pub fn family(&self) -> &ModulusFamily {
        &self.family
    }

    /// The point past which the tangent-line continuation is used.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Midpoint concavity verified on a log-spaced grid at construction.
    pub fn is_concave(&self) -> bool {
        self.concave
    }

    /// `ω(x)`, NaN where a tabulated modulus has no data. Arguments past
    /// `1/2` follow the tangent continuation.
    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return if x == 0.0 { 0.0 } else { f64::NAN };
        }
        if self.family.is_tabulated() || x <= self.cutoff {
            self.family.raw(x).0
        } else {
            self.cut_value + self.cut_slope * (x - self.cutoff)
        }
    }

    /// `ω'(x)` (right continuation past the cutoff).
    pub fn derivative(&self, x: f64) -> f64 {
        if self.family.is_tabulated() || x <= self.cutoff {
            self.family.raw(x).1
        } else {
            self.cut_slope
        }
    }

    /// Checked evaluation on the modulus domain `[0, 1/2]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let min = self.family.smallest_sample().unwrap_or(0.0);
        if !(0.0..=X_MAX).contains(&x) {
            return Err(Error::DomainExceeded {
                x,
                min: 0.0,
                max: X_MAX,
            });
        }
        let v = self.value(x);
        if v.is_nan() {
            return Err(Error::DomainExceeded { x, min, max: X_MAX });
        }
        Ok(v)
    }

    /// `ω_s(x) = x^s ω(x)`. Concavity is re-tested, not assumed.
    pub fn power_scale(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidModulus(format!(
                "power scaling must be positive, got {s}"
            )));
        }
        Modulus::new(power_scale_family(&self.family, s))
    }

    /// `c ω`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Modulus::new(ModulusFamily::Scaled {
            factor: c,
            base: Box::new(self.family.clone()),
        })
    }

    fn test_grid(&self) -> Vec<f64> {
        let lo = self.family.smallest_sample().unwrap_or(0.0).max(1e-12);
        log_grid(lo, X_MAX, 400)
    }

    fn midpoint_concave(&self) -> bool {
        let g = self.test_grid();
        for step in [1usize, 4, 16, 64, 256] {
            for i in 0..g.len().saturating_sub(step) {
                let (a, b) = (g[i], g[i + step]);
                let mid = self.value(0.5 * (a + b));
                if mid < 0.5 * (self.value(a) + self.value(b)) - 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    /// Non-negative finite differences on the log test grid.
    pub fn is_nondecreasing(&self) -> bool {
        let g = self.test_grid();
        g.windows(2)
            .all(|w| self.value(w[1]) - self.value(w[0]) >= -1e-12)
    }

    /// `ω(a + b) ≤ ω(a) + ω(b)` for grid pairs with `a + b ≤ 1/2`.
    pub fn is_subadditive(&self) -> bool {
        let g = log_grid(self.test_grid()[0], 0.25, 120);
        g.iter().all(|&a| {
            g.iter()
                .filter(|&&b| a + b <= X_MAX)
                .all(|&b| self.value(a + b) <= self.value(a) + self.value(b) + 1e-12)
        })
    }
}

fn power_scale_family(f: &ModulusFamily, s: f64) -> ModulusFamily {
    match f {
        ModulusFamily::Power { exponent } => ModulusFamily::Power {
            exponent: exponent + s,
        },
        ModulusFamily::PowerTimesTheta { power, theta } => ModulusFamily::PowerTimesTheta {
            power: power + s,
            theta: *theta,
        },
        ModulusFamily::LogPower { power, factors } => ModulusFamily::LogPower {
            power: power + s,
            factors: factors.clone(),
        },
        ModulusFamily::Scaled { factor, base } => ModulusFamily::Scaled {
            factor: *factor,
            base: Box::new(power_scale_family(base, s)),
        },
        ModulusFamily::PowerScaled { s: s0, base } => ModulusFamily::PowerScaled {
            s: s0 + s,
            base: base.clone(),
        },
        ModulusFamily::Custom { .. } => ModulusFamily::PowerScaled {
            s,
            base: Box::new(f.clone()),
        },
    }
}

fn auto_cutoff(family: &ModulusFamily) -> Result<f64> {
    let full = log_grid(1e-250, X_MAX, 2500);
    // convex powers underflow to zero at the bottom of the grid
    let start = full
        .iter()
        .position(|&x| {
            let (f, f1, _) = family.raw(x);
            !(f == 0.0 || f1 == 0.0)
        })
        .unwrap_or(0);
    let grid = &full[start..];
    let (_, _, f2_0) = family.raw(grid[0]);
    let need_concave = f2_0 <= 0.0;
    let good = |x: f64| {
        let (f, f1, f2) = family.raw(x);
        f.is_finite() && f > 0.0 && f1.is_finite() && f1 > 0.0 && (!need_concave || f2 <= 0.0)
    };
    let Some(j) = grid.iter().position(|&x| !good(x)) else {
        return Ok(X_MAX);
    };
    if j == 0 {
        return Err(Error::InvalidModulus(
            "formula is not an increasing function near 0".into(),
        ));
    }
    let (mut lo, mut hi) = (grid[j - 1].ln(), grid[j].ln());
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if good(mid.exp()) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// Default `d`-grid for orderly profiles: 600 log-spaced points on `[1e-100, 1/2]`.
/// The deep end matters for log-type moduli whose profile creeps up to 1 slowly.
pub fn default_d_grid() -> Vec<f64> {
    log_grid(1e-100, X_MAX, 600)
}

/// `max_d Ω(d x) / Ω(d)` over the grid.
pub fn orderly_profile(m: &Modulus, x: f64, d_grid: &[f64]) -> f64 {
    d_grid
        .iter()
        .map(|&d| m.value(d * x) / m.value(d))
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderlyVerdict {
    pub pass: bool,
    pub concave: bool,
    /// Profile value at the smallest `x` of the sequence.
    pub plateau: f64,
    /// `(x, profile(x))` rows.
    pub table: Vec<(f64, f64)>,
}

/// `x_j = 10^{-j/4}`, `j = 0..=24`, reaching `1e-6`.
pub fn default_orderly_sequence() -> Vec<f64> {
    (0..=24).map(|j| 10f64.powf(-(j as f64) / 4.0)).collect()
}

/// PASS when `Ω` is concave, the profile is non-increasing along `x_seq` and
/// drops below 0.1 by the last point (which should reach `1e-6`).
pub fn vanishes_orderly(m: &Modulus, x_seq: &[f64]) -> OrderlyVerdict {
    let d_grid = default_d_grid();
    let table: Vec<(f64, f64)> = x_seq
        .iter()
        .map(|&x| (x, orderly_profile(m, x, &d_grid)))
        .collect();
    let plateau = table.last().map_or(f64::NAN, |r| r.1);
    let monotone = table.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12));
    let reaches = x_seq.last().is_some_and(|&x| x <= 1e-6 * (1.0 + 1e-9));
    OrderlyVerdict {
        pass: m.is_concave() && monotone && reaches && plateau < 0.1,
        concave: m.is_concave(),
        plateau,
        table,
    }
}

pub const DEFAULT_CONDITION_C: [f64; 3] = [1e-4, 1e-3, 1e-2];
/// Tail threshold of the sufficient-condition scan.
pub const CONDITION_THRESHOLD: f64 = 1e-6;
const CONDITION_TAIL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionRow {
    pub c: f64,
    /// Infimum over the tail `x ≤ 1e-3` of the grid.
    pub tail_infimum: f64,
    /// Slope of `log g` against `log x` on the tail; positive means `g → 0`.
    pub tail_log_slope: f64,
    /// `(x, g(x))` rows.
    pub table: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionScan {
    pub pass: bool,
    pub big_omega_concave: bool,
    pub omega_concave: bool,
    pub rows: Vec<ConditionRow>,
}

fn scan_rows(c_list: &[f64], g: impl Fn(f64, f64) -> f64 + Sync) -> Vec<ConditionRow> {
    c_list
        .iter()
        .map(|&c| {
            let xs = log_grid(1e-10, X_MAX / (1.0 + c), 300);
            let table: Vec<(f64, f64)> = xs.par_iter().map(|&x| (x, g(x, c))).collect();
            let tail: Vec<(f64, f64)> = table
                .iter()
                .copied()
                .filter(|r| r.0 <= CONDITION_TAIL)
                .collect();
            let tail_infimum = tail.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
            let (lx, ly): (Vec<f64>, Vec<f64>) = tail
                .iter()
                .filter(|r| r.1 > 0.0)
                .map(|r| (r.0.ln(), r.1.ln()))
                .unzip();
            let tail_log_slope = linear_fit(&lx, &ly).map_or(f64::NAN, |f| f.slope);
            ConditionRow {
                c,
                tail_infimum,
                tail_log_slope,
                table,
            }
        })
        .collect()
}

/// Scans `V(x)/ω(x) · (Ω((1+c)x) − Ω(x))` on `[1e-10, 1/(2(1+c))]`.
pub fn sufficient_condition_scan(
    v: &VelocityProfile,
    omega: &Modulus,
    big_omega: &Modulus,
    c_list: &[f64],
) -> ConditionScan {
    let rows = scan_rows(c_list, |x, c| {
        v.value(x) / omega.value(x) * (big_omega.value((1.0 + c) * x) - big_omega.value(x))
    });
    let pass = big_omega.is_concave()
        && !rows.is_empty()
        && rows.iter().all(|r| r.tail_infimum >= CONDITION_THRESHOLD);
    ConditionScan {
        pass,
        big_omega_concave: big_omega.is_concave(),
        omega_concave: omega.is_concave(),
        rows,
    }
}

/// The concavity-free variant `(Ω(x(1 + cV(x))) − Ω(x)) / ω(x)`. Not used by
/// certificates; reported for comparison.
pub fn broad_condition_scan(
    v: &VelocityProfile,
    omega: &Modulus,
    big_omega: &Modulus,
    c_list: &[f64],
) -> ConditionScan {
    let rows = scan_rows(c_list, |x, c| {
        (big_omega.value(x * (1.0 + c * v.value(x))) - big_omega.value(x)) / omega.value(x)
    });
    let pass = !rows.is_empty() && rows.iter().all(|r| r.tail_infimum >= CONDITION_THRESHOLD);
    ConditionScan {
        pass,
        big_omega_concave: big_omega.is_concave(),
        omega_concave: omega.is_concave(),
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeminormEstimate {
    pub value: f64,
    /// Node indices of the maximizing pair.
    pub pair: (usize, usize),
}

const SEMINORM_SEED: u64 = 0x5eed_0f_3e55;

/// `ω(k/M)` for separations `k = 0..=M/2`.
fn separation_table(m: &Modulus, cells: usize) -> Vec<f64> {
    (0..=cells / 2)
        .map(|k| m.value(k as f64 / cells as f64))
        .collect()
}

fn best_over(
    phi: &[f64],
    table: &[f64],
    pairs: impl IntoParallelIterator<Item = (usize, usize)>,
) -> SeminormEstimate {
    let n = phi.len();
    pairs
        .into_par_iter()
        .map(|(i, j)| {
            let k = {
                let d = i.abs_diff(j);
                d.min(n - d)
            };
            let w = table[k];
            let r = if k == 0 || !(w > 0.0) {
                0.0
            } else {
                (phi[i] - phi[j]).abs() / w
            };
            (r, i.min(j), i.max(j))
        })
        .reduce(
            || (0.0, 0, 0),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            },
        )
        .into()
}

impl From<(f64, usize, usize)> for SeminormEstimate {
    fn from(t: (f64, usize, usize)) -> Self {
        SeminormEstimate {
            value: t.0,
            pair: (t.1, t.2),
        }
    }
}

/// Multi-scale lower estimate of `|φ|_ω = sup |φ(x) − φ(y)| / ω(d(x, y))`
/// from adjacent pairs, dyadic separations and `pair_budget` random pairs.
pub fn seminorm(phi: &Observable, m: &Modulus, pair_budget: usize) -> SeminormEstimate {
    let n = phi.len();
    let table = separation_table(m, n);
    let mut seps = vec![1usize];
    let mut k = 2;
    while k <= n / 2 {
        seps.push(k);
        k *= 2;
    }
    let mut pairs: Vec<(usize, usize)> = seps
        .iter()
        .flat_map(|&k| (0..n).map(move |i| (i, (i + k) % n)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(SEMINORM_SEED);
    pairs.extend((0..pair_budget).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))));
    best_over(phi.samples(), &table, pairs)
}

/// Every pair of nodes with separation at most `max_sep` cells.
pub fn seminorm_exhaustive(phi: &Observable, m: &Modulus, max_sep: usize) -> SeminormEstimate {
    let n = phi.len();
    let table = separation_table(m, n);
    let max_sep = max_sep.clamp(1, n / 2);
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (1..=max_sep).map(move |k| (i, (i + k) % n)))
        .collect();
    best_over(phi.samples(), &table, pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateParams {
    pub depth: usize,
    /// Largest tested `d(x_0, y_0)`; defaults to `ϱ_V / 2`.
    pub trial_radius: Option<f64>,
    /// Smallest tested separation.
    pub min_separation: f64,
    /// Number of log-spaced separations.
    pub separations: usize,
    /// Random base points on top of the deterministic ones near 0, 1 and the `a_i`.
    pub random_points: usize,
    /// Branch words per pair when the tree of depth `depth` is larger than this.
    pub max_sequences: usize,
    pub seed: u64,
}

impl Default for CertificateParams {
    fn default() -> Self {
        Self {
            depth: 5,
            trial_radius: None,
            min_separation: 1e-6,
            separations: 12,
            random_points: 64,
            max_sequences: 4096,
            seed: 7,
        }
    }
}

/// An empirical, depth-limited witness of the compatibility inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompatibilityCertificate {
    /// `ϱ_1`: the trial radius.
    pub rho1: f64,
    pub c1: f64,
    pub depth_tested: usize,
    pub pairs_tested: usize,
    pub sequences_tested: usize,
    /// `min (Ω(d_0) − Ω(d_k) − C_1 Σ_{j≤k} ω(d_j))` over everything tested.
    pub margin: f64,
    /// Pair and depth attaining the smallest ratio.
    pub worst_pair: (f64, f64),
    pub worst_depth: usize,
}

#[derive(Debug, Clone, Copy)]
struct PairStats {
    min_ratio: f64,
    worst_depth: usize,
    min_margin: f64,
    nonpositive: Option<usize>,
    sequences: usize,
}

fn certificate_pairs(map: &CircleMap, radius: f64, params: &CertificateParams) -> Vec<(f64, f64)> {
    let mut bases = Vec::new();
    for k in 1..=8 {
        let e = 10f64.powi(-k);
        bases.push(e);
        bases.push(1.0 - e);
        for &a in &map.branch_endpoints()[1..map.branch_count()] {
            bases.push(a + e);
            bases.push(a - e);
        }
    }
    bases.push(0.0);
    bases.extend_from_slice(&map.branch_endpoints()[1..map.branch_count()]);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    bases.extend((0..params.random_points).map(|_| rng.gen::<f64>()));
    let lo = params.min_separation.min(radius * 0.5);
    let seps = log_grid(lo, radius * (1.0 - 1e-9), params.separations.max(2));
    let mut pairs = Vec::with_capacity(bases.len() * seps.len() * 2);
    for &x in &bases {
        for &d in &seps {
            pairs.push((x, wrap(x + d)));
            pairs.push((x, wrap(x - d)));
        }
    }
    pairs
}

fn branch_words(
    map: &CircleMap,
    depth: usize,
    params: &CertificateParams,
    salt: u64,
) -> Option<Vec<Vec<usize>>> {
    let n = map.branch_count();
    let total = (n as f64).powi(depth as i32);
    if total <= params.max_sequences as f64 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    Some(
        (0..params.max_sequences)
            .map(|_| (0..depth).map(|_| rng.gen_range(0..n)).collect())
            .collect(),
    )
}

#[allow(clippy::too_many_arguments)]
fn walk(
    map: &CircleMap,
    omega: &Modulus,
    big_omega: &Modulus,
    c1: f64,
    omega_d0: f64,
    depth: usize,
    level: usize,
    x: f64,
    y: f64,
    sum: f64,
    stats: &mut PairStats,
) -> Result<()> {
    if level == depth {
        stats.sequences += 1;
        return Ok(());
    }
    for b in 0..map.branch_count() {
        let (xn, yn) = map.paired_step(x, y, b)?;
        visit(
            map,
            omega,
            big_omega,
            c1,
            omega_d0,
            depth,
            level + 1,
            xn,
            yn,
            sum,
            stats,
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn visit(
    map: &CircleMap,
    omega: &Modulus,
    big_omega: &Modulus,
    c1: f64,
    omega_d0: f64,
    depth: usize,
    level: usize,
    x: f64,
    y: f64,
    sum: f64,
    stats: &mut PairStats,
) -> Result<()> {
    let d = circle_dist(x, y);
    let sum = sum + omega.value(d);
    let r = omega_d0 - big_omega.value(d);
    if sum > 0.0 {
        if r <= 0.0 && stats.nonpositive.is_none() {
            stats.nonpositive = Some(level);
        }
        let ratio = r / sum;
        if ratio < stats.min_ratio {
            stats.min_ratio = ratio;
            stats.worst_depth = level;
        }
        stats.min_margin = stats.min_margin.min(r - c1 * sum);
    }
    walk(
        map, omega, big_omega, c1, omega_d0, depth, level, x, y, sum, stats,
    )
}

fn pair_stats(
    map: &CircleMap,
    omega: &Modulus,
    big_omega: &Modulus,
    c1: f64,
    depth: usize,
    params: &CertificateParams,
    index: usize,
    (x0, y0): (f64, f64),
) -> Result<PairStats> {
    let mut stats = PairStats {
        min_ratio: f64::INFINITY,
        worst_depth: 0,
        min_margin: f64::INFINITY,
        nonpositive: None,
        sequences: 0,
    };
    let omega_d0 = big_omega.value(circle_dist(x0, y0));
    match branch_words(map, depth, params, index as u64) {
        None => walk(
            map, omega, big_omega, c1, omega_d0, depth, 0, x0, y0, 0.0, &mut stats,
        )?,
        Some(words) => {
            for w in words {
                let orbit = map.paired_preorbit(x0, y0, &w)?;
                let mut sum = 0.0;
                let mut one = PairStats {
                    sequences: 0,
                    ..stats
                };
                for (k, &(x, y)) in orbit.pairs.iter().enumerate().skip(1) {
                    let d = circle_dist(x, y);
                    sum += omega.value(d);
                    let r = omega_d0 - big_omega.value(d);
                    if sum > 0.0 {
                        if r <= 0.0 && one.nonpositive.is_none() {
                            one.nonpositive = Some(k);
                        }
                        if r / sum < one.min_ratio {
                            one.min_ratio = r / sum;
                            one.worst_depth = k;
                        }
                        one.min_margin = one.min_margin.min(r - c1 * sum);
                    }
                }
                stats = PairStats {
                    sequences: stats.sequences + 1,
                    ..one
                };
            }
        }
    }
    Ok(stats)
}

fn scan_pairs(
    map: &CircleMap,
    omega: &Modulus,
    big_omega: &Modulus,
    c1: f64,
    depth: usize,
    radius: f64,
    params: &CertificateParams,
) -> Result<(Vec<(f64, f64)>, Vec<PairStats>)> {
    if depth == 0 {
        return Err(Error::PreconditionViolated(
            "certificate depth must be at least 1".into(),
        ));
    }
    if !(radius > 0.0 && radius < map.expansion_radius()) {
        return Err(Error::PreconditionViolated(format!(
            "trial radius {radius} must lie in (0, ϱ_V = {})",
            map.expansion_radius()
        )));
    }
    let pairs = certificate_pairs(map, radius, params);
    let stats = pairs
        .par_iter()
        .enumerate()
        .map(|(i, &p)| pair_stats(map, omega, big_omega, c1, depth, params, i, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((pairs, stats))
}

/// Largest `C_1` (up to a `1 - 1e-9` safety factor) for which the
/// compatibility inequality holds on every tested pair, branch word and
/// `k ≤ depth`.
pub fn compatibility_certificate(
    map: &CircleMap,
    omega: &Modulus,
    big_omega: &Modulus,
    params: &CertificateParams,
) -> Result<CompatibilityCertificate> {
    let radius = params.trial_radius.unwrap_or(0.5 * map.expansion_radius());
    let (pairs, stats) = scan_pairs(map, omega, big_omega, 0.0, params.depth, radius, params)?;
    let mut worst = (f64::INFINITY, 0usize, 0usize);
    for (i, s) in stats.iter().enumerate() {
        if let Some(depth) = s.nonpositive {
            let (x0, y0) = pairs[i];
            return Err(Error::CertificateFailed {
                c1: 0.0,
                x0,
                y0,
                depth,
            });
        }
        if s.min_ratio < worst.0 {
            worst = (s.min_ratio, i, s.worst_depth);
        }
    }
    let c1 = worst.0 * (1.0 - 1e-9);
    let (x0, y0) = pairs[worst.1];
    if !(c1 >= 1e-8) {
        return Err(Error::CertificateFailed {
            c1,
            x0,
            y0,
            depth: worst.2,
        });
    }
    let margin = certificate_margin(map, omega, big_omega, c1, params.depth, radius, params)?;
    Ok(CompatibilityCertificate {
        rho1: radius,
        c1,
        depth_tested: params.depth,
        pairs_tested: pairs.len(),
        sequences_tested: stats.iter().map(|s| s.sequences).sum(),
        margin,
        worst_pair: (x0, y0),
        worst_depth: worst.2,
    })
}

/// Re-runs the certificate sampling with a fixed `C_1` and returns the
/// smallest slack of the inequality.
pub fn certificate_margin(
    map: &CircleMap,
    omega: &Modulus,
    big_omega: &Modulus,
    c1: f64,
    depth: usize,
    radius: f64,
    params: &CertificateParams,
) -> Result<f64> {
    let (_, stats) = scan_pairs(map, omega, big_omega, c1, depth, radius, params)?;
    Ok(stats
        .iter()
        .map(|s| s.min_margin)
        .fold(f64::INFINITY, f64::min))
}
