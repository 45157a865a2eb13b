//! Circle maps `T(x) = x(1 + V(x)) mod 1` with an indifferent fixed point at 0.
//!
//! The lift `F(x) = x(1 + V(x))` is strictly increasing from `F(0) = 0` to
//! `F(1) = 1 + V(1) = N_V`, so every inverse branch is a monotone root-finding
//! problem on a known bracket.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual bound `|F(y) - target|` accepted from the inverse-branch solver.
pub const INVERSE_TOL: f64 = 1e-13;
/// Residual bound used when locating the branch endpoints.
pub const ENDPOINT_TOL: f64 = 1e-14;
const MAX_SOLVER_ITER: usize = 400;
const RADIUS_CAP: f64 = 0.49;

/// Shape of the slowly varying factor for [`ProfileFamily::PowerTimesLog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogVariant {
    /// `V(x) = V(1) x^σ`.
    Pure,
    /// `V(x) = V(1) x^σ / log(e/x)`.
    InverseLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProfileFamily {
    /// `V(x) = x^q`, the Manneville-Pomeau maps `M_q`.
    MannevillePomeau { q: f64 },
    /// `V(x) ~ A_k / log^k(1/x)` near the origin, regularly varying of index 0.
    ///
    /// Realised on all of `[0, 1]` as `V(1) (w g_k(x) + (1 - w) x)` with
    /// `w = A_k / V(1)` and `g_k(x) = 1 / log^k(E_k / x)`, where `E_k` is the
    /// exponential tower making `log^k(E_k) = 1`.
    SlowlyVarying { k: u32, amplitude: f64 },
    /// `V(x) = x^σ L(x)` with `σ ∈ [0, 1)`.
    PowerTimesLog { sigma: f64, variant: LogVariant },
    /// Monotone tabulated samples on `[0, 1]`, joined by a monotone cubic.
    Custom { xs: Vec<f64>, vs: Vec<f64> },
}

/// The velocity function `V` driving the map.
#[derive(Debug, Clone)]
pub struct VelocityProfile {
    family: ProfileFamily,
    v1: u32,
    allow_flat: bool,
    table: Option<MonotoneCubic>,
}

impl VelocityProfile {
    /// Builds and validates a profile. `v1` is the integer value `V(1)`;
    /// Manneville-Pomeau maps require `v1 = 1` and custom tables must end at `v1`.
    pub fn new(family: ProfileFamily, v1: u32, allow_flat: bool) -> Result<Self> {
        if v1 == 0 {
            return Err(Error::InvalidProfile(
                "V(1) must be a positive integer".into(),
            ));
        }
        let mut table = None;
        match &family {
            ProfileFamily::MannevillePomeau { q } => {
                if !(q.is_finite() && *q > 0.0) {
                    return Err(Error::InvalidProfile(format!(
                        "q must be positive, got {q}"
                    )));
                }
                if v1 != 1 {
                    return Err(Error::InvalidProfile(
                        "Manneville-Pomeau maps have V(1) = 1".into(),
                    ));
                }
            }
            ProfileFamily::SlowlyVarying { k, amplitude } => {
                if !(1..=4).contains(k) {
                    return Err(Error::InvalidProfile(format!(
                        "log depth k must be in 1..=4, got {k}"
                    )));
                }
                if !(amplitude.is_finite() && *amplitude > 0.0 && *amplitude <= v1 as f64) {
                    return Err(Error::InvalidProfile(format!(
                        "amplitude must lie in (0, V(1)] = (0, {v1}], got {amplitude}"
                    )));
                }
            }
            ProfileFamily::PowerTimesLog { sigma, variant } => {
                if !(sigma.is_finite() && (0.0..1.0).contains(sigma)) {
                    return Err(Error::InvalidProfile(format!(
                        "sigma must lie in [0, 1), got {sigma}"
                    )));
                }
                if *variant == LogVariant::Pure && *sigma == 0.0 && !allow_flat {
                    return Err(Error::InvalidProfile(
                        "x^0 is constant; set allow_flat to use it as an oracle".into(),
                    ));
                }
            }
            ProfileFamily::Custom { xs, vs } => {
                let t = MonotoneCubic::new(xs.clone(), vs.clone())?;
                if xs[0] != 0.0 || *xs.last().unwrap() != 1.0 {
                    return Err(Error::InvalidProfile(
                        "custom samples must span [0, 1]".into(),
                    ));
                }
                if vs[0] < 0.0 {
                    return Err(Error::InvalidProfile("V must be nonnegative".into()));
                }
                let last = *vs.last().unwrap();
                if (last - v1 as f64).abs() > 1e-9 {
                    return Err(Error::InvalidProfile(format!(
                        "custom table ends at V(1) = {last}, expected the integer {v1}"
                    )));
                }
                if !allow_flat && vs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidProfile(
                        "custom samples must be strictly increasing unless allow_flat is set"
                            .into(),
                    ));
                }
                table = Some(t);
            }
        }
        Ok(Self {
            family,
            v1,
            allow_flat,
            table,
        })
    }

    /// `M_q`: `V(x) = x^q`.
    pub fn manneville_pomeau(q: f64) -> Result<Self> {
        Self::new(ProfileFamily::MannevillePomeau { q }, 1, false)
    }

    /// `V ≡ 1`, the doubling map. Outside the strict hypotheses; used as an
    /// analytic oracle.
    pub fn doubling_oracle() -> Self {
        Self::new(
            ProfileFamily::Custom {
                xs: vec![0.0, 1.0],
                vs: vec![1.0, 1.0],
            },
            1,
            true,
        )
        .expect("constant profile is valid")
    }

    pub fn family(&self) -> &ProfileFamily {
        &self.family
    }

    pub fn v1(&self) -> u32 {
        self.v1
    }

    pub fn allow_flat(&self) -> bool {
        self.allow_flat
    }

    /// Regular-variation index σ, when it is known in closed form.
    pub fn regular_variation_index(&self) -> Option<f64> {
        match &self.family {
            ProfileFamily::MannevillePomeau { q } => Some(*q),
            ProfileFamily::SlowlyVarying { .. } => Some(0.0),
            ProfileFamily::PowerTimesLog { sigma, .. } => Some(*sigma),
            ProfileFamily::Custom { .. } => None,
        }
    }

    /// `V(x)` for `x ∈ [0, 1]` (arguments are clamped to that interval).
    pub fn value(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let v1 = self.v1 as f64;
        match &self.family {
            ProfileFamily::MannevillePomeau { q } => x.powf(*q),
            ProfileFamily::SlowlyVarying { k, amplitude } => {
                let w = amplitude / v1;
                v1 * (w * slowly_varying_core(*k, x) + (1.0 - w) * x)
            }
            ProfileFamily::PowerTimesLog { sigma, variant } => match variant {
                LogVariant::Pure => v1 * x.powf(*sigma),
                LogVariant::InverseLog => {
                    if x == 0.0 {
                        0.0
                    } else {
                        v1 * x.powf(*sigma) / (1.0 - x.ln())
                    }
                }
            },
            ProfileFamily::Custom { .. } => self.table.as_ref().unwrap().value(x),
        }
    }

    /// `x V'(x)`, finite even where `V'` itself blows up at the origin.
    pub fn x_dv(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        if x == 0.0 {
            return 0.0;
        }
        let v1 = self.v1 as f64;
        match &self.family {
            ProfileFamily::MannevillePomeau { q } => q * x.powf(*q),
            ProfileFamily::SlowlyVarying { k, amplitude } => {
                let w = amplitude / v1;
                v1 * (w * slowly_varying_x_dg(*k, x) + (1.0 - w) * x)
            }
            ProfileFamily::PowerTimesLog { sigma, variant } => match variant {
                LogVariant::Pure => sigma * v1 * x.powf(*sigma),
                LogVariant::InverseLog => {
                    let u = 1.0 - x.ln();
                    v1 * x.powf(*sigma) / u * (sigma + 1.0 / u)
                }
            },
            ProfileFamily::Custom { .. } => x * self.table.as_ref().unwrap().derivative(x),
        }
    }
}

/// Tower `E_k` with `log^k(E_k) = 1`.
fn log_tower(k: u32) -> f64 {
    let mut e = 1.0f64;
    for _ in 0..k {
        e = e.exp();
    }
    e
}

/// Iterated logarithms `u_1 = log(E_k / x)`, `u_j = log(u_{j-1})`.
fn iterated_logs(k: u32, x: f64) -> [f64; 4] {
    let mut u = [0.0; 4];
    // log(E_k / x) = log(E_k) - log(x), with log(E_k) = E_{k-1}
    u[0] = log_tower(k - 1) - x.ln();
    for j in 1..k as usize {
        u[j] = u[j - 1].ln();
    }
    u
}

fn slowly_varying_core(k: u32, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let u = iterated_logs(k, x);
    1.0 / u[k as usize - 1]
}

fn slowly_varying_x_dg(k: u32, x: f64) -> f64 {
    let u = iterated_logs(k, x);
    let g = 1.0 / u[k as usize - 1];
    let prod: f64 = u[..k as usize - 1].iter().product();
    g * g / prod
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Butland slopes).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::InvalidProfile(
                "need at least two samples with matching lengths".into(),
            ));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidProfile(
                "sample abscissae must be strictly increasing".into(),
            ));
        }
        if ys.windows(2).any(|w| w[1] < w[0]) || ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidProfile(
                "samples must be finite and non-decreasing".into(),
            ));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut ds = vec![0.0; n];
        ds[0] = delta[0];
        ds[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            let (d0, d1) = (delta[i - 1], delta[i]);
            if d0 * d1 <= 0.0 {
                ds[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                ds[i] = (w1 + w2) / (w1 / d0 + w2 / d1);
            }
        }
        Ok(Self { xs, ys, ds })
    }

    fn locate(&self, x: f64) -> usize {
        let n = self.xs.len();
        let k = self.xs.partition_point(|&xi| xi <= x);
        k.saturating_sub(1).min(n - 2)
    }

    pub fn value(&self, x: f64) -> f64 {
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = ((x - self.xs[i]) / h).clamp(0.0, 1.0);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.ds[i] + h01 * self.ys[i + 1] + h11 * h * self.ds[i + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = ((x - self.xs[i]) / h).clamp(0.0, 1.0);
        let t2 = t * t;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        (d00 * self.ys[i] + d01 * self.ys[i + 1]) / h + d10 * self.ds[i] + d11 * self.ds[i + 1]
    }
}

/// Reduces a real number to the circle coordinate `[0, 1)`.
pub fn wrap(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Standard circle metric `min{|x-y|, |x-y±1|}`.
pub fn circle_dist(x: f64, y: f64) -> f64 {
    let d = (x - y).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

/// `y - x` reduced to `[-1/2, 1/2)`.
pub fn signed_displacement(x: f64, y: f64) -> f64 {
    let mut s = (y - x).rem_euclid(1.0);
    if s >= 0.5 {
        s -= 1.0;
    }
    s
}

/// Pairs of pre-images `T(x_{j+1}) = x_j`, `T(y_{j+1}) = y_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedPreorbit {
    /// `(x_j, y_j)` for `j = 0..=depth`.
    pub pairs: Vec<(f64, f64)>,
    /// Lift branch used at each step; both points of a pair follow the same
    /// continuous inverse branch of the lift.
    pub branches: Vec<usize>,
}

impl PairedPreorbit {
    pub fn depth(&self) -> usize {
        self.branches.len()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.pairs.iter().map(|&(x, y)| circle_dist(x, y)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionCheck {
    pub holds: bool,
    /// `d(Tx, Ty) - d(x, y)(1 + λ_V(x, y))`.
    pub slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// The map `T` together with its branch structure and expansion radius `ϱ_V`.
#[derive(Debug, Clone)]
pub struct CircleMap {
    profile: VelocityProfile,
    branch_count: usize,
    endpoints: Vec<f64>,
    expansion_radius: f64,
}

impl CircleMap {
    pub fn new(profile: VelocityProfile) -> Result<Self> {
        let branch_count = 1 + profile.v1() as usize;
        let mut map = Self {
            profile,
            branch_count,
            endpoints: Vec::new(),
            expansion_radius: 0.0,
        };
        let mut endpoints = vec![0.0];
        for i in 1..branch_count {
            endpoints.push(map.solve_lift(i as f64, 0.0, 1.0, ENDPOINT_TOL)?);
        }
        endpoints.push(1.0);
        if endpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidProfile(
                "branch endpoints are not increasing".into(),
            ));
        }
        map.endpoints = endpoints;
        map.expansion_radius = map.search_expansion_radius()?;
        Ok(map)
    }

    pub fn profile(&self) -> &VelocityProfile {
        &self.profile
    }

    /// `N_V = 1 + V(1)`.
    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    /// `ϱ_V`.
    pub fn expansion_radius(&self) -> f64 {
        self.expansion_radius
    }

    /// `a_0 = 0 < a_1 < ... < a_{N_V} = 1` with `F(a_i) = i`.
    pub fn branch_endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    pub fn velocity(&self, x: f64) -> f64 {
        self.profile.value(x)
    }

    /// `F(x) = x (1 + V(x))` on `[0, 1]`.
    pub fn lift(&self, x: f64) -> f64 {
        x * (1.0 + self.profile.value(x))
    }

    /// `F'(x) = 1 + V(x) + x V'(x)`.
    pub fn lift_derivative(&self, x: f64) -> f64 {
        1.0 + self.profile.value(x) + self.profile.x_dv(x)
    }

    /// `T(x) = x(1 + V(x)) mod 1`.
    pub fn eval(&self, x: f64) -> f64 {
        wrap(self.lift(x))
    }

    /// Solves `F(y) = target` on `[lo, hi]` with Newton steps safeguarded by
    /// bisection.
    fn solve_lift(&self, target: f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
        let (mut a, mut b) = (lo, hi);
        let fa = self.lift(a) - target;
        let fb = self.lift(b) - target;
        if fa >= 0.0 {
            if fa <= tol {
                return Ok(a);
            }
            return Err(Error::RootNotBracketed {
                lo,
                hi,
                f_lo: fa + target,
                f_hi: fb + target,
                target,
            });
        }
        if fb <= 0.0 {
            if -fb <= tol {
                return Ok(b);
            }
            return Err(Error::RootNotBracketed {
                lo,
                hi,
                f_lo: fa + target,
                f_hi: fb + target,
                target,
            });
        }
        let mut y = a + (b - a) * (-fa) / (fb - fa);
        let mut dx_old = b - a;
        let mut dx = dx_old;
        let mut r = self.lift(y) - target;
        let mut d = self.lift_derivative(y);
        for _ in 0..MAX_SOLVER_ITER {
            if r == 0.0 {
                return Ok(y);
            }
            if r < 0.0 {
                a = y;
            } else {
                b = y;
            }
            let newton_ok = d.is_finite()
                && d > 0.0
                && ((y - b) * d - r) * ((y - a) * d - r) < 0.0
                && (2.0 * r).abs() <= (dx_old * d).abs();
            let prev = y;
            if newton_ok {
                dx_old = dx;
                dx = r / d;
                y -= dx;
            } else {
                dx_old = dx;
                dx = 0.5 * (b - a);
                y = a + dx;
            }
            let resolution = 4.0 * f64::EPSILON * y.abs().max(f64::MIN_POSITIVE);
            if y == prev || dx.abs() <= resolution || b - a <= resolution {
                let res = (self.lift(y) - target).abs();
                if res <= tol {
                    return Ok(y);
                }
                return Err(Error::ConvergenceFailure {
                    iterations: MAX_SOLVER_ITER,
                    residual: res,
                });
            }
            r = self.lift(y) - target;
            d = self.lift_derivative(y);
        }
        Err(Error::ConvergenceFailure {
            iterations: MAX_SOLVER_ITER,
            residual: r.abs(),
        })
    }

    /// Unique `y ∈ [a_i, a_{i+1})` with `T(y) = x`.
    pub fn inverse_branch(&self, x: f64, i: usize) -> Result<f64> {
        if i >= self.branch_count {
            return Err(Error::PreconditionViolated(format!(
                "branch {i} out of range 0..{}",
                self.branch_count
            )));
        }
        self.solve_lift(
            x + i as f64,
            self.endpoints[i],
            self.endpoints[i + 1],
            INVERSE_TOL,
        )
    }

    /// Pre-image of a lift value `t ∈ [0, N_V)`, reduced to the circle.
    pub fn preimage_of_lift(&self, t: f64) -> Result<f64> {
        let n = self.branch_count as f64;
        let t = t.rem_euclid(n);
        let branch = (t.floor() as usize).min(self.branch_count - 1);
        let y = self.solve_lift(
            t,
            self.endpoints[branch],
            self.endpoints[branch + 1],
            INVERSE_TOL,
        )?;
        Ok(if y >= 1.0 { 0.0 } else { y })
    }

    /// All `N_V` pre-images of `x`, ascending.
    pub fn preimages(&self, x: f64) -> Result<Vec<f64>> {
        (0..self.branch_count)
            .map(|i| self.inverse_branch(x, i))
            .collect()
    }

    /// Whether the origin lies in the smallest open arc joining `x` and `y`.
    pub fn arc_contains_origin(x: f64, y: f64) -> bool {
        (x - y).abs() > 0.5
    }

    /// `λ_V(x, y)`: the smaller velocity when the short arc crosses the
    /// origin, the larger one otherwise. Antipodal pairs and pairs with an
    /// endpoint at 0 count as not crossing.
    pub fn lambda(&self, x: f64, y: f64) -> f64 {
        let (vx, vy) = (self.velocity(x), self.velocity(y));
        if Self::arc_contains_origin(x, y) {
            vx.min(vy)
        } else {
            vx.max(vy)
        }
    }

    /// One paired pull-back along lift branch `b`: `y` is lifted next to `x`
    /// so that both pre-images come from the same continuous inverse branch.
    pub fn paired_step(&self, x: f64, y: f64, b: usize) -> Result<(f64, f64)> {
        let s = signed_displacement(x, y);
        let tx = x + b as f64;
        let xn = self.preimage_of_lift(tx)?;
        let yn = if s == 0.0 {
            xn
        } else {
            self.preimage_of_lift(tx + s)?
        };
        Ok((xn, yn))
    }

    /// Pairs pre-images of `(x0, y0)` along the given branch sequence.
    pub fn paired_preorbit(&self, x0: f64, y0: f64, branches: &[usize]) -> Result<PairedPreorbit> {
        let d0 = circle_dist(x0, y0);
        if d0 >= self.expansion_radius {
            return Err(Error::RadiusExceeded {
                distance: d0,
                radius: self.expansion_radius,
            });
        }
        let mut pairs = Vec::with_capacity(branches.len() + 1);
        pairs.push((x0, y0));
        let (mut x, mut y) = (x0, y0);
        for &b in branches {
            if b >= self.branch_count {
                return Err(Error::PreconditionViolated(format!(
                    "branch {b} out of range"
                )));
            }
            (x, y) = self.paired_step(x, y, b)?;
            pairs.push((x, y));
        }
        Ok(PairedPreorbit {
            pairs,
            branches: branches.to_vec(),
        })
    }

    /// Every paired pre-orbit of depth `depth` (all `N_V^depth` branch words).
    pub fn paired_preorbit_tree(
        &self,
        x0: f64,
        y0: f64,
        depth: usize,
    ) -> Result<Vec<PairedPreorbit>> {
        let total = self.branch_count.pow(depth as u32);
        let mut out = Vec::with_capacity(total);
        let mut word = vec![0usize; depth];
        for code in 0..total {
            let mut c = code;
            for slot in word.iter_mut().rev() {
                *slot = c % self.branch_count;
                c /= self.branch_count;
            }
            out.push(self.paired_preorbit(x0, y0, &word)?);
        }
        Ok(out)
    }

    /// Checks `d(Tx, Ty) ≥ d(x, y)(1 + λ_V(x, y))`.
    pub fn verify_expansion(&self, x: f64, y: f64) -> Result<ExpansionCheck> {
        let d = circle_dist(x, y);
        if d >= self.expansion_radius {
            return Err(Error::RadiusExceeded {
                distance: d,
                radius: self.expansion_radius,
            });
        }
        let lhs = circle_dist(self.eval(x), self.eval(y));
        let slack = lhs - d * (1.0 + self.lambda(x, y));
        Ok(ExpansionCheck {
            holds: slack >= -1e-12,
            slack,
        })
    }

    /// Compares `∏ (1 + λ_V(x_k, y_k))` with `∏ (1 + V(x_k))` over the paired
    /// pre-images `k = 1..=n`. The point realising `λ_V(x, y)` plays the role
    /// of `x`.
    pub fn derivative_product_identity(
        &self,
        x: f64,
        y: f64,
        branches: &[usize],
    ) -> Result<ProductIdentity> {
        let (x, y) = if self.lambda(x, y) == self.velocity(x) {
            (x, y)
        } else {
            (y, x)
        };
        let orbit = self.paired_preorbit(x, y, branches)?;
        let mut lhs = 1.0;
        let mut rhs = 1.0;
        for &(xk, yk) in &orbit.pairs[1..] {
            let d = circle_dist(xk, yk);
            if d >= self.expansion_radius {
                return Err(Error::PreconditionViolated(format!(
                    "intermediate distance {d} exceeds ϱ_V = {}",
                    self.expansion_radius
                )));
            }
            lhs *= 1.0 + self.lambda(xk, yk);
            rhs *= 1.0 + self.velocity(xk);
        }
        let holds = (lhs - rhs).abs() <= 1e-10 * rhs.abs();
        Ok(ProductIdentity { lhs, rhs, holds })
    }

    /// Largest increment `V(x + r) - V(x)` over `[0, 1 - r]`.
    fn velocity_oscillation(&self, r: f64) -> f64 {
        let top = 1.0 - r;
        if top <= 0.0 {
            return self.velocity(1.0) - self.velocity(0.0);
        }
        let mut best = 0.0f64;
        let mut probe = |x: f64| {
            let x = x.clamp(0.0, top);
            best = best.max(self.velocity(x + r) - self.velocity(x));
        };
        probe(0.0);
        probe(top);
        for i in 0..=2000 {
            probe(top * i as f64 / 2000.0);
        }
        for i in 0..=300 {
            let e = -12.0 + 12.0 * i as f64 / 300.0;
            probe(10f64.powf(e));
            probe(top - 10f64.powf(e));
        }
        best
    }

    /// Margins of the three defining constraints of `ϱ_V` at radius `r`;
    /// all three are positive exactly when `r` is admissible.
    pub fn expansion_constraint_margins(&self, r: f64) -> [f64; 3] {
        let n = self.branch_count as f64;
        let v1 = self.profile.v1() as f64;
        let min_gap = self
            .endpoints
            .windows(2)
            .map(|w| circle_dist(w[0], w[1]))
            .fold(f64::INFINITY, f64::min);
        let m1 = 0.5 - (r * n + self.velocity_oscillation(r));
        let m2 = 0.5 * min_gap - r;
        let m3 = 0.5 - (r + r * self.velocity(r) + v1 - (1.0 - r) * self.velocity(1.0 - r));
        [m1, m2, m3]
    }

    fn radius_admissible(&self, r: f64) -> bool {
        r > 0.0
            && r < 0.5
            && self
                .expansion_constraint_margins(r)
                .iter()
                .all(|&m| m > 0.0)
    }

    fn search_expansion_radius(&self) -> Result<f64> {
        if self.radius_admissible(RADIUS_CAP) {
            return Ok(RADIUS_CAP);
        }
        let (mut lo, mut hi) = (0.0f64, RADIUS_CAP);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.radius_admissible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo <= 0.0 {
            return Err(Error::InvalidProfile(
                "no admissible expansion radius".into(),
            ));
        }
        Ok(lo)
    }

    /// Whether doubling `ϱ_V` violates a constraint (or `ϱ_V` sits at the cap).
    pub fn radius_is_maximal(&self) -> bool {
        self.expansion_radius == RADIUS_CAP || !self.radius_admissible(2.0 * self.expansion_radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(q: f64) -> CircleMap {
        CircleMap::new(VelocityProfile::manneville_pomeau(q).unwrap()).unwrap()
    }

    fn doubling() -> CircleMap {
        CircleMap::new(VelocityProfile::doubling_oracle()).unwrap()
    }

    const GOLDEN: f64 = 0.618_033_988_749_894_9;

    #[test]
    fn eval_examples() {
        let m1 = m(1.0);
        assert_eq!(m1.eval(0.0), 0.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let t = m1.eval(g);
        assert!(t < 1e-15 || t > 1.0 - 1e-15);
        assert!((m1.eval(0.5) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn circle_dist_examples() {
        assert!((circle_dist(0.1, 0.9) - 0.2).abs() < 1e-15);
        assert_eq!(circle_dist(0.25, 0.25), 0.0);
        assert_eq!(circle_dist(0.0, 0.5), 0.5);
    }

    #[test]
    fn endpoints() {
        let e = m(1.0).branch_endpoints().to_vec();
        assert_eq!(e.len(), 3);
        assert!((e[1] - GOLDEN).abs() < 1e-14);
        // bisection oracle for r (1 + sqrt r) = 1
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * (1.0 + mid.sqrt()) < 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let e = m(0.5).branch_endpoints().to_vec();
        assert!((e[1] - lo).abs() < 1e-12);
        assert_eq!(doubling().branch_endpoints(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn inverse_branch_examples() {
        let m1 = m(1.0);
        assert_eq!(m1.inverse_branch(0.0, 0).unwrap(), 0.0);
        let y0 = m1.inverse_branch(0.5, 0).unwrap();
        let y1 = m1.inverse_branch(0.5, 1).unwrap();
        assert!((y0 - (3f64.sqrt() - 1.0) / 2.0).abs() < 1e-14);
        assert!((y1 - (7f64.sqrt() - 1.0) / 2.0).abs() < 1e-14);
        assert!(m1.inverse_branch(0.5, 2).is_err());
    }

    #[test]
    fn preimage_examples() {
        let m1 = m(1.0);
        let p = m1.preimages(0.0).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - GOLDEN).abs() < 1e-14);
        let p = m1.preimages(0.5).unwrap();
        assert!((p[0] - 0.366_025_403_784_438_6).abs() < 1e-12);
        assert!((p[1] - 0.822_875_655_532_295_3).abs() < 1e-12);
        let p = doubling().preimages(0.5).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn lambda_examples() {
        let m1 = m(1.0);
        assert!((m1.lambda(0.9, 0.1) - 0.1).abs() < 1e-15);
        assert!((m1.lambda(0.2, 0.4) - 0.4).abs() < 1e-15);
        assert!((m1.lambda(0.0, 0.3) - 0.3).abs() < 1e-15);
        // the boundary convention is compatible with the expansion inequality
        let c = m1.verify_expansion(0.0, 0.1).unwrap();
        assert!(c.holds, "slack {}", c.slack);
    }

    #[test]
    fn expansion_radius_m1() {
        // constraints (i) and (iii) both reduce to 3r < 1/2 for V(x) = x
        let r = m(1.0).expansion_radius();
        assert!((r - 1.0 / 6.0).abs() < 1e-9, "{r}");
        let r = doubling().expansion_radius();
        assert!((r - 1.0 / 6.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn expansion_radius_constraints() {
        for q in [0.5, 1.0, 2.0] {
            let map = m(q);
            let r = map.expansion_radius();
            assert!(r > 0.0 && r < 0.5);
            assert!(map.expansion_constraint_margins(r).iter().all(|&x| x > 0.0));
            assert!(map
                .expansion_constraint_margins(2.0 * r)
                .iter()
                .any(|&x| x <= 0.0));
            assert!(map.radius_is_maximal());
        }
    }

    #[test]
    fn paired_preorbit_examples() {
        let m1 = m(1.0);
        let orbit = m1.paired_preorbit(0.3, 0.3, &[0, 1, 0, 1, 1]).unwrap();
        assert!(orbit.distances().iter().all(|&d| d == 0.0));

        let o = m1.paired_preorbit(0.30, 0.31, &[1]).unwrap();
        let (x1, y1) = o.pairs[1];
        assert_eq!(x1, m1.inverse_branch(0.30, 1).unwrap());
        assert_eq!(y1, m1.inverse_branch(0.31, 1).unwrap());
        assert!(circle_dist(x1, y1) <= 0.01);

        let o = m1.paired_preorbit(0.30, 0.31, &[0; 10]).unwrap();
        let d = o.distances();
        assert!(d.windows(2).all(|w| w[1] <= w[0]));
        assert!(d[10] <= 0.01);

        assert!(matches!(
            m1.paired_preorbit(0.1, 0.4, &[0]),
            Err(Error::RadiusExceeded { .. })
        ));
    }

    #[test]
    fn paired_preorbit_across_origin_stays_close() {
        let m1 = m(1.0);
        for b in 0..2 {
            let o = m1.paired_preorbit(0.999, 0.001, &[b, b, 1 - b]).unwrap();
            let d = o.distances();
            assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-16), "{d:?}");
        }
    }

    #[test]
    fn expansion_examples() {
        let m1 = m(1.0);
        let c = m1.verify_expansion(0.2, 0.21).unwrap();
        assert!(c.holds && c.slack > 0.0);
        let c = m1.verify_expansion(0.999, 0.001).unwrap();
        assert!(c.holds);
        let c = m1.verify_expansion(0.4, 0.4).unwrap();
        assert!(c.holds && c.slack == 0.0);
        assert!(m1.verify_expansion(0.1, 0.4).is_err());
    }

    #[test]
    fn product_identity_examples() {
        let m1 = m(1.0);
        assert!(
            m1.derivative_product_identity(0.30, 0.31, &[0, 0, 0])
                .unwrap()
                .holds
        );
        assert!(
            m1.derivative_product_identity(0.3, 0.3, &[0, 1, 1, 0, 1])
                .unwrap()
                .holds
        );
        let mh = m(0.5);
        assert!(
            mh.derivative_product_identity(0.40, 0.405, &[0, 1, 1, 0])
                .unwrap()
                .holds
        );
        // pairs straddling the origin
        assert!(
            m1.derivative_product_identity(0.001, 0.999, &[0, 1, 0])
                .unwrap()
                .holds
        );
    }

    #[test]
    fn monotone_cubic_is_monotone() {
        let t = MonotoneCubic::new(vec![0.0, 0.1, 0.5, 1.0], vec![0.0, 0.5, 0.6, 2.0]).unwrap();
        let mut prev = -1.0;
        for i in 0..=1000 {
            let v = t.value(i as f64 / 1000.0);
            assert!(v >= prev);
            prev = v;
        }
        assert!((t.value(0.5) - 0.6).abs() < 1e-15);
        assert!((t.value(1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn profile_validation() {
        assert!(
            VelocityProfile::new(ProfileFamily::MannevillePomeau { q: 1.0 }, 2, false).is_err()
        );
        assert!(
            VelocityProfile::new(ProfileFamily::MannevillePomeau { q: -1.0 }, 1, false).is_err()
        );
        let flat = ProfileFamily::Custom {
            xs: vec![0.0, 1.0],
            vs: vec![1.0, 1.0],
        };
        assert!(VelocityProfile::new(flat.clone(), 1, false).is_err());
        assert!(VelocityProfile::new(flat, 1, true).is_ok());
        let not_integer = ProfileFamily::Custom {
            xs: vec![0.0, 1.0],
            vs: vec![0.0, 1.5],
        };
        assert!(VelocityProfile::new(not_integer, 1, false).is_err());
        assert!(VelocityProfile::new(
            ProfileFamily::SlowlyVarying {
                k: 1,
                amplitude: 2.0
            },
            1,
            false
        )
        .is_err());
    }

    #[test]
    fn slowly_varying_profile() {
        for k in 1..=3 {
            let p =
                VelocityProfile::new(ProfileFamily::SlowlyVarying { k, amplitude: 0.5 }, 1, false)
                    .unwrap();
            assert!((p.value(1.0) - 1.0).abs() < 1e-14);
            assert_eq!(p.value(0.0), 0.0);
            let mut prev = 0.0;
            for i in 1..=1000 {
                let v = p.value(i as f64 / 1000.0);
                assert!(v > prev);
                prev = v;
            }
            // x V'(x) against a central difference
            let x = 0.3;
            let h = 1e-6;
            let fd = x * (p.value(x + h) - p.value(x - h)) / (2.0 * h);
            assert!((fd - p.x_dv(x)).abs() < 1e-7, "k={k}");
            CircleMap::new(p).unwrap();
        }
    }

    #[test]
    fn power_times_log_derivative() {
        let p = VelocityProfile::new(
            ProfileFamily::PowerTimesLog {
                sigma: 0.4,
                variant: LogVariant::InverseLog,
            },
            1,
            false,
        )
        .unwrap();
        let x = 0.2;
        let h = 1e-6;
        let fd = x * (p.value(x + h) - p.value(x - h)) / (2.0 * h);
        assert!((fd - p.x_dv(x)).abs() < 1e-7);
        assert!((p.value(1.0) - 1.0).abs() < 1e-15);
    }
}
