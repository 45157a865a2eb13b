//! Experiment configuration (JSON) and its validation.

use std::path::Path;

use ispec_core::map::ProfileFamily;
use ispec_core::moduli::{CertificateParams, Cutoff, ModulusFamily};
use ispec_core::stats::OrbitMode;
use ispec_core::transfer::{DualScheme, EigenOptions, PotentialSpec};
use ispec_core::{CircleMap, Modulus, Potential, VelocityProfile};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Names accepted wherever an observable is referenced, on top of the
/// spectral test battery (`cos1`..`cos4`, `sin1`..`sin4`, `cone0`,
/// `cone0.37`, `cone0.71`, `random`, `lacunary`, `top`).
pub const EXTRA_OBSERVABLES: [&str; 2] = ["identity", "constant"];
pub const BATTERY_NAMES: [&str; 14] = [
    "cos1", "sin1", "cos2", "sin2", "cos3", "sin3", "cos4", "sin4", "cone0", "cone0.37",
    "cone0.71", "random", "lacunary", "top",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub map: MapConfig,
    pub omega: ModulusConfig,
    pub big_omega: ModulusConfig,
    #[serde(default = "zero_potential")]
    pub potential: PotentialSpec,
    /// Cell count `M`, a power of two in `[2^6, 2^16]`.
    pub grid: usize,
    /// Root seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    #[serde(default)]
    pub certificate: CertificateConfig,
    #[serde(default)]
    pub eigen: EigenConfig,
    #[serde(default)]
    pub dfly: DflyConfig,
    #[serde(default)]
    pub gap: GapConfig,
    #[serde(default)]
    pub decay: DecayConfig,
    #[serde(default)]
    pub clt: CltConfig,
}

fn zero_potential() -> PotentialSpec {
    PotentialSpec::Zero
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub profile: ProfileFamily,
    #[serde(default = "one")]
    pub v1: u32,
    #[serde(default)]
    pub allow_flat: bool,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusConfig {
    pub family: ModulusFamily,
    /// Fixed cutoff instead of the automatic one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    /// Multiply by `x^s` after construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_scale: Option<f64>,
}

impl ModulusConfig {
    pub fn power(exponent: f64) -> Self {
        Self {
            family: ModulusFamily::Power { exponent },
            cutoff: None,
            power_scale: None,
        }
    }

    pub fn build(&self) -> ispec_core::Result<Modulus> {
        let cutoff = self.cutoff.map_or(Cutoff::Auto, Cutoff::At);
        let m = Modulus::with_cutoff(self.family.clone(), cutoff)?;
        match self.power_scale {
            Some(s) => m.power_scale(s),
            None => Ok(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateConfig {
    pub depth: usize,
    pub trial_radius: Option<f64>,
    pub min_separation: f64,
    pub separations: usize,
    pub random_points: usize,
    pub max_sequences: usize,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        let p = CertificateParams::default();
        Self {
            depth: p.depth,
            trial_radius: p.trial_radius,
            min_separation: p.min_separation,
            separations: p.separations,
            random_points: p.random_points,
            max_sequences: p.max_sequences,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigenConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub dual: DualScheme,
    /// Also compute the Ulam leading eigenvalue as a cross-check.
    pub ulam_check: bool,
}

impl Default for EigenConfig {
    fn default() -> Self {
        let o = EigenOptions::default();
        Self {
            tol: o.tol,
            max_iter: o.max_iter,
            dual: o.dual,
            ulam_check: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DflyConfig {
    pub n_list: Vec<usize>,
    pub pair_budget: usize,
    /// Horizon of the θ table and of the strict-decrease check.
    pub theta_n_max: usize,
}

impl Default for DflyConfig {
    fn default() -> Self {
        Self {
            n_list: vec![1, 2, 4, 8],
            pair_budget: 10_000,
            theta_n_max: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub n_max: usize,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { n_max: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub n_max: usize,
    /// `(φ, ψ)` observable names; `φ` is the factor the operator acts on.
    pub pairs: Vec<(String, String)>,
    /// Horizon of the strong-mixing check.
    pub mixing_n_max: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        let p = |a: &str, b: &str| (a.to_string(), b.to_string());
        Self {
            n_max: 200,
            pairs: vec![
                p("cos1", "cos1"),
                p("sin1", "sin1"),
                p("cos1", "sin1"),
                p("cone0", "cone0"),
            ],
            mixing_n_max: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltConfig {
    pub observable: String,
    pub n_orbit: usize,
    pub n_samples: usize,
    pub gk_n_max: usize,
    pub mode: OrbitMode,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            observable: "cos1".into(),
            n_orbit: 1000,
            n_samples: 20_000,
            gk_n_max: 200,
            mode: OrbitMode::Reversed,
        }
    }
}

/// The validated objects a config describes.
pub struct Built {
    pub map: CircleMap,
    pub omega: Modulus,
    pub big_omega: Modulus,
    pub potential: Potential,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !self.grid.is_power_of_two() || !(64..=65_536).contains(&self.grid) {
            return bad(format!(
                "grid must be a power of two in [64, 65536], got {}",
                self.grid
            ));
        }
        if self.dfly.n_list.is_empty() || self.dfly.n_list.contains(&0) {
            return bad("dfly.n_list must be a non-empty list of positive integers".into());
        }
        if self.gap.n_max < 10 {
            return bad(format!(
                "gap.n_max must be at least 10, got {}",
                self.gap.n_max
            ));
        }
        if self.decay.n_max < 10 || self.decay.mixing_n_max < 2 {
            return bad("decay.n_max must be at least 10 and decay.mixing_n_max at least 2".into());
        }
        if self.clt.n_orbit == 0 || self.clt.n_samples < 2 {
            return bad("clt needs n_orbit ≥ 1 and n_samples ≥ 2".into());
        }
        if !(self.eigen.tol >= 1e-12) || self.eigen.max_iter == 0 {
            return bad(format!(
                "eigen.tol must be at least 1e-12 and eigen.max_iter positive, got {} and {}",
                self.eigen.tol, self.eigen.max_iter
            ));
        }
        if self.certificate.depth == 0 {
            return bad("certificate.depth must be positive".into());
        }
        let names = self
            .decay
            .pairs
            .iter()
            .flat_map(|(a, b)| [a, b])
            .chain(std::iter::once(&self.clt.observable));
        for n in names {
            if !known_observable(n) {
                return bad(format!("unknown observable {n:?}"));
            }
        }
        self.build()
            .map(|_| ())
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn build(&self) -> ispec_core::Result<Built> {
        let profile =
            VelocityProfile::new(self.map.profile.clone(), self.map.v1, self.map.allow_flat)?;
        Ok(Built {
            map: CircleMap::new(profile)?,
            omega: self.omega.build()?,
            big_omega: self.big_omega.build()?,
            potential: Potential::new(self.potential.clone())?,
        })
    }

    pub fn certificate_params(&self) -> CertificateParams {
        let c = &self.certificate;
        CertificateParams {
            depth: c.depth,
            trial_radius: c.trial_radius,
            min_separation: c.min_separation,
            separations: c.separations,
            random_points: c.random_points,
            max_sequences: c.max_sequences,
            seed: self.stage_seed(Stage::Certificate),
        }
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.eigen.tol,
            max_iter: self.eigen.max_iter,
            dual: self.eigen.dual,
        }
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_add(stage as u64)
    }

    /// Canonical JSON, used for hashing and for the copy kept in the run directory.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Offsets of the per-stage seeds.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Certificate = 0,
    Battery = 1,
    Dfly = 2,
    Clt = 3,
}

pub fn known_observable(name: &str) -> bool {
    BATTERY_NAMES.contains(&name) || EXTRA_OBSERVABLES.contains(&name)
}
