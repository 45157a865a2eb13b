//! Built-in experiment configurations.

use ispec_core::map::ProfileFamily;
use ispec_core::moduli::ModulusFamily;
use ispec_core::transfer::PotentialSpec;

use crate::config::{ExperimentConfig, MapConfig, ModulusConfig};

pub const PRESETS: [&str; 4] = [
    "mp-admissible",
    "mp-violating",
    "slowly-varying-k1",
    "doubling-oracle",
];

fn base(
    name: &str,
    map: MapConfig,
    omega: ModulusConfig,
    big_omega: ModulusConfig,
    potential: PotentialSpec,
) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        map,
        omega,
        big_omega,
        potential,
        grid: 4096,
        seed: 20_240_917,
        certificate: Default::default(),
        eigen: Default::default(),
        dfly: Default::default(),
        gap: Default::default(),
        decay: Default::default(),
        clt: Default::default(),
    }
}

fn mp(q: f64, p: f64, big_p: f64, name: &str) -> ExperimentConfig {
    let omega = ModulusConfig::power(p);
    let potential = PotentialSpec::ModulusCone {
        center: 0.5,
        scale: 0.1,
        modulus: omega.family.clone(),
    };
    base(
        name,
        MapConfig {
            profile: ProfileFamily::MannevillePomeau { q },
            v1: 1,
            allow_flat: false,
        },
        omega,
        ModulusConfig::power(big_p),
        potential,
    )
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    Some(match name {
        // q ≤ p − P
        "mp-admissible" => mp(0.5, 0.8, 0.3, name),
        // q > p − P
        "mp-violating" => mp(0.5, 0.6, 0.3, name),
        "slowly-varying-k1" => {
            let s = 0.5;
            let omega = ModulusConfig {
                family: ModulusFamily::slowly_varying_omega(1, s),
                cutoff: None,
                power_scale: None,
            };
            let potential = PotentialSpec::ModulusCone {
                center: 0.5,
                scale: 0.1,
                modulus: omega.family.clone(),
            };
            base(
                name,
                MapConfig {
                    profile: ProfileFamily::SlowlyVarying {
                        k: 1,
                        amplitude: 1.0,
                    },
                    v1: 1,
                    allow_flat: false,
                },
                omega,
                ModulusConfig {
                    family: ModulusFamily::slowly_varying_big_omega(s),
                    cutoff: None,
                    power_scale: None,
                },
                potential,
            )
        }
        "doubling-oracle" => {
            let mut cfg = base(
                name,
                MapConfig {
                    profile: ProfileFamily::Custom {
                        xs: vec![0.0, 1.0],
                        vs: vec![1.0, 1.0],
                    },
                    v1: 1,
                    allow_flat: true,
                },
                ModulusConfig::power(0.8),
                ModulusConfig::power(0.5),
                PotentialSpec::Zero,
            );
            // the doubling map kills cos 2πx and sin 2πx in one step
            let p = |a: &str| (a.to_string(), a.to_string());
            cfg.decay.pairs = vec![p("cone0"), p("cone0.37"), p("cone0.71"), p("lacunary")];
            cfg
        }
        _ => return None,
    })
}
