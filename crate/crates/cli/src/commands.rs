//! The pipeline stages and the run-directory bookkeeping around them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ispec_core::moduli::{
    broad_condition_scan, compatibility_certificate, default_orderly_sequence, seminorm,
    sufficient_condition_scan, vanishes_orderly, ConditionScan, DEFAULT_CONDITION_C,
};
use ispec_core::spectral::{
    dfly_check, gap_estimate, tau, test_battery, theta_limit_check, theta_sequence, DflyParams,
    TestObservable,
};
use ispec_core::stats::{
    clt_test, correlation_sequence, decay_fit, mixing_check, noise_floor, CltParams,
};
use ispec_core::transfer::{
    check_normalization, cone_membership, leading_eigendata, NormalizedOperator,
    NormalizedPotential, Stencil, UlamMatrix,
};
use ispec_core::{CompatibilityCertificate, Error, Grid, Observable, RpfData, TransferOperator};
use serde_json::{json, Value};

use crate::config::{Built, ExperimentConfig, Stage};
use crate::manifest::{sha256_hex, RunManifest, Verdict};
use crate::table::{read_columns, Csv};
use crate::CliError;

pub const CONFIG_COPY: &str = "config.json";
pub const REPORT: &str = "report.md";
/// Stages in pipeline order.
pub const STAGES: [&str; 6] = ["check", "rpf", "dfly", "gap", "decay", "clt"];

/// Largest `‖L_{f̃}𝟙 − 𝟙‖_∞` accepted by the rpf stage.
const NORMALIZATION_LIMIT: f64 = 1e-5;
/// `τ` must drop below this by the end of the θ table when `Ω` vanishes orderly.
const TAU_LIMIT: f64 = 0.1;
/// Slack between the decay rate of a correlation and the gap estimate.
const COHERENCE_SLACK: f64 = 0.1;
const F_SEMINORM_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Rpf,
    Dfly,
    Gap,
    Decay,
    Clt,
    Report,
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Rpf => "rpf",
            Command::Dfly => "dfly",
            Command::Gap => "gap",
            Command::Decay => "decay",
            Command::Clt => "clt",
            Command::Report => "report",
            Command::Pipeline => "pipeline",
        }
    }
}

/// What a stage produced. A stage may record its outputs and still fail the
/// invocation (a certificate failure keeps its diagnostics on disk).
struct Outcome {
    verdict: Verdict,
    files: Vec<String>,
    error: Option<CliError>,
}

impl Outcome {
    fn ok(verdict: Verdict, files: Vec<String>) -> Self {
        Self {
            verdict,
            files,
            error: None,
        }
    }
}

struct Run {
    cfg: ExperimentConfig,
    built: Built,
    out: PathBuf,
    manifest: RunManifest,
    force: bool,
}

/// Runs one command. `config` is required for everything except `report`.
pub fn run_stage(
    cmd: Command,
    config: Option<&Path>,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    if cmd == Command::Report {
        return report(out).map(|_| ());
    }
    let path = config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    let mut run = Run::open(cfg, out, force)?;
    let stages: Vec<&str> = match cmd {
        Command::Pipeline => STAGES.to_vec(),
        other => vec![other.name()],
    };
    for stage in stages {
        if cmd == Command::Pipeline
            && stage != "check"
            && !force
            && run.manifest.verdict("check") != Some(Verdict::Pass)
        {
            eprintln!("check did not pass; stopping the pipeline (use --force to continue)");
            break;
        }
        run.stage(stage)?;
    }
    if cmd == Command::Pipeline {
        report(out)?;
    }
    Ok(())
}

impl Run {
    fn open(cfg: ExperimentConfig, out: &Path, force: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(out)?;
        let text = cfg.canonical_json();
        let hash = sha256_hex(text.as_bytes());
        let manifest = match RunManifest::load(out)? {
            Some(m) if m.config_hash == hash => m,
            Some(m) if force => {
                for f in m.files.keys() {
                    let _ = std::fs::remove_file(out.join(f));
                }
                RunManifest::new(hash)
            }
            Some(_) => {
                return Err(CliError::Config(format!(
                    "{} holds a run of a different config; use a fresh --out or --force",
                    out.display()
                )))
            }
            None => RunManifest::new(hash),
        };
        let built = cfg.build()?;
        let mut run = Self {
            cfg,
            built,
            out: out.to_path_buf(),
            manifest,
            force,
        };
        std::fs::write(run.out.join(CONFIG_COPY), text)?;
        run.manifest.record_file(&run.out, CONFIG_COPY)?;
        run.manifest.save(&run.out)?;
        Ok(run)
    }

    fn stage(&mut self, name: &str) -> Result<(), CliError> {
        let t = Instant::now();
        let outcome = match name {
            "check" => self.check()?,
            "rpf" => self.rpf()?,
            "dfly" => self.dfly()?,
            "gap" => self.gap()?,
            "decay" => self.decay()?,
            "clt" => self.clt()?,
            _ => unreachable!("unknown stage {name}"),
        };
        self.manifest
            .record(&self.out, name, outcome.verdict, &outcome.files)?;
        self.manifest.save(&self.out)?;
        eprintln!(
            "{name}: {} ({:.1} s) -> {}",
            outcome.verdict.as_str(),
            t.elapsed().as_secs_f64(),
            outcome.files.join(", ")
        );
        outcome.error.map_or(Ok(()), Err)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn write_json(&self, file: &str, value: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("json serializes") + "\n";
        std::fs::write(self.path(file), text)?;
        Ok(())
    }

    fn grid(&self) -> Grid {
        Grid::new(self.cfg.grid).expect("validated grid")
    }

    fn operator(&self) -> Result<TransferOperator, CliError> {
        let stencil = Arc::new(Stencil::new(&self.built.map, self.grid())?);
        Ok(TransferOperator::new(stencil, &self.built.potential))
    }

    fn f_seminorm(&self) -> f64 {
        let om = &self.built.omega;
        self.built.potential.known_seminorm(om).unwrap_or_else(|| {
            let f = Observable::from_fn(&self.grid(), |x| self.built.potential.eval(x));
            seminorm(&f, om, F_SEMINORM_BUDGET).value
        })
    }

    fn battery(&self) -> Vec<TestObservable> {
        test_battery(
            &self.grid(),
            &self.built.big_omega,
            self.cfg.stage_seed(Stage::Battery),
        )
    }

    fn observable(&self, battery: &[TestObservable], name: &str) -> Observable {
        let g = self.grid();
        match name {
            "identity" => Observable::from_fn(&g, |x| x),
            "constant" => Observable::constant(&g, 1.0),
            _ => battery
                .iter()
                .find(|o| o.name == name)
                .map(|o| o.phi.clone())
                .expect("validated observable name"),
        }
    }

    /// Fails with a missing-artifact error unless `stage` ran and its files are unchanged.
    fn require(&self, stage: &str) -> Result<(), CliError> {
        let rec = self
            .manifest
            .stages
            .get(stage)
            .ok_or_else(|| CliError::MissingArtifact(format!("run the {stage} stage first")))?;
        for f in &rec.files {
            let bytes = std::fs::read(self.path(f))
                .map_err(|e| CliError::MissingArtifact(format!("{f}: {e}")))?;
            if self.manifest.files.get(f) != Some(&sha256_hex(&bytes)) {
                return Err(CliError::MissingArtifact(format!(
                    "{f} does not match the manifest"
                )));
            }
        }
        Ok(())
    }

    fn read_json(&self, file: &str) -> Result<Value, CliError> {
        let text = std::fs::read_to_string(self.path(file))
            .map_err(|e| CliError::MissingArtifact(format!("{file}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| CliError::MissingArtifact(format!("{file}: {e}")))
    }

    /// `(ϱ_1, C_1)` of the stored certificate.
    fn load_certificate(&self) -> Result<CompatibilityCertificate, CliError> {
        self.require("check")?;
        let v = self.read_json("check.json")?;
        let c = &v["certificate"];
        let num = |k: &str| {
            c[k].as_f64().ok_or_else(|| {
                CliError::MissingArtifact(format!("check.json has no certificate {k}"))
            })
        };
        Ok(CompatibilityCertificate {
            rho1: num("rho1")?,
            c1: num("c1")?,
            depth_tested: c["depth_tested"].as_u64().unwrap_or(0) as usize,
            pairs_tested: c["pairs_tested"].as_u64().unwrap_or(0) as usize,
            sequences_tested: c["sequences_tested"].as_u64().unwrap_or(0) as usize,
            margin: num("margin")?,
            worst_pair: (f64::NAN, f64::NAN),
            worst_depth: c["worst_depth"].as_u64().unwrap_or(0) as usize,
        })
    }

    fn load_rpf(&self) -> Result<RpfData, CliError> {
        self.require("rpf")?;
        let v = self.read_json("rpf.json")?;
        let chi = v["chi"]
            .as_f64()
            .ok_or_else(|| CliError::MissingArtifact("rpf.json has no chi".into()))?;
        let mut cols = read_columns(&self.path("rpf.csv"), &["h", "nu"])?;
        let nu = cols.pop().unwrap();
        let h = cols.pop().unwrap();
        if h.len() != self.cfg.grid {
            return Err(CliError::MissingArtifact(format!(
                "rpf.csv has {} rows, config grid is {}",
                h.len(),
                self.cfg.grid
            )));
        }
        RpfData::from_parts(chi, h, nu)
            .map_err(|e| CliError::MissingArtifact(format!("rpf.csv: {e}")))
    }

    fn normalized(
        &self,
        op: &TransferOperator,
        rpf: &RpfData,
    ) -> Result<NormalizedOperator, CliError> {
        Ok(NormalizedPotential::new(&self.built.map, &self.built.potential, rpf)?.operator(op))
    }

    fn check(&self) -> Result<Outcome, CliError> {
        let b = &self.built;
        let cond = sufficient_condition_scan(
            b.map.profile(),
            &b.omega,
            &b.big_omega,
            &DEFAULT_CONDITION_C,
        );
        let broad = broad_condition_scan(
            b.map.profile(),
            &b.omega,
            &b.big_omega,
            &DEFAULT_CONDITION_C,
        );
        let orderly = vanishes_orderly(&b.big_omega, &default_orderly_sequence());
        let cert = compatibility_certificate(
            &b.map,
            &b.omega,
            &b.big_omega,
            &self.cfg.certificate_params(),
        );

        let mut csv = Csv::new(&["scan", "c", "x", "g"]);
        for (label, scan) in [("sufficient", &cond), ("broad", &broad)] {
            for row in &scan.rows {
                for (x, g) in &row.table {
                    csv.row(&[&label, &row.c, x, g]);
                }
            }
        }
        csv.write(&self.path("check_condition.csv"))?;
        let mut csv = Csv::new(&["x", "profile"]);
        for (x, p) in &orderly.table {
            csv.row(&[x, p]);
        }
        csv.write(&self.path("check_orderly.csv"))?;

        let modulus = |m: &ispec_core::Modulus| {
            json!({
                "family": m.family(),
                "cutoff": m.cutoff(),
                "nondecreasing": m.is_nondecreasing(),
                "concave": m.is_concave(),
                "subadditive": m.is_subadditive(),
            })
        };
        let (cert_json, cert_ok, error) = match &cert {
            Ok(c) => (serde_json::to_value(c).unwrap(), c.margin >= 0.0, None),
            Err(e) => (
                json!({ "error": e.to_string() }),
                false,
                Some(CliError::from(e.clone())),
            ),
        };
        let verdict = Verdict::from_bool(cond.pass && orderly.pass && cert_ok);
        let value = json!({
            "map": {
                "branches": b.map.branch_count(),
                "endpoints": b.map.branch_endpoints(),
                "expansion_radius": b.map.expansion_radius(),
            },
            "omega": modulus(&b.omega),
            "big_omega": modulus(&b.big_omega),
            "condition": scan_summary(&cond),
            "broad_condition": scan_summary(&broad),
            "orderly": { "pass": orderly.pass, "concave": orderly.concave, "plateau": orderly.plateau },
            "certificate": cert_json,
            "verdict": verdict.as_str(),
        });
        self.write_json("check.json", &value)?;
        Ok(Outcome {
            verdict,
            files: vec![
                "check_condition.csv".into(),
                "check_orderly.csv".into(),
                "check.json".into(),
            ],
            error,
        })
    }

    fn rpf(&self) -> Result<Outcome, CliError> {
        match self.manifest.verdict("check") {
            Some(Verdict::Pass) => {}
            _ if self.force => {}
            None => {
                return Err(CliError::MissingArtifact(
                    "run the check stage first (or pass --force)".into(),
                ))
            }
            Some(_) => {
                return Err(CliError::MissingArtifact(
                    "the check stage did not pass; pass --force to continue anyway".into(),
                ))
            }
        }
        let b = &self.built;
        let op = self.operator()?;
        let opts = self.cfg.eigen_options();
        let rpf = leading_eigendata(&b.map, &op, &b.potential, &opts)?;
        let normalized = self.normalized(&op, &rpf)?;
        let norm_residual = check_normalization(&normalized);
        let ulam_chi = if self.cfg.eigen.ulam_check {
            let u = UlamMatrix::new(&b.map, &b.potential, self.grid())?;
            Some(u.leading_eigenvalue(opts.tol, opts.max_iter)?)
        } else {
            None
        };
        let f_seminorm = self.f_seminorm();
        let cone = match self.load_certificate() {
            Ok(c) => Some(cone_membership(
                &rpf.h,
                f_seminorm / c.c1,
                &b.big_omega,
                c.rho1,
            )),
            Err(_) => None,
        };
        let h_nu: f64 = rpf
            .h
            .samples()
            .iter()
            .zip(&rpf.nu)
            .map(|(a, b)| a * b)
            .sum();

        let g = self.grid();
        let mut csv = Csv::new(&["i", "x", "h", "nu", "mu"]);
        for i in 0..g.len() {
            csv.row(&[&i, &g.node(i), &rpf.h.samples()[i], &rpf.nu[i], &rpf.mu[i]]);
        }
        csv.write(&self.path("rpf.csv"))?;
        let pass = norm_residual <= NORMALIZATION_LIMIT && cone.is_none_or(|c| c.holds);
        let verdict = Verdict::from_bool(pass);
        let value = json!({
            "chi": rpf.chi,
            "pressure": rpf.pressure,
            "chi_aitken": rpf.chi_aitken,
            "iterations": rpf.iterations,
            "dual_iterations": rpf.dual_iterations,
            "eigen_residual": rpf.residual,
            "eigen_delta": rpf.delta,
            "normalization_residual": norm_residual,
            "integral_h_nu": h_nu,
            "h_min": rpf.h.min(),
            "h_max": rpf.h.max(),
            "ulam_chi": ulam_chi,
            "f_seminorm": f_seminorm,
            "cone": cone,
            "verdict": verdict.as_str(),
        });
        self.write_json("rpf.json", &value)?;
        Ok(Outcome::ok(
            verdict,
            vec!["rpf.csv".into(), "rpf.json".into()],
        ))
    }

    fn dfly(&self) -> Result<Outcome, CliError> {
        let cert = self.load_certificate()?;
        let rpf = self.load_rpf()?;
        let b = &self.built;
        let op = self.operator()?;
        let normalized = self.normalized(&op, &rpf)?;
        let battery = self.battery();
        let f_seminorm = self.f_seminorm();
        let d = &self.cfg.dfly;
        let report = dfly_check(
            &b.map,
            &op,
            &normalized,
            &b.big_omega,
            &rpf,
            &cert,
            f_seminorm,
            &battery,
            &DflyParams {
                n_list: &d.n_list,
                pair_budget: d.pair_budget,
                seed: self.cfg.stage_seed(Stage::Dfly),
            },
        );
        let thetas = theta_sequence(&b.map, &op, rpf.chi, d.theta_n_max);
        let limit = theta_limit_check(&b.map, &normalized, d.theta_n_max);
        let d_grid = ispec_core::moduli::default_d_grid();
        let taus: Vec<f64> = thetas
            .iter()
            .map(|&t| tau(&b.big_omega, t, &d_grid))
            .collect();
        let orderly = vanishes_orderly(&b.big_omega, &default_orderly_sequence()).pass;
        let tau_final = *taus.last().unwrap();
        let tau_ok = !orderly || tau_final < TAU_LIMIT;

        let mut csv = Csv::new(&[
            "observable",
            "n",
            "theta",
            "tau",
            "gamma_empirical",
            "violations",
            "pairs",
        ]);
        for r in &report.rows {
            csv.row(&[
                &r.observable,
                &r.n,
                &r.theta,
                &r.tau,
                &r.gamma_empirical,
                &r.violations,
                &r.pairs,
            ]);
        }
        csv.write(&self.path("dfly.csv"))?;
        let mut csv = Csv::new(&["n", "theta", "tau", "normalized_sup"]);
        for n in 0..=d.theta_n_max {
            csv.row(&[&n, &thetas[n], &taus[n], &limit.sup_norms[n]]);
        }
        csv.write(&self.path("theta.csv"))?;

        let verdict = Verdict::from_bool(report.pass() && limit.strictly_decreasing && tau_ok);
        let value = json!({
            "kappa_f": report.kappa_f,
            "f_seminorm": f_seminorm,
            "gamma_formula": report.gamma_formula,
            "gamma_empirical": report.gamma_empirical,
            "violations": report.violations,
            "pairs_tested": report.pairs_tested,
            "n_values": report.n_values,
            "theta": report.theta,
            "tau": report.tau,
            "theta_monotone": report.theta_monotone,
            "theta_limit": {
                "n_max": d.theta_n_max,
                "strictly_decreasing": limit.strictly_decreasing,
                "first_failure": limit.first_failure,
            },
            "big_omega_vanishes_orderly": orderly,
            "tau_final": tau_final,
            "tau_ok": tau_ok,
            "verdict": verdict.as_str(),
        });
        self.write_json("dfly.json", &value)?;
        Ok(Outcome::ok(
            verdict,
            vec!["dfly.csv".into(), "theta.csv".into(), "dfly.json".into()],
        ))
    }

    fn gap(&self) -> Result<Outcome, CliError> {
        let rpf = self.load_rpf()?;
        let op = self.operator()?;
        let normalized = self.normalized(&op, &rpf)?;
        let battery = self.battery();
        let n_max = self.cfg.gap.n_max;
        let files = vec!["gap.csv".into(), "gap.json".into()];
        let est = match gap_estimate(&normalized, &self.built.big_omega, &rpf, &battery, n_max) {
            Ok(e) => e,
            Err(e @ Error::SeminormBlowup { .. }) => {
                Csv::new(&["n"]).write(&self.path("gap.csv"))?;
                self.write_json(
                    "gap.json",
                    &json!({ "error": e.to_string(), "verdict": "FAIL" }),
                )?;
                return Ok(Outcome::ok(Verdict::Fail, files));
            }
            Err(e) => return Err(e.into()),
        };
        let mut header = vec!["n"];
        header.extend(est.observables.iter().map(|o| o.name.as_str()));
        let mut csv = Csv::new(&header);
        for n in 0..=n_max {
            let mut cells: Vec<&dyn std::fmt::Display> = vec![&n];
            cells.extend(
                est.observables
                    .iter()
                    .map(|o| &o.norms[n] as &dyn std::fmt::Display),
            );
            csv.row(&cells);
        }
        csv.write(&self.path("gap.csv"))?;
        let verdict = Verdict::from_bool(est.pass && est.unit_ball_contracted);
        let per: Vec<Value> = est
            .observables
            .iter()
            .map(|o| {
                json!({
                    "name": o.name, "rho": o.rho, "r2": o.r2, "fit_range": o.fit_range, "contracted": o.contracted,
                })
            })
            .collect();
        let value = json!({
            "rho_hat": est.rho_hat,
            "r2": est.r2,
            "worst": est.worst,
            "unit_ball_contracted": est.unit_ball_contracted,
            "fit_pass": est.pass,
            "scope": format!("empirical at grid resolution M = {}", self.cfg.grid),
            "observables": per,
            "verdict": verdict.as_str(),
        });
        self.write_json("gap.json", &value)?;
        Ok(Outcome::ok(verdict, files))
    }

    fn decay(&self) -> Result<Outcome, CliError> {
        let rpf = self.load_rpf()?;
        let op = self.operator()?;
        let normalized = self.normalized(&op, &rpf)?;
        let battery = self.battery();
        let dc = &self.cfg.decay;
        // coherence with the gap estimate when that stage has run
        let rho_hat = self
            .require("gap")
            .ok()
            .and_then(|_| self.read_json("gap.json").ok())
            .and_then(|v| v["rho_hat"].as_f64());

        let mut csv = Csv::new(&["phi", "psi", "n", "c"]);
        let mut fits = Vec::new();
        let mut pass = true;
        for (a, b) in &dc.pairs {
            let phi = self.observable(&battery, a);
            let psi = self.observable(&battery, b);
            let c = correlation_sequence(&normalized, &rpf.mu, &phi, &psi, dc.n_max);
            for (n, v) in c.iter().enumerate() {
                csv.row(&[a, b, &n, v]);
            }
            let floor = noise_floor(&c);
            let mixing = mixing_check(&normalized, &rpf.mu, &phi, &psi, dc.mixing_n_max);
            let entry = match decay_fit(&c, floor) {
                Ok(f) => {
                    let coherent = rho_hat.map(|r| f.rho <= r + COHERENCE_SLACK);
                    pass &= f.pass && coherent != Some(false) && mixing.converged;
                    json!({
                        "phi": a, "psi": b, "c0": c[0], "noise_floor": floor,
                        "k": f.k, "rho": f.rho, "r2": f.r2, "floor_n": f.floor_n, "points": f.points,
                        "fit_pass": f.pass, "coherent_with_gap": coherent,
                        "mixing": { "tail_max": mixing.tail_max, "threshold": mixing.threshold, "converged": mixing.converged },
                    })
                }
                Err(e) => {
                    pass = false;
                    json!({ "phi": a, "psi": b, "c0": c[0], "noise_floor": floor, "error": e.to_string(),
                        "mixing": { "tail_max": mixing.tail_max, "threshold": mixing.threshold, "converged": mixing.converged } })
                }
            };
            fits.push(entry);
        }
        csv.write(&self.path("decay.csv"))?;
        let verdict = Verdict::from_bool(pass);
        self.write_json(
            "decay.json",
            &json!({ "rho_hat": rho_hat, "pairs": fits, "verdict": verdict.as_str() }),
        )?;
        Ok(Outcome::ok(
            verdict,
            vec!["decay.csv".into(), "decay.json".into()],
        ))
    }

    fn clt(&self) -> Result<Outcome, CliError> {
        let rpf = self.load_rpf()?;
        let op = self.operator()?;
        let normalized = self.normalized(&op, &rpf)?;
        let cc = &self.cfg.clt;
        let phi = self.observable(&self.battery(), &cc.observable);
        let params = CltParams {
            n_orbit: cc.n_orbit,
            n_samples: cc.n_samples,
            seed: self.cfg.stage_seed(Stage::Clt),
            gk_n_max: cc.gk_n_max,
            mode: cc.mode,
        };
        let files = vec!["clt.csv".into(), "clt.json".into()];
        let rep = match clt_test(
            &self.built.map,
            &self.built.potential,
            &normalized,
            &rpf,
            &phi,
            &params,
        ) {
            Ok(r) => r,
            Err(e @ Error::DegenerateVariance { .. }) => {
                Csv::new(&["i", "s"]).write(&self.path("clt.csv"))?;
                self.write_json(
                    "clt.json",
                    &json!({ "observable": cc.observable, "error": e.to_string(), "verdict": "FAIL" }),
                )?;
                return Ok(Outcome::ok(Verdict::Fail, files));
            }
            Err(e) => return Err(e.into()),
        };
        let mut csv = Csv::new(&["i", "s"]);
        for (i, s) in rep.samples.iter().enumerate() {
            csv.row(&[&i, s]);
        }
        csv.write(&self.path("clt.csv"))?;
        let verdict = Verdict::from_bool(rep.pass);
        let value = json!({
            "observable": cc.observable,
            "mode": cc.mode,
            "n_orbit": rep.n_orbit,
            "n_samples": rep.n_samples,
            "mean": rep.mean,
            "variance_gk": rep.variance_gk,
            "gamma_gk": rep.gamma_gk,
            "gamma_fit": rep.gamma_fit,
            "gk_lags": rep.gk_lags,
            "ks": rep.ks,
            "ratio": rep.ratio,
            "verdict": verdict.as_str(),
        });
        self.write_json("clt.json", &value)?;
        Ok(Outcome::ok(verdict, files))
    }
}

fn scan_summary(scan: &ConditionScan) -> Value {
    let rows: Vec<Value> = scan
        .rows
        .iter()
        .map(|r| json!({ "c": r.c, "tail_infimum": r.tail_infimum, "tail_log_slope": r.tail_log_slope }))
        .collect();
    json!({
        "pass": scan.pass,
        "big_omega_concave": scan.big_omega_concave,
        "omega_concave": scan.omega_concave,
        "rows": rows,
    })
}

fn fmt_num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.6}"),
        None if v.is_null() => "n/a".into(),
        None => v.to_string(),
    }
}

/// Writes `report.md` from the manifest and stage summaries and returns its text.
pub fn report(out: &Path) -> Result<String, CliError> {
    let mut manifest = RunManifest::load(out)?
        .ok_or_else(|| CliError::Config(format!("no manifest in {}", out.display())))?;
    let read = |f: &str| -> Option<Value> {
        manifest
            .stages
            .values()
            .any(|s| s.files.iter().any(|x| x == f))
            .then_some(())?;
        serde_json::from_str(&std::fs::read_to_string(out.join(f)).ok()?).ok()
    };
    let name = std::fs::read_to_string(out.join(CONFIG_COPY))
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| v["name"].as_str().map(str::to_string))
        .unwrap_or_default();

    let mut s = String::new();
    let title = if name.is_empty() {
        "Run report".to_string()
    } else {
        format!("Run report: {name}")
    };
    writeln!(s, "# {title}\n").unwrap();
    writeln!(s, "- tool version: {}", manifest.tool_version).unwrap();
    writeln!(s, "- config hash: `{}`\n", manifest.config_hash).unwrap();
    writeln!(s, "| stage | verdict | files |\n|---|---|---|").unwrap();
    for st in STAGES {
        match manifest.stages.get(st) {
            Some(r) => writeln!(
                s,
                "| {st} | {} | {} |",
                r.verdict.as_str(),
                r.files.join(", ")
            )
            .unwrap(),
            None => writeln!(s, "| {st} | SKIP | |").unwrap(),
        }
    }

    if let Some(v) = read("check.json") {
        let c = &v["certificate"];
        writeln!(s, "\n## Check\n").unwrap();
        writeln!(s, "- condition scan: {}", v["condition"]["pass"]).unwrap();
        writeln!(
            s,
            "- Ω vanishes orderly: {} (plateau {})",
            v["orderly"]["pass"],
            fmt_num(&v["orderly"]["plateau"])
        )
        .unwrap();
        match c.get("error") {
            Some(e) => writeln!(s, "- certificate: {e}").unwrap(),
            None => writeln!(
                s,
                "- certificate: C_1 = {}, ϱ_1 = {}, margin = {}, depth {}",
                fmt_num(&c["c1"]),
                fmt_num(&c["rho1"]),
                c["margin"],
                c["depth_tested"]
            )
            .unwrap(),
        }
    }
    if let Some(v) = read("rpf.json") {
        writeln!(s, "\n## Eigendata\n").unwrap();
        writeln!(
            s,
            "- χ = {} (pressure {})",
            v["chi"],
            fmt_num(&v["pressure"])
        )
        .unwrap();
        writeln!(s, "- Ulam χ = {}", v["ulam_chi"]).unwrap();
        writeln!(s, "- ‖L_f̃ 1 − 1‖_∞ = {}", v["normalization_residual"]).unwrap();
        writeln!(
            s,
            "- iterations: {} (dual {})",
            v["iterations"], v["dual_iterations"]
        )
        .unwrap();
    }
    if let Some(v) = read("dfly.json") {
        writeln!(s, "\n## DFLY\n").unwrap();
        writeln!(
            s,
            "- κ_f = {}, Γ (formula) = {}, Γ (empirical) = {}",
            fmt_num(&v["kappa_f"]),
            fmt_num(&v["gamma_formula"]),
            fmt_num(&v["gamma_empirical"])
        )
        .unwrap();
        writeln!(
            s,
            "- violations: {} of {} pairs",
            v["violations"], v["pairs_tested"]
        )
        .unwrap();
        writeln!(
            s,
            "- θ strictly decreasing: {}; final τ = {}",
            v["theta_limit"]["strictly_decreasing"],
            fmt_num(&v["tau_final"])
        )
        .unwrap();
    }
    if let Some(v) = read("gap.json") {
        writeln!(s, "\n## Spectral gap\n").unwrap();
        match v.get("error") {
            Some(e) => writeln!(s, "- {e}").unwrap(),
            None => writeln!(
                s,
                "- ρ̂ = {} (R² = {}, worst observable {}), {}",
                fmt_num(&v["rho_hat"]),
                fmt_num(&v["r2"]),
                v["worst"],
                v["scope"].as_str().unwrap_or("")
            )
            .unwrap(),
        }
    }
    if let Some(v) = read("decay.json") {
        writeln!(s, "\n## Correlation decay\n").unwrap();
        writeln!(s, "| φ | ψ | K | ρ | R² |\n|---|---|---|---|---|").unwrap();
        for p in v["pairs"].as_array().into_iter().flatten() {
            writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                p["phi"].as_str().unwrap_or(""),
                p["psi"].as_str().unwrap_or(""),
                fmt_num(&p["k"]),
                fmt_num(&p["rho"]),
                fmt_num(&p["r2"])
            )
            .unwrap();
        }
    }
    if let Some(v) = read("clt.json") {
        writeln!(s, "\n## Central limit theorem\n").unwrap();
        match v.get("error") {
            Some(e) => writeln!(s, "- {e}").unwrap(),
            None => writeln!(
                s,
                "- γ̂_gk = {}, γ̂_fit = {}, KS = {} (n_orbit {}, {} samples)",
                fmt_num(&v["gamma_gk"]),
                fmt_num(&v["gamma_fit"]),
                fmt_num(&v["ks"]),
                v["n_orbit"],
                v["n_samples"]
            )
            .unwrap(),
        }
    }
    writeln!(s, "\n## Files\n").unwrap();
    for (f, h) in &manifest.files {
        if f != REPORT {
            writeln!(s, "- `{f}` sha256 `{h}`").unwrap();
        }
    }
    std::fs::write(out.join(REPORT), &s)?;
    manifest.record_file(out, REPORT)?;
    manifest.save(out)?;
    Ok(s)
}
