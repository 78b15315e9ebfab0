use std::io::Write;
use std::path::Path;

use cadlag::basis::{FittedFunction, ModelFile, Provenance};
use cadlag::bernstein::{certify_subexp, run_bernstein_audits, NoiseFamily, NoiseModel};
use cadlag::data::Dataset;
use cadlag::entropy::{audit_cdf_bruteforce, audit_transform, audit_variation_ball, entropy_integral_check, ENTROPY_RATIO_CONSTANT};
use cadlag::losses::{make_loss, LossFamily};
use cadlag::rng::{hash_hex, substream};
use cadlag::sim::{run_rate_experiment, svg_plot, ExperimentConfig, RunOptions};
use cadlag::solver::{fit_erm, sieve_radius, ScheduleKind, SieveSchedule, SolveOptions};
use cadlag::svn::svn_exact;
use cadlag::{Error, GridFunction, Result};
use serde_json::json;

use crate::io::{read_config, read_csv, read_json, to_json, write_atomic};
use crate::{BernsteinArgs, BracketArgs, BracketClass, EntropyArgs, FitArgs, PredictArgs, SimulateArgs, SvnArgs};

/// `{"error": kind, "message": ..}`, plus the payload of audit failures.
pub fn error_body(e: &Error) -> String {
    let mut body = json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::AuditViolation { inequality, lhs, rhs, slack } = e {
        body["violation"] = json!({ "inequality": inequality, "lhs": lhs, "rhs": rhs, "slack": slack });
    }
    body.to_string()
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

pub fn fit(a: FitArgs) -> Result<()> {
    let table = read_csv(&a.data, true)?;
    let data = Dataset::new(table.x, table.y.expect("required"))?;
    let family: LossFamily = a.loss.parse()?;
    let defaults = SolveOptions::default();
    let opts = SolveOptions {
        max_iters: a.max_iters.unwrap_or(defaults.max_iters),
        grad_tol: a.grad_tol.unwrap_or(defaults.grad_tol),
        objective_tol: a.objective_tol.unwrap_or(defaults.objective_tol),
        ..defaults
    };
    let radius = match (a.radius, a.a) {
        (Some(r), _) => r,
        (None, Some(big_a)) => {
            let kind: ScheduleKind = a.schedule.parse()?;
            let schedule = SieveSchedule { kind, a: big_a, p: a.p };
            schedule.validate()?;
            sieve_radius(&schedule, data.len())
        }
        (None, None) => unreachable!("clap requires --radius or --A"),
    };
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidInput(format!("radius must be finite and nonnegative, got {radius}")));
    }
    let a_tilde = match a.a_tilde {
        Some(v) => v,
        None if family == LossFamily::Logistic => radius,
        None => data.y.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    };
    let loss = make_loss(&a.loss, a_tilde)?;
    let data_hash = hash_hex(&std::fs::read(&a.data)?);
    let config = json!({
        "verb": "fit", "data_sha256": data_hash, "loss": family.name(), "radius": radius,
        "a_tilde": a_tilde, "solver": opts, "seed": a.seed,
    });
    let config_hash = hash_hex(config.to_string().as_bytes());
    let report = fit_erm(&data, &loss, radius, &opts)?;
    let fit = report.fit.sparsify();
    let model = fit.to_model(Some(Provenance { config_hash: config_hash.clone(), seed: a.seed }));
    write_atomic(&a.out, &to_json(&model)?)?;
    let summary = json!({
        "status": report.status, "iterations": report.iterations, "objective": report.final_objective,
        "kkt_residual": report.kkt_residual, "active_set_size": fit.active_set_size(),
        "radius": radius, "fit_svn": fit.fit_svn(), "config_hash": config_hash, "seed": a.seed,
    });
    println!("{summary}");
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model: ModelFile = read_json(&a.model)?;
    let fit = FittedFunction::from_model(&model)?;
    let table = read_csv(&a.data, false)?;
    let mut s = String::from("prediction\n");
    for x in &table.x {
        if x.len() != fit.dim() {
            return Err(Error::InvalidInput(format!("data has {} columns, model dimension {}", x.len(), fit.dim())));
        }
    }
    for x in &table.x {
        s.push_str(&format!("{}\n", fit.predict(x)?));
    }
    emit(a.out.as_deref(), s.as_bytes())
}

pub fn svn(a: SvnArgs) -> Result<()> {
    let value = if let Some(p) = &a.source.model {
        let model: ModelFile = read_json(p)?;
        FittedFunction::from_model(&model)?.fit_svn()
    } else {
        let f: GridFunction = read_json(a.source.function.as_ref().expect("clap group"))?;
        svn_exact(&f)
    };
    println!("{value}");
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut config: ExperimentConfig = read_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let report = run_rate_experiment(&config, &RunOptions { checkpoint_dir: a.checkpoint_dir.clone() })?;
    write_atomic(&a.out, &to_json(&report)?)?;
    if let Some(p) = &a.csv {
        write_atomic(p, report.to_csv().as_bytes())?;
    }
    if let Some(p) = &a.plot {
        write_atomic(p, svg_plot(&report).as_bytes())?;
    }
    println!(
        "{}",
        json!({
            "corrected_slope": report.corrected_slope, "raw_slope": report.raw_slope,
            "slope_std_error": report.slope_std_error, "config_hash": report.config_hash, "seed": report.seed,
        })
    );
    Ok(())
}

pub fn bracket_audit(a: BracketArgs) -> Result<()> {
    let report = match a.class {
        BracketClass::Ball => audit_variation_ball(a.dim, a.epsilon, a.grid_size, a.functions, a.random_brackets, a.seed)?,
        BracketClass::Cdf => audit_cdf_bruteforce(a.epsilon, a.grid_size, a.levels)?,
        BracketClass::Loss => audit_transform(a.functions, a.a_tilde, a.seed)?,
    };
    emit(a.out.as_deref(), &to_json(&report)?)?;
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(Error::AuditViolation {
            inequality: format!("{} ({})", v.kind, v.detail),
            lhs: v.amount,
            rhs: 0.0,
            slack: 0.0,
        }),
    }
}

pub fn bernstein_audit(a: BernsteinArgs) -> Result<()> {
    let family: NoiseFamily = a.noise.parse()?;
    let noise = if a.certify {
        let mut rng = substream(a.seed, "certify", &[]);
        certify_subexp(family, a.scale, &mut rng)?
    } else {
        NoiseModel::uncertified(family, a.scale)?
    };
    let report = run_bernstein_audits(&noise, a.dim, a.grid_size, a.a_n, a.draws, a.repetitions, a.seed)?;
    emit(a.out.as_deref(), &to_json(&report)?)?;
    match report.first_failure() {
        None => Ok(()),
        Some(f) => Err(Error::AuditViolation { inequality: f.inequality.clone(), lhs: f.lhs, rhs: f.rhs, slack: f.slack }),
    }
}

pub fn entropy_integral(a: EntropyArgs) -> Result<()> {
    let value = if a.sweep {
        let mut rows = Vec::new();
        let mut max_ratio = 0.0f64;
        for d in 1..=3 {
            for k in 1..=6 {
                let r = entropy_integral_check(10f64.powi(-k), d)?;
                max_ratio = max_ratio.max(r.ratio);
                rows.push(r);
            }
        }
        json!({ "results": rows, "max_ratio": max_ratio, "constant": ENTROPY_RATIO_CONSTANT, "bounded": max_ratio <= ENTROPY_RATIO_CONSTANT })
    } else {
        serde_json::to_value(entropy_integral_check(a.delta.expect("clap requires delta"), a.d)?)?
    };
    emit(a.out.as_deref(), &to_json(&value)?)
}
