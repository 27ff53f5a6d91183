use std::path::Path;

use rarexact::cmdp::{solve_cmdp, AuditReport, DualIterate};
use rarexact::montecarlo::{randomization_rejection_rate, simulate_with, BurnIn, RngSeed, GENERATOR};
use rarexact::oc::{profile, profile_difference};
use rarexact::policy::PolicyTableDoc;
use rarexact::{path_weights, Arm, PathWeightTable, Policy, TestRule};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{config_json, rate, write_bytes, write_json, Csv};
use crate::{CliError, Io};

fn weights(cfg: &RunConfig, policy: &Policy, file: Option<&Path>) -> Result<PathWeightTable, CliError> {
    let Some(path) = file else {
        return Ok(path_weights(policy)?);
    };
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let g = PathWeightTable::read_from(std::io::BufReader::new(f))?;
    let want = policy.descriptor();
    if g.n != cfg.n || g.burn_in != cfg.burn_in || g.descriptor != want {
        return Err(CliError::config(format!(
            "{} holds {} (n={}, b={}) but the configuration asks for {want} (n={}, b={})",
            path.display(),
            g.descriptor,
            g.n,
            g.burn_in,
            cfg.n,
            cfg.burn_in
        )));
    }
    Ok(g)
}

fn build_rules(cfg: &RunConfig, g: &PathWeightTable) -> Result<Vec<TestRule>, CliError> {
    cfg.tests.iter().map(|&k| Ok(TestRule::build(k, g, cfg.alpha)?)).collect()
}

pub fn design(io: &Io) -> Result<(), CliError> {
    let cfg = RunConfig::load(&io.config)?;
    let mut g = path_weights(&cfg.policy()?)?;
    g.meta = format!("rarexact {} {}", rarexact::VERSION, config_json(&cfg));
    let mut bytes = Vec::new();
    g.write_to(&mut bytes)?;
    write_bytes(&io.out, &bytes)
}

#[derive(Serialize, Deserialize)]
struct RuleFile {
    descriptor: String,
    n: u32,
    burn_in: u32,
    rules: Vec<TestRule>,
}

pub fn crit(io: &Io, weights_file: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(&io.config)?;
    let g = weights(&cfg, &cfg.policy()?, weights_file)?;
    let rules = build_rules(&cfg, &g)?;
    write_json(&io.out, &cfg, RuleFile { descriptor: g.descriptor.clone(), n: g.n, burn_in: g.burn_in, rules })
}

pub fn oc(io: &Io, weights_file: Option<&Path>, rules_file: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(&io.config)?;
    let g = weights(&cfg, &cfg.policy()?, weights_file)?;
    let rules = match rules_file {
        None => build_rules(&cfg, &g)?,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let f: RuleFile = serde_json::from_str(&text).map_err(|e| CliError::format(format!("{}: {e}", path.display())))?;
            if f.n != g.n || f.burn_in != g.burn_in || f.descriptor != g.descriptor {
                return Err(CliError::config(format!("{} was built for {} (n={}, b={})", path.display(), f.descriptor, f.n, f.burn_in)));
            }
            f.rules
        }
    };
    let mut csv = Csv::new(&cfg, &[], &["policy", "test", "theta_c", "theta_d", "rejection_rate", "patient_benefit"]);
    for rule in &rules {
        let prof = profile(&g, rule, &cfg.theta)?;
        for p in &prof.points {
            csv.row(&[
                prof.policy.clone(),
                prof.test.label().to_string(),
                p.theta_c.to_string(),
                p.theta_d.to_string(),
                rate(p.rejection_rate),
                rate(p.patient_benefit),
            ]);
        }
    }
    csv.write(&io.out)
}

pub fn power_diff(io: &Io) -> Result<(), CliError> {
    let cfg = RunConfig::load(&io.config)?;
    let (a, b) = (cfg.policy()?, cfg.baseline()?);
    let (ga, gb) = (path_weights(&a)?, path_weights(&b)?);
    let headers = [("policy", a.descriptor()), ("baseline", b.descriptor())];
    let mut csv = Csv::new(
        &cfg,
        &headers,
        &[
            "test",
            "theta_c",
            "theta_d",
            "rejection_rate",
            "baseline_rejection_rate",
            "rejection_rate_diff",
            "patient_benefit",
            "baseline_patient_benefit",
            "patient_benefit_diff",
        ],
    );
    for &kind in &cfg.tests {
        let pa = profile(&ga, &TestRule::build(kind, &ga, cfg.alpha)?, &cfg.theta)?;
        let pb = profile(&gb, &TestRule::build(kind, &gb, cfg.alpha)?, &cfg.theta)?;
        let diff = profile_difference(&pa, &pb)?;
        for ((p, q), d) in pa.points.iter().zip(&pb.points).zip(&diff) {
            csv.row(&[
                kind.label().to_string(),
                p.theta_c.to_string(),
                p.theta_d.to_string(),
                rate(p.rejection_rate),
                rate(q.rejection_rate),
                rate(d.rejection_rate),
                rate(p.patient_benefit),
                rate(q.patient_benefit),
                rate(d.patient_benefit),
            ]);
        }
    }
    csv.write(&io.out)
}

#[derive(Serialize)]
struct TableArtifact {
    table: PolicyTableDoc,
}

#[derive(Serialize)]
struct AuditArtifact<'a> {
    audit: &'a AuditReport,
    infeasible_at_tolerance: bool,
    /// Equal allocation audited against the same constraints.
    baseline: Option<&'a AuditReport>,
    /// Upper bound on the objective of any table meeting the constraints within tolerance.
    dual_bound: f64,
    multipliers: &'a [f64],
    history: &'a [DualIterate],
}

pub fn cmdp_solve(io: &Io, audit_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(&io.config)?;
    let spec = cfg.cmdp_spec();
    let sol = solve_cmdp(&spec)?;
    write_json(&io.out, &cfg, TableArtifact { table: PolicyTableDoc::from(sol.table.as_ref()) })?;
    write_json(
        audit_path,
        &cfg,
        AuditArtifact {
            audit: &sol.audit,
            infeasible_at_tolerance: sol.infeasible_at_tolerance,
            baseline: sol.baseline.as_ref(),
            dual_bound: sol.dual.relaxed_bound(spec.dual.tolerance),
            multipliers: &sol.dual.multipliers,
            history: &sol.dual.history,
        },
    )?;
    if sol.infeasible_at_tolerance {
        return Err(rarexact::Error::Infeasible(format!(
            "no iterate met every constraint within {}; least violating table written (max violation {:.3e})",
            spec.dual.tolerance, sol.audit.max_violation
        ))
        .into());
    }
    Ok(())
}

pub fn randtest(io: &Io) -> Result<(), CliError> {
    let cfg = RunConfig::load(&io.config)?;
    let policy = cfg.policy()?;
    let mc = &cfg.mc;
    let mut csv = Csv::new(
        &cfg,
        &[("generator", GENERATOR.to_string())],
        &["policy", "theta_c", "theta_d", "estimate", "half_width", "ci_low", "ci_high", "sims", "reps", "seed"],
    );
    for &theta in &mc.theta {
        let est = randomization_rejection_rate(&policy, theta, mc.sims, mc.reps, cfg.alpha, RngSeed::new(mc.seed))?;
        let (lo, hi) = est.interval();
        csv.row(&[
            policy.descriptor(),
            theta.0.to_string(),
            theta.1.to_string(),
            rate(est.estimate),
            rate(est.half_width),
            rate(lo),
            rate(hi),
            est.sims.to_string(),
            est.reps.to_string(),
            est.seed.seed.to_string(),
        ]);
    }
    csv.write(&io.out)
}

pub fn paths(io: &Io) -> Result<(), CliError> {
    let cfg = RunConfig::load(&io.config)?;
    let policy = cfg.policy()?;
    let opt = &cfg.paths;
    let seed = RngSeed::new(opt.seed);
    let mut csv = Csv::new(
        &cfg,
        &[("policy", policy.descriptor()), ("generator", GENERATOR.to_string())],
        &["trial", "t", "arm", "outcome", "proportion_control"],
    );
    for i in 0..opt.trials {
        let h = simulate_with(&policy, opt.theta, BurnIn::Alternate, &mut seed.stream(i))?;
        for (t, (&(arm, y), prop)) in h.steps.iter().zip(h.running_proportion()).enumerate() {
            let arm = if arm == Arm::C { "C" } else { "D" };
            csv.row(&[i.to_string(), (t + 1).to_string(), arm.into(), (y as u8).to_string(), rate(prop)]);
        }
    }
    csv.write(&io.out)
}
