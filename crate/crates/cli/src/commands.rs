//! The subcommands.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use sofic_glauber::diagnostics::{gibbs_conditional_check, non_gibbs_certificate, GibbsReport, NonGibbsCertificate};
use sofic_glauber::dynamics::{Glauber, TrajectoryEvent};
use sofic_glauber::fed::{fed_bounds_check, fed_estimate, fed_via_log_z, FedEstimate, FedLogZ, SoficSequence};
use sofic_glauber::homgraph::{fitting_radius, sofic_delta};
use sofic_glauber::state::Microstate;
use sofic_glauber::verify::{run_suite, Suite, SuiteReport};

use crate::config::{ExperimentConfig, InitialState};
use crate::output::{cell, letters, num, OutDir};

/// Why a command stopped; maps to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1.
    ChecksFailed(String),
    /// Exit 2: unusable configuration, exceeded budgets, I/O.
    Config(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::ChecksFailed(_) => 1,
            Failure::Config(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::ChecksFailed(m) | Failure::Config(m) => m,
        }
    }
}

impl From<String> for Failure {
    fn from(m: String) -> Self {
        Failure::Config(m)
    }
}

impl From<sofic_glauber::Error> for Failure {
    fn from(e: sofic_glauber::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
    s.as_ref().ok_or_else(|| Failure::Config(format!("config: missing field `{name}`")))
}

/// Exact snapshots at `dynamics.times` and, optionally, sampled trajectories.
pub fn simulate(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), Failure> {
    let dynamics = section(&cfg.dynamics, "dynamics")?;
    let model = cfg.model()?;
    let times = &dynamics.times;
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Failure::Config("dynamics.times must be nonempty, nonnegative and nondecreasing".into()));
    }
    let horizon = *times.last().expect("nonempty");
    let a = model.alphabet();
    for (m, member) in cfg.members()?.iter().enumerate() {
        let n = member.hom.len();
        if dynamics.exact {
            let g = Glauber::dense(model, &member.hom)?;
            let zeta0 = dynamics.initial.dense(n, a)?;
            let path = g.evolve_path(&zeta0, times, dynamics.dt)?;
            let mut fe_rows = vec![];
            for (k, (zeta, &t)) in path.iter().zip(times).enumerate() {
                let rows = zeta
                    .probs()
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| vec![cell(i), letters(&zeta.microstate(i)), num(p)]);
                out.csv(&format!("snapshot_m{m}_t{k}.csv"), &["index", "configuration", "probability"], rows)?;
                // the derivative needs full support; leave the cell empty otherwise
                let derivative = g.free_energy_derivative(zeta).map(num).unwrap_or_default();
                fe_rows.push(vec![cell(k), num(t), num(g.free_energy(zeta)?), derivative]);
            }
            out.csv(
                &format!("free_energy_m{m}.csv"),
                &["snapshot", "time", "free_energy", "derivative"],
                fe_rows,
            )?;
        }
        if dynamics.trajectories > 0 {
            let g = Glauber::sampler(model, &member.hom)?;
            let law = match &dynamics.initial {
                InitialState::Uniform => vec![1.0 / a as f64; a],
                InitialState::Product(law) if law.len() == a => law.clone(),
                InitialState::Product(law) => {
                    return Err(Failure::Config(format!(
                        "dynamics.initial.product has {} entries for {a} letters",
                        law.len()
                    )))
                }
                InitialState::PointMass(x) if x.len() == n && x.iter().all(|&l| (l as usize) < a) => vec![],
                InitialState::PointMass(_) => {
                    return Err(Failure::Config("dynamics.initial.point_mass does not fit the action".into()))
                }
            };
            let runs: Vec<(Microstate, Microstate, Vec<TrajectoryEvent>)> = (0..dynamics.trajectories)
                .into_par_iter()
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(dynamics.seed);
                    rng.set_stream(k as u64 + 1);
                    let x0: Microstate = match &dynamics.initial {
                        InitialState::PointMass(x) => x.clone(),
                        _ => (0..n).map(|_| draw(&law, &mut rng)).collect(),
                    };
                    let mut x = x0.clone();
                    let mut events = vec![];
                    g.run(&mut x, horizon, &mut rng, |e| events.push(e));
                    (x0, x, events)
                })
                .collect();
            out.csv(
                &format!("trajectories_m{m}.csv"),
                &["trajectory", "time", "site", "new_letter"],
                runs.iter().enumerate().flat_map(|(k, (_, _, ev))| {
                    ev.iter()
                        .map(move |e| vec![cell(k), num(e.time), cell(e.site), cell(e.new_letter)])
                }),
            )?;
            out.csv(
                &format!("trajectory_states_m{m}.csv"),
                &["trajectory", "initial", "final", "events"],
                runs.iter()
                    .enumerate()
                    .map(|(k, (x0, x, ev))| vec![cell(k), letters(x0), letters(x), cell(ev.len())]),
            )?;
        }
    }
    Ok(())
}

fn draw(law: &[f64], rng: &mut ChaCha8Rng) -> u8 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &p) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return a as u8;
        }
    }
    (law.len() - 1) as u8
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    pass: bool,
    suites: &'a [SuiteReport],
}

/// Runs the named suite, or all of them; any failed check exits 1.
pub fn verify(cfg: &ExperimentConfig, suite: &str, out: &OutDir) -> Result<(), Failure> {
    let suites: Vec<Suite> = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![suite.parse()?]
    };
    let params = cfg.verify_params();
    let mut reports = vec![];
    for s in suites {
        let r = run_suite(s, &params)?;
        println!("{}: {} in {:.2}s", r.suite, if r.pass { "PASS" } else { "FAIL" }, r.seconds);
        for c in &r.checks {
            let mark = if c.pass { "ok" } else { "!!" };
            println!("  [{mark}] {}: {:e} {} {:e}", c.name, c.value, c.relation, c.limit);
        }
        reports.push(r);
    }
    let pass = reports.iter().all(|r| r.pass);
    out.json(
        "verify_report.json",
        &VerifyReport {
            pass,
            suites: &reports,
        },
    )?;
    if pass {
        Ok(())
    } else {
        let failed: Vec<String> = reports.iter().filter(|r| !r.pass).map(|r| r.suite.to_string()).collect();
        Err(Failure::ChecksFailed(format!("failed suites: {}", failed.join(", "))))
    }
}

/// `δ_R` tables and `Δ` per configured action.
pub fn sofic(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), Failure> {
    let params = cfg.sofic.clone().unwrap_or(crate::config::SoficConfig {
        r_max: 20,
        fit_radius: false,
    });
    let members = cfg.members()?;
    let deltas = members
        .par_iter()
        .map(|m| {
            let r_max = if params.fit_radius {
                fitting_radius(&cfg.group, m.hom.len(), params.r_max)?
            } else {
                params.r_max
            };
            sofic_delta(&m.hom, &cfg.group, r_max)
        })
        .collect::<sofic_glauber::Result<Vec<_>>>()?;
    out.csv(
        "delta.csv",
        &["member", "n", "r_max", "r_star", "delta", "slack"],
        members.iter().zip(&deltas).map(|(m, d)| {
            vec![
                m.label.clone(),
                cell(m.hom.len()),
                cell(d.deltas.len() - 1),
                cell(d.argmin_r),
                num(d.value),
                num(d.slack),
            ]
        }),
    )?;
    out.csv(
        "delta_r.csv",
        &["member", "n", "radius", "delta_r"],
        members.iter().zip(&deltas).flat_map(|(m, d)| {
            d.deltas
                .iter()
                .enumerate()
                .map(move |(r, &x)| vec![m.label.clone(), cell(m.hom.len()), cell(r), num(x)])
        }),
    )?;
    let mut by_size: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (m, d) in members.iter().zip(&deltas) {
        by_size.entry(m.hom.len()).or_default().push(d.value);
    }
    out.csv(
        "delta_medians.csv",
        &["n", "count", "median_delta"],
        by_size.into_iter().map(|(n, mut v)| {
            v.sort_by(f64::total_cmp);
            let k = v.len();
            let median = if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) };
            vec![cell(n), cell(k), num(median)]
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct FedReport<'a> {
    estimate: &'a FedEstimate,
    /// Whether each cell lies in `[u_min − log|A|, u_max] ∪ {+∞}`.
    bounds_ok: Vec<bool>,
    /// Minimal free energy density from the partition functions, when computable.
    log_z: Option<FedLogZ>,
}

/// Free-energy density table over members × ε.
pub fn fed(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), Failure> {
    let params = section(&cfg.fed, "fed")?;
    let model = cfg.model()?;
    let homs = SoficSequence::Explicit(cfg.members()?.into_iter().map(|m| m.hom).collect()).build(&cfg.group)?;
    let ball = cfg.ball(params.radius)?;
    let target = params.target.marginal(&cfg.group, &ball, model.alphabet())?;
    let est = fed_estimate(
        &homs,
        &cfg.group,
        model,
        &target,
        &ball,
        &params.epsilons,
        &params.solver.options(),
    )?;
    out.csv(
        "fed_cells.csv",
        &[
            "n",
            "epsilon",
            "radius",
            "value",
            "lower_bound",
            "residual",
            "status",
            "iterations",
            "carried",
        ],
        est.cells.iter().map(|c| {
            vec![
                cell(c.n),
                num(c.epsilon),
                cell(c.radius),
                num(c.value),
                num(c.lower_bound),
                num(c.residual),
                serde_json::to_value(c.status).expect("status").as_str().unwrap_or_default().to_string(),
                cell(c.iterations),
                cell(c.carried),
            ]
        }),
    )?;
    let bounds_ok = est
        .cells
        .iter()
        .map(|c| fed_bounds_check(c.value, model, cfg.group.rank()))
        .collect();
    let log_z = fed_via_log_z(&homs, model).ok();
    out.json(
        "fed.json",
        &FedReport {
            estimate: &est,
            bounds_ok,
            log_z,
        },
    )?;
    match est.headline {
        Some((n, eps, v)) => println!("fed ≈ {v} (n = {n}, ε = {eps})"),
        None => println!("fed = +inf: no consistent microstates in any cell"),
    }
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseReport {
    report: GibbsReport,
    certificate: Option<NonGibbsCertificate>,
}

/// Per-depth conditional-consistency verdict and a non-Gibbs certificate.
pub fn diagnose(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), Failure> {
    let params = section(&cfg.diagnose, "diagnose")?;
    let model = cfg.model()?;
    let ball = cfg.ball(params.radius)?;
    let mu = params.target.marginal(&cfg.group, &ball, model.alphabet())?;
    let report = gibbs_conditional_check(&mu, model, &ball, params.tol)?;
    let certificate = non_gibbs_certificate(&mu, model, &ball)?;
    out.csv(
        "delta_a.csv",
        &["radius", "letter", "delta_a"],
        report.deltas.iter().enumerate().flat_map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(move |(a, &d)| vec![cell(r + 1), cell(a), num(d)])
        }),
    )?;
    println!("verdict: {}", serde_json::to_string(&report.verdict).map_err(|e| e.to_string())?);
    out.json("gibbs_report.json", &DiagnoseReport { report, certificate })?;
    Ok(())
}
