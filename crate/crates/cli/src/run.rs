//! The `analyze`, `section`, `synthesize` and `simulate` pipelines.

use nlstab_core::brockett::{openness_probe_with, ProbeOptions};
use nlstab_core::lintest::{hautus_test, rank_verdict, spectrum_plus};
use nlstab_core::model::{jacobian_fd, FnField};
use nlstab_core::section::{build_section, SectionError, SectionOptions, SectionTable};
use nlstab_core::solve::SolveOptions;
use nlstab_core::synth::{
    check_exponential_condition, synthesize_composition_symbol, synthesize_feedback, ClosedLoop, FeedbackTable,
    SymbolTable, SynthError,
};
use nlstab_core::verify::{classify_stability, simulate, spectrum_at_origin, ClassifyOptions, SimulateOptions};
use nlstab_core::{linearize, Field};
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::report::{self, num, object, vector, vectors};
use crate::tables;
use crate::{CliError, RunOutput, Status};

fn meta(cfg: &RunConfig, command: &str) -> Value {
    object([
        ("command", Value::from(command)),
        ("system", Value::from(cfg.system.name())),
        ("n", Value::from(cfg.system.n())),
        ("m", Value::from(cfg.system.m())),
        ("version", Value::from(env!("CARGO_PKG_VERSION"))),
    ])
}

fn base_report(cfg: &RunConfig, command: &str) -> Map<String, Value> {
    let mut r = Map::new();
    r.insert("meta".into(), meta(cfg, command));
    r
}

fn solve_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        bound: None,
    }
}

fn simulate_options(cfg: &RunConfig) -> SimulateOptions {
    SimulateOptions {
        rel_tol: cfg.simulate.rel_tol,
        abs_tol: cfg.simulate.abs_tol,
    }
}

/// Linear tests and the openness probe. Findings never change the exit code.
pub fn run_analyze(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let sys = &cfg.system;
    let n = sys.n();
    let lin = linearize(sys).map_err(CliError::numeric)?;
    let plus = spectrum_plus(&lin.a).map_err(CliError::numeric)?;
    let hautus = hautus_test(&lin.a, &lin.b).map_err(CliError::numeric)?;
    let rank = rank_verdict(&lin.joint()).map_err(CliError::numeric)?;
    let probe = openness_probe_with(
        sys,
        &ProbeOptions {
            radius: cfg.solver.radius,
            directions: cfg.solver.directions,
            seed: cfg.solver.seed,
            multistart: cfg.solver.multistart,
            max_iter: cfg.solver.max_iter,
        },
    );

    let mut r = base_report(cfg, "analyze");
    r.insert(
        "linearization".into(),
        object([("A", report::matrix(&lin.a)), ("B", report::matrix(&lin.b))]),
    );
    r.insert("spectrum_plus".into(), report::spectrum(&plus));
    r.insert("hautus".into(), report::hautus(&hautus));
    r.insert("rank".into(), report::rank(&rank, n));
    r.insert("brockett".into(), report::openness(&probe, cfg.solver.radius));

    let mut summary = vec![
        format!("system {} (n = {n}, m = {})", sys.name(), sys.m()),
        format!(
            "hautus: {}",
            if hautus.stabilizable {
                "stabilizable"
            } else {
                "not stabilizable"
            }
        ),
    ];
    for c in hautus.checks.iter().filter(|c| c.rank < c.required) {
        summary.push(format!(
            "  rank {} < {} at lambda = {:.6} {:+.6}i",
            c.rank, c.required, c.eigenvalue.re, c.eigenvalue.im
        ));
    }
    summary.push(format!("rank [A|B] = {} of {n}", rank.rank));
    summary.push(match &probe.witness {
        Some(w) => format!("openness: violation, witness {w:?}"),
        None => "openness: no violation found".into(),
    });
    Ok(RunOutput {
        status: Status::Success,
        report: r,
        table: None,
        summary,
    })
}

fn section_report(t: &SectionTable, cfg: &RunConfig) -> Value {
    let unsolved = t.unsolved();
    object([
        ("complete", Value::from(t.is_complete())),
        ("radius", num(cfg.solver.radius)),
        ("grid", Value::from(cfg.solver.grid)),
        ("tol", num(t.tol())),
        ("domain", cfg.solver.domain.map_or(Value::Null, num)),
        ("nodes", Value::from(t.len())),
        ("unsolved", Value::from(unsolved.len())),
        ("unsolved_nodes", vectors(unsolved)),
        ("max_residual", num(t.max_residual())),
        ("lipschitz", num(t.lipschitz())),
    ])
}

/// Tabulates a minimum-norm section; an incomplete table is an obstruction.
pub fn run_section(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let opts = SectionOptions {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        domain: cfg.solver.domain,
        ..SectionOptions::for_radius(cfg.solver.radius)
    };
    let (table, status) = match build_section(&cfg.system, cfg.solver.radius, cfg.solver.grid, &opts) {
        Ok(t) => (t, Status::Success),
        Err(SectionError::Incomplete(t)) => (*t, Status::Obstruction),
        Err(e) => return Err(CliError::numeric(e)),
    };
    let mut r = base_report(cfg, "section");
    r.insert("section".into(), section_report(&table, cfg));
    let summary = vec![if table.is_complete() {
        format!(
            "section complete: {} nodes, max residual {:e}",
            table.len(),
            table.max_residual()
        )
    } else {
        format!(
            "section incomplete: {} of {} nodes unsolved",
            table.unsolved().len(),
            table.len()
        )
    }];
    Ok(RunOutput {
        status,
        report: r,
        table: Some(tables::section_csv(&table)),
        summary,
    })
}

fn feedback_report(t: &FeedbackTable, cfg: &RunConfig) -> Map<String, Value> {
    let unsolved = t.unsolved();
    let mut m = Map::new();
    m.insert("target".into(), Value::from(cfg.target.to_strings()));
    m.insert("complete".into(), Value::from(t.is_complete()));
    m.insert("radius".into(), num(cfg.solver.radius));
    m.insert("grid".into(), Value::from(cfg.solver.grid));
    m.insert("nodes".into(), Value::from(t.len()));
    m.insert("unsolved".into(), Value::from(unsolved.len()));
    m.insert("unsolved_nodes".into(), vectors(unsolved));
    m.insert("max_residual".into(), num(t.max_residual()));
    m
}

fn symbol_report(t: &SymbolTable) -> Value {
    object([
        ("complete", Value::from(t.is_complete())),
        ("nodes", Value::from(t.len())),
        ("unsolved", Value::from(t.unsolved().len())),
        ("max_residual", num(t.max_residual())),
    ])
}

fn feedback_table(cfg: &RunConfig) -> Result<Result<FeedbackTable, Box<FeedbackTable>>, CliError> {
    let s = &cfg.solver;
    match synthesize_feedback(&cfg.system, &cfg.target, s.radius, s.grid, &solve_options(cfg)) {
        Ok(t) => Ok(Ok(t)),
        Err(SynthError::NotSynthesizable(t)) => Ok(Err(t)),
        Err(SynthError::NoControls) => Err(CliError::Usage("the system has no control inputs".into())),
        Err(e) => Err(CliError::numeric(e)),
    }
}

/// Output of [`run_synthesize`] beyond the CSV: the composition-symbol table,
/// tried only when no feedback exists.
pub struct Synthesis {
    pub output: RunOutput,
    pub symbol_table: Option<String>,
}

/// Feedback synthesis for the configured target, then closed-loop checks.
pub fn run_synthesize(cfg: &RunConfig) -> Result<Synthesis, CliError> {
    let sys = &cfg.system;
    let n = sys.n();
    let mut r = base_report(cfg, "synthesize");

    let jg = jacobian_fd(|x| cfg.target.eval(x), &vec![0.0; n], cfg.solver.fd_step).map_err(CliError::numeric)?;
    // Re(1/lambda) has the sign of Re(lambda), so the test on the section
    // Jacobian (the inverse of this one) reduces to the target Jacobian.
    let condition = check_exponential_condition(&jg).ok();

    let table = match feedback_table(cfg)? {
        Ok(t) => t,
        Err(partial) => {
            let mut s = feedback_report(&partial, cfg);
            s.insert("target_jacobian".into(), report::matrix(&jg));
            s.insert(
                "exponential_condition".into(),
                condition.map_or(Value::Null, Value::from),
            );
            let bound = cfg.solver.domain;
            let opts = solve_options(cfg).with_bound(bound);
            let symbol =
                match synthesize_composition_symbol(sys, &cfg.target, cfg.solver.radius, cfg.solver.grid, &opts) {
                    Ok(t) => Some(t),
                    Err(SynthError::SymbolNotSynthesizable(t)) => Some(*t),
                    Err(_) => None,
                };
            s.insert(
                "composition_symbol".into(),
                symbol.as_ref().map_or(Value::Null, symbol_report),
            );
            r.insert("synthesis".into(), Value::Object(s));
            let mut summary = vec![format!(
                "no feedback: {} of {} nodes unsolved",
                partial.unsolved().len(),
                partial.len()
            )];
            if let Some(t) = &symbol {
                summary.push(format!(
                    "composition symbol: {}",
                    if t.is_complete() { "complete" } else { "incomplete" }
                ));
            }
            return Ok(Synthesis {
                output: RunOutput {
                    status: Status::Obstruction,
                    report: r,
                    table: Some(tables::feedback_csv(&partial)),
                    summary,
                },
                symbol_table: symbol.as_ref().map(tables::symbol_csv),
            });
        }
    };

    let cl = ClosedLoop::new(sys, &table);
    let spectrum = spectrum_at_origin(&cl, cfg.solver.fd_step).map_err(CliError::numeric)?;
    let mut s = feedback_report(&table, cfg);
    s.insert("target_jacobian".into(), report::matrix(&jg));
    s.insert(
        "exponential_condition".into(),
        condition.map_or(Value::Null, Value::from),
    );
    s.insert("closed_loop_spectrum".into(), report::spectrum(&spectrum));
    r.insert("synthesis".into(), Value::Object(s));

    let opts = ClassifyOptions {
        radius: cfg.simulate.radius,
        num_initial: cfg.simulate.num_initial,
        t_final: cfg.simulate.t_final,
        seed: cfg.solver.seed,
        simulate: simulate_options(cfg),
    };
    let stability = classify_stability(&cl, &opts).map_err(CliError::numeric)?;
    let mut st = report::stability(&stability);
    if let Value::Object(m) = &mut st {
        m.insert("radius".into(), num(opts.radius));
        m.insert("t_final".into(), num(opts.t_final));
        m.insert("num_initial".into(), Value::from(opts.num_initial));
    }
    r.insert("stability".into(), st);

    let spectrum_text: Vec<String> = spectrum.iter().map(|z| format!("{:.6} {:+.6}i", z.re, z.im)).collect();
    let summary = vec![
        format!(
            "feedback complete: {} nodes, max residual {:e}",
            table.len(),
            table.max_residual()
        ),
        format!("closed-loop spectrum: {}", spectrum_text.join(", ")),
        format!(
            "classification: {}{}",
            stability.classification.as_str(),
            stability.rate.map_or(String::new(), |l| format!(" (rate {l:.6})"))
        ),
    ];
    let status = if stability.classification.is_stable() {
        Status::Success
    } else {
        Status::Obstruction
    };
    Ok(Synthesis {
        output: RunOutput {
            status,
            report: r,
            table: Some(tables::feedback_csv(&table)),
            summary,
        },
        symbol_table: None,
    })
}

/// Integrates the closed loop (or the autonomous system when `m = 0`) from `x0`.
pub fn run_simulate(cfg: &RunConfig, x0: &[f64], t_final: Option<f64>) -> Result<RunOutput, CliError> {
    let sys = &cfg.system;
    let n = sys.n();
    if x0.len() != n {
        return Err(CliError::Usage(format!("--x0 needs {n} values, got {}", x0.len())));
    }
    let t_final = t_final.unwrap_or(cfg.simulate.t_final);
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(CliError::Usage(format!("--t-final must be positive (got {t_final})")));
    }
    let opts = simulate_options(cfg);
    let mut r = base_report(cfg, "simulate");
    let traj = if sys.m() == 0 {
        let field = FnField::new(n, |x: &[f64]| sys.eval(x, &[]));
        simulate(&field, x0, t_final, &opts)
    } else {
        let table = match feedback_table(cfg)? {
            Ok(t) => t,
            Err(partial) => {
                r.insert("synthesis".into(), Value::Object(feedback_report(&partial, cfg)));
                return Ok(RunOutput {
                    status: Status::Obstruction,
                    report: r,
                    table: None,
                    summary: vec![format!(
                        "no feedback: {} of {} nodes unsolved",
                        partial.unsolved().len(),
                        partial.len()
                    )],
                });
            }
        };
        simulate(&ClosedLoop::new(sys, &table), x0, t_final, &opts)
    }
    .map_err(CliError::numeric)?;

    let last = traj.last().to_vec();
    let mut summary = vec![format!(
        "t = {:.6}: x = {:?} (|x| = {:e})",
        traj.times.last().copied().unwrap_or(0.0),
        last,
        last.iter().map(|c| c * c).sum::<f64>().sqrt()
    )];
    let status = match &traj.truncated {
        None => Status::Success,
        Some(t) => {
            summary.push(format!("integration stopped early at t = {}: {t:?}", t.time()));
            Status::NumericFailure
        }
    };
    r.insert(
        "simulation".into(),
        object([
            ("x0", vector(x0)),
            ("t_final", num(t_final)),
            ("final_state", vector(&last)),
            ("steps", Value::from(traj.steps)),
            ("complete", Value::from(traj.is_complete())),
        ]),
    );
    Ok(RunOutput {
        status,
        report: r,
        table: Some(tables::trajectory_csv(&traj, n)),
        summary,
    })
}
