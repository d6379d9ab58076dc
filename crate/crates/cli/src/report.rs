//! Conversions from analysis results to the JSON report tree.
//!
//! Non-finite numbers become `null`.

use nalgebra::{Complex, DMatrix};
use nlstab_core::brockett::{OpennessReport, OpennessVerdict};
use nlstab_core::lintest::{HautusVerdict, RankVerdict};
use nlstab_core::verify::{Outcome, StabilityReport};
use serde_json::{json, Map, Value};

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn vector(v: &[f64]) -> Value {
    Value::Array(v.iter().copied().map(num).collect())
}

pub fn vectors<'a>(vs: impl IntoIterator<Item = &'a [f64]>) -> Value {
    Value::Array(vs.into_iter().map(vector).collect())
}

/// Row-major nested arrays.
pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect()))
            .collect(),
    )
}

/// `[re, im]`.
pub fn complex(z: &Complex<f64>) -> Value {
    json!([num(z.re), num(z.im)])
}

pub fn spectrum(ev: &[Complex<f64>]) -> Value {
    Value::Array(ev.iter().map(complex).collect())
}

pub fn object(pairs: impl IntoIterator<Item = (&'static str, Value)>) -> Value {
    Value::Object(
        pairs
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect::<Map<_, _>>(),
    )
}

pub fn hautus(v: &HautusVerdict) -> Value {
    let checks = v
        .checks
        .iter()
        .map(|c| {
            object([
                ("eigenvalue", complex(&c.eigenvalue)),
                ("rank", Value::from(c.rank)),
                ("required", Value::from(c.required)),
            ])
        })
        .collect();
    object([
        ("stabilizable", Value::from(v.stabilizable)),
        ("checks", Value::Array(checks)),
    ])
}

pub fn rank(v: &RankVerdict, n: usize) -> Value {
    object([
        ("rank", Value::from(v.rank)),
        ("required", Value::from(n)),
        ("full_row_rank", Value::from(v.full_row_rank)),
        ("singular_values", vector(&v.singular_values)),
    ])
}

pub fn openness(r: &OpennessReport, radius: f64) -> Value {
    let verdict = match r.verdict {
        OpennessVerdict::NoViolationFound => "no_violation_found",
        OpennessVerdict::Violation => "violation",
    };
    let scales = r
        .scales
        .iter()
        .map(|s| object([("domain", num(s.domain)), ("target", num(s.target))]))
        .collect();
    let directions = r
        .directions
        .iter()
        .map(|d| {
            object([
                ("direction", vector(&d.direction)),
                (
                    "residuals",
                    Value::Array(d.residuals.iter().map(|x| opt_num(*x)).collect()),
                ),
                ("violation", Value::from(d.is_violation())),
            ])
        })
        .collect();
    object([
        ("verdict", Value::from(verdict)),
        ("witness", r.witness.as_deref().map_or(Value::Null, vector)),
        ("radius", num(radius)),
        ("scales", Value::Array(scales)),
        ("attempts_per_target", Value::from(r.attempts_per_target)),
        ("violations", Value::from(r.violations().count())),
        ("unresolved", Value::from(r.unresolved)),
        ("partially_reached", Value::from(r.partially_reached)),
        ("directions", Value::Array(directions)),
    ])
}

fn outcome(o: &Outcome) -> Value {
    match o {
        Outcome::Completed => object([("status", Value::from("completed"))]),
        Outcome::Diverged { t } => object([("status", Value::from("diverged")), ("t", num(*t))]),
        Outcome::Truncated { t, reason } => object([
            ("status", Value::from("truncated")),
            ("t", num(*t)),
            ("reason", Value::from(reason.as_str())),
        ]),
        Outcome::Failed { reason } => object([
            ("status", Value::from("failed")),
            ("reason", Value::from(reason.as_str())),
        ]),
    }
}

pub fn stability(r: &StabilityReport) -> Value {
    let evidence = r
        .evidence
        .iter()
        .map(|e| {
            object([
                ("x0", vector(&e.x0)),
                ("outcome", outcome(&e.outcome)),
                ("final_ratio", opt_num(e.final_ratio)),
                ("rate", opt_num(e.rate)),
                ("r_squared", opt_num(e.r_squared)),
                ("monotone", Value::from(e.monotone)),
            ])
        })
        .collect();
    object([
        ("classification", Value::from(r.classification.as_str())),
        ("rate", opt_num(r.rate)),
        ("r_squared", opt_num(r.r_squared)),
        ("lipschitz", opt_num(r.lipschitz)),
        ("lipschitz_flag", Value::from(r.lipschitz_flag)),
        ("evidence", Value::Array(evidence)),
    ])
}
