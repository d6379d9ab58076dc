//! CSV tables. Values use `{:.16e}`; rows follow the solve order (origin
//! first, then outward shells) and only solved nodes are written.

use nlstab_core::ode::Trajectory;
use nlstab_core::section::SectionTable;
use nlstab_core::synth::{FeedbackTable, SymbolTable};

fn names(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write<I, R>(header: Vec<String>, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = f64>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        w.write_record(row.into_iter().map(fmt)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// `y1..yn,x1..xn,u1..um,residual`
pub fn section_csv(t: &SectionTable) -> String {
    let header = names("y", t.n())
        .chain(names("x", t.n()))
        .chain(names("u", t.m()))
        .chain(["residual".into()]);
    let rows = t.entries().filter_map(|e| {
        let w = e.w.as_ref()?;
        Some(e.y.iter().chain(w).copied().chain([e.residual]).collect::<Vec<_>>())
    });
    write(header.collect(), rows)
}

/// `x1..xn,u1..um,residual`
pub fn feedback_csv(t: &FeedbackTable) -> String {
    let header = names("x", t.n()).chain(names("u", t.m())).chain(["residual".into()]);
    let rows = t.entries().filter_map(|e| {
        let u = e.u.as_ref()?;
        Some(e.x.iter().chain(u).copied().chain([e.residual]).collect::<Vec<_>>())
    });
    write(header.collect(), rows)
}

/// `x1..xn,hx1..hxn,hu1..hum,residual`
pub fn symbol_csv(t: &SymbolTable) -> String {
    let header = names("x", t.n())
        .chain(names("hx", t.n()))
        .chain(names("hu", t.m()))
        .chain(["residual".into()]);
    let rows = t.entries().filter_map(|e| {
        let h = e.h.as_ref()?;
        Some(e.x.iter().chain(h).copied().chain([e.residual]).collect::<Vec<_>>())
    });
    write(header.collect(), rows)
}

/// `t,x1..xn`
pub fn trajectory_csv(t: &Trajectory, n: usize) -> String {
    let header = ["t".to_string()].into_iter().chain(names("x", n));
    let rows = t
        .times
        .iter()
        .zip(&t.states)
        .map(|(ti, x)| [*ti].into_iter().chain(x.iter().copied()).collect::<Vec<_>>());
    write(header.collect(), rows)
}
