//! Structured text renderings of the reports. Sections open with a
//! `[name]` line followed by `key = value` lines or a CSV block.
//! Wall-clock times are left out so that reports are reproducible.

use std::fmt::Write as _;

use crate::gap::{GapReport, ProbeTrend, Trend};
use crate::model::{check_feasibility, Process, ProblemSpec};
use crate::pmp::{CqReport, ExtremalReport, Witness};
use crate::solve::SolveReport;

fn kv(s: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(s, "{key} = {value}");
}

fn vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn solve_text(spec: &ProblemSpec, layer: crate::Layer, rep: &SolveReport, tol_feas: f64) -> String {
    let mut s = String::from("[solve]\n");
    kv(&mut s, "problem", &spec.name);
    kv(&mut s, "layer", layer);
    kv(&mut s, "status", rep.status);
    kv(&mut s, "objective", rep.objective);
    kv(&mut s, "violation", rep.violation);
    kv(&mut s, "kkt_residual", rep.kkt_residual);
    kv(&mut s, "outer_iterations", rep.outer_iterations);
    kv(&mut s, "inner_iterations", rep.inner_iterations);
    kv(&mut s, "evaluations", rep.evaluations);
    kv(&mut s, "start", rep.start);
    kv(&mut s, "intervals", rep.process.intervals());
    kv(&mut s, "horizon", rep.process.horizon());
    s.push_str(&feasibility_text(spec, &rep.process, tol_feas));
    s.push_str("\n[penalty_history]\n");
    for (i, v) in rep.penalty_history.iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s.push_str("\n[multipliers]\nconstraint,value\n");
    for m in &rep.multipliers {
        let _ = writeln!(s, "{},{}", m.kind, m.value);
    }
    s
}

pub fn feasibility_text(spec: &ProblemSpec, proc: &Process, tol: f64) -> String {
    let rec = check_feasibility(spec, proc, tol);
    let mut s = String::from("\n[feasibility]\n");
    kv(&mut s, "max_constraint_violation", rec.max_constraint_violation);
    kv(&mut s, "target_distance", rec.target_distance);
    kv(&mut s, "budget_excess", rec.budget_excess);
    kv(&mut s, "feasible", rec.feasible());
    s
}

fn witness_csv(s: &mut String, w: &Witness, grid: &[f64]) {
    let mult = &w.multipliers;
    let dim = mult.p.first().map_or(0, Vec::len);
    let mut header = vec!["node".to_string(), "s".to_string()];
    header.extend((0..dim).map(|i| format!("p{i}")));
    header.extend((0..dim).map(|i| format!("q{i}")));
    header.push("mu".into());
    header.extend((0..dim).map(|i| format!("m{i}")));
    let _ = writeln!(s, "{}", header.join(","));
    for (k, (p, q)) in mult.p.iter().zip(&mult.q).enumerate() {
        let atom = mult.atoms.iter().find(|a| a.node == k);
        let mut row = vec![k.to_string(), format!("{}", grid[k])];
        row.extend(p.iter().map(|v| format!("{v}")));
        row.extend(q.iter().map(|v| format!("{v}")));
        row.push(format!("{}", atom.map_or(0.0, |a| a.mass)));
        match atom {
            Some(a) => row.extend(a.m.iter().map(|v| format!("{v}"))),
            None => row.extend(std::iter::repeat_n("0".to_string(), dim)),
        }
        let _ = writeln!(s, "{}", row.join(","));
    }
}

pub fn extremal_text(rep: &ExtremalReport, proc: &Process) -> String {
    let mut s = String::from("[classification]\n");
    kv(&mut s, "classification", rep.classification);
    kv(&mut s, "mode", rep.mode);
    kv(&mut s, "extremal", rep.extremal);
    kv(&mut s, "abnormal", rep.abnormal);
    kv(&mut s, "nondegenerate_abnormal", rep.nondegenerate_abnormal);
    kv(&mut s, "normal_exists", rep.normal_exists);
    kv(&mut s, "max_degenerate_strength", rep.max_degenerate_strength);
    kv(&mut s, "audit_passed", rep.audit_passed);
    kv(&mut s, "lp_solves", rep.lp_solves);
    kv(&mut s, "hamiltonian_rows", rep.hamiltonian_rows);
    for note in &rep.notes {
        kv(&mut s, "note", note);
    }
    for w in &rep.witnesses {
        let _ = writeln!(s, "\n[witness {}]", w.label);
        kv(&mut s, "gamma", w.multipliers.gamma);
        kv(&mut s, "pi", w.multipliers.pi);
        kv(&mut s, "total_mass", w.multipliers.total_mass());
        kv(&mut s, "mass_after_start", w.multipliers.mass_after_start());
        kv(&mut s, "q_sup", w.multipliers.q_sup());
        witness_csv(&mut s, w, &proc.grid);
    }
    s.push_str("\n[residuals]\nwitness,check,value\n");
    for w in &rep.witnesses {
        for (name, v) in w.residuals.rows() {
            let _ = writeln!(s, "{},{name},{v}", w.label);
        }
    }
    s
}

pub fn cq_text(rep: &CqReport) -> String {
    let mut s = String::from("[cq]\n");
    kv(&mut s, "satisfied", rep.satisfied);
    kv(&mut s, "branch", rep.branch.as_str());
    kv(&mut s, "boundary", rep.boundary);
    kv(&mut s, "h0", rep.h0);
    kv(&mut s, "s_bar", rep.s_bar);
    kv(&mut s, "margin", rep.margin);
    kv(&mut s, "delta", rep.delta);
    if let Some(d1) = rep.delta1 {
        kv(&mut s, "delta1", d1);
    }
    if let Some(w) = &rep.witness {
        kv(&mut s, "witness_w0", w.w0);
        kv(&mut s, "witness_w", vector(&w.w));
        kv(&mut s, "witness_a", w.a);
    }
    for g in &rep.generators {
        kv(&mut s, "generator", vector(g));
    }
    s
}

fn trend_block(s: &mut String, t: &Trend) {
    let _ = writeln!(s, "\n[trend {}]", t.layer);
    kv(s, "limit", t.limit());
    kv(s, "spread", t.spread());
    s.push_str("n,w0_floor,objective,violation,status,best\n");
    for p in &t.points {
        let status = p.status.map_or("error", |st| st.as_str());
        let _ = writeln!(s, "{},{},{},{},{status},{}", p.point.n, p.point.w0_floor, p.objective, p.violation, p.best);
    }
}

pub fn probe_text(p: &ProbeTrend) -> String {
    let mut s = String::from("\n[probe]\n");
    kv(&mut s, "verdict", p.verdict);
    kv(&mut s, "delta", p.delta);
    kv(&mut s, "w0_floor", p.w0_floor);
    s.push_str("n,floor,tube_violation,status\n");
    for q in &p.points {
        let status = q.status.map_or("error", |st| st.as_str());
        let _ = writeln!(s, "{},{},{},{status}", q.n, q.floor, q.tube_violation);
    }
    s
}

pub fn gap_text(spec: &ProblemSpec, rep: &GapReport) -> String {
    let v = &rep.verdict;
    let mut s = String::from("[gap]\n");
    kv(&mut s, "problem", &spec.name);
    kv(&mut s, "verdict", v.kind);
    kv(&mut s, "margin", v.margin);
    kv(&mut s, "strict_limit", v.strict_limit);
    kv(&mut s, "extended_limit", v.extended_limit);
    if let Some(r) = v.relaxed_limit {
        kv(&mut s, "relaxed_limit", r);
    }
    kv(&mut s, "strict_minus_extended", v.differences.0);
    if let Some(d) = v.differences.1 {
        kv(&mut s, "strict_minus_relaxed", d);
    }
    trend_block(&mut s, &rep.strict);
    trend_block(&mut s, &rep.extended);
    if let Some(r) = &rep.relaxed {
        trend_block(&mut s, r);
    }
    if let Some(p) = &rep.probe {
        s.push_str(&probe_text(p));
    }
    s
}
