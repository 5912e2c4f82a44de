//! Instance generators and closed-form oracles shared by the test targets.
#![allow(dead_code)]

use gapcert::embed::{self, OriginalProcess};
use gapcert::integrate;
use gapcert::model::{parse_problem, ControlSample, IntervalControl, Layer, Process, ProblemSpec};
use nalgebra::DMatrix;

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", parts.join(", "))
}

/// `ẋ = A(t, x) + Σ g_i u_i` (plus `g' u_1²` when `d = 2`) with
/// coefficients drawn cyclically from `coef`.
pub fn random_problem(n: usize, m: usize, d: usize, coef: &[f64]) -> ProblemSpec {
    let mut it = coef.iter().copied().cycle();
    let matrix: Vec<String> = (0..n)
        .map(|_| fmt_vec(&(0..=n).map(|_| 0.5 * it.next().unwrap()).collect::<Vec<_>>()))
        .collect();
    let mut fields = format!("[fields.a]\nkind = \"affine\"\nmatrix = [{}]\n", matrix.join(", "));
    let mut terms = Vec::new();
    for i in 0..m {
        let g: Vec<f64> = (0..n).map(|_| it.next().unwrap()).collect();
        fields.push_str(&format!("\n[fields.g{i}]\nkind = \"const\"\nvalue = {}\n", fmt_vec(&g)));
        terms.push(format!("{{ k = 1, j = [{}], field = \"g{i}\" }}", i + 1));
    }
    if d == 2 {
        let g: Vec<f64> = (0..n).map(|_| 0.3 * it.next().unwrap()).collect();
        fields.push_str(&format!("\n[fields.sq]\nkind = \"const\"\nvalue = {}\n", fmt_vec(&g)));
        terms.push("{ k = 2, j = [1, 1], field = \"sq\" }".into());
    }
    let x0 = fmt_vec(&vec![0.1; n]);
    parse_problem(&format!(
        "name = \"random\"\nhorizon = 1.0\n\n[dynamics]\nn = {n}\nm = {m}\nd = {d}\ndrift = \"a\"\ng = [{}]\n\n{fields}\n[cost]\nexpr = \"x1 + t\"\n\n[init]\nx0 = {x0}\n",
        terms.join(", ")
    ))
    .unwrap()
}

/// `ẋ = A x` with a unit control field that the drift process leaves idle.
pub fn linear_problem(a: &DMatrix<f64>, horizon: f64) -> ProblemSpec {
    let n = a.nrows();
    let rows: Vec<String> = (0..n)
        .map(|i| {
            let mut r = vec![0.0];
            r.extend((0..n).map(|j| a[(i, j)]));
            fmt_vec(&r)
        })
        .collect();
    let mut unit = vec![0.0; n];
    unit[0] = 1.0;
    parse_problem(&format!(
        "name = \"linear\"\nhorizon = {horizon:?}\n\n[dynamics]\nn = {n}\nm = 1\nd = 1\ndrift = \"a\"\ng = [{{ k = 1, j = [1], field = \"b\" }}]\n\n[fields.a]\nkind = \"affine\"\nmatrix = [{}]\n\n[fields.b]\nkind = \"const\"\nvalue = {}\n\n[cost]\nexpr = \"x1\"\n\n[init]\nx0 = {}\n",
        rows.join(", "),
        fmt_vec(&unit),
        fmt_vec(&vec![0.5; n])
    ))
    .unwrap()
}

pub fn drift_process(spec: &ProblemSpec, n_int: usize) -> Process {
    let s = spec.horizon;
    let grid: Vec<f64> = (0..=n_int).map(|i| s * i as f64 / n_int as f64).collect();
    let ctrl = vec![IntervalControl::Single(ControlSample::drift(spec.m())); n_int];
    integrate::integrate(spec, Layer::Extended, grid, ctrl, integrate::DEFAULT_SUBSTEPS).unwrap()
}

/// Largest deviation of `pmp::sweep` from `p(s) = exp(A (S − s))ᵀ p(S)`.
pub fn adjoint_oracle_error(a: &DMatrix<f64>, horizon: f64, terminal: &[f64]) -> f64 {
    let n = a.nrows();
    let spec = linear_problem(a, horizon);
    let proc = drift_process(&spec, 50);
    let phis = gapcert::pmp::transitions(&spec, &proc, integrate::DEFAULT_SUBSTEPS);
    let mult = gapcert::pmp::sweep(&phis, &terminal[..=n], 0.0, 0.0, Vec::new());
    let p_end = nalgebra::DVector::from_column_slice(&terminal[1..=n]);
    let mut err = 0.0f64;
    for (k, s) in proc.grid.iter().enumerate() {
        let oracle = (a * (horizon - s)).exp().transpose() * &p_end;
        err = err.max((mult.p[k][0] - terminal[0]).abs());
        for i in 0..n {
            err = err.max((mult.p[k][1 + i] - oracle[i]).abs());
        }
    }
    err
}

pub fn smooth_original(spec: &ProblemSpec, horizon: f64, phase: &[f64], intervals: usize) -> OriginalProcess {
    let m = spec.m();
    let grid: Vec<f64> = (0..=intervals).map(|i| horizon * i as f64 / intervals as f64).collect();
    let controls = (0..intervals)
        .map(|k| {
            let t = 0.5 * (grid[k] + grid[k + 1]);
            (0..m).map(|i| phase[2 * i] * (2.0 * t + 3.0 * phase[2 * i + 1]).sin()).collect()
        })
        .collect();
    OriginalProcess::integrate(spec, grid, controls, vec![0; intervals]).unwrap()
}

/// Round trip through the embedding resampled on `nodes` intervals:
/// `(sup deviation of states, controls and horizon, mesh, cost change)`.
pub fn embedding_round_trip(spec: &ProblemSpec, orig: &OriginalProcess, nodes: usize) -> (f64, f64, f64) {
    let emb = embed::embed_original(spec, orig, Some(nodes)).unwrap();
    assert!(emb.controls.iter().all(|c| c.single().unwrap().w0 > 0.0));
    let cost = (emb.cost(spec) - orig.cost(spec)).abs();
    let mesh = emb.grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let back = embed::invert_embedding(spec, &emb, 1e-3).unwrap();
    let mut err = (back.horizon() - orig.horizon()).abs();
    for k in 0..orig.controls.len() {
        for t in [orig.grid[k], 0.5 * (orig.grid[k] + orig.grid[k + 1])] {
            let (xa, va) = back.state_at(spec, t);
            let (xb, vb) = orig.state_at(spec, t);
            err = err.max((va - vb).abs());
            for (a, b) in xa.iter().zip(&xb).chain(back.control_at(t).iter().zip(orig.control_at(t))) {
                err = err.max((a - b).abs());
            }
        }
    }
    (err, mesh, cost)
}

/// Closed form on the gap fixture: with `d = 1`, `(y0, x1, x2)` advance
/// by `(w0, w0, w)·Δs` on every interval.
pub struct FixtureEval {
    pub max_x1: f64,
    pub y0_end: f64,
    pub x2_end: f64,
    /// Distance to the reference `(y0, x1, x2) = (0, 0, s)`.
    pub max_tube: f64,
}

pub fn fixture_eval(controls: &[(f64, f64)], ds: f64) -> FixtureEval {
    let (mut y0, mut x1, mut x2, mut s) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut max_x1, mut max_tube) = (0.0f64, 0.0f64);
    for &(w0, w) in controls {
        y0 += w0 * ds;
        x1 += w0 * ds;
        x2 += w * ds;
        s += ds;
        max_x1 = max_x1.max(x1);
        max_tube = max_tube.max(y0.abs()).max(x1.abs()).max((x2 - s).abs());
    }
    FixtureEval {
        max_x1,
        y0_end: y0,
        x2_end: x2,
        max_tube,
    }
}

fn for_each_control(levels: &[(f64, f64)], intervals: usize, mut f: impl FnMut(&[(f64, f64)])) {
    let mut idx = vec![0usize; intervals];
    loop {
        let ctrl: Vec<(f64, f64)> = idx.iter().map(|&i| levels[i]).collect();
        f(&ctrl);
        let mut k = 0;
        loop {
            if k == intervals {
                return;
            }
            idx[k] += 1;
            if idx[k] < levels.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Points `(w0, ±(1 − w0))` of the `d = 1` arc with `w0` on a uniform grid
/// from `floor` to 1.
fn arc_levels(floor: f64, steps: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..=steps {
        let w0 = floor + (1.0 - floor) * i as f64 / steps as f64;
        out.push((w0, 1.0 - w0));
        if w0 < 1.0 {
            out.push((w0, w0 - 1.0));
        }
    }
    out
}

/// Minimal `y0(S)` over feasible extended controls on a 4-interval grid.
pub fn fixture_extended_optimum() -> f64 {
    let mut best = f64::INFINITY;
    for_each_control(&arc_levels(0.0, 8), 4, |c| {
        let e = fixture_eval(c, 0.5);
        if e.max_x1 <= 1e-12 && (e.x2_end - 2.0).abs() <= 1e-12 {
            best = best.min(e.y0_end);
        }
    });
    best
}

/// Minimal constraint plus target violation over strict controls with
/// `w0 ≥ floor` inside the `δ`-tube, on a 4-interval grid.
pub fn fixture_violation_floor(floor: f64, delta: f64) -> f64 {
    let mut best = f64::INFINITY;
    for_each_control(&arc_levels(floor, 19), 4, |c| {
        let e = fixture_eval(c, 0.5);
        if e.max_tube <= delta {
            best = best.min(e.max_x1.max(0.0) + (e.x2_end - 2.0).abs());
        }
    });
    best
}
