//! Direct single-shooting transcription and an augmented-Lagrangian solver
//! with a spectral projected-gradient inner loop.

mod transcription;

use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Process;
use crate::par::{self, Parallelism};

pub use transcription::{
    project_simplex, transcribe, ConstraintKind, Evaluation, Objective, TranscribeOptions,
    Transcription,
};

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol_feas: f64,
    pub tol_kkt: f64,
    pub inner_tol: f64,
    pub rho0: f64,
    pub rho_growth: f64,
    /// Required violation ratio between outer iterations before `ρ` grows.
    pub decrease: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative forward-difference step.
    pub fd_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-6,
            tol_kkt: 1e-5,
            inner_tol: 1e-8,
            rho0: 10.0,
            rho_growth: 5.0,
            decrease: 0.25,
            rho_max: 1e9,
            max_outer: 25,
            max_inner: 150,
            fd_step: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    Stalled,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::Stalled => "stalled",
            SolveStatus::Infeasible => "infeasible",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct ConstraintMultiplier {
    pub kind: ConstraintKind,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub process: Process,
    pub decision: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub violation: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub elapsed: Duration,
    /// Positive multiplier estimates of the inequality constraints.
    pub multipliers: Vec<ConstraintMultiplier>,
    /// Violation of the accepted iterate after each outer iteration.
    pub penalty_history: Vec<f64>,
    /// Index of the multistart start that produced this report.
    pub start: usize,
}

impl SolveReport {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.violation <= tol
    }
}

struct Counters {
    evaluations: usize,
    inner: usize,
}

/// Augmented-Lagrangian data for the current outer iteration.
struct Merit<'a> {
    trans: &'a Transcription,
    lambda: &'a [f64],
    rho: f64,
}

impl Merit<'_> {
    fn value(&self, f: f64, g: &[f64]) -> f64 {
        let mut v = f;
        for (gi, li) in g.iter().zip(self.lambda) {
            let t = (li + self.rho * gi).max(0.0);
            v += (t * t - li * li) / (2.0 * self.rho);
        }
        v
    }

    fn weights(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(self.lambda)
            .map(|(gi, li)| (li + self.rho * gi).max(0.0))
            .collect()
    }

    fn eval(&self, z: &[f64], c: &mut Counters) -> (f64, Evaluation) {
        c.evaluations += 1;
        let e = self.trans.evaluate(z);
        (self.value(e.f, &e.g), e)
    }
}

/// Forward-difference gradients of `f` and every `g_i`, re-integrating only
/// the intervals downstream of each perturbed entry.
fn jacobian(
    trans: &Transcription,
    z: &[f64],
    base: &Evaluation,
    step: f64,
    c: &mut Counters,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dim = z.len();
    let mut grad = vec![0.0; dim];
    let mut jac = vec![vec![0.0; base.g.len()]; dim];
    let mut sc = trans.scratch();
    let mut states = base.states.clone();
    let mut g = Vec::with_capacity(base.g.len());
    let mut buf = Vec::new();
    let mut zp = z.to_vec();
    let mut dirty = 1;
    for j in 0..dim {
        let h = step * z[j].abs().max(1.0);
        zp[j] = z[j] + h;
        let first = trans.interval_of(j);
        // Nodes after the previous perturbed interval still carry its step.
        for i in dirty..=first {
            states[i].copy_from_slice(&base.states[i]);
        }
        trans.integrate_from(&zp, first, &mut states, &mut sc);
        dirty = first + 1;
        let f = trans.assess(&zp, &states, &mut g, &mut buf);
        c.evaluations += 1;
        grad[j] = (f - base.f) / h;
        for (out, (gi, g0)) in jac[j].iter_mut().zip(g.iter().zip(&base.g)) {
            *out = (gi - g0) / h;
        }
        zp[j] = z[j];
    }
    (grad, jac)
}

fn lagrangian_gradient(grad_f: &[f64], jac: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    grad_f
        .iter()
        .zip(jac)
        .map(|(gf, row)| gf + row.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>())
        .collect()
}

fn projected_step_norm(trans: &Transcription, z: &[f64], grad: &[f64]) -> f64 {
    let mut p: Vec<f64> = z.iter().zip(grad).map(|(a, b)| a - b).collect();
    trans.project(&mut p);
    p.iter()
        .zip(z)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn violation(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |acc: f64, &v| acc.max(v))
}

/// Spectral projected gradient with a nonmonotone Armijo search on the
/// augmented Lagrangian. Returns the final point and its evaluation.
fn spg(
    merit: &Merit<'_>,
    mut z: Vec<f64>,
    tol: f64,
    opts: &SolveOptions,
    c: &mut Counters,
) -> (Vec<f64>, Evaluation) {
    const HISTORY: usize = 10;
    const ALPHA_MIN: f64 = 1e-10;
    const ALPHA_MAX: f64 = 1e10;
    let trans = merit.trans;
    trans.project(&mut z);
    let (mut val, mut eval) = merit.eval(&z, c);
    let (gf, jac) = jacobian(trans, &z, &eval, opts.fd_step, c);
    let mut grad = lagrangian_gradient(&gf, &jac, &merit.weights(&eval.g));
    let mut history = vec![val];
    let pg = projected_step_norm(trans, &z, &grad);
    let mut alpha = if pg > 0.0 { (1.0 / pg).clamp(ALPHA_MIN, ALPHA_MAX) } else { 1.0 };
    for _ in 0..opts.max_inner {
        if projected_step_norm(trans, &z, &grad) <= tol {
            break;
        }
        c.inner += 1;
        let mut trial: Vec<f64> = z.iter().zip(&grad).map(|(a, b)| a - alpha * b).collect();
        trans.project(&mut trial);
        let dir: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
        let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            break;
        }
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let (cv, ce) = merit.eval(&cand, c);
            if cv.is_finite() && cv <= reference + 1e-4 * t * slope {
                accepted = Some((cand, cv, ce));
                break;
            }
            let tq = if cv.is_finite() {
                -0.5 * slope * t * t / (cv - val - t * slope)
            } else {
                0.1 * t
            };
            t = if tq >= 0.1 * t && tq <= 0.5 * t { tq } else { 0.5 * t };
        }
        let Some((nz, nv, ne)) = accepted else { break };
        let (ngf, njac) = jacobian(trans, &nz, &ne, opts.fd_step, c);
        let ngrad = lagrangian_gradient(&ngf, &njac, &merit.weights(&ne.g));
        let s: Vec<f64> = nz.iter().zip(&z).map(|(a, b)| a - b).collect();
        let sy: f64 = s
            .iter()
            .zip(ngrad.iter().zip(&grad))
            .map(|(si, (a, b))| si * (a - b))
            .sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        alpha = if sy <= 0.0 { ALPHA_MAX } else { (ss / sy).clamp(ALPHA_MIN, ALPHA_MAX) };
        let stalled = (val - nv).abs() <= 1e-15 * (1.0 + val.abs()) && ss.sqrt() <= 1e-14;
        z = nz;
        val = nv;
        eval = ne;
        grad = ngrad;
        history.push(val);
        if history.len() > HISTORY {
            history.remove(0);
        }
        if stalled {
            break;
        }
    }
    (z, eval)
}

/// Solves the transcribed program from `init` (the default start when
/// `None`). Never panics on non-convergence; see `SolveReport::status`.
pub fn solve_nlp(trans: &Transcription, init: Option<Vec<f64>>, opts: &SolveOptions) -> SolveReport {
    let started = Instant::now();
    let mut c = Counters {
        evaluations: 0,
        inner: 0,
    };
    let mut z = init.unwrap_or_else(|| trans.default_start());
    trans.project(&mut z);
    let mut lambda = vec![0.0; trans.num_constraints()];
    let mut rho = opts.rho0;
    let mut eval = trans.evaluate(&z);
    c.evaluations += 1;
    let mut best_violation = violation(&eval.g);
    let mut penalty_history = Vec::new();
    let mut outer = 0;
    let mut kkt = f64::INFINITY;
    while outer < opts.max_outer {
        outer += 1;
        let inner_tol = opts.inner_tol.max(0.1f64.powi(outer as i32));
        let merit = Merit {
            trans,
            lambda: &lambda,
            rho,
        };
        let (nz, ne) = spg(&merit, z.clone(), inner_tol, opts, &mut c);
        let v = violation(&ne.g);
        let accept = v <= best_violation.max(opts.tol_feas) || ne.f < eval.f && v <= best_violation * 1.0001;
        if accept {
            for (li, gi) in lambda.iter_mut().zip(&ne.g) {
                *li = (*li + rho * gi).max(0.0);
            }
            if v > opts.decrease * best_violation && v > opts.tol_feas {
                rho = (rho * opts.rho_growth).min(opts.rho_max);
            }
            best_violation = v;
            z = nz;
            eval = ne;
        } else {
            rho = (rho * opts.rho_growth).min(opts.rho_max);
        }
        penalty_history.push(best_violation);
        kkt = kkt_residual(trans, &z, &eval, &lambda, opts, &mut c);
        if best_violation <= opts.tol_feas && kkt <= opts.tol_kkt {
            break;
        }
        if !accept && rho >= opts.rho_max {
            break;
        }
    }
    let status = if best_violation <= opts.tol_feas && kkt <= opts.tol_kkt {
        SolveStatus::Converged
    } else if best_violation > opts.tol_feas.sqrt() {
        SolveStatus::Infeasible
    } else {
        SolveStatus::Stalled
    };
    let multipliers = trans
        .constraint_kinds()
        .iter()
        .zip(&lambda)
        .filter(|(_, &l)| l > 0.0)
        .map(|(&kind, &value)| ConstraintMultiplier { kind, value })
        .collect();
    let process = trans.process(&z);
    SolveReport {
        status,
        objective: eval.f,
        process,
        decision: z,
        kkt_residual: kkt,
        violation: best_violation,
        outer_iterations: outer,
        inner_iterations: c.inner,
        evaluations: c.evaluations,
        elapsed: started.elapsed(),
        multipliers,
        penalty_history,
        start: 0,
    }
}

/// Projected-gradient norm of the Lagrangian plus complementarity.
fn kkt_residual(
    trans: &Transcription,
    z: &[f64],
    eval: &Evaluation,
    lambda: &[f64],
    opts: &SolveOptions,
    c: &mut Counters,
) -> f64 {
    let (gf, jac) = jacobian(trans, z, eval, opts.fd_step, c);
    let grad = lagrangian_gradient(&gf, &jac, lambda);
    let stationarity = projected_step_norm(trans, z, &grad);
    let complementarity = eval
        .g
        .iter()
        .zip(lambda)
        .map(|(g, l)| (-g).min(*l).abs())
        .fold(0.0, f64::max);
    stationarity.max(complementarity)
}

/// Ordering used to pick the best report: feasible before infeasible, then
/// lower objective, then lower violation, then lower start index.
fn better(a: &SolveReport, b: &SolveReport, tol_feas: f64) -> bool {
    let fa = a.violation <= tol_feas;
    let fb = b.violation <= tol_feas;
    if fa != fb {
        return fa;
    }
    if !fa {
        return a.violation < b.violation || a.violation == b.violation && a.start < b.start;
    }
    a.objective < b.objective || a.objective == b.objective && a.start < b.start
}

/// Best of `count` solves: start 0 is the default start, the others are
/// drawn from ChaCha8 streams of `seed`.
pub fn multistart(
    trans: &Transcription,
    count: usize,
    seed: u64,
    opts: &SolveOptions,
    mode: Parallelism,
) -> Result<SolveReport> {
    multistart_from(trans, None, count, seed, opts, mode)
}

/// As `multistart`, with start 0 taken from `init` when given.
pub fn multistart_from(
    trans: &Transcription,
    init: Option<&Process>,
    count: usize,
    seed: u64,
    opts: &SolveOptions,
    mode: Parallelism,
) -> Result<SolveReport> {
    if count == 0 {
        return Err(crate::Error::Range("multistart needs at least one start".into()));
    }
    let mut starts = Vec::with_capacity(count);
    for i in 0..count {
        let mut t = trans.clone();
        let z = if i == 0 {
            match init {
                Some(p) => t.pack(p)?,
                None => t.default_start(),
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            t.random_start(&mut rng)
        };
        starts.push((i, t, z));
    }
    let reports = par::map(mode, starts, |(i, t, z)| {
        let mut r = solve_nlp(&t, Some(z), opts);
        r.start = i;
        r
    });
    let mut best: Option<SolveReport> = None;
    for r in reports {
        if best.as_ref().is_none_or(|b| better(&r, b, opts.tol_feas)) {
            best = Some(r);
        }
    }
    Ok(best.expect("count >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::model::Layer;

    #[test]
    fn prefix_jacobian_matches_full_differences() {
        let spec = bundled::gap_fixture();
        for layer in [Layer::Strict, Layer::Relaxed] {
            let opts = TranscribeOptions {
                n: 8,
                ..TranscribeOptions::default()
            };
            let mut t = transcribe(&spec, layer, &opts, Objective::Cost).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let z = t.random_start(&mut rng);
            let base = t.evaluate(&z);
            let mut c = Counters { evaluations: 0, inner: 0 };
            let (grad, jac) = jacobian(&t, &z, &base, 1e-7, &mut c);
            for j in 0..z.len() {
                let h = 1e-7 * z[j].abs().max(1.0);
                let mut zp = z.clone();
                zp[j] += h;
                let e = t.evaluate(&zp);
                assert!((grad[j] - (e.f - base.f) / h).abs() < 1e-9, "{layer} df/dz{j}");
                for (i, (gi, g0)) in e.g.iter().zip(&base.g).enumerate() {
                    assert!((jac[j][i] - (gi - g0) / h).abs() < 1e-9, "{layer} dg{i}/dz{j}");
                }
            }
        }
    }

    #[test]
    fn layout_counts() {
        let spec = bundled::ex51();
        let opts = TranscribeOptions::default();
        let ext = transcribe(&spec, Layer::Extended, &opts, Objective::Cost).unwrap();
        assert_eq!(ext.dim(), 40 * 3);
        // 6 box pieces per node, 8 target rows, one budget row
        assert_eq!(ext.num_constraints(), 40 * 6 + 8 + 1);
        let strict = transcribe(&spec, Layer::Strict, &opts, Objective::Cost).unwrap();
        assert_eq!(strict.dim(), ext.dim());
        assert!((strict.radius() - 0.95).abs() < 1e-15);
        let relaxed = transcribe(&spec, Layer::Relaxed, &opts, Objective::Cost).unwrap();
        assert_eq!(relaxed.dim(), 40 * (4 * 3 + 4));
        let short = TranscribeOptions {
            n: 4,
            ..TranscribeOptions::default()
        };
        assert!(transcribe(&spec, Layer::Extended, &short, Objective::Cost).is_err());
    }

    #[test]
    fn pack_round_trips() {
        let spec = bundled::ex51();
        let reference = bundled::ex51_reference(&spec, 40).unwrap();
        let mut t = transcribe(&spec, Layer::Extended, &TranscribeOptions::default(), Objective::Cost)
            .unwrap();
        let z = t.pack(&reference).unwrap();
        let p = t.process(&z);
        assert_eq!(p.controls, reference.controls);
        assert!(crate::relax::nodewise_distance(&p, &reference) < 1e-12);
    }

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.5, 0.5];
        project_simplex(&mut v);
        assert!(v.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let mut v = vec![2.0, -1.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0]);
    }

    #[test]
    fn scalar_reaches_the_origin() {
        let spec = bundled::lq();
        let t = transcribe(
            &spec,
            Layer::Extended,
            &TranscribeOptions {
                n: 10,
                ..TranscribeOptions::default()
            },
            Objective::Cost,
        )
        .unwrap();
        let r = solve_nlp(&t, None, &SolveOptions::default());
        assert!(r.objective.abs() < 1e-4, "{}", r.objective);
        assert_eq!(r.objective, r.process.cost(&spec));
    }
}
