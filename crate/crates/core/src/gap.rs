//! Infimum sweeps across the three layers, the isolation probe, and
//! evidence-graded gap verdicts.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{Layer, Process, ProblemSpec};
use crate::par::{self, Parallelism};
use crate::solve::{self, Objective, SolveOptions, SolveStatus, TranscribeOptions};

/// One refinement level of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub n: usize,
    /// `w0` floor for the strict layer; ignored by the others.
    pub w0_floor: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub multistart: usize,
    pub seed: u64,
    pub solve: SolveOptions,
    pub free_horizon: bool,
    pub parallelism: Parallelism,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            multistart: 8,
            seed: 0,
            solve: SolveOptions::default(),
            free_horizon: false,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrendPoint {
    pub point: SweepPoint,
    pub objective: f64,
    pub violation: f64,
    pub status: Option<SolveStatus>,
    /// Best feasible objective up to and including this point; `+∞` while
    /// no feasible point has been found.
    pub best: f64,
    pub error: Option<String>,
    pub process: Option<Process>,
}

impl TrendPoint {
    pub fn feasible(&self, tol: f64) -> bool {
        self.error.is_none() && self.violation <= tol
    }
}

#[derive(Clone, Debug)]
pub struct Trend {
    pub layer: Layer,
    pub points: Vec<TrendPoint>,
}

impl Trend {
    /// Last best-so-far value.
    pub fn limit(&self) -> f64 {
        self.points.last().map_or(f64::INFINITY, |p| p.best)
    }

    /// Change of the best-so-far value over the last refinement.
    pub fn spread(&self) -> f64 {
        match self.points.len() {
            0 | 1 => 0.0,
            k => {
                let (a, b) = (self.points[k - 2].best, self.points[k - 1].best);
                if a.is_finite() && b.is_finite() {
                    (a - b).abs()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Best-of-multistart objective of `layer` at each schedule point.
pub fn infimum_sweep(spec: &ProblemSpec, layer: Layer, schedule: &[SweepPoint], opts: &SweepOptions) -> Result<Trend> {
    if schedule.is_empty() {
        return Err(Error::Range("sweep schedule is empty".into()));
    }
    let raw = par::map(opts.parallelism, schedule.to_vec(), |point| {
        let topts = TranscribeOptions {
            n: point.n,
            w0_floor: point.w0_floor,
            free_horizon: opts.free_horizon,
            ..TranscribeOptions::default()
        };
        solve::transcribe(spec, layer, &topts, Objective::Cost)
            .and_then(|t| solve::multistart(&t, opts.multistart, opts.seed, &opts.solve, opts.parallelism))
    });
    let mut best = f64::INFINITY;
    let mut points = Vec::with_capacity(raw.len());
    for (point, r) in schedule.iter().zip(raw) {
        points.push(match r {
            Ok(rep) => {
                if rep.violation <= opts.solve.tol_feas {
                    best = best.min(rep.objective);
                }
                TrendPoint {
                    point: *point,
                    objective: rep.objective,
                    violation: rep.violation,
                    status: Some(rep.status),
                    best,
                    error: None,
                    process: Some(rep.process),
                }
            }
            Err(e) => TrendPoint {
                point: *point,
                objective: f64::NAN,
                violation: f64::INFINITY,
                status: None,
                best,
                error: Some(e.to_string()),
                process: None,
            },
        });
    }
    Ok(Trend { layer, points })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeVerdict {
    /// The floor stays positive across refinements.
    IsolatedEvidence,
    /// The floor reaches zero: strict processes approach the reference.
    ControllableEvidence,
    Inconclusive,
}

impl ProbeVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeVerdict::IsolatedEvidence => "isolated-evidence",
            ProbeVerdict::ControllableEvidence => "controllable-evidence",
            ProbeVerdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for ProbeVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct ProbeOptions {
    pub w0_floor: f64,
    /// Floors at or below this count as zero.
    pub zero_tol: f64,
    pub sweep: SweepOptions,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            w0_floor: 0.05,
            zero_tol: 1e-4,
            sweep: SweepOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProbePoint {
    pub n: usize,
    /// Minimal `ε_h + ε_T + ε_K` inside the tube.
    pub floor: f64,
    /// Tube violation of the minimizer.
    pub tube_violation: f64,
    pub status: Option<SolveStatus>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ProbeTrend {
    pub delta: f64,
    pub w0_floor: f64,
    pub points: Vec<ProbePoint>,
    pub verdict: ProbeVerdict,
}

/// Minimal constraint violation of strict-sense processes confined to the
/// `δ`-tube around `reference`, at each grid size in `schedule`.
pub fn isolation_probe(
    spec: &ProblemSpec,
    reference: &Process,
    delta: f64,
    schedule: &[usize],
    opts: &ProbeOptions,
) -> Result<ProbeTrend> {
    if schedule.is_empty() {
        return Err(Error::Range("probe schedule is empty".into()));
    }
    let tol = opts.sweep.solve.tol_feas;
    let rec = crate::model::check_feasibility(spec, reference, tol.sqrt());
    if !rec.feasible() {
        return Err(Error::Process("the isolation probe needs a feasible reference".into()));
    }
    if !(delta > opts.zero_tol) {
        return Ok(ProbeTrend {
            delta,
            w0_floor: opts.w0_floor,
            points: Vec::new(),
            verdict: ProbeVerdict::Inconclusive,
        });
    }
    let sw = &opts.sweep;
    let raw = par::map(sw.parallelism, schedule.to_vec(), |n| {
        let topts = TranscribeOptions {
            n,
            w0_floor: opts.w0_floor,
            horizon: Some(reference.horizon()),
            ..TranscribeOptions::default()
        };
        let objective = Objective::Probe {
            reference: reference.clone(),
            delta,
        };
        solve::transcribe(spec, Layer::Strict, &topts, objective).and_then(|t| {
            let start = crate::relax::inner_approximate(spec, reference, opts.w0_floor).ok();
            let rep = solve::multistart_from(&t, start.as_ref(), sw.multistart, sw.seed, &sw.solve, sw.parallelism)?;
            let tube = t
                .constraint_kinds()
                .iter()
                .zip(&t.evaluate(&rep.decision).g)
                .filter(|(k, _)| matches!(k, solve::ConstraintKind::Tube { .. }))
                .fold(0.0f64, |a, (_, g)| a.max(*g));
            Ok((rep, tube))
        })
    });
    let points: Vec<ProbePoint> = schedule
        .iter()
        .zip(raw)
        .map(|(&n, r)| match r {
            Ok((rep, tube)) => ProbePoint {
                n,
                floor: rep.objective,
                tube_violation: tube,
                status: Some(rep.status),
                error: None,
            },
            Err(e) => ProbePoint {
                n,
                floor: f64::NAN,
                tube_violation: f64::NAN,
                status: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let verdict = probe_verdict(&points, opts.zero_tol, tol.sqrt());
    Ok(ProbeTrend {
        delta,
        w0_floor: opts.w0_floor,
        points,
        verdict,
    })
}

fn probe_verdict(points: &[ProbePoint], zero_tol: f64, tube_tol: f64) -> ProbeVerdict {
    if points.iter().any(|p| p.error.is_some() || !p.floor.is_finite() || p.tube_violation > tube_tol) {
        return ProbeVerdict::Inconclusive;
    }
    let last = points.last().expect("nonempty").floor;
    if last <= zero_tol {
        return ProbeVerdict::ControllableEvidence;
    }
    let min = points.iter().map(|p| p.floor).fold(f64::INFINITY, f64::min);
    let first = points[0].floor;
    if min > 10.0 * zero_tol && last >= 0.5 * first {
        ProbeVerdict::IsolatedEvidence
    } else {
        ProbeVerdict::Inconclusive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GapKind {
    GapEvidence,
    NoGapEvidence,
    Inconclusive,
}

impl GapKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GapKind::GapEvidence => "gap-evidence",
            GapKind::NoGapEvidence => "no-gap-evidence",
            GapKind::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for GapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Margins {
    pub solver_tol: f64,
    /// Overrides the spread measured from the trends.
    pub spread: Option<f64>,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            solver_tol: 1e-3,
            spread: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapVerdict {
    pub kind: GapKind,
    pub margin: f64,
    pub strict_limit: f64,
    pub extended_limit: f64,
    pub relaxed_limit: Option<f64>,
    /// `strict − extended` and `strict − relaxed`.
    pub differences: (f64, Option<f64>),
}

/// Declares gap evidence when the strict limit exceeds the extended or
/// relaxed limit by more than `3·(solver_tol + spread)`.
pub fn gap_verdict(strict: &Trend, extended: &Trend, relaxed: Option<&Trend>, margins: &Margins) -> Result<GapVerdict> {
    if strict.points.is_empty() || extended.points.is_empty() || relaxed.is_some_and(|t| t.points.is_empty()) {
        return Err(Error::Range("gap verdict needs nonempty trends".into()));
    }
    let spread = margins.spread.unwrap_or_else(|| {
        [Some(strict), Some(extended), relaxed]
            .into_iter()
            .flatten()
            .map(Trend::spread)
            .fold(0.0, f64::max)
    });
    let margin = 3.0 * (margins.solver_tol + spread);
    let s = strict.limit();
    let e = extended.limit();
    let r = relaxed.map(Trend::limit);
    let diff = |a: f64, b: f64| if a == b { 0.0 } else { a - b };
    let de = diff(s, e);
    let dr = r.map(|r| diff(s, r));
    let kind = if de > margin || dr.is_some_and(|d| d > margin) {
        GapKind::GapEvidence
    } else if s.is_finite() && e.is_finite() && de.abs() <= margin && dr.is_none_or(|d| d.abs() <= margin) {
        GapKind::NoGapEvidence
    } else {
        GapKind::Inconclusive
    };
    Ok(GapVerdict {
        kind,
        margin,
        strict_limit: s,
        extended_limit: e,
        relaxed_limit: r,
        differences: (de, dr),
    })
}

#[derive(Clone, Debug)]
pub struct GapReport {
    pub strict: Trend,
    pub extended: Trend,
    pub relaxed: Option<Trend>,
    pub probe: Option<ProbeTrend>,
    pub verdict: GapVerdict,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trend(layer: Layer, values: &[f64]) -> Trend {
        let mut best = f64::INFINITY;
        Trend {
            layer,
            points: values
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    best = best.min(v);
                    TrendPoint {
                        point: SweepPoint {
                            n: 10 << i,
                            w0_floor: 0.05,
                        },
                        objective: v,
                        violation: 0.0,
                        status: Some(SolveStatus::Converged),
                        best,
                        error: None,
                        process: None,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn persistent_spread_is_gap_evidence() {
        let s = trend(Layer::Strict, &[0.4, 0.4, 0.4]);
        let e = trend(Layer::Extended, &[0.0, 0.0, 0.0]);
        let margins = Margins {
            solver_tol: 0.0,
            spread: Some(0.05),
        };
        let v = gap_verdict(&s, &e, None, &margins).unwrap();
        assert_eq!(v.kind, GapKind::GapEvidence);
        assert!((v.margin - 0.15).abs() < 1e-15);
    }

    #[test]
    fn identical_trends_show_no_gap() {
        let s = trend(Layer::Strict, &[0.3, 0.2]);
        let e = trend(Layer::Extended, &[0.3, 0.2]);
        let margins = Margins {
            solver_tol: 0.0,
            spread: Some(0.0),
        };
        let v = gap_verdict(&s, &e, Some(&e), &margins).unwrap();
        assert_eq!(v.kind, GapKind::NoGapEvidence);
        assert_eq!(v.margin, 0.0);
    }

    #[test]
    fn empty_trend_is_rejected() {
        let s = trend(Layer::Strict, &[]);
        let e = trend(Layer::Extended, &[0.0]);
        assert!(gap_verdict(&s, &e, None, &Margins::default()).is_err());
    }
}
