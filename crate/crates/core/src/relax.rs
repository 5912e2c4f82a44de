//! Relaxed (simplex-weighted) integration, chattering approximation of
//! relaxed controls, and inner approximation of extended controls by
//! strict-sense ones.

use crate::error::{Error, Result};
use crate::integrate::{self, DEFAULT_SUBSTEPS};
use crate::model::{
    ControlSample, IntervalControl, Layer, NodeState, Process, ProblemSpec, SimplexControlRow,
};

/// Pads a row list with zero-weight copies of its first row up to `n + 1`.
pub fn pad_row(row: SimplexControlRow, n: usize) -> Result<SimplexControlRow> {
    let SimplexControlRow {
        mut rows,
        mut weights,
    } = row;
    if rows.is_empty() || rows.len() != weights.len() {
        return Err(Error::Process("simplex row needs matching nonempty rows and weights".into()));
    }
    if rows.len() > n + 1 {
        return Err(Error::Process(format!("at most {} simplex rows allowed", n + 1)));
    }
    while rows.len() < n + 1 {
        rows.push(rows[0].clone());
        weights.push(0.0);
    }
    Ok(SimplexControlRow { rows, weights })
}

pub fn integrate_relaxed(
    spec: &ProblemSpec,
    rows: Vec<SimplexControlRow>,
    grid: Vec<f64>,
) -> Result<Process> {
    let n = spec.n();
    let mut controls = Vec::with_capacity(rows.len());
    for (k, r) in rows.into_iter().enumerate() {
        let r = pad_row(r, n)?;
        r.check(spec)
            .map_err(|e| Error::Process(format!("interval {k}: {e}")))?;
        controls.push(IntervalControl::Relaxed(r));
    }
    integrate::integrate(spec, Layer::Relaxed, grid, controls, DEFAULT_SUBSTEPS)
}

/// One piece of a chattering schedule: row `row` of relaxed interval
/// `interval` in force on `[start, end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatterPiece {
    pub interval: usize,
    pub row: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatterSchedule {
    pub eta: f64,
    /// Pieces per slice, in time order.
    pub slices: Vec<Vec<ChatterPiece>>,
}

impl ChatterSchedule {
    /// Slices of width `η`; inside a slice, row 0 of every overlapped
    /// interval comes first, then row 1, and so on, each for `λ^k` times
    /// the overlap length.
    pub fn build(relaxed: &Process, eta: f64) -> Result<Self> {
        if relaxed.layer != Layer::Relaxed {
            return Err(Error::Mode("chattering needs a relaxed process".into()));
        }
        let horizon = relaxed.horizon();
        if !(eta > 0.0) || eta > horizon / 4.0 {
            return Err(Error::Range(format!(
                "eta must lie in (0, S/4] = (0, {}], got {eta}",
                horizon / 4.0
            )));
        }
        let n_slices = (horizon / eta - 1e-9).ceil() as usize;
        let mut slices = Vec::with_capacity(n_slices);
        let mut first = 0;
        for j in 0..n_slices {
            let a = j as f64 * eta;
            let b = if j + 1 == n_slices {
                horizon
            } else {
                (j + 1) as f64 * eta
            };
            let mut overlaps = Vec::new();
            for i in first..relaxed.intervals() {
                let lo = relaxed.grid[i].max(a);
                let hi = relaxed.grid[i + 1].min(b);
                if relaxed.grid[i] >= b {
                    break;
                }
                if hi > lo {
                    overlaps.push((i, hi - lo));
                }
            }
            while first + 1 < relaxed.intervals() && relaxed.grid[first + 1] <= b {
                first += 1;
            }
            let mut pieces: Vec<ChatterPiece> = Vec::new();
            let mut cursor = a;
            let rows = match &relaxed.controls[overlaps[0].0] {
                IntervalControl::Relaxed(r) => r.weights.len(),
                IntervalControl::Single(_) => 1,
            };
            for row in 0..rows {
                for &(i, len) in &overlaps {
                    let lam = weights(&relaxed.controls[i])[row];
                    if lam == 0.0 {
                        continue;
                    }
                    let end = cursor + lam * len;
                    match pieces.last_mut() {
                        Some(p) if p.interval == i && p.row == row => p.end = end,
                        _ => pieces.push(ChatterPiece {
                            interval: i,
                            row,
                            start: cursor,
                            end,
                        }),
                    }
                    cursor = end;
                }
            }
            if let Some(p) = pieces.last_mut() {
                p.end = b;
            }
            slices.push(pieces);
        }
        Ok(Self { eta, slices })
    }

    /// Grid and controls of the chattered extended process. Consecutive
    /// pieces from the same interval and row are merged.
    pub fn realize(&self, relaxed: &Process) -> (Vec<f64>, Vec<IntervalControl>) {
        let mut merged: Vec<ChatterPiece> = Vec::new();
        for p in self.slices.iter().flatten() {
            match merged.last_mut() {
                Some(q) if q.interval == p.interval && q.row == p.row => q.end = p.end,
                _ => merged.push(p.clone()),
            }
        }
        let mut grid = Vec::with_capacity(merged.len() + 1);
        grid.push(0.0);
        let mut controls = Vec::with_capacity(merged.len());
        for p in &merged {
            if p.end <= *grid.last().expect("grid is nonempty") {
                continue;
            }
            grid.push(p.end);
            controls.push(IntervalControl::Single(row_sample(&relaxed.controls[p.interval], p.row)));
        }
        // Snap round-off so vertex weights reproduce the relaxed grid exactly.
        for g in grid.iter_mut() {
            let i = relaxed.grid.partition_point(|&r| r < *g);
            for j in [i.saturating_sub(1), i.min(relaxed.grid.len() - 1)] {
                if (*g - relaxed.grid[j]).abs() < 1e-12 {
                    *g = relaxed.grid[j];
                }
            }
        }
        (grid, controls)
    }
}

fn weights(c: &IntervalControl) -> &[f64] {
    match c {
        IntervalControl::Relaxed(r) => &r.weights,
        IntervalControl::Single(_) => &[1.0],
    }
}

fn row_sample(c: &IntervalControl, row: usize) -> ControlSample {
    match c {
        IntervalControl::Relaxed(r) => r.rows[row].clone(),
        IntervalControl::Single(s) => s.clone(),
    }
}

/// Extended process approximating a relaxed one by time slicing.
pub fn chatter(spec: &ProblemSpec, relaxed: &Process, eta: f64) -> Result<Process> {
    let schedule = ChatterSchedule::build(relaxed, eta)?;
    let (grid, controls) = schedule.realize(relaxed);
    integrate::integrate(spec, Layer::Extended, grid, controls, DEFAULT_SUBSTEPS)
}

/// `max |(y0, y, ν)(s) − (y0, y, ν)_ref(s)|` over the nodes of `proc`, with
/// the reference re-integrated at those nodes.
pub fn sup_error(spec: &ProblemSpec, proc: &Process, reference: &Process) -> f64 {
    let mut worst = 0.0f64;
    for (z, &s) in proc.states.iter().zip(&proc.grid) {
        let r = integrate::state_at(spec, reference, s.min(reference.horizon()), DEFAULT_SUBSTEPS);
        worst = worst.max(node_distance(z, &r));
    }
    worst
}

/// Node-wise sup distance between two processes on the same grid.
pub fn nodewise_distance(a: &Process, b: &Process) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| node_distance(x, y))
        .fold(0.0, f64::max)
}

fn node_distance(a: &NodeState, b: &NodeState) -> f64 {
    let mut d = (a.y0 - b.y0).abs().max((a.nu - b.nu).abs());
    for (x, y) in a.y.iter().zip(&b.y) {
        d = d.max((x - y).abs());
    }
    d
}

/// Lifts every sample with `w0 < w0_floor` onto the floor, keeping the
/// direction of `w`, and re-integrates.
pub fn inner_approximate(spec: &ProblemSpec, ext: &Process, w0_floor: f64) -> Result<Process> {
    if !(w0_floor > 0.0 && w0_floor < 1.0) {
        return Err(Error::Range(format!("w0_floor must lie in (0, 1), got {w0_floor}")));
    }
    if ext.layer == Layer::Relaxed {
        return Err(Error::Mode("inner approximation needs an extended process".into()));
    }
    let d = spec.d();
    let radius = (1.0 - w0_floor.powi(d as i32)).powf(1.0 / d as f64);
    let mut controls = Vec::with_capacity(ext.intervals());
    for (k, c) in ext.controls.iter().enumerate() {
        let s = c.single().expect("non-relaxed layer");
        if s.w0 >= w0_floor {
            controls.push(c.clone());
            continue;
        }
        let norm = crate::cone::norm(&s.w);
        if norm == 0.0 {
            return Err(Error::DegenerateSample(k));
        }
        controls.push(IntervalControl::Single(ControlSample {
            w0: w0_floor,
            w: s.w.iter().map(|v| radius * v / norm).collect(),
            a: s.a,
        }));
    }
    integrate::integrate(spec, Layer::Strict, ext.grid.clone(), controls, DEFAULT_SUBSTEPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn uniform(t: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| t * i as f64 / n as f64).collect()
    }

    #[test]
    fn averaging_stays_at_zero() {
        let spec = bundled::scalar();
        let rows = bundled::averaging_rows(10)
            .into_iter()
            .map(|c| match c {
                IntervalControl::Relaxed(r) => r,
                IntervalControl::Single(_) => unreachable!(),
            })
            .collect();
        let p = integrate_relaxed(&spec, rows, uniform(1.0, 10)).unwrap();
        assert!(p.states.iter().all(|z| z.y[0].abs() < 1e-15));
        let xi = p.terminal().xi.as_ref().unwrap();
        assert!((xi.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let c = chatter(&spec, &p, 0.1).unwrap();
        let worst = c.states.iter().map(|z| z.y[0].abs()).fold(0.0, f64::max);
        assert!(worst <= 0.05 + 1e-12, "{worst}");
        assert!(worst >= 0.05 - 1e-12);
        assert!(chatter(&spec, &p, 0.3).is_err());
    }

    #[test]
    fn vertex_weights_chatter_to_the_row() {
        let spec = bundled::ex51();
        let reference = bundled::ex51_reference(&spec, 20).unwrap();
        let rows: Vec<SimplexControlRow> = reference
            .controls
            .iter()
            .map(|c| SimplexControlRow::vertex(c.single().unwrap().clone(), 2, 3))
            .collect();
        let relaxed = integrate_relaxed(&spec, rows, reference.grid.clone()).unwrap();
        let ext = integrate::integrate(
            &spec,
            Layer::Extended,
            reference.grid.clone(),
            reference.controls.clone(),
            DEFAULT_SUBSTEPS,
        )
        .unwrap();
        assert!(nodewise_distance(&relaxed, &ext) <= 1e-12);
        let c = chatter(&spec, &relaxed, 0.13).unwrap();
        assert_eq!(c.grid, ext.grid);
        assert_eq!(c.states, ext.states);
    }

    #[test]
    fn inner_approximation_of_the_impulsive_arc() {
        let spec = bundled::ex51();
        let reference = bundled::ex51_reference(&spec, 20).unwrap();
        let strict = inner_approximate(&spec, &reference, 0.1).unwrap();
        let s = strict.controls[15].single().unwrap();
        assert_eq!(s.w0, 0.1);
        assert!((s.w[0] + 0.9).abs() < 1e-15 && s.w[1] == 0.0);
        assert!(strict.validate(&spec).is_ok());
        let same = inner_approximate(&spec, &strict, 0.05).unwrap();
        assert_eq!(same.controls, strict.controls);

        let mut degenerate = reference.clone();
        degenerate.controls[12] = IntervalControl::Single(ControlSample {
            w0: 0.0,
            w: vec![0.0, 0.0],
            a: 0,
        });
        assert!(matches!(
            inner_approximate(&spec, &degenerate, 0.1),
            Err(Error::DegenerateSample(12))
        ));
    }
}
