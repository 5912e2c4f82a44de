//! The space-time embedding of original processes, its inverse on
//! strict-sense processes, and the affine rescaling of free horizons.

use crate::error::{Error, Result};
use crate::integrate::{self, DEFAULT_SUBSTEPS};
use crate::model::{
    self, ControlSample, FeasibilityRecord, IntervalControl, Layer, NodeState, Process,
    ProblemSpec,
};

/// Default bound on the speed control `ζ`.
pub const DEFAULT_DELTA_BAR: f64 = 0.25;

/// A process of the original problem: piecewise-constant `u` on `[0, T]`,
/// with `v` the running integral of `|u|^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct OriginalProcess {
    pub grid: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    pub params: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl OriginalProcess {
    /// Integrates `ẋ = f + Σ g u^J`, `v̇ = |u|^d` from the problem's `x̌0`.
    pub fn integrate(
        spec: &ProblemSpec,
        grid: Vec<f64>,
        controls: Vec<Vec<f64>>,
        params: Vec<usize>,
    ) -> Result<Self> {
        if controls.len() + 1 != grid.len() || params.len() != controls.len() {
            return Err(Error::Process("grid, controls and params lengths disagree".into()));
        }
        let samples = controls
            .iter()
            .zip(&params)
            .map(|(u, &a)| IntervalControl::Single(original_sample(u, a)))
            .collect();
        let proc = integrate::integrate(spec, Layer::Strict, grid, samples, DEFAULT_SUBSTEPS)?;
        Ok(Self {
            x: proc.states.iter().map(|z| z.y.clone()).collect(),
            v: proc.states.iter().map(|z| z.nu).collect(),
            grid: proc.grid,
            controls,
            params,
        })
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid is nonempty")
    }

    pub fn cost(&self, spec: &ProblemSpec) -> f64 {
        let last = self.grid.len() - 1;
        spec.psi(self.horizon(), &self.x[last], self.v[last])
    }

    pub fn feasibility(&self, spec: &ProblemSpec, tol: f64) -> FeasibilityRecord {
        let max_constraint_violation = self
            .grid
            .iter()
            .zip(&self.x)
            .map(|(&t, x)| spec.h(t, x).max(0.0))
            .fold(0.0, f64::max);
        let last = self.grid.len() - 1;
        let mut end = vec![self.horizon()];
        end.extend_from_slice(&self.x[last]);
        FeasibilityRecord {
            max_constraint_violation,
            target_distance: spec.target.distance(&end),
            budget_excess: (self.v[last] - spec.budget).max(0.0),
            tol,
        }
    }

    /// State `(x, v)` at original time `t`, re-integrated from the
    /// preceding node.
    pub fn state_at(&self, spec: &ProblemSpec, t: f64) -> (Vec<f64>, f64) {
        let k = interval_of(&self.grid, t);
        let dt = t - self.grid[k];
        if dt == 0.0 {
            return (self.x[k].clone(), self.v[k]);
        }
        let ctrl = IntervalControl::Single(original_sample(&self.controls[k], self.params[k]));
        let mut z = NodeState {
            y0: self.grid[k],
            y: self.x[k].clone(),
            nu: self.v[k],
            xi: None,
        }
        .to_flat();
        let mut sc = integrate::Scratch::new(spec, z.len());
        integrate::step(spec, &ctrl, dt, DEFAULT_SUBSTEPS, &mut z, &mut sc);
        let n = spec.n();
        (z[1..1 + n].to_vec(), z[1 + n])
    }

    pub fn control_at(&self, t: f64) -> &[f64] {
        &self.controls[interval_of(&self.grid, t)]
    }
}

/// Sample `(1, u)` that drives the augmented integrator at unit time speed.
fn original_sample(u: &[f64], a: usize) -> ControlSample {
    ControlSample {
        w0: 1.0,
        w: u.to_vec(),
        a,
    }
}

fn interval_of(grid: &[f64], t: f64) -> usize {
    match grid.partition_point(|&g| g <= t) {
        0 => 0,
        p => (p - 1).min(grid.len() - 2),
    }
}

/// `σ(t) = t + v(t)` tabulated on the original grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeChange {
    pub t: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl TimeChange {
    pub fn new(orig: &OriginalProcess) -> Result<Self> {
        if orig.v[0] != 0.0 {
            return Err(Error::Process("v(0) must vanish".into()));
        }
        if orig.v.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Process("v is not nondecreasing".into()));
        }
        let sigma: Vec<f64> = orig.grid.iter().zip(&orig.v).map(|(t, v)| t + v).collect();
        if sigma.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Process("time change is not strictly increasing".into()));
        }
        Ok(Self {
            t: orig.grid.clone(),
            sigma,
        })
    }

    pub fn forward(&self, t: f64) -> f64 {
        interpolate(&self.t, &self.sigma, t)
    }

    pub fn inverse(&self, s: f64) -> f64 {
        interpolate(&self.sigma, &self.t, s)
    }

    pub fn total(&self) -> f64 {
        *self.sigma.last().expect("table is nonempty")
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = interval_of(xs, x);
    let (x0, x1) = (xs[k], xs[k + 1]);
    let r = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    ys[k] + r * (ys[k + 1] - ys[k])
}

/// Embeds an original process as a strict-sense process on `[0, σ(T)]`.
///
/// With `n_nodes = None` the pseudo-time grid is `σ` of the original grid,
/// on which the embedded controls are exactly piecewise constant. Otherwise
/// the process is resampled on `n_nodes` uniform intervals, each taking the
/// control in force at its midpoint.
pub fn embed_original(
    spec: &ProblemSpec,
    orig: &OriginalProcess,
    n_nodes: Option<usize>,
) -> Result<Process> {
    let tc = TimeChange::new(orig)?;
    let d = spec.d();
    let embedded_sample = |k: usize| {
        let u = &orig.controls[k];
        let scale = (1.0 + model::norm_pow(u, d)).powf(-1.0 / d as f64);
        ControlSample {
            w0: scale,
            w: u.iter().map(|c| c * scale).collect(),
            a: orig.params[k],
        }
    };
    let node = |t: f64, x: Vec<f64>, v: f64| NodeState {
        y0: t,
        y: x,
        nu: v,
        xi: None,
    };
    let (grid, controls, states) = match n_nodes {
        None => {
            let controls = (0..orig.controls.len())
                .map(|k| IntervalControl::Single(embedded_sample(k)))
                .collect();
            let states = (0..orig.grid.len())
                .map(|i| node(orig.grid[i], orig.x[i].clone(), orig.v[i]))
                .collect();
            (tc.sigma.clone(), controls, states)
        }
        Some(n) => {
            if n == 0 {
                return Err(Error::Range("resampling needs at least one interval".into()));
            }
            let total = tc.total();
            let mut grid: Vec<f64> = (0..=n).map(|i| total * i as f64 / n as f64).collect();
            grid[n] = total;
            let controls = (0..n)
                .map(|i| {
                    let mid = tc.inverse(0.5 * (grid[i] + grid[i + 1]));
                    IntervalControl::Single(embedded_sample(interval_of(&orig.grid, mid)))
                })
                .collect();
            let last = orig.grid.len() - 1;
            let states = grid
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    if i == n {
                        return node(orig.grid[last], orig.x[last].clone(), orig.v[last]);
                    }
                    let t = tc.inverse(s);
                    let (x, v) = orig.state_at(spec, t);
                    node(t, x, v)
                })
                .collect();
            (grid, controls, states)
        }
    };
    Ok(Process {
        layer: Layer::Strict,
        grid,
        controls,
        states,
    })
}

/// Recovers the original process by reparameterizing with `t = y0(s)` and
/// `u = w / w0`.
pub fn invert_embedding(spec: &ProblemSpec, proc: &Process, w0_min: f64) -> Result<OriginalProcess> {
    if proc.layer == Layer::Relaxed {
        return Err(Error::Mode("relaxed processes have no original counterpart".into()));
    }
    if w0_min <= 0.0 {
        return Err(Error::Range("w0_min must be positive".into()));
    }
    let mut controls = Vec::with_capacity(proc.intervals());
    let mut params = Vec::with_capacity(proc.intervals());
    for (k, c) in proc.controls.iter().enumerate() {
        let s = c.single().expect("non-relaxed layer");
        if s.w0 < w0_min {
            return Err(Error::ImpulsiveArc {
                interval: k,
                w0: s.w0,
                w0_min,
            });
        }
        controls.push(s.w.iter().map(|w| w / s.w0).collect());
        params.push(s.a);
    }
    let grid: Vec<f64> = proc.states.iter().map(|z| z.y0).collect();
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Process("y0 is not strictly increasing".into()));
    }
    if spec.n() != proc.states[0].y.len() {
        return Err(Error::Process("state dimension does not match the problem".into()));
    }
    Ok(OriginalProcess {
        grid,
        controls,
        params,
        x: proc.states.iter().map(|z| z.y.clone()).collect(),
        v: proc.states.iter().map(|z| z.nu).collect(),
    })
}

/// A process on `[0, S]` mapped onto the fixed horizon `[0, S̄]` with
/// constant speed `1 + ζ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RescaledProcess {
    pub s_bar: f64,
    pub zeta: Vec<f64>,
    pub grid: Vec<f64>,
    pub ystar: Vec<f64>,
    pub controls: Vec<IntervalControl>,
    pub states: Vec<NodeState>,
}

impl RescaledProcess {
    pub fn cost(&self, spec: &ProblemSpec) -> f64 {
        let z = self.states.last().expect("trajectory is nonempty");
        spec.psi(z.y0, &z.y, z.nu)
    }
}

pub fn rescale_free_time(s_bar: f64, proc: &Process, delta_bar: f64) -> Result<RescaledProcess> {
    if !(s_bar > 0.0 && s_bar.is_finite()) {
        return Err(Error::Range("reference horizon must be positive".into()));
    }
    if !(delta_bar > 0.0 && delta_bar <= 0.5) {
        return Err(Error::Range(format!("delta_bar must lie in (0, 1/2], got {delta_bar}")));
    }
    let s = proc.horizon();
    let zeta = s / s_bar - 1.0;
    if zeta.abs() > delta_bar {
        return Err(Error::Range(format!(
            "horizon {s} deviates from {s_bar} by more than delta_bar = {delta_bar}"
        )));
    }
    let speed = 1.0 + zeta;
    let mut grid: Vec<f64> = proc.grid.iter().map(|g| g / speed).collect();
    *grid.last_mut().expect("grid is nonempty") = s_bar;
    let mut ystar: Vec<f64> = grid.iter().map(|g| g * speed).collect();
    *ystar.last_mut().expect("grid is nonempty") = s;
    Ok(RescaledProcess {
        s_bar,
        zeta: vec![zeta; proc.intervals()],
        grid,
        ystar,
        controls: proc.controls.clone(),
        states: proc.states.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    fn uniform(t: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| t * i as f64 / n as f64).collect()
    }

    #[test]
    fn zero_control_is_a_fixed_point() {
        let spec = bundled::scalar();
        let orig = OriginalProcess::integrate(&spec, uniform(1.5, 10), vec![vec![0.0]; 10], vec![0; 10])
            .unwrap();
        let p = embed_original(&spec, &orig, Some(10)).unwrap();
        assert!((p.horizon() - 1.5).abs() < 1e-15);
        for (z, &s) in p.states.iter().zip(&p.grid) {
            assert!((z.y0 - s).abs() < 1e-14);
            assert_eq!(z.nu, 0.0);
        }
        for c in &p.controls {
            let s = c.single().unwrap();
            assert_eq!((s.w0, s.w[0]), (1.0, 0.0));
        }
        let back = invert_embedding(&spec, &p, 0.05).unwrap();
        assert!(back.controls.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn unit_control_doubles_time() {
        let spec = bundled::scalar();
        let orig = OriginalProcess::integrate(&spec, uniform(1.0, 8), vec![vec![1.0]; 8], vec![0; 8])
            .unwrap();
        let p = embed_original(&spec, &orig, Some(16)).unwrap();
        assert!((p.horizon() - 2.0).abs() < 1e-14);
        for (z, &s) in p.states.iter().zip(&p.grid) {
            assert!((z.y0 - s / 2.0).abs() < 1e-12);
        }
        let s = p.controls[3].single().unwrap();
        assert!((s.w0 - 0.5).abs() < 1e-15 && (s.w[0] - 0.5).abs() < 1e-15);
        assert!(p.validate(&spec).is_ok());
        assert_eq!(p.cost(&spec), orig.cost(&spec));

        let back = invert_embedding(&spec, &p, 0.05).unwrap();
        assert!((back.horizon() - 1.0).abs() < 1e-6);
        assert!(back.controls.iter().all(|u| (u[0] - 1.0).abs() < 1e-6));
    }

    #[test]
    fn impulsive_arc_has_no_inverse() {
        let spec = bundled::ex51();
        let reference = bundled::ex51_reference(&spec, 20).unwrap();
        match invert_embedding(&spec, &reference, 0.05) {
            Err(Error::ImpulsiveArc { interval, .. }) => assert_eq!(interval, 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rescaling_arithmetic() {
        let spec = bundled::scalar();
        let orig = OriginalProcess::integrate(&spec, uniform(1.1, 11), vec![vec![0.0]; 11], vec![0; 11])
            .unwrap();
        let p = embed_original(&spec, &orig, None).unwrap();
        let r = rescale_free_time(1.0, &p, DEFAULT_DELTA_BAR).unwrap();
        assert!((r.zeta[0] - 0.1).abs() < 1e-12);
        assert_eq!(*r.ystar.last().unwrap(), p.horizon());
        assert_eq!(*r.grid.last().unwrap(), 1.0);
        assert_eq!(r.cost(&spec), p.cost(&spec));
        let same = rescale_free_time(p.horizon(), &p, DEFAULT_DELTA_BAR).unwrap();
        assert_eq!(same.zeta[0], 0.0);
        assert_eq!(same.grid, p.grid);

        let orig2 = OriginalProcess::integrate(&spec, uniform(2.0, 4), vec![vec![0.0]; 4], vec![0; 4])
            .unwrap();
        let p2 = embed_original(&spec, &orig2, None).unwrap();
        assert!(matches!(rescale_free_time(1.0, &p2, 0.5), Err(Error::Range(_))));
    }

    #[test]
    fn non_monotone_v_rejected() {
        let spec = bundled::scalar();
        let mut orig =
            OriginalProcess::integrate(&spec, uniform(1.0, 4), vec![vec![1.0]; 4], vec![0; 4]).unwrap();
        orig.v[2] = 0.0;
        assert!(embed_original(&spec, &orig, None).is_err());
    }
}
