//! Fixed-step RK4 on the augmented state `[y0, y, ν, ξ]` with
//! piecewise-constant controls, plus the variational (transition-matrix)
//! integration used by the adjoint code.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{IntervalControl, Layer, NodeState, Process, ProblemSpec};

pub const DEFAULT_SUBSTEPS: usize = 2;

/// Reusable buffers for right-hand-side evaluation.
pub struct Scratch {
    /// Evaluate `ν̇` as `1 − (w0)^d` instead of `|w|^d`; the two agree on
    /// the sphere, and the first is smooth in `w`.
    pub sphere_nu: bool,
    vars: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Scratch {
    pub fn new(spec: &ProblemSpec, dim: usize) -> Self {
        Self {
            sphere_nu: false,
            vars: vec![0.0; spec.layout.len()],
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
        }
    }
}

pub fn state_dim(spec: &ProblemSpec, relaxed: bool) -> usize {
    let n = spec.n();
    if relaxed {
        2 * n + 3
    } else {
        n + 2
    }
}

/// Right-hand side of the augmented system.
#[inline]
pub fn rhs(
    spec: &ProblemSpec,
    ctrl: &IntervalControl,
    z: &[f64],
    out: &mut [f64],
    vars: &mut [f64],
    sphere_nu: bool,
) {
    let n = spec.n();
    let d = spec.d();
    out.iter_mut().for_each(|v| *v = 0.0);
    let t = z[0];
    let x = &z[1..1 + n];
    match ctrl {
        IntervalControl::Single(s) => {
            spec.fill_vars(vars, t, x, s.a);
            out[0] = s.w0.powi(d as i32);
            spec.dynamics
                .velocity_add(vars, s.w0, &s.w, 1.0, &mut out[1..1 + n]);
            out[1 + n] = nu_rate(s, d, sphere_nu);
        }
        IntervalControl::Relaxed(r) => {
            for (k, (lam, s)) in r.weights.iter().zip(&r.rows).enumerate() {
                out[2 + n + k] = *lam;
                if *lam == 0.0 {
                    continue;
                }
                spec.fill_vars(vars, t, x, s.a);
                out[0] += lam * s.w0.powi(d as i32);
                spec.dynamics
                    .velocity_add(vars, s.w0, &s.w, *lam, &mut out[1..1 + n]);
                out[1 + n] += lam * nu_rate(s, d, sphere_nu);
            }
        }
    }
}

#[inline]
fn nu_rate(s: &crate::model::ControlSample, d: usize, sphere_nu: bool) -> f64 {
    if sphere_nu {
        1.0 - s.w0.powi(d as i32)
    } else {
        s.w_pow(d)
    }
}

/// Advances `z` across one interval of length `ds` with `substeps` RK4 steps.
pub fn step(
    spec: &ProblemSpec,
    ctrl: &IntervalControl,
    ds: f64,
    substeps: usize,
    z: &mut [f64],
    sc: &mut Scratch,
) {
    let h = ds / substeps as f64;
    let dim = z.len();
    for _ in 0..substeps {
        let [k1, k2, k3, k4] = &mut sc.k;
        rhs(spec, ctrl, z, k1, &mut sc.vars, sc.sphere_nu);
        for i in 0..dim {
            sc.tmp[i] = z[i] + 0.5 * h * k1[i];
        }
        rhs(spec, ctrl, &sc.tmp, k2, &mut sc.vars, sc.sphere_nu);
        for i in 0..dim {
            sc.tmp[i] = z[i] + 0.5 * h * k2[i];
        }
        rhs(spec, ctrl, &sc.tmp, k3, &mut sc.vars, sc.sphere_nu);
        for i in 0..dim {
            sc.tmp[i] = z[i] + h * k3[i];
        }
        rhs(spec, ctrl, &sc.tmp, k4, &mut sc.vars, sc.sphere_nu);
        for i in 0..dim {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Integrates a full process from the problem's initial state.
pub fn integrate(
    spec: &ProblemSpec,
    layer: Layer,
    grid: Vec<f64>,
    controls: Vec<IntervalControl>,
    substeps: usize,
) -> Result<Process> {
    if grid.len() != controls.len() + 1 {
        return Err(Error::Process("grid length must be intervals + 1".into()));
    }
    let relaxed = layer == Layer::Relaxed;
    let dim = state_dim(spec, relaxed);
    let mut sc = Scratch::new(spec, dim);
    let mut z = NodeState::initial(spec, relaxed).to_flat();
    let n = spec.n();
    let mut states = Vec::with_capacity(grid.len());
    states.push(NodeState::from_flat(&z, n, relaxed));
    for (k, ctrl) in controls.iter().enumerate() {
        step(spec, ctrl, grid[k + 1] - grid[k], substeps, &mut z, &mut sc);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                interval: k,
                msg: "non-finite state".into(),
            });
        }
        states.push(NodeState::from_flat(&z, n, relaxed));
    }
    Ok(Process {
        layer,
        grid,
        controls,
        states,
    })
}

/// State at pseudo-time `s`, re-integrated from the preceding node.
pub fn state_at(spec: &ProblemSpec, proc: &Process, s: f64, substeps: usize) -> NodeState {
    let relaxed = proc.layer == Layer::Relaxed;
    let k = match proc.grid.partition_point(|&g| g <= s) {
        0 => 0,
        p => (p - 1).min(proc.intervals() - 1),
    };
    let ds = s - proc.grid[k];
    if ds == 0.0 {
        return proc.states[k].clone();
    }
    let mut z = proc.states[k].to_flat();
    let mut sc = Scratch::new(spec, z.len());
    step(spec, &proc.controls[k], ds, substeps, &mut z, &mut sc);
    NodeState::from_flat(&z, spec.n(), relaxed)
}

/// Largest mismatch between stored nodes and a one-interval re-integration.
pub fn dynamics_residual(spec: &ProblemSpec, proc: &Process, substeps: usize) -> f64 {
    let dim = state_dim(spec, proc.layer == Layer::Relaxed);
    let mut sc = Scratch::new(spec, dim);
    let mut worst = 0.0f64;
    for k in 0..proc.intervals() {
        let mut z = proc.states[k].to_flat();
        step(
            spec,
            &proc.controls[k],
            proc.grid[k + 1] - proc.grid[k],
            substeps,
            &mut z,
            &mut sc,
        );
        let next = proc.states[k + 1].to_flat();
        for (a, b) in z.iter().zip(&next) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Jacobian of the `(y0, y)` right-hand side with respect to `(y0, y)`.
pub fn tx_jacobian(spec: &ProblemSpec, ctrl: &IntervalControl, z: &[f64], vars: &mut [f64]) -> DMatrix<f64> {
    let n = spec.n();
    let mut jac = vec![0.0; n * (n + 1)];
    for (lam, s) in ctrl.components() {
        if lam == 0.0 {
            continue;
        }
        spec.fill_vars(vars, z[0], &z[1..1 + n], s.a);
        spec.dynamics
            .jacobian_add(vars, s.w0, &s.w, 0, n + 1, lam, &mut jac);
    }
    let mut out = DMatrix::zeros(n + 1, n + 1);
    for r in 0..n {
        for c in 0..=n {
            out[(r + 1, c)] = jac[r * (n + 1) + c];
        }
    }
    out
}

/// Integrates the state together with the transition matrix of the
/// linearized `(y0, y)` dynamics across one interval. Returns `Φ` with
/// `δ(y0,y)(end) = Φ · δ(y0,y)(start)`.
pub fn transition(
    spec: &ProblemSpec,
    ctrl: &IntervalControl,
    start: &NodeState,
    ds: f64,
    substeps: usize,
) -> DMatrix<f64> {
    let n = spec.n();
    let mut z = start.to_flat();
    let dim = z.len();
    let mut sc = Scratch::new(spec, dim);
    let mut vars = vec![0.0; spec.layout.len()];
    let mut phi = DMatrix::<f64>::identity(n + 1, n + 1);
    let h = ds / substeps as f64;
    let mut zt = vec![0.0; dim];
    for _ in 0..substeps {
        // Stage states for the coupled (z, Φ) RK4 step.
        let j1 = tx_jacobian(spec, ctrl, &z, &mut vars);
        let [k1, k2, k3, k4] = &mut sc.k;
        rhs(spec, ctrl, &z, k1, &mut sc.vars, false);
        for i in 0..dim {
            zt[i] = z[i] + 0.5 * h * k1[i];
        }
        let j2 = tx_jacobian(spec, ctrl, &zt, &mut vars);
        rhs(spec, ctrl, &zt, k2, &mut sc.vars, false);
        for i in 0..dim {
            zt[i] = z[i] + 0.5 * h * k2[i];
        }
        let j3 = tx_jacobian(spec, ctrl, &zt, &mut vars);
        rhs(spec, ctrl, &zt, k3, &mut sc.vars, false);
        for i in 0..dim {
            zt[i] = z[i] + h * k3[i];
        }
        let j4 = tx_jacobian(spec, ctrl, &zt, &mut vars);
        rhs(spec, ctrl, &zt, k4, &mut sc.vars, false);
        for i in 0..dim {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let p1 = &j1 * &phi;
        let p2 = &j2 * (&phi + &p1 * (0.5 * h));
        let p3 = &j3 * (&phi + &p2 * (0.5 * h));
        let p4 = &j4 * (&phi + &p3 * h);
        phi += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::model::ControlSample;

    #[test]
    fn linear_decay_matches_exponential() {
        // ẏ = -y encoded as drift; RK4 global error ~ h^4.
        let spec = crate::model::parse_problem(
            r#"
            horizon = 1.0
            [dynamics]
            n = 1
            m = 1
            d = 1
            drift = "decay"
            g = [ { k = 1, j = [1], field = "one" } ]
            [fields.decay]
            kind = "poly"
            components = ["-x1"]
            [fields.one]
            kind = "const"
            value = [1.0]
            [cost]
            expr = "x1"
            [init]
            x0 = [1.0]
            "#,
        )
        .unwrap();
        let n_int = 50;
        let grid: Vec<f64> = (0..=n_int).map(|i| i as f64 / n_int as f64).collect();
        let controls = vec![IntervalControl::Single(ControlSample::drift(1)); n_int];
        let p = integrate(&spec, Layer::Extended, grid, controls, 1).unwrap();
        assert!((p.terminal().y[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert!((p.terminal().y0 - 1.0).abs() < 1e-14);
        assert!(dynamics_residual(&spec, &p, 1) < 1e-15);
    }

    #[test]
    fn transition_matches_finite_differences() {
        let spec = bundled::ex51();
        let ctrl = IntervalControl::Single(ControlSample::from_w(vec![0.2, -0.3], 0, 1));
        let start = NodeState {
            y0: 0.1,
            y: vec![0.4, 0.5, -0.2],
            nu: 0.0,
            xi: None,
        };
        let phi = transition(&spec, &ctrl, &start, 0.3, 8);
        let base = {
            let mut z = start.to_flat();
            let mut sc = Scratch::new(&spec, z.len());
            step(&spec, &ctrl, 0.3, 8, &mut z, &mut sc);
            z
        };
        let h = 1e-6;
        for c in 0..4 {
            let mut z = start.to_flat();
            z[c] += h;
            let mut sc = Scratch::new(&spec, z.len());
            step(&spec, &ctrl, 0.3, 8, &mut z, &mut sc);
            for r in 0..4 {
                let fd = (z[r] - base[r]) / h;
                assert!((fd - phi[(r, c)]).abs() < 1e-5, "({r},{c}): {fd} vs {}", phi[(r, c)]);
            }
        }
    }
}
