//! Maximum-principle certification.
//!
//! Multipliers are discrete: the adjoint `(p0, p)` lives on the grid nodes,
//! the measure `μ` is a sum of atoms at nodes where the state constraint is
//! active, and the selections `(m0, m)` are convex combinations of the
//! constraint's subgradient generators. Between nodes the adjoint is
//! transported by the transposed transition matrix of the linearized
//! `(y0, y)` dynamics, so the whole multiplier is a linear image of its
//! terminal value, `γ`, `π` and the atom masses. Every question about the
//! multiplier set then becomes a small linear program.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::cone::{distance_to_shifted_cone, dot};
use crate::error::{Error, Result};
use crate::integrate::{self, DEFAULT_SUBSTEPS};
use crate::lp::{LinearProgram, LpOutcome, Row, RowKind, VarKind};
use crate::model::{self, ControlCone, ControlSample, IntervalControl, NodeState, Process, ProblemSpec};
use crate::par::{self, Parallelism};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Fixed horizon: no condition on the value of the Hamiltonian.
    Fixed,
    /// Free end-time impulsive extension: the maximized Hamiltonian vanishes.
    FreeImpulsive,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::FreeImpulsive => "free-impulsive",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Mode::Fixed),
            "free-impulsive" | "free" => Ok(Mode::FreeImpulsive),
            other => Err(Error::Parse(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CertifyOptions {
    /// Nodes with `h ≥ −tol_active·(1 + scale)` may carry atoms.
    pub tol_active: f64,
    pub tol_ham: f64,
    pub tol_adjoint: f64,
    pub tol_trans: f64,
    /// Threshold above which an LP optimum counts as nonzero.
    pub eps_nd: f64,
    pub tol_feas: f64,
    /// Unit directions per circle for `m = 2`.
    pub directions: usize,
    /// Radii per direction on the sphere `(w0)^d + |w|^d = 1`.
    pub radii: usize,
    pub substeps: usize,
    pub parallelism: Parallelism,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            tol_active: 1e-6,
            tol_ham: 1e-6,
            tol_adjoint: 1e-6,
            tol_trans: 1e-6,
            eps_nd: 1e-6,
            tol_feas: 1e-6,
            directions: 32,
            radii: 8,
            substeps: DEFAULT_SUBSTEPS,
            parallelism: Parallelism::default(),
        }
    }
}

/// Generator-list access to the nonsmooth objects of the problem.
pub struct SubdifferentialOracle<'a> {
    spec: &'a ProblemSpec,
    tol_active: f64,
}

impl<'a> SubdifferentialOracle<'a> {
    pub fn new(spec: &'a ProblemSpec, tol_active: f64) -> Self {
        Self { spec, tol_active }
    }

    /// Generators `(ζ0, ζ)` of the hybrid subdifferential of `h` at `(t, x)`.
    pub fn h_generators(&self, t: f64, x: &[f64]) -> Vec<Vec<f64>> {
        self.spec
            .constraint
            .generators(self.spec.layout, t, x, self.tol_active)
    }

    pub fn h_is_smooth(&self) -> bool {
        self.spec.constraint.is_smooth()
    }

    /// `∇Ψ` with respect to `(t, x, v)`.
    pub fn psi_gradient(&self, t: f64, x: &[f64], v: f64) -> Vec<f64> {
        self.spec.cost.gradient(self.spec.layout, t, x, v)
    }

    /// Jacobian of the `(y0, y)` velocity with respect to `(y0, y)`.
    pub fn tx_jacobian(&self, ctrl: &IntervalControl, state: &NodeState) -> DMatrix<f64> {
        let mut vars = vec![0.0; self.spec.layout.len()];
        integrate::tx_jacobian(self.spec, ctrl, &state.to_flat(), &mut vars)
    }

    /// Largest gap between the single generator and a central difference of
    /// `h` at `(t, x)`. `None` when `h` has several generators there.
    pub fn gradient_gap(&self, t: f64, x: &[f64], step: f64) -> Option<f64> {
        let gens = self.h_generators(t, x);
        if gens.len() != 1 {
            return None;
        }
        let h = |t: f64, x: &[f64]| self.spec.h(t, x);
        let mut gap: f64 = (gens[0][0] - (h(t + step, x) - h(t - step, x)) / (2.0 * step)).abs();
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            gap = gap.max((gens[0][i + 1] - (h(t, &xp) - h(t, &xm)) / (2.0 * step)).abs());
        }
        Some(gap)
    }
}

/// One atom of `μ` with its selection `(m0, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub node: usize,
    pub mass: f64,
    pub m: Vec<f64>,
}

/// Discrete multipliers `(p0, p, γ, π, μ, m0, m)` and the derived `(q0, q)`.
///
/// `p[k]` and `q[k]` hold `(p0, p)` and `(q0, q)` at node `k`, with
/// `q(s_k) = p(s_k) + Σ_{atoms at nodes j < k} m_j μ_j` for `k < N` and the
/// closure convention (all atoms) at the last node.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierSet {
    pub p: Vec<Vec<f64>>,
    pub gamma: f64,
    pub pi: f64,
    pub atoms: Vec<Atom>,
    pub q: Vec<Vec<f64>>,
}

impl MultiplierSet {
    pub fn new(p: Vec<Vec<f64>>, gamma: f64, pi: f64, mut atoms: Vec<Atom>) -> Self {
        atoms.sort_by_key(|a| a.node);
        let q = derive_q(&p, &atoms);
        Self {
            p,
            gamma,
            pi,
            atoms,
            q,
        }
    }

    pub fn zero(nodes: usize, dim: usize) -> Self {
        Self::new(vec![vec![0.0; dim]; nodes], 0.0, 0.0, Vec::new())
    }

    /// Recomputes `q` from `(p, μ, m)`.
    pub fn recompute_q(&self) -> Vec<Vec<f64>> {
        derive_q(&self.p, &self.atoms)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let p = self.p.iter().map(|v| v.iter().map(|x| c * x).collect()).collect();
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                node: a.node,
                mass: c * a.mass,
                m: a.m.clone(),
            })
            .collect();
        Self::new(p, c * self.gamma, c * self.pi, atoms)
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().fold(0.0, |acc, a| acc + a.mass)
    }

    /// `μ(]0, S])`.
    pub fn mass_after_start(&self) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.node > 0)
            .fold(0.0, |acc, a| acc + a.mass)
    }

    /// `(q(s_k⁺), q(s_{k+1}⁻))` on interval `k`.
    pub fn q_limits(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let jump = cumulative_jump(&self.atoms, self.p[0].len(), k);
        let right: Vec<f64> = self.p[k].iter().zip(&jump).map(|(a, b)| a + b).collect();
        let left: Vec<f64> = self.p[k + 1].iter().zip(&jump).map(|(a, b)| a + b).collect();
        (right, left)
    }

    /// Essential supremum of `|q0| + |q|_∞`, over one-sided limits at the nodes.
    pub fn q_sup(&self) -> f64 {
        let mut q0: f64 = 0.0;
        let mut qx: f64 = 0.0;
        for k in 0..self.p.len() - 1 {
            let (r, l) = self.q_limits(k);
            for v in [r, l] {
                q0 = q0.max(v[0].abs());
                qx = v[1..].iter().fold(qx, |acc, x| acc.max(x.abs()));
            }
        }
        q0 + qx
    }

    pub fn p_sup(&self) -> f64 {
        let mut p0: f64 = 0.0;
        let mut px: f64 = 0.0;
        for v in &self.p {
            p0 = p0.max(v[0].abs());
            px = v[1..].iter().fold(px, |acc, x| acc.max(x.abs()));
        }
        p0 + px
    }
}

/// `Σ_{atoms at nodes j ≤ k} m_j μ_j`.
fn cumulative_jump(atoms: &[Atom], dim: usize, k: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for a in atoms.iter().filter(|a| a.node <= k) {
        for (s, m) in acc.iter_mut().zip(&a.m) {
            *s += a.mass * m;
        }
    }
    acc
}

fn derive_q(p: &[Vec<f64>], atoms: &[Atom]) -> Vec<Vec<f64>> {
    let last = p.len() - 1;
    let dim = p[0].len();
    let mut out = Vec::with_capacity(p.len());
    let mut acc = vec![0.0; dim];
    let mut next = 0;
    for (k, pk) in p.iter().enumerate() {
        // atoms strictly before node k, or all of them at the last node
        while next < atoms.len() && (atoms[next].node < k || k == last) {
            for (s, m) in acc.iter_mut().zip(&atoms[next].m) {
                *s += atoms[next].mass * m;
            }
            next += 1;
        }
        out.push(pk.iter().zip(&acc).map(|(a, b)| a + b).collect());
    }
    out
}

/// Transition matrices of the linearized `(y0, y)` dynamics, one per interval.
pub fn transitions(spec: &ProblemSpec, proc: &Process, substeps: usize) -> Vec<DMatrix<f64>> {
    (0..proc.intervals())
        .map(|k| {
            let ds = proc.grid[k + 1] - proc.grid[k];
            integrate::transition(spec, &proc.controls[k], &proc.states[k], ds, substeps)
        })
        .collect()
}

/// Backward adjoint step across interval `k`: given `q(s_{k+1}⁻)`, returns
/// `p(s_k) − p(s_{k+1}) = Φ_kᵀ q − q`.
pub fn adjoint_step(spec: &ProblemSpec, proc: &Process, q_next: &[f64], k: usize) -> Result<Vec<f64>> {
    let n1 = spec.n() + 1;
    if k >= proc.intervals() || q_next.len() != n1 {
        return Err(Error::Range(format!("adjoint step on interval {k} with |q| = {}", q_next.len())));
    }
    let ds = proc.grid[k + 1] - proc.grid[k];
    let phi = integrate::transition(spec, &proc.controls[k], &proc.states[k], ds, DEFAULT_SUBSTEPS);
    Ok(transport(&phi, q_next).iter().zip(q_next).map(|(a, b)| a - b).collect())
}

fn transport(phi: &DMatrix<f64>, q: &[f64]) -> Vec<f64> {
    let n1 = q.len();
    (0..n1)
        .map(|c| (0..n1).map(|r| phi[(r, c)] * q[r]).sum())
        .collect()
}

/// Builds the full multiplier from its terminal data by backward transport.
pub fn sweep(phis: &[DMatrix<f64>], p_terminal: &[f64], gamma: f64, pi: f64, atoms: Vec<Atom>) -> MultiplierSet {
    let n_int = phis.len();
    let dim = p_terminal.len();
    let mut p = vec![vec![0.0; dim]; n_int + 1];
    p[n_int] = p_terminal.to_vec();
    for k in (0..n_int).rev() {
        let jump = cumulative_jump(&atoms, dim, k);
        let q_left: Vec<f64> = p[k + 1].iter().zip(&jump).map(|(a, b)| a + b).collect();
        let q_right = transport(&phis[k], &q_left);
        p[k] = q_right.iter().zip(&jump).map(|(a, b)| a - b).collect();
    }
    MultiplierSet::new(p, gamma, pi, atoms)
}

/// Finite sample of `W × A`: directions in `U` crossed with radii on the
/// sphere, plus pure drift, for every parameter point.
pub fn sample_grid(spec: &ProblemSpec, directions: usize, radii: usize) -> Vec<ControlSample> {
    let m = spec.m();
    let d = spec.d();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    match m {
        1 => dirs.extend([vec![1.0], vec![-1.0]]),
        2 => {
            let count = directions.max(4);
            for i in 0..count {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                let (s, c) = a.sin_cos();
                dirs.push(vec![snap(c), snap(s)]);
            }
        }
        _ => {
            for i in 0..m {
                for sign in [1.0, -1.0] {
                    let mut u = vec![0.0; m];
                    u[i] = sign;
                    dirs.push(u);
                }
                for j in i + 1..m {
                    for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                        let mut u = vec![0.0; m];
                        u[i] = a / 2f64.sqrt();
                        u[j] = b / 2f64.sqrt();
                        dirs.push(u);
                    }
                }
            }
            if m <= 8 {
                for mask in 0..(1usize << m) {
                    let u = (0..m)
                        .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 } / (m as f64).sqrt())
                        .collect();
                    dirs.push(u);
                }
            }
        }
    }
    if let ControlCone::Rays(rays) = &spec.cone {
        let unit = |v: &[f64]| {
            let n = crate::cone::norm(v);
            v.iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        for (i, r) in rays.iter().enumerate() {
            dirs.push(unit(r));
            for s in &rays[i + 1..] {
                let sum: Vec<f64> = r.iter().zip(s).map(|(a, b)| a + b).collect();
                if crate::cone::norm(&sum) > 1e-12 {
                    dirs.push(unit(&sum));
                }
            }
        }
    }
    dirs.retain(|u| spec.cone.contains(u, 1e-12));
    let mut out = Vec::new();
    for a in 0..spec.params.len() {
        out.push(ControlSample::drift(m));
        out.last_mut().expect("just pushed").a = a;
        for j in 1..=radii.max(1) {
            let r = j as f64 / radii.max(1) as f64;
            let w0 = (1.0 - r.powi(d as i32)).max(0.0).powf(1.0 / d as f64);
            for u in &dirs {
                out.push(ControlSample {
                    w0,
                    w: u.iter().map(|x| r * x).collect(),
                    a,
                });
            }
        }
    }
    out
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-15 {
        0.0
    } else if (v.abs() - 1.0).abs() < 1e-15 {
        v.signum()
    } else {
        v
    }
}

/// `(w0^d, 𝓕, |w|^d)`: the vector pairing with `(q0, q, π)` in `H`.
fn h_vector(spec: &ProblemSpec, vars: &mut [f64], t: f64, x: &[f64], s: &ControlSample) -> Vec<f64> {
    let n = spec.n();
    let d = spec.d();
    let mut out = vec![0.0; n + 2];
    out[0] = s.w0.powi(d as i32);
    spec.fill_vars(vars, t, x, s.a);
    spec.dynamics.velocity_add(vars, s.w0, &s.w, 1.0, &mut out[1..1 + n]);
    out[n + 1] = s.w_pow(d);
    out
}

/// Unmaximized Hamiltonian `q0 (w0)^d + q·𝓕 + π |w|^d`.
pub fn hamiltonian(spec: &ProblemSpec, t: f64, x: &[f64], q: &[f64], pi: f64, s: &ControlSample) -> f64 {
    let mut vars = vec![0.0; spec.layout.len()];
    let hv = h_vector(spec, &mut vars, t, x, s);
    dot(&hv[..q.len()], q) + pi * hv[q.len()]
}

/// Residuals of the maximum-principle conditions for one multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualTable {
    pub adjoint: f64,
    pub transversality: f64,
    pub hamiltonian_max: f64,
    /// `max |H|` along the process; free-impulsive mode only.
    pub hamiltonian_zero: Option<f64>,
    pub support: f64,
    pub nontriviality: f64,
    pub strengthened: f64,
}

impl ResidualTable {
    /// Whether every defect is within tolerance and the multiplier is nontrivial.
    pub fn passes(&self, opts: &CertifyOptions) -> bool {
        self.defects_pass(opts) && self.nontriviality > opts.eps_nd
    }

    pub fn defects_pass(&self, opts: &CertifyOptions) -> bool {
        self.adjoint <= opts.tol_adjoint
            && self.transversality <= opts.tol_trans
            && self.hamiltonian_max <= opts.tol_ham
            && self.hamiltonian_zero.is_none_or(|v| v <= opts.tol_ham)
            && self.support <= opts.tol_active
    }

    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![
            ("adjoint", self.adjoint),
            ("transversality", self.transversality),
            ("hamiltonian_max", self.hamiltonian_max),
        ];
        if let Some(v) = self.hamiltonian_zero {
            rows.push(("hamiltonian_zero", v));
        }
        rows.extend([
            ("support", self.support),
            ("nontriviality", self.nontriviality),
            ("strengthened", self.strengthened),
        ]);
        rows
    }
}

/// Precomputed data shared by residual evaluation and the multiplier LPs.
struct Context<'a> {
    spec: &'a ProblemSpec,
    proc: &'a Process,
    mode: Mode,
    phis: Vec<DMatrix<f64>>,
    /// Evaluation points: `(interval, node whose state is used)`, two per
    /// interval, paired with `q(s_k⁺)` and `q(s_{k+1}⁻)`.
    points: Vec<(usize, usize)>,
    /// `H`-vectors of the own control components with positive weight.
    own: Vec<Vec<Vec<f64>>>,
    /// `H`-vectors of every grid sample, per point.
    grid: Vec<Vec<Vec<f64>>>,
    /// Nodes allowed to carry atoms and their generators.
    candidates: Vec<(usize, Vec<Vec<f64>>)>,
    tol_active: f64,
}

impl<'a> Context<'a> {
    fn new(spec: &'a ProblemSpec, proc: &'a Process, mode: Mode, opts: &CertifyOptions) -> Result<Self> {
        proc.validate(spec)?;
        let phis = transitions(spec, proc, opts.substeps.max(1));
        let samples = sample_grid(spec, opts.directions, opts.radii);
        if samples.is_empty() {
            return Err(Error::Range("empty control sample grid".into()));
        }
        let mut vars = vec![0.0; spec.layout.len()];
        let mut points = Vec::new();
        let mut own = Vec::new();
        let mut grid = Vec::new();
        for k in 0..proc.intervals() {
            for node in [k, k + 1] {
                let st = &proc.states[node];
                points.push((k, node));
                own.push(
                    proc.controls[k]
                        .components()
                        .into_iter()
                        .filter(|(lam, _)| *lam > 0.0)
                        .map(|(_, s)| h_vector(spec, &mut vars, st.y0, &st.y, s))
                        .collect(),
                );
                grid.push(
                    samples
                        .iter()
                        .map(|s| h_vector(spec, &mut vars, st.y0, &st.y, s))
                        .collect(),
                );
            }
        }
        let scale = proc
            .states
            .iter()
            .map(|st| spec.h(st.y0, &st.y))
            .filter(|v| v.is_finite())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let tol_active = opts.tol_active * (1.0 + scale);
        let oracle = SubdifferentialOracle::new(spec, tol_active);
        let candidates = if spec.constraint.is_none() {
            Vec::new()
        } else {
            proc.states
                .iter()
                .enumerate()
                .filter(|(_, st)| spec.h(st.y0, &st.y) >= -tol_active)
                .map(|(j, st)| (j, oracle.h_generators(st.y0, &st.y)))
                .collect()
        };
        Ok(Self {
            spec,
            proc,
            mode,
            phis,
            points,
            own,
            grid,
            candidates,
            tol_active,
        })
    }

    fn n1(&self) -> usize {
        self.spec.n() + 1
    }

    /// Active target normals over `(t, x, v)` and whether the budget is active.
    fn terminal_normals(&self) -> (Vec<Vec<f64>>, bool) {
        let z = self.proc.terminal();
        let tx = z.tx();
        let tol = self.tol_active * (1.0 + tx.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let mut gens: Vec<Vec<f64>> = self
            .spec
            .target
            .normal_generators(&tx, tol)
            .into_iter()
            .map(|mut c| {
                c.push(0.0);
                c
            })
            .collect();
        let budget = self.spec.budget.is_finite() && z.nu >= self.spec.budget - tol;
        if budget {
            let mut e = vec![0.0; self.n1() + 1];
            e[self.n1()] = 1.0;
            gens.push(e);
        }
        (gens, budget)
    }

    fn residuals(&self, mult: &MultiplierSet) -> Result<ResidualTable> {
        let n1 = self.n1();
        let nodes = self.proc.states.len();
        if mult.p.len() != nodes || mult.p.iter().any(|v| v.len() != n1) {
            return Err(Error::Mode(format!(
                "multiplier has {} nodes of width {}, process needs {nodes} of width {n1}",
                mult.p.len(),
                mult.p.first().map_or(0, |v| v.len())
            )));
        }
        let mut adjoint: f64 = 0.0;
        for k in 0..self.proc.intervals() {
            let (right, left) = mult.q_limits(k);
            let moved = transport(&self.phis[k], &left);
            for (a, b) in moved.iter().zip(&right) {
                adjoint = adjoint.max((a - b).abs());
            }
        }
        let z = self.proc.terminal();
        let grad = SubdifferentialOracle::new(self.spec, self.tol_active).psi_gradient(z.y0, &z.y, z.nu);
        let mut target: Vec<f64> = mult.q[nodes - 1].iter().map(|v| -v).collect();
        target.push(-mult.pi);
        let offset: Vec<f64> = grad.iter().map(|g| mult.gamma * g).collect();
        let (gens, _) = self.terminal_normals();
        let transversality = distance_to_shifted_cone(&target, &offset, &gens);
        let mut ham: f64 = 0.0;
        let mut zero: f64 = 0.0;
        for (i, &(k, _)) in self.points.iter().enumerate() {
            let (right, left) = mult.q_limits(k);
            let q = if i % 2 == 0 { right } else { left };
            let value = |hv: &Vec<f64>| dot(&hv[..n1], &q) + mult.pi * hv[n1];
            let best = self.grid[i].iter().map(value).fold(f64::NEG_INFINITY, f64::max);
            for hv in &self.own[i] {
                let own = value(hv);
                ham = ham.max(best - own);
                zero = zero.max(own.abs());
            }
        }
        let support: f64 = mult
            .atoms
            .iter()
            .filter(|a| {
                let st = &self.proc.states[a.node];
                self.spec.h(st.y0, &st.y) < -self.tol_active
            })
            .fold(0.0, |acc, a| acc + a.mass);
        Ok(ResidualTable {
            adjoint,
            transversality,
            hamiltonian_max: ham.max(0.0),
            hamiltonian_zero: (self.mode == Mode::FreeImpulsive).then_some(zero),
            support,
            nontriviality: mult.p_sup() + mult.total_mass() + mult.gamma,
            strengthened: mult.mass_after_start() + mult.q_sup() + mult.gamma,
        })
    }
}

/// Evaluates every maximum-principle condition for `mult` along `proc`.
pub fn residuals(
    spec: &ProblemSpec,
    proc: &Process,
    mult: &MultiplierSet,
    mode: Mode,
    opts: &CertifyOptions,
) -> Result<ResidualTable> {
    Context::new(spec, proc, mode, opts)?.residuals(mult)
}

/// Variable layout of the multiplier LP.
struct MultiplierLp<'c, 'a> {
    ctx: &'c Context<'a>,
    nv: usize,
    p_plus: usize,
    p_minus: usize,
    gamma: usize,
    pi_neg: usize,
    /// `(node, generator, variable)` for the linearized masses `μ_j θ_{j,g}`.
    masses: Vec<(usize, Vec<f64>, usize)>,
    /// `q` at each evaluation point as an `n1 × nv` map.
    maps: Vec<DMatrix<f64>>,
    base: LinearProgram,
}

/// Objective of one LP in a family.
#[derive(Clone, Debug)]
struct Probe {
    coeffs: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
struct ProbeResult {
    value: f64,
    x: Option<Vec<f64>>,
    error: Option<String>,
}

impl<'c, 'a> MultiplierLp<'c, 'a> {
    fn new(ctx: &'c Context<'a>) -> Self {
        let n1 = ctx.n1();
        let mut lp = LinearProgram::new();
        let p_plus = lp.num_vars();
        for _ in 0..n1 {
            lp.add_var(VarKind::NonNeg);
        }
        let p_minus = lp.num_vars();
        for _ in 0..n1 {
            lp.add_var(VarKind::NonNeg);
        }
        let gamma = lp.add_var(VarKind::NonNeg);
        let pi_neg = lp.add_var(VarKind::NonNeg);
        let (normals, budget_active) = ctx.terminal_normals();
        let betas: Vec<usize> = normals.iter().map(|_| lp.add_var(VarKind::NonNeg)).collect();
        let mut masses = Vec::new();
        for (node, gens) in &ctx.candidates {
            for g in gens {
                masses.push((*node, g.clone(), lp.add_var(VarKind::NonNeg)));
            }
        }
        let nv = lp.num_vars();

        // q maps by backward transport of the terminal value.
        let n_int = ctx.proc.intervals();
        let mut terminal = DMatrix::<f64>::zeros(n1, nv);
        for c in 0..n1 {
            terminal[(c, p_plus + c)] = 1.0;
            terminal[(c, p_minus + c)] = -1.0;
        }
        for (_, g, v) in &masses {
            for c in 0..n1 {
                terminal[(c, *v)] += g[c];
            }
        }
        let remove_atoms = |mat: &mut DMatrix<f64>, node: usize| {
            for (j, g, v) in &masses {
                if *j == node {
                    for c in 0..n1 {
                        mat[(c, *v)] -= g[c];
                    }
                }
            }
        };
        let mut left = terminal.clone();
        remove_atoms(&mut left, n_int);
        let mut maps = vec![DMatrix::zeros(0, 0); 2 * n_int];
        for k in (0..n_int).rev() {
            let right = ctx.phis[k].transpose() * &left;
            maps[2 * k + 1] = left;
            let mut next = right.clone();
            maps[2 * k] = right;
            remove_atoms(&mut next, k);
            left = next;
        }

        // Transversality: −(q(S), π) − γ∇Ψ − Σ β_i n_i = 0.
        let z = ctx.proc.terminal();
        let grad = SubdifferentialOracle::new(ctx.spec, ctx.tol_active).psi_gradient(z.y0, &z.y, z.nu);
        for c in 0..n1 {
            let mut coeffs: Vec<(usize, f64)> = (0..nv)
                .filter(|&v| terminal[(c, v)] != 0.0)
                .map(|v| (v, -terminal[(c, v)]))
                .collect();
            coeffs.push((gamma, -grad[c]));
            for (b, n) in betas.iter().zip(&normals) {
                if n[c] != 0.0 {
                    coeffs.push((*b, -n[c]));
                }
            }
            lp.add_row(coeffs, RowKind::Eq, 0.0);
        }
        let mut coeffs = vec![(pi_neg, 1.0), (gamma, -grad[n1])];
        if budget_active {
            coeffs.push((*betas.last().expect("budget normal"), -1.0));
        }
        lp.add_row(coeffs, RowKind::Eq, 0.0);

        // Normalization surrogate.
        let mut norm: Vec<(usize, f64)> = (0..2 * n1).map(|i| (p_plus + i, 1.0)).collect();
        norm.push((gamma, 1.0));
        norm.extend(masses.iter().map(|(_, _, v)| (*v, 1.0)));
        lp.add_row(norm, RowKind::Le, 1.0);

        let mut this = Self {
            ctx,
            nv,
            p_plus,
            p_minus,
            gamma,
            pi_neg,
            masses,
            maps,
            base: lp,
        };
        if ctx.mode == Mode::FreeImpulsive {
            for i in 0..ctx.points.len() {
                for hv in &ctx.own[i] {
                    let row = this.h_row(i, hv, None);
                    this.base.add_row(row, RowKind::Eq, 0.0);
                }
            }
        }
        this
    }

    /// Coefficients of `H(sample) − H(own)` (or `H(own)` when `sample` is
    /// `None`) at point `i`, as a linear form in the LP variables.
    fn h_row(&self, i: usize, own: &[f64], sample: Option<&[f64]>) -> Vec<(usize, f64)> {
        let n1 = self.ctx.n1();
        let diff: Vec<f64> = match sample {
            Some(s) => s.iter().zip(own).map(|(a, b)| a - b).collect(),
            None => own.to_vec(),
        };
        let map = &self.maps[i];
        let mut coeffs = Vec::new();
        for v in 0..self.nv {
            let c: f64 = (0..n1).map(|r| diff[r] * map[(r, v)]).sum();
            if c != 0.0 {
                coeffs.push((v, c));
            }
        }
        if diff[n1] != 0.0 {
            coeffs.push((self.pi_neg, -diff[n1]));
        }
        coeffs
    }

    fn q_at(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let map = &self.maps[i];
        (0..map.nrows())
            .map(|r| (0..self.nv).map(|v| map[(r, v)] * x[v]).sum())
            .collect()
    }

    /// Most violated Hamiltonian row per point and own component.
    fn violated(&self, x: &[f64]) -> Vec<Row> {
        let n1 = self.ctx.n1();
        let pi = -x[self.pi_neg];
        let mut rows = Vec::new();
        for i in 0..self.ctx.points.len() {
            let q = self.q_at(i, x);
            let value = |hv: &[f64]| dot(&hv[..n1], &q) + pi * hv[n1];
            let scale = 1.0 + q.iter().fold(pi.abs(), |a, v| a.max(v.abs()));
            for own in &self.ctx.own[i] {
                let base = value(own);
                let (best, arg) = self.ctx.grid[i]
                    .iter()
                    .enumerate()
                    .map(|(j, hv)| (value(hv) - base, j))
                    .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
                if best > 1e-10 * scale {
                    rows.push(Row {
                        coeffs: self.h_row(i, own, Some(&self.ctx.grid[i][arg])),
                        kind: RowKind::Le,
                        rhs: 0.0,
                    });
                }
            }
        }
        rows
    }

    fn solve_one(&self, probe: &Probe, gamma_zero: bool, cuts: &[Row]) -> (ProbeResult, Vec<Row>) {
        let mut lp = self.base.clone();
        if gamma_zero {
            lp.add_row(vec![(self.gamma, 1.0)], RowKind::Eq, 0.0);
        }
        for r in cuts {
            lp.add_row(r.coeffs.clone(), r.kind, r.rhs);
        }
        lp.set_objective(&probe.coeffs);
        match lp.solve() {
            Ok(LpOutcome::Optimal { x, objective }) => {
                let new = self.violated(&x);
                (
                    ProbeResult {
                        value: objective,
                        x: Some(x),
                        error: None,
                    },
                    new,
                )
            }
            Ok(LpOutcome::Infeasible) => (
                ProbeResult {
                    value: f64::NEG_INFINITY,
                    x: None,
                    error: None,
                },
                Vec::new(),
            ),
            Ok(LpOutcome::Unbounded) => (
                ProbeResult {
                    value: f64::INFINITY,
                    x: None,
                    error: None,
                },
                Vec::new(),
            ),
            Err(e) => (
                ProbeResult {
                    value: f64::NEG_INFINITY,
                    x: None,
                    error: Some(e.to_string()),
                },
                Vec::new(),
            ),
        }
    }

    /// Solves a family with lazily generated Hamiltonian rows shared by all
    /// members; rounds repeat until no member violates a sampled row.
    fn family(
        &self,
        probes: &[Probe],
        gamma_zero: bool,
        cuts: &mut Vec<Row>,
        mode: Parallelism,
        solves: &mut usize,
    ) -> Vec<ProbeResult> {
        let mut results: Vec<Option<ProbeResult>> = vec![None; probes.len()];
        let mut pending: Vec<usize> = (0..probes.len()).collect();
        // A few members sequentially first so later ones start with cuts.
        let warm = pending.len().min(2);
        for &i in &pending[..warm] {
            loop {
                *solves += 1;
                let (r, new) = self.solve_one(&probes[i], gamma_zero, cuts);
                if new.is_empty() {
                    results[i] = Some(r);
                    break;
                }
                cuts.extend(new);
            }
        }
        pending.drain(..warm);
        while !pending.is_empty() {
            let snapshot: &[Row] = cuts;
            let outs = par::map(mode, pending.clone(), |i| (i, self.solve_one(&probes[i], gamma_zero, snapshot)));
            *solves += outs.len();
            let mut next = Vec::new();
            let mut added = Vec::new();
            for (i, (r, new)) in outs {
                if new.is_empty() {
                    results[i] = Some(r);
                } else {
                    next.push(i);
                    added.extend(new);
                }
            }
            cuts.extend(added);
            pending = next;
        }
        results.into_iter().map(|r| r.expect("every member solved")).collect()
    }

    fn multiplier(&self, x: &[f64]) -> MultiplierSet {
        let n1 = self.ctx.n1();
        let p_s: Vec<f64> = (0..n1).map(|c| x[self.p_plus + c] - x[self.p_minus + c]).collect();
        let mut atoms: Vec<Atom> = Vec::new();
        for (node, g, v) in &self.masses {
            let w = x[*v];
            if w <= 0.0 {
                continue;
            }
            match atoms.iter_mut().find(|a| a.node == *node) {
                Some(a) => {
                    for (m, gc) in a.m.iter_mut().zip(g) {
                        *m += w * gc;
                    }
                    a.mass += w;
                }
                None => atoms.push(Atom {
                    node: *node,
                    mass: w,
                    m: g.iter().map(|gc| w * gc).collect(),
                }),
            }
        }
        for a in &mut atoms {
            for m in &mut a.m {
                *m /= a.mass;
            }
        }
        sweep(&self.ctx.phis, &p_s, x[self.gamma], -x[self.pi_neg], atoms)
    }

    fn nontriviality_probes(&self, with_gamma: bool) -> Vec<Probe> {
        let n1 = self.ctx.n1();
        let mut probes = Vec::new();
        if with_gamma {
            probes.push(Probe {
                coeffs: vec![(self.gamma, 1.0)],
            });
        }
        probes.push(Probe {
            coeffs: self.masses.iter().map(|(_, _, v)| (*v, 1.0)).collect(),
        });
        for c in 0..n1 {
            for sign in [1.0, -1.0] {
                probes.push(Probe {
                    coeffs: vec![(self.p_plus + c, sign), (self.p_minus + c, -sign)],
                });
            }
        }
        probes
    }

    /// Objectives whose positivity under `γ = 0` witnesses nondegeneracy:
    /// `μ(]0, S])` and every signed `q` component at every point, without
    /// duplicates.
    fn strengthened_probes(&self) -> Vec<Probe> {
        let mut probes = vec![Probe {
            coeffs: self
                .masses
                .iter()
                .filter(|(node, _, _)| *node > 0)
                .map(|(_, _, v)| (*v, 1.0))
                .collect(),
        }];
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for map in &self.maps {
            for r in 0..map.nrows() {
                let row: Vec<f64> = (0..self.nv).map(|v| map[(r, v)]).collect();
                if row.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
                if seen.contains(&key) {
                    continue;
                }
                seen.push(key);
                for sign in [1.0, -1.0] {
                    probes.push(Probe {
                        coeffs: row
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| **c != 0.0)
                            .map(|(v, c)| (v, sign * c))
                            .collect(),
                    });
                }
            }
        }
        probes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    /// Every multiplier has `γ > 0`.
    Normal,
    /// Some multiplier has `γ = 0`, but all such are degenerate, and a
    /// nondegenerate multiplier with `γ > 0` exists.
    NondegenerateNormal,
    /// Some multiplier has `γ = 0`; no multiplier is nondegenerate.
    Abnormal,
    /// Some nondegenerate multiplier has `γ = 0`.
    NondegenerateAbnormal,
    NotExtremal,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Normal => "normal",
            Classification::NondegenerateNormal => "nondegenerate-normal",
            Classification::Abnormal => "abnormal",
            Classification::NondegenerateAbnormal => "nondegenerate-abnormal",
            Classification::NotExtremal => "not-extremal",
        }
    }

    /// Whether some multiplier with `γ = 0` exists.
    pub fn is_abnormal(&self) -> bool {
        matches!(
            self,
            Classification::NondegenerateNormal | Classification::Abnormal | Classification::NondegenerateAbnormal
        )
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct Witness {
    pub label: &'static str,
    pub multipliers: MultiplierSet,
    pub residuals: ResidualTable,
}

#[derive(Clone, Debug)]
pub struct ExtremalReport {
    pub classification: Classification,
    pub mode: Mode,
    /// Some nontrivial multiplier exists.
    pub extremal: bool,
    /// Some nontrivial multiplier has `γ = 0`.
    pub abnormal: bool,
    /// Some nondegenerate multiplier has `γ = 0`.
    pub nondegenerate_abnormal: bool,
    /// Some multiplier has `γ > 0`.
    pub normal_exists: bool,
    /// Largest strengthened-nontriviality optimum over multipliers with
    /// `γ = 0` under the LP normalization.
    pub max_degenerate_strength: f64,
    pub witnesses: Vec<Witness>,
    /// Every witness re-passed `residuals` within tolerance.
    pub audit_passed: bool,
    pub lp_solves: usize,
    pub hamiltonian_rows: usize,
    pub notes: Vec<String>,
}

impl ExtremalReport {
    pub fn witness(&self, label: &str) -> Option<&Witness> {
        self.witnesses.iter().find(|w| w.label == label)
    }
}

/// Classifies `proc` as an extremal by solving the multiplier LP family.
pub fn classify(spec: &ProblemSpec, proc: &Process, mode: Mode, opts: &CertifyOptions) -> Result<ExtremalReport> {
    let rec = model::check_feasibility(spec, proc, opts.tol_feas);
    if !rec.feasible() {
        return Err(Error::Process(format!(
            "certification needs a feasible process (violation {:.3e}, target distance {:.3e}, budget excess {:.3e})",
            rec.max_constraint_violation, rec.target_distance, rec.budget_excess
        )));
    }
    let ctx = Context::new(spec, proc, mode, opts)?;
    let lp = MultiplierLp::new(&ctx);
    let mut cuts = Vec::new();
    let mut solves = 0;
    let mut notes = Vec::new();
    let eps = opts.eps_nd;
    let mut witnesses = Vec::new();
    let record = |label: &'static str, x: &[f64], witnesses: &mut Vec<Witness>| -> Result<()> {
        let multipliers = lp.multiplier(x);
        let residuals = ctx.residuals(&multipliers)?;
        witnesses.push(Witness {
            label,
            multipliers,
            residuals,
        });
        Ok(())
    };
    let errors = |rs: &[ProbeResult], notes: &mut Vec<String>| {
        for r in rs {
            if let Some(e) = &r.error {
                notes.push(format!("LP failure: {e}"));
            }
        }
    };

    let any = lp.family(&lp.nontriviality_probes(true), false, &mut cuts, opts.parallelism, &mut solves);
    errors(&any, &mut notes);
    let extremal = any.iter().any(|r| r.value > eps);
    let normal_exists = any[0].value > eps;
    if normal_exists {
        record("normal", any[0].x.as_deref().expect("optimal"), &mut witnesses)?;
    }

    let zero = lp.family(&lp.nontriviality_probes(false), true, &mut cuts, opts.parallelism, &mut solves);
    errors(&zero, &mut notes);
    let abnormal_hit = zero.iter().find(|r| r.value > eps);
    let abnormal = abnormal_hit.is_some();
    if let Some(r) = abnormal_hit {
        record("abnormal", r.x.as_deref().expect("optimal"), &mut witnesses)?;
    }

    let mut max_degenerate_strength = 0.0;
    let mut nondegenerate_abnormal = false;
    if abnormal {
        let strong = lp.family(&lp.strengthened_probes(), true, &mut cuts, opts.parallelism, &mut solves);
        errors(&strong, &mut notes);
        max_degenerate_strength = strong.iter().map(|r| r.value).fold(0.0, f64::max);
        if let Some(r) = strong.iter().find(|r| r.value > eps) {
            nondegenerate_abnormal = true;
            record("nondegenerate-abnormal", r.x.as_deref().expect("optimal"), &mut witnesses)?;
        }
    }
    assert!(!nondegenerate_abnormal || abnormal);

    let classification = if !extremal {
        Classification::NotExtremal
    } else if nondegenerate_abnormal {
        Classification::NondegenerateAbnormal
    } else if abnormal && normal_exists {
        Classification::NondegenerateNormal
    } else if abnormal {
        Classification::Abnormal
    } else {
        Classification::Normal
    };
    let audit_passed = witnesses.iter().all(|w| w.residuals.passes(opts));
    if !audit_passed {
        notes.push("a witness failed the residual self-audit".into());
    }
    Ok(ExtremalReport {
        classification,
        mode,
        extremal,
        abnormal,
        nondegenerate_abnormal,
        normal_exists,
        max_degenerate_strength,
        witnesses,
        audit_passed,
        lp_solves: solves,
        hamiltonian_rows: cuts.len(),
        notes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CqBranch {
    /// `(0, x̌0)` lies in the interior of `Ω`.
    Interior,
    /// The reference has `w0 > 0` on `[0, s̄]`.
    W0Positive,
    /// The inward-pointing condition holds on `[0, s̄]`.
    InwardPointing,
    /// Neither branch holds.
    None,
}

impl CqBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            CqBranch::Interior => "interior",
            CqBranch::W0Positive => "w0-positive",
            CqBranch::InwardPointing => "inward-pointing",
            CqBranch::None => "none",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CqReport {
    pub boundary: bool,
    pub h0: f64,
    pub s_bar: f64,
    pub generators: Vec<Vec<f64>>,
    /// Best constant control `(ŵ0, ŵ, â)` over the sample grid.
    pub witness: Option<ControlSample>,
    /// Worst case over `[0, s̄]` and generators of the tested expression
    /// at the witness; the condition needs it negative.
    pub margin: f64,
    pub delta: f64,
    pub branch: CqBranch,
    /// Margin of the inward-pointing condition, when it was tested.
    pub delta1: Option<f64>,
    pub satisfied: bool,
}

/// Checks the initial-point constraint qualification over constant
/// controls from `samples`.
pub fn check_cq_h6(
    spec: &ProblemSpec,
    proc: &Process,
    s_bar: f64,
    samples: &[ControlSample],
    tol_active: f64,
) -> Result<CqReport> {
    if samples.is_empty() {
        return Err(Error::Range("empty control sample grid".into()));
    }
    proc.validate(spec)?;
    if !(s_bar > 0.0 && s_bar <= proc.horizon() * (1.0 + 1e-12)) {
        return Err(Error::Range(format!("s_bar must lie in (0, {}]", proc.horizon())));
    }
    let x0 = &spec.x0;
    let h0 = spec.h(0.0, x0);
    let boundary = h0.is_finite() && h0 >= -tol_active;
    if !boundary {
        return Ok(CqReport {
            boundary,
            h0,
            s_bar,
            generators: Vec::new(),
            witness: None,
            margin: f64::NEG_INFINITY,
            delta: f64::INFINITY,
            branch: CqBranch::Interior,
            delta1: None,
            satisfied: true,
        });
    }
    let generators = SubdifferentialOracle::new(spec, tol_active).h_generators(0.0, x0);
    let mut vars = vec![0.0; spec.layout.len()];
    let n1 = spec.n() + 1;
    // Mixture H-vectors of the reference on the intervals meeting [0, s̄].
    let own: Vec<Vec<f64>> = (0..proc.intervals())
        .filter(|&k| proc.grid[k] < s_bar)
        .map(|k| {
            let mut acc = vec![0.0; n1];
            for (lam, s) in proc.controls[k].components() {
                let hv = h_vector(spec, &mut vars, 0.0, x0, s);
                for (a, b) in acc.iter_mut().zip(&hv[..n1]) {
                    *a += lam * b;
                }
            }
            acc
        })
        .collect();
    let margin_of = |hv: &[f64]| {
        own.iter()
            .flat_map(|o| {
                generators
                    .iter()
                    .map(move |g| (0..n1).map(|c| g[c] * (hv[c] - o[c])).sum::<f64>())
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut best: Option<(f64, &ControlSample)> = None;
    for s in samples {
        let hv = h_vector(spec, &mut vars, 0.0, x0, s);
        let m = margin_of(&hv[..n1]);
        if best.is_none_or(|(b, _)| m < b) {
            best = Some((m, s));
        }
    }
    let (margin, witness) = best.expect("samples nonempty");
    let positive = (0..proc.intervals())
        .filter(|&k| proc.grid[k] < s_bar)
        .all(|k| proc.controls[k].components().iter().all(|(lam, s)| *lam == 0.0 || s.w0 > 0.0));
    let (branch, delta1) = if positive {
        (CqBranch::W0Positive, None)
    } else {
        let worst = own
            .iter()
            .flat_map(|o| generators.iter().map(move |g| dot(&g[..n1], o)))
            .fold(f64::NEG_INFINITY, f64::max);
        if worst < 0.0 {
            (CqBranch::InwardPointing, Some(-worst))
        } else {
            (CqBranch::None, Some(-worst))
        }
    };
    Ok(CqReport {
        boundary,
        h0,
        s_bar,
        generators,
        witness: Some(witness.clone()),
        margin,
        delta: -margin,
        branch,
        delta1,
        satisfied: margin < 0.0 && branch != CqBranch::None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn q_follows_the_partial_sums() {
        let p = vec![vec![0.0, -1.0]; 4];
        let atoms = vec![Atom {
            node: 0,
            mass: 1.0,
            m: vec![0.0, 1.0],
        }];
        let mult = MultiplierSet::new(p, 0.0, 0.0, atoms);
        assert_eq!(mult.q[0], vec![0.0, -1.0]);
        assert_eq!(mult.q[1], vec![0.0, 0.0]);
        assert_eq!(mult.q[3], vec![0.0, 0.0]);
        assert_eq!(mult.q_sup(), 0.0);
        assert_eq!(mult.mass_after_start(), 0.0);
    }

    #[test]
    fn sample_grid_lies_on_the_sphere() {
        let spec = bundled::ex51();
        let grid = sample_grid(&spec, 32, 8);
        assert_eq!(grid.len(), 1 + 32 * 8);
        for s in &grid {
            assert!((s.w0 + s.w_pow(1) - 1.0).abs() < 1e-12);
        }
        assert!(grid.iter().any(|s| s.w0 == 0.0 && s.w == vec![-1.0, 0.0]));
    }

    #[test]
    fn mode_parses() {
        assert_eq!("free-impulsive".parse::<Mode>().unwrap(), Mode::FreeImpulsive);
        assert!("other".parse::<Mode>().is_err());
    }
}
