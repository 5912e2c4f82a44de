//! Problem schema, control-polynomial dynamics and the strict / extended /
//! relaxed process hierarchy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::cone::{self, Polyhedron};
use crate::error::{Error, Result};
use crate::field::{self, Polynomial, VarLayout, VectorField};

/// Sphere identity tolerance for `(w0)^d + |w|^d = 1`.
pub const SPHERE_TOL: f64 = 1e-9;
/// Simplex tolerance for relaxed weights.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Free,
    NonNeg,
    NonPos,
}

/// The closed cone `U` of admissible unbounded-control directions.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlCone {
    Signs(Vec<Sign>),
    Rays(Vec<Vec<f64>>),
}

impl ControlCone {
    pub fn full(m: usize) -> Self {
        ControlCone::Signs(vec![Sign::Free; m])
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        match self {
            ControlCone::Signs(signs) => signs.iter().zip(w).all(|(s, &v)| match s {
                Sign::Free => true,
                Sign::NonNeg => v >= -tol,
                Sign::NonPos => v <= tol,
            }),
            ControlCone::Rays(rays) => {
                let p = cone::project_onto_cone(rays, w);
                cone::norm(&cone::sub(w, &p)) <= tol * (1.0 + cone::norm(w))
            }
        }
    }

    /// Euclidean projection onto the cone.
    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        match self {
            ControlCone::Signs(signs) => signs
                .iter()
                .zip(w)
                .map(|(s, &v)| match s {
                    Sign::Free => v,
                    Sign::NonNeg => v.max(0.0),
                    Sign::NonPos => v.min(0.0),
                })
                .collect(),
            ControlCone::Rays(rays) => cone::project_onto_cone(rays, w),
        }
    }
}

/// One control-polynomial term `g^k_{j1…jk}(t,x) w^{j1}⋯w^{jk}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTerm {
    pub k: usize,
    /// Zero-based, nondecreasing control indices.
    pub indices: Vec<usize>,
    pub field: VectorField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialDynamics {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub d: usize,
    pub drift: VectorField,
    pub terms: Vec<ControlTerm>,
}

impl PolynomialDynamics {
    /// `𝓕 = f·(w0)^d + Σ g^k_J w^J (w0)^{d−k}`, accumulated into `out`.
    #[inline]
    pub fn velocity_add(&self, vars: &[f64], w0: f64, w: &[f64], scale: f64, out: &mut [f64]) {
        let d = self.d as i32;
        self.drift.eval_add(vars, scale * w0.powi(d), out);
        for term in &self.terms {
            let coef = monomial(w, &term.indices) * w0.powi(d - term.k as i32);
            term.field.eval_add(vars, scale * coef, out);
        }
    }

    /// Adds `scale · ∂𝓕/∂(vars[first..first+cols])` into a row-major
    /// `n × cols` matrix.
    pub fn jacobian_add(
        &self,
        vars: &[f64],
        w0: f64,
        w: &[f64],
        first: usize,
        cols: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        let d = self.d as i32;
        self.drift
            .jacobian_add(vars, first, cols, scale * w0.powi(d), out);
        for term in &self.terms {
            let coef = monomial(w, &term.indices) * w0.powi(d - term.k as i32);
            term.field.jacobian_add(vars, first, cols, scale * coef, out);
        }
    }
}

#[inline]
fn monomial(w: &[f64], indices: &[usize]) -> f64 {
    indices.iter().map(|&j| w[j]).product()
}

/// State constraint `h(t, x) ≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum StateConstraint {
    None,
    Smooth(Polynomial),
    /// `h = max_i (c_i·(t,x) + c0_i)`.
    MaxAffine { rows: Vec<Vec<f64>>, offsets: Vec<f64> },
}

impl StateConstraint {
    pub fn is_none(&self) -> bool {
        matches!(self, StateConstraint::None)
    }

    pub fn value(&self, layout: VarLayout, t: f64, x: &[f64]) -> f64 {
        match self {
            StateConstraint::None => f64::NEG_INFINITY,
            StateConstraint::Smooth(p) => p.eval(&tx_vars(layout, t, x)),
            StateConstraint::MaxAffine { rows, offsets } => rows
                .iter()
                .zip(offsets)
                .map(|(c, &c0)| affine_tx(c, t, x) + c0)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Smooth pieces whose simultaneous nonpositivity is `h ≤ 0`.
    pub fn pieces(&self, layout: VarLayout, t: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            StateConstraint::None => {}
            StateConstraint::Smooth(p) => out.push(p.eval(&tx_vars(layout, t, x))),
            StateConstraint::MaxAffine { rows, offsets } => {
                out.extend(rows.iter().zip(offsets).map(|(c, &c0)| affine_tx(c, t, x) + c0))
            }
        }
    }

    pub fn num_pieces(&self) -> usize {
        match self {
            StateConstraint::None => 0,
            StateConstraint::Smooth(_) => 1,
            StateConstraint::MaxAffine { rows, .. } => rows.len(),
        }
    }

    /// Generators `(ζ0, ζ)` of the hybrid subdifferential at an active point:
    /// gradients of the pieces within `tol` of the maximum.
    pub fn generators(&self, layout: VarLayout, t: f64, x: &[f64], tol: f64) -> Vec<Vec<f64>> {
        match self {
            StateConstraint::None => Vec::new(),
            StateConstraint::Smooth(p) => {
                let vars = tx_vars(layout, t, x);
                let mut g = Vec::with_capacity(layout.n + 1);
                g.push(p.partial(layout.t(), &vars));
                for i in 0..layout.n {
                    g.push(p.partial(layout.x(i), &vars));
                }
                vec![g]
            }
            StateConstraint::MaxAffine { rows, offsets } => {
                let h = self.value(layout, t, x);
                rows.iter()
                    .zip(offsets)
                    .filter(|(c, &c0)| affine_tx(c, t, x) + c0 >= h - tol)
                    .map(|(c, _)| c.clone())
                    .collect()
            }
        }
    }

    /// Whether the subdifferential is a single gradient everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, StateConstraint::MaxAffine { rows, .. } if rows.len() > 1)
    }
}

fn affine_tx(c: &[f64], t: f64, x: &[f64]) -> f64 {
    c[0] * t + c[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
}

fn tx_vars(layout: VarLayout, t: f64, x: &[f64]) -> Vec<f64> {
    let mut vars = vec![0.0; layout.len()];
    vars[0] = t;
    vars[1..1 + layout.n].copy_from_slice(x);
    vars
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cost {
    pub expr: Polynomial,
}

impl Cost {
    pub fn value(&self, layout: VarLayout, t: f64, x: &[f64], v: f64) -> f64 {
        let mut vars = tx_vars(layout, t, x);
        vars[layout.v()] = v;
        self.expr.eval(&vars)
    }

    /// Gradient with respect to `(t, x, v)`.
    pub fn gradient(&self, layout: VarLayout, t: f64, x: &[f64], v: f64) -> Vec<f64> {
        let mut vars = tx_vars(layout, t, x);
        vars[layout.v()] = v;
        let mut g = Vec::with_capacity(layout.n + 2);
        g.push(self.expr.partial(layout.t(), &vars));
        for i in 0..layout.n {
            g.push(self.expr.partial(layout.x(i), &vars));
        }
        g.push(self.expr.partial(layout.v(), &vars));
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub name: String,
    pub layout: VarLayout,
    pub dynamics: PolynomialDynamics,
    pub cone: ControlCone,
    /// Finite sample of the compact parameter set `A`.
    pub params: Vec<Vec<f64>>,
    pub constraint: StateConstraint,
    /// Target `𝒯*` as a polyhedron over `(t, x)`.
    pub target: Polyhedron,
    pub cost: Cost,
    /// Budget `K` on `ν(S)`; may be infinite.
    pub budget: f64,
    pub x0: Vec<f64>,
    /// Pseudo-time horizon used by fixed-horizon transcriptions.
    pub horizon: f64,
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        self.dynamics.n
    }

    pub fn m(&self) -> usize {
        self.dynamics.m
    }

    pub fn d(&self) -> usize {
        self.dynamics.d
    }

    /// Fills the variable buffer for `(t, x, a)`.
    #[inline]
    pub fn fill_vars(&self, buf: &mut [f64], t: f64, x: &[f64], a: usize) {
        self.layout.fill(buf, t, x, &self.params[a], 0.0);
    }

    pub fn h(&self, t: f64, x: &[f64]) -> f64 {
        self.constraint.value(self.layout, t, x)
    }

    pub fn psi(&self, t: f64, x: &[f64], v: f64) -> f64 {
        self.cost.value(self.layout, t, x, v)
    }
}

/// A point `(w0, w, a)` of `W × A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSample {
    pub w0: f64,
    pub w: Vec<f64>,
    /// Index into the parameter grid.
    pub a: usize,
}

impl ControlSample {
    /// Builds the sample with `w0 = (1 − |w|^d)^{1/d}`.
    pub fn from_w(w: Vec<f64>, a: usize, d: usize) -> Self {
        let r = norm_pow(&w, d);
        let w0 = (1.0 - r).max(0.0).powf(1.0 / d as f64);
        Self { w0, w, a }
    }

    pub fn drift(m: usize) -> Self {
        Self {
            w0: 1.0,
            w: vec![0.0; m],
            a: 0,
        }
    }

    /// `|w|^d` with the Euclidean norm.
    pub fn w_pow(&self, d: usize) -> f64 {
        norm_pow(&self.w, d)
    }

    pub fn check(&self, spec: &ProblemSpec) -> Result<()> {
        if self.w.len() != spec.m() {
            return Err(Error::Process(format!(
                "control has {} components, expected {}",
                self.w.len(),
                spec.m()
            )));
        }
        if self.a >= spec.params.len() {
            return Err(Error::Process(format!("parameter index {} out of range", self.a)));
        }
        if self.w0 < 0.0 || !self.w0.is_finite() || self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Process("control sample not finite / w0 negative".into()));
        }
        let d = spec.d();
        let sphere = self.w0.powi(d as i32) + self.w_pow(d);
        if (sphere - 1.0).abs() > SPHERE_TOL {
            return Err(Error::Process(format!(
                "sample violates (w0)^d + |w|^d = 1 (got {sphere})"
            )));
        }
        if !spec.cone.contains(&self.w, 1e-9) {
            return Err(Error::Process("control direction outside the cone U".into()));
        }
        Ok(())
    }
}

pub(crate) fn norm_pow(w: &[f64], d: usize) -> f64 {
    let sq: f64 = w.iter().map(|v| v * v).sum();
    match d {
        1 => sq.sqrt(),
        2 => sq,
        _ => sq.sqrt().powi(d as i32),
    }
}

/// `(n+1)` control rows mixed by simplex weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexControlRow {
    pub rows: Vec<ControlSample>,
    pub weights: Vec<f64>,
}

impl SimplexControlRow {
    /// The vertex `e_k` with every row set to `sample`.
    pub fn vertex(sample: ControlSample, k: usize, n: usize) -> Self {
        let mut weights = vec![0.0; n + 1];
        weights[k] = 1.0;
        Self {
            rows: vec![sample; n + 1],
            weights,
        }
    }

    pub fn check(&self, spec: &ProblemSpec) -> Result<()> {
        if self.rows.len() != spec.n() + 1 || self.weights.len() != spec.n() + 1 {
            return Err(Error::Process(format!(
                "relaxed control needs {} rows and weights",
                spec.n() + 1
            )));
        }
        for r in &self.rows {
            r.check(spec)?;
        }
        if self.weights.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::Process("negative simplex weight".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL * self.weights.len() as f64 {
            return Err(Error::Process(format!("simplex weights sum to {sum}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IntervalControl {
    Single(ControlSample),
    Relaxed(SimplexControlRow),
}

impl IntervalControl {
    /// Active `(weight, sample)` pairs.
    pub fn components(&self) -> Vec<(f64, &ControlSample)> {
        match self {
            IntervalControl::Single(s) => vec![(1.0, s)],
            IntervalControl::Relaxed(r) => r.weights.iter().copied().zip(r.rows.iter()).collect(),
        }
    }

    pub fn single(&self) -> Option<&ControlSample> {
        match self {
            IntervalControl::Single(s) => Some(s),
            IntervalControl::Relaxed(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Strict,
    Extended,
    Relaxed,
}

impl Layer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Layer::Strict => "strict",
            Layer::Extended => "extended",
            Layer::Relaxed => "relaxed",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Layer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Layer::Strict),
            "extended" => Ok(Layer::Extended),
            "relaxed" => Ok(Layer::Relaxed),
            other => Err(Error::Parse(format!("unknown layer {other:?}"))),
        }
    }
}

/// Node values `(y0, y, ν)` plus `ξ` for relaxed processes.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub y0: f64,
    pub y: Vec<f64>,
    pub nu: f64,
    pub xi: Option<Vec<f64>>,
}

impl NodeState {
    pub fn initial(spec: &ProblemSpec, relaxed: bool) -> Self {
        Self {
            y0: 0.0,
            y: spec.x0.clone(),
            nu: 0.0,
            xi: relaxed.then(|| vec![0.0; spec.n() + 1]),
        }
    }

    /// Flat `[y0, y.., ν, ξ..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.y.len() + 2);
        z.push(self.y0);
        z.extend_from_slice(&self.y);
        z.push(self.nu);
        if let Some(xi) = &self.xi {
            z.extend_from_slice(xi);
        }
        z
    }

    pub fn from_flat(z: &[f64], n: usize, relaxed: bool) -> Self {
        Self {
            y0: z[0],
            y: z[1..1 + n].to_vec(),
            nu: z[1 + n],
            xi: relaxed.then(|| z[2 + n..].to_vec()),
        }
    }

    /// `(t, x)` view as a vector.
    pub fn tx(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.y.len() + 1);
        v.push(self.y0);
        v.extend_from_slice(&self.y);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Process {
    pub layer: Layer,
    pub grid: Vec<f64>,
    pub controls: Vec<IntervalControl>,
    pub states: Vec<NodeState>,
}

impl Process {
    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid is nonempty")
    }

    pub fn intervals(&self) -> usize {
        self.controls.len()
    }

    pub fn terminal(&self) -> &NodeState {
        self.states.last().expect("trajectory is nonempty")
    }

    /// Checks the structural invariants for the process's layer.
    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        let n_int = self.controls.len();
        if n_int == 0 || self.grid.len() != n_int + 1 || self.states.len() != n_int + 1 {
            return Err(Error::Process("grid / controls / states length mismatch".into()));
        }
        if self.grid[0] != 0.0 {
            return Err(Error::Process("grid must start at 0".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Process("grid not strictly increasing".into()));
        }
        for (k, c) in self.controls.iter().enumerate() {
            match (self.layer, c) {
                (Layer::Relaxed, IntervalControl::Relaxed(r)) => r.check(spec)?,
                (Layer::Relaxed, _) | (_, IntervalControl::Relaxed(_)) => {
                    return Err(Error::Process(format!(
                        "interval {k}: control kind does not match layer {}",
                        self.layer
                    )))
                }
                (layer, IntervalControl::Single(s)) => {
                    s.check(spec)?;
                    if layer == Layer::Strict && s.w0 <= 0.0 {
                        return Err(Error::Process(format!(
                            "interval {k}: strict process needs w0 > 0"
                        )));
                    }
                }
            }
        }
        let first = &self.states[0];
        if first.y0 != 0.0 || first.nu != 0.0 {
            return Err(Error::Process("y0(0) and nu(0) must vanish".into()));
        }
        for w in self.states.windows(2) {
            if w[1].y0 < w[0].y0 - 1e-12 || w[1].nu < w[0].nu - 1e-12 {
                return Err(Error::Process("y0 and nu must be nondecreasing".into()));
            }
        }
        Ok(())
    }

    /// Cost `Ψ(y0(S), y(S), ν(S))`.
    pub fn cost(&self, spec: &ProblemSpec) -> f64 {
        let z = self.terminal();
        spec.psi(z.y0, &z.y, z.nu)
    }
}

/// `𝓕(t, x, w0, w, a)`.
pub fn eval_extended_dynamics(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    sample: &ControlSample,
) -> Result<Vec<f64>> {
    let mut vars = vec![0.0; spec.layout.len()];
    spec.fill_vars(&mut vars, t, x, sample.a);
    let mut out = vec![0.0; spec.n()];
    spec.dynamics
        .velocity_add(&vars, sample.w0, &sample.w, 1.0, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("extended dynamics".into()));
    }
    Ok(out)
}

/// Degree-`d` part of `𝓕` (the dynamics while original time is stopped).
pub fn eval_fast_dynamics(spec: &ProblemSpec, t: f64, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let r = cone::norm(w);
    if (r - 1.0).abs() > 1e-9 {
        return Err(Error::Range(format!("fast dynamics need |w| = 1 (got {r})")));
    }
    let sample = ControlSample {
        w0: 0.0,
        w: w.to_vec(),
        a: 0,
    };
    eval_extended_dynamics(spec, t, x, &sample)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibilityRecord {
    pub max_constraint_violation: f64,
    pub target_distance: f64,
    pub budget_excess: f64,
    pub tol: f64,
}

impl FeasibilityRecord {
    pub fn feasible(&self) -> bool {
        self.max_constraint_violation <= self.tol
            && self.target_distance <= self.tol
            && self.budget_excess <= self.tol
    }

    pub fn total(&self) -> f64 {
        self.max_constraint_violation + self.target_distance + self.budget_excess
    }
}

pub fn check_feasibility(spec: &ProblemSpec, proc: &Process, tol: f64) -> FeasibilityRecord {
    let max_constraint_violation = proc
        .states
        .iter()
        .map(|z| spec.h(z.y0, &z.y).max(0.0))
        .fold(0.0, f64::max);
    let end = proc.terminal();
    let target_distance = spec.target.distance(&end.tx());
    let budget_excess = (end.nu - spec.budget).max(0.0);
    FeasibilityRecord {
        max_constraint_violation,
        target_distance,
        budget_excess,
        tol,
    }
}

// ---------------------------------------------------------------------------
// Problem files

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: Option<String>,
    horizon: f64,
    dynamics: RawDynamics,
    #[serde(default)]
    fields: BTreeMap<String, RawField>,
    cone: Option<RawCone>,
    constraint: Option<RawConstraint>,
    target: Option<RawTarget>,
    cost: RawCost,
    budget: Option<RawBudget>,
    init: RawInit,
    param_set: Option<RawParams>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    n: usize,
    m: usize,
    #[serde(default)]
    q: usize,
    d: usize,
    drift: String,
    #[serde(default)]
    g: Vec<RawTerm>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    k: usize,
    j: Vec<usize>,
    field: String,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawField {
    Const {
        value: Vec<f64>,
    },
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Option<Vec<f64>>,
    },
    Poly {
        components: Vec<String>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCone {
    signs: Option<Vec<String>>,
    rays: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawConstraint {
    None,
    Poly { expr: String },
    MaxAffine { rows: Vec<Vec<f64>> },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    rows: Option<Vec<Vec<f64>>>,
    t: Option<[f64; 2]>,
    x: Option<Vec<[f64; 2]>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    expr: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBudget {
    #[serde(rename = "K")]
    k: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    x0: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    points: Vec<Vec<f64>>,
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_problem(&text)
}

pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let raw: RawProblem = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let dyn_raw = &raw.dynamics;
    let (n, m, q, d) = (dyn_raw.n, dyn_raw.m, dyn_raw.q, dyn_raw.d);
    if n == 0 {
        return Err(Error::schema("dynamics.n", "must be positive"));
    }
    if m == 0 {
        return Err(Error::schema("dynamics.m", "must be positive"));
    }
    if d == 0 {
        return Err(Error::schema("dynamics.d", "must be positive"));
    }
    let layout = VarLayout::new(n, q);

    let resolve = |name: &str, path: &str| -> Result<VectorField> {
        if let Some(raw_field) = raw.fields.get(name) {
            return build_field(raw_field, layout, &format!("fields.{name}"));
        }
        field::builtin(name, layout)
            .ok_or_else(|| Error::schema(path, format!("unknown field {name:?}")))
    };

    let drift = resolve(&dyn_raw.drift, "dynamics.drift")?;
    let mut terms = Vec::with_capacity(dyn_raw.g.len());
    for (i, t) in dyn_raw.g.iter().enumerate() {
        let path = format!("dynamics.g[{i}]");
        if t.k == 0 || t.k > d {
            return Err(Error::schema(format!("{path}.k"), format!("k must be in 1..={d}")));
        }
        if t.j.len() != t.k {
            return Err(Error::schema(format!("{path}.j"), "needs exactly k indices"));
        }
        if t.j.iter().any(|&j| j == 0 || j > m) {
            return Err(Error::schema(format!("{path}.j"), format!("indices must be in 1..={m}")));
        }
        if t.j.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::schema(format!("{path}.j"), "multi-index not nondecreasing"));
        }
        let indices: Vec<usize> = t.j.iter().map(|j| j - 1).collect();
        if terms
            .iter()
            .any(|other: &ControlTerm| other.indices == indices)
        {
            return Err(Error::schema(format!("{path}.j"), "duplicate multi-index"));
        }
        let field = resolve(&t.field, &format!("{path}.field"))?;
        terms.push(ControlTerm {
            k: t.k,
            indices,
            field,
        });
    }

    let cone = match &raw.cone {
        None => ControlCone::full(m),
        Some(RawCone {
            signs: Some(signs),
            rays: None,
        }) => {
            if signs.len() != m {
                return Err(Error::schema("cone.signs", format!("expected {m} entries")));
            }
            ControlCone::Signs(
                signs
                    .iter()
                    .map(|s| match s.as_str() {
                        "free" => Ok(Sign::Free),
                        "nonneg" | "+" => Ok(Sign::NonNeg),
                        "nonpos" | "-" => Ok(Sign::NonPos),
                        other => Err(Error::schema("cone.signs", format!("unknown sign {other:?}"))),
                    })
                    .collect::<Result<_>>()?,
            )
        }
        Some(RawCone {
            signs: None,
            rays: Some(rays),
        }) => {
            if rays.is_empty() || rays.iter().any(|r| r.len() != m) {
                return Err(Error::schema("cone.rays", format!("rays must have {m} entries")));
            }
            ControlCone::Rays(rays.clone())
        }
        Some(_) => return Err(Error::schema("cone", "give exactly one of signs / rays")),
    };

    let params = match &raw.param_set {
        None if q == 0 => vec![Vec::new()],
        None => return Err(Error::schema("param_set", "required when q > 0")),
        Some(p) => {
            if p.points.is_empty() {
                return Err(Error::schema("param_set.points", "must be nonempty"));
            }
            if p.points.iter().any(|pt| pt.len() != q) {
                return Err(Error::schema("param_set.points", format!("points must have {q} entries")));
            }
            p.points.clone()
        }
    };

    let constraint = match &raw.constraint {
        None | Some(RawConstraint::None) => StateConstraint::None,
        Some(RawConstraint::Poly { expr }) => {
            let p = Polynomial::parse(expr, layout)
                .map_err(|e| Error::schema("constraint.expr", e.to_string()))?;
            if (0..q).any(|i| p.depends_on(layout.a(i))) || p.depends_on(layout.v()) {
                return Err(Error::schema("constraint.expr", "h may depend on t and x only"));
            }
            StateConstraint::Smooth(p)
        }
        Some(RawConstraint::MaxAffine { rows }) => {
            if rows.is_empty() || rows.iter().any(|r| r.len() != n + 2) {
                return Err(Error::schema(
                    "constraint.rows",
                    format!("rows need {} entries (t, x, offset)", n + 2),
                ));
            }
            StateConstraint::MaxAffine {
                rows: rows.iter().map(|r| r[..n + 1].to_vec()).collect(),
                offsets: rows.iter().map(|r| r[n + 1]).collect(),
            }
        }
        Some(RawConstraint::Box { lower, upper }) => {
            if lower.len() != n || upper.len() != n {
                return Err(Error::schema("constraint", format!("box bounds need {n} entries")));
            }
            let mut rows = Vec::new();
            let mut offsets = Vec::new();
            for i in 0..n {
                if lower[i] > upper[i] {
                    return Err(Error::schema("constraint.lower", "lower bound above upper"));
                }
                if upper[i].is_finite() {
                    let mut r = vec![0.0; n + 1];
                    r[1 + i] = 1.0;
                    rows.push(r);
                    offsets.push(-upper[i]);
                }
                if lower[i].is_finite() {
                    let mut r = vec![0.0; n + 1];
                    r[1 + i] = -1.0;
                    rows.push(r);
                    offsets.push(lower[i]);
                }
            }
            if rows.is_empty() {
                StateConstraint::None
            } else {
                StateConstraint::MaxAffine { rows, offsets }
            }
        }
    };

    let mut target = Polyhedron::empty();
    if let Some(t) = &raw.target {
        if let Some(rows) = &t.rows {
            for (i, r) in rows.iter().enumerate() {
                if r.len() != n + 2 {
                    return Err(Error::schema(
                        format!("target.rows[{i}]"),
                        format!("rows need {} entries (t, x, b)", n + 2),
                    ));
                }
                target.push(r[..n + 1].to_vec(), r[n + 1]);
            }
        }
        let mut push_bounds = |idx: usize, lo: f64, hi: f64, path: &str| -> Result<()> {
            if lo > hi {
                return Err(Error::schema(path, "empty interval"));
            }
            if hi.is_finite() {
                let mut r = vec![0.0; n + 1];
                r[idx] = 1.0;
                target.push(r, hi);
            }
            if lo.is_finite() {
                let mut r = vec![0.0; n + 1];
                r[idx] = -1.0;
                target.push(r, -lo);
            }
            Ok(())
        };
        if let Some([lo, hi]) = t.t {
            push_bounds(0, lo, hi, "target.t")?;
        }
        if let Some(x) = &t.x {
            if x.len() != n {
                return Err(Error::schema("target.x", format!("expected {n} intervals")));
            }
            for (i, [lo, hi]) in x.iter().enumerate() {
                push_bounds(1 + i, *lo, *hi, &format!("target.x[{i}]"))?;
            }
        }
    }
    if !target.is_nonempty() {
        return Err(Error::schema("target", "target polyhedron is empty"));
    }

    let cost_expr = Polynomial::parse(&raw.cost.expr, layout)
        .map_err(|e| Error::schema("cost.expr", e.to_string()))?;
    if (0..q).any(|i| cost_expr.depends_on(layout.a(i))) {
        return Err(Error::schema("cost.expr", "cost may depend on t, x and v only"));
    }

    let budget = raw.budget.as_ref().map_or(f64::INFINITY, |b| b.k);
    if budget.is_nan() || budget <= 0.0 {
        return Err(Error::schema("budget.K", "must be positive or inf"));
    }
    if raw.init.x0.len() != n {
        return Err(Error::schema("init.x0", format!("expected {n} entries")));
    }
    if !(raw.horizon > 0.0 && raw.horizon.is_finite()) {
        return Err(Error::schema("horizon", "must be positive and finite"));
    }

    Ok(ProblemSpec {
        name: raw.name.clone().unwrap_or_else(|| "problem".into()),
        layout,
        dynamics: PolynomialDynamics {
            n,
            m,
            q,
            d,
            drift,
            terms,
        },
        cone,
        params,
        constraint,
        target,
        cost: Cost { expr: cost_expr },
        budget,
        x0: raw.init.x0.clone(),
        horizon: raw.horizon,
    })
}

fn build_field(raw: &RawField, layout: VarLayout, path: &str) -> Result<VectorField> {
    let n = layout.n;
    let field = match raw {
        RawField::Const { value } => VectorField::constant(value),
        RawField::Affine { matrix, offset } => {
            let mut comps = Vec::with_capacity(matrix.len());
            for (i, row) in matrix.iter().enumerate() {
                if row.len() != n + 1 && row.len() != n + 1 + layout.q {
                    return Err(Error::schema(
                        format!("{path}.matrix[{i}]"),
                        "rows cover (t, x) or (t, x, a)",
                    ));
                }
                let coeffs: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
                let c0 = offset.as_ref().and_then(|o| o.get(i)).copied().unwrap_or(0.0);
                comps.push(Polynomial::affine(&coeffs, c0));
            }
            VectorField { comps }
        }
        RawField::Poly { components } => VectorField {
            comps: components
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    Polynomial::parse(s, layout)
                        .map_err(|e| Error::schema(format!("{path}.components[{i}]"), e.to_string()))
                })
                .collect::<Result<_>>()?,
        },
    };
    if field.dim() != n {
        return Err(Error::schema(path, format!("field has dimension {}, expected {n}", field.dim())));
    }
    if field.depends_on(layout.v()) {
        return Err(Error::schema(path, "fields may not depend on v"));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn example_problem_loads() {
        let spec = bundled::ex51();
        assert_eq!((spec.n(), spec.m(), spec.d()), (3, 2, 1));
        assert_eq!(spec.budget, 2.0);
        assert_eq!(spec.x0, vec![1.0, 0.0, 0.0]);
        assert!(spec.target.contains(&[1.0, -0.5, 0.5, 0.5], 0.0));
        assert!(!spec.target.contains(&[0.9, -0.5, 0.5, 0.5], 1e-9));
    }

    #[test]
    fn nondecreasing_multi_index_enforced() {
        let text = r#"
            horizon = 1.0
            [dynamics]
            n = 1
            m = 2
            d = 2
            drift = "zero"
            g = [ { k = 2, j = [2, 1], field = "one" } ]
            [fields.one]
            kind = "const"
            value = [1.0]
            [cost]
            expr = "x1"
            [init]
            x0 = [0.0]
        "#;
        let err = parse_problem(text).unwrap_err().to_string();
        assert!(err.contains("multi-index not nondecreasing"), "{err}");
        assert!(err.contains("dynamics.g[0].j"), "{err}");
    }

    #[test]
    fn scalar_minimal_problem() {
        let spec = bundled::scalar();
        let s = ControlSample {
            w0: 0.5,
            w: vec![0.5],
            a: 0,
        };
        assert_eq!(eval_extended_dynamics(&spec, 0.0, &[0.3], &s).unwrap(), vec![0.5]);
    }

    #[test]
    fn empty_target_rejected() {
        let text = r#"
            horizon = 1.0
            [dynamics]
            n = 1
            m = 1
            d = 1
            drift = "zero"
            [cost]
            expr = "x1"
            [init]
            x0 = [0.0]
            [target]
            rows = [[0.0, 1.0, 0.0], [0.0, -1.0, -1.0]]
        "#;
        let err = parse_problem(text).unwrap_err().to_string();
        assert!(err.contains("target polyhedron is empty"), "{err}");
    }

    #[test]
    fn example_dynamics_by_hand() {
        let spec = bundled::ex51();
        let s = ControlSample {
            w0: 0.0,
            w: vec![0.0, -1.0],
            a: 0,
        };
        let v = eval_extended_dynamics(&spec, 0.0, &[1.0, 0.0, 0.0], &s).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 1.0]);
        let fast = eval_fast_dynamics(&spec, 0.0, &[1.0, 0.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert_eq!(fast, vec![-1.0, 0.0, 0.0]);
        // pure drift
        let x = [0.2, 0.7, -0.3];
        let f = eval_extended_dynamics(&spec, 0.0, &x, &ControlSample::drift(2)).unwrap();
        assert_eq!(f, vec![0.0, 0.7 * -0.3, 0.0]);
    }

    #[test]
    fn fast_dynamics_even_degree_symmetry() {
        let text = r#"
            horizon = 1.0
            [dynamics]
            n = 2
            m = 1
            d = 2
            drift = "zero"
            g = [ { k = 2, j = [1, 1], field = "g" } ]
            [fields.g]
            kind = "poly"
            components = ["x2", "1 + t"]
            [cost]
            expr = "x1"
            [init]
            x0 = [0.0, 0.0]
        "#;
        let spec = parse_problem(text).unwrap();
        let a = eval_fast_dynamics(&spec, 0.5, &[0.0, 3.0], &[1.0]).unwrap();
        let b = eval_fast_dynamics(&spec, 0.5, &[0.0, 3.0], &[-1.0]).unwrap();
        assert_eq!(a, vec![3.0, 1.5]);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_invariants() {
        let spec = bundled::ex51();
        assert!(ControlSample::from_w(vec![0.3, -0.4], 0, 1).check(&spec).is_ok());
        let bad = ControlSample {
            w0: 0.6,
            w: vec![0.3, -0.4],
            a: 0,
        };
        assert!(bad.check(&spec).is_err());
        let cone = ControlCone::Signs(vec![Sign::NonNeg, Sign::Free]);
        assert!(!cone.contains(&[-0.1, 1.0], 1e-12));
        assert_eq!(cone.project(&[-0.1, 1.0]), vec![0.0, 1.0]);
        let rays = ControlCone::Rays(vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!(rays.contains(&[2.0, 1.0], 1e-12));
        assert!(!rays.contains(&[0.0, 1.0], 1e-6));
    }

    #[test]
    fn feasibility_arithmetic() {
        let spec = bundled::ex51();
        let reference = bundled::ex51_reference(&spec, 40).unwrap();
        let rec = check_feasibility(&spec, &reference, 1e-9);
        assert_eq!(rec.max_constraint_violation, 0.0);
        assert_eq!(rec.target_distance, 0.0);
        assert_eq!(rec.budget_excess, 0.0);
        assert!(rec.feasible());

        let mut over = reference.clone();
        over.states.last_mut().unwrap().nu = 2.5;
        assert!((check_feasibility(&spec, &over, 1e-9).budget_excess - 0.5).abs() < 1e-15);

        let mut moved = reference;
        let end = moved.states.last_mut().unwrap();
        end.y0 = 1.0;
        end.y = vec![-0.5, 0.5, 0.5];
        assert_eq!(check_feasibility(&spec, &moved, 1e-9).target_distance, 0.0);
    }
}
