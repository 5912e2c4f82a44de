use rand::Rng;

use crate::error::{Error, Result};
use crate::integrate::{self, Scratch, DEFAULT_SUBSTEPS};
use crate::model::{
    self, ControlSample, IntervalControl, Layer, NodeState, Process, ProblemSpec,
    SimplexControlRow,
};

#[derive(Clone, Debug)]
pub struct TranscribeOptions {
    /// Number of control intervals.
    pub n: usize,
    /// Lower bound on `w0` for the strict layer.
    pub w0_floor: f64,
    /// Adds the speed variable `ζ` so the horizon becomes `S̄(1 + ζ)`.
    pub free_horizon: bool,
    pub delta_bar: f64,
    /// Overrides the problem's horizon.
    pub horizon: Option<f64>,
    pub substeps: usize,
}

impl Default for TranscribeOptions {
    fn default() -> Self {
        Self {
            n: 40,
            w0_floor: 0.05,
            free_horizon: false,
            delta_bar: crate::embed::DEFAULT_DELTA_BAR,
            horizon: None,
            substeps: DEFAULT_SUBSTEPS,
        }
    }
}

/// What the transcribed program minimizes.
#[derive(Clone, Debug)]
pub enum Objective {
    /// `Ψ` at the terminal node.
    Cost,
    /// Elastic feasibility: minimizes `ε_h + ε_T + ε_K`, the slacks of the
    /// path, target and budget constraints, inside the tube
    /// `|(y0, y)(s_k) − (ȳ0, ȳ)(s_k)| ≤ δ` at every node.
    Probe { reference: Process, delta: f64 },
}

/// Label of one inequality `g_i(z) ≤ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    Path { node: usize, piece: usize },
    Target { row: usize },
    Budget,
    Tube { node: usize, component: usize },
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstraintKind::Path { node, piece } => write!(f, "h[{piece}]@node{node}"),
            ConstraintKind::Target { row } => write!(f, "target[{row}]"),
            ConstraintKind::Budget => f.write_str("budget"),
            ConstraintKind::Tube { node, component } => write!(f, "tube[{component}]@node{node}"),
        }
    }
}

/// Single-shooting transcription.
///
/// Decision layout, interval by interval: one row `(w0, w)` of `m + 1`
/// entries for the strict and extended layers; for the relaxed layer
/// `n + 1` rows followed by the `n + 1` weights. Then `ζ` if the horizon is
/// free, then the three probe slacks in probe mode. Rows are kept on the
/// sphere `(w0)^d + |w|^d = 1` by projection, so `w0` is a function of `w`
/// at every iterate while the dynamics stay polynomial in the decision.
#[derive(Clone, Debug)]
pub struct Transcription {
    pub spec: ProblemSpec,
    pub layer: Layer,
    pub n: usize,
    pub horizon: f64,
    pub w0_floor: Option<f64>,
    pub free_horizon: bool,
    pub delta_bar: f64,
    /// Parameter index per interval (per row for the relaxed layer).
    pub params: Vec<usize>,
    pub objective: Objective,
    pub substeps: usize,
    radius: f64,
    kinds: Vec<ConstraintKind>,
    tube: Vec<Vec<f64>>,
}

/// Terminal value and constraint vector at one decision point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub f: f64,
    pub g: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

pub fn transcribe(
    spec: &ProblemSpec,
    layer: Layer,
    opts: &TranscribeOptions,
    objective: Objective,
) -> Result<Transcription> {
    if opts.n < 8 {
        return Err(Error::Range(format!("transcription needs N >= 8, got {}", opts.n)));
    }
    let horizon = opts.horizon.unwrap_or(spec.horizon);
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Range("horizon must be positive".into()));
    }
    if opts.free_horizon && !(opts.delta_bar > 0.0 && opts.delta_bar <= 0.5) {
        return Err(Error::Range("delta_bar must lie in (0, 1/2]".into()));
    }
    let d = spec.d();
    let (w0_floor, radius) = match layer {
        Layer::Strict => {
            if !(opts.w0_floor > 0.0 && opts.w0_floor < 1.0) {
                return Err(Error::Range(format!(
                    "w0 floor must lie in (0, 1), got {}",
                    opts.w0_floor
                )));
            }
            let r = (1.0 - opts.w0_floor.powi(d as i32)).powf(1.0 / d as f64);
            (Some(opts.w0_floor), r)
        }
        Layer::Extended | Layer::Relaxed => (None, 1.0),
    };
    let mut tube = Vec::new();
    if let Objective::Probe { reference, delta } = &objective {
        if layer != Layer::Strict {
            return Err(Error::Unsupported("the isolation probe searches strict-sense processes".into()));
        }
        if opts.free_horizon {
            return Err(Error::Unsupported("the isolation probe needs a fixed horizon".into()));
        }
        if !(*delta > 0.0) {
            return Err(Error::Range("tube radius must be positive".into()));
        }
        if (reference.horizon() - horizon).abs() > 1e-9 * horizon {
            return Err(Error::Mode("reference horizon differs from the transcription horizon".into()));
        }
        for i in 0..=opts.n {
            let s = horizon * i as f64 / opts.n as f64;
            tube.push(integrate::state_at(spec, reference, s, opts.substeps).tx());
        }
    }
    let rows = if layer == Layer::Relaxed { spec.n() + 1 } else { 1 };
    let mut trans = Transcription {
        spec: spec.clone(),
        layer,
        n: opts.n,
        horizon,
        w0_floor,
        free_horizon: opts.free_horizon,
        delta_bar: opts.delta_bar,
        params: vec![0; opts.n * rows],
        objective,
        substeps: opts.substeps.max(1),
        radius,
        kinds: Vec::new(),
        tube,
    };
    trans.kinds = trans.build_kinds();
    Ok(trans)
}

impl Transcription {
    pub fn rows(&self) -> usize {
        if self.layer == Layer::Relaxed {
            self.spec.n() + 1
        } else {
            1
        }
    }

    /// Decision entries per interval.
    pub fn block(&self) -> usize {
        let w = self.spec.m() + 1;
        if self.layer == Layer::Relaxed {
            self.rows() * (w + 1)
        } else {
            w
        }
    }

    fn zeta_index(&self) -> Option<usize> {
        self.free_horizon.then(|| self.n * self.block())
    }

    fn slack_index(&self) -> Option<usize> {
        matches!(self.objective, Objective::Probe { .. })
            .then(|| self.n * self.block() + usize::from(self.free_horizon))
    }

    pub fn dim(&self) -> usize {
        self.n * self.block()
            + usize::from(self.free_horizon)
            + if self.slack_index().is_some() { 3 } else { 0 }
    }

    /// Radius of the `w` ball (`1`, or `(1 − floor^d)^{1/d}` when strict).
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn constraint_kinds(&self) -> &[ConstraintKind] {
        &self.kinds
    }

    pub fn num_constraints(&self) -> usize {
        self.kinds.len()
    }

    fn build_kinds(&self) -> Vec<ConstraintKind> {
        let mut kinds = Vec::new();
        let pieces = self.spec.constraint.num_pieces();
        for node in 1..=self.n {
            for piece in 0..pieces {
                kinds.push(ConstraintKind::Path { node, piece });
            }
        }
        for row in 0..self.spec.target.rows.len() {
            kinds.push(ConstraintKind::Target { row });
        }
        if self.spec.budget.is_finite() {
            kinds.push(ConstraintKind::Budget);
        }
        if !self.tube.is_empty() {
            for node in 1..=self.n {
                for component in 0..=self.spec.n() {
                    kinds.push(ConstraintKind::Tube { node, component });
                }
            }
        }
        kinds
    }

    /// Interval owning decision entry `j`; `0` for `ζ` and `n` for slacks.
    pub fn interval_of(&self, j: usize) -> usize {
        let b = self.block();
        if j < self.n * b {
            j / b
        } else if Some(j) == self.zeta_index() {
            0
        } else {
            self.n
        }
    }

    pub fn horizon_of(&self, z: &[f64]) -> f64 {
        match self.zeta_index() {
            Some(i) => self.horizon * (1.0 + z[i]),
            None => self.horizon,
        }
    }

    pub fn grid(&self, z: &[f64]) -> Vec<f64> {
        let s = self.horizon_of(z);
        let mut g: Vec<f64> = (0..=self.n).map(|i| s * i as f64 / self.n as f64).collect();
        g[self.n] = s;
        g
    }

    fn sample(row: &[f64], a: usize) -> ControlSample {
        ControlSample {
            w0: row[0],
            w: row[1..].to_vec(),
            a,
        }
    }

    pub fn interval_control(&self, z: &[f64], k: usize) -> IntervalControl {
        let w = self.spec.m() + 1;
        let base = k * self.block();
        if self.layer == Layer::Relaxed {
            let rows = self.rows();
            let samples = (0..rows)
                .map(|r| Self::sample(&z[base + r * w..base + (r + 1) * w], self.params[k * rows + r]))
                .collect();
            let weights = z[base + rows * w..base + rows * (w + 1)].to_vec();
            IntervalControl::Relaxed(SimplexControlRow {
                rows: samples,
                weights,
            })
        } else {
            IntervalControl::Single(Self::sample(&z[base..base + w], self.params[k]))
        }
    }

    pub fn controls(&self, z: &[f64]) -> Vec<IntervalControl> {
        (0..self.n).map(|k| self.interval_control(z, k)).collect()
    }

    /// Projection onto the simple constraints: each row onto the sphere
    /// arc `{(w0, w) : (w0)^d + |w|^d = 1, |w| ≤ radius, w ∈ U}`, weights
    /// onto the simplex, `ζ` and the slacks onto their boxes.
    pub fn project(&self, z: &mut [f64]) {
        let w = self.spec.m() + 1;
        let rows = self.rows();
        for k in 0..self.n {
            let base = k * self.block();
            for r in 0..rows {
                self.project_row(&mut z[base + r * w..base + (r + 1) * w]);
            }
            if self.layer == Layer::Relaxed {
                project_simplex(&mut z[base + rows * w..base + rows * (w + 1)]);
            }
        }
        if let Some(i) = self.zeta_index() {
            z[i] = z[i].clamp(-self.delta_bar, self.delta_bar);
        }
        if let Some(i) = self.slack_index() {
            for v in &mut z[i..i + 3] {
                *v = v.max(0.0);
            }
        }
    }

    fn project_row(&self, row: &mut [f64]) {
        let d = self.spec.d();
        let a = row[0];
        let p = self.spec.cone.project(&row[1..]);
        let beta = crate::cone::norm(&p);
        let dir = if beta > 0.0 {
            p.iter().map(|v| v / beta).collect()
        } else {
            self.fallback_direction()
        };
        let r = project_on_arc(a, beta, d, self.radius);
        row[0] = (1.0 - r.powi(d as i32)).max(0.0).powf(1.0 / d as f64);
        for (out, u) in row[1..].iter_mut().zip(&dir) {
            *out = r * u;
        }
    }

    /// Unit direction in `U` used when a row carries no direction.
    fn fallback_direction(&self) -> Vec<f64> {
        let m = self.spec.m();
        match &self.spec.cone {
            model::ControlCone::Signs(signs) => {
                let mut u = vec![0.0; m];
                u[0] = if signs[0] == model::Sign::NonPos { -1.0 } else { 1.0 };
                u
            }
            model::ControlCone::Rays(rays) => {
                let n = crate::cone::norm(&rays[0]);
                rays[0].iter().map(|v| v / n).collect()
            }
        }
    }

    /// Pure drift `(w0, w) = (1, 0)` on every row; relaxed weights on row 0.
    pub fn default_start(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        let w = self.spec.m() + 1;
        let rows = self.rows();
        for k in 0..self.n {
            let base = k * self.block();
            for r in 0..rows {
                z[base + r * w] = 1.0;
            }
            if self.layer == Layer::Relaxed {
                z[base + rows * w] = 1.0;
            }
        }
        z
    }

    /// Random start: directions uniform on the sphere, `|w|` uniform in
    /// `[0, radius]`, Dirichlet(1) weights, random parameter indices.
    pub fn random_start<R: Rng>(&mut self, rng: &mut R) -> Vec<f64> {
        let m = self.spec.m();
        let w = m + 1;
        let d = self.spec.d() as i32;
        let rows = self.rows();
        let mut z = self.default_start();
        for k in 0..self.n {
            let base = k * self.block();
            for r in 0..rows {
                let dir: Vec<f64> = (0..m).map(|_| gaussian(rng)).collect();
                let norm = crate::cone::norm(&dir).max(1e-12);
                let radius = self.radius * rng.gen::<f64>();
                z[base + r * w] = (1.0 - radius.powi(d)).max(0.0).powf(1.0 / d as f64);
                for i in 0..m {
                    z[base + r * w + 1 + i] = dir[i] / norm * radius;
                }
            }
            if self.layer == Layer::Relaxed {
                let e: Vec<f64> = (0..rows).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                let sum: f64 = e.iter().sum();
                for r in 0..rows {
                    z[base + rows * w + r] = e[r] / sum;
                }
            }
        }
        let np = self.spec.params.len();
        if np > 1 {
            for a in self.params.iter_mut() {
                *a = rng.gen_range(0..np);
            }
        }
        self.project(&mut z);
        z
    }

    /// Decision vector reproducing `proc`'s controls, sampled at interval
    /// midpoints of this transcription's grid.
    pub fn pack(&mut self, proc: &Process) -> Result<Vec<f64>> {
        let w = self.spec.m() + 1;
        let rows = self.rows();
        let mut z = self.default_start();
        if let Some(i) = self.zeta_index() {
            z[i] = (proc.horizon() / self.horizon - 1.0).clamp(-self.delta_bar, self.delta_bar);
        }
        let grid = self.grid(&z);
        let scale = proc.horizon() / grid[self.n];
        for k in 0..self.n {
            let mid = 0.5 * (grid[k] + grid[k + 1]) * scale;
            let src = match proc.grid.partition_point(|&g| g <= mid) {
                0 => 0,
                p => (p - 1).min(proc.intervals() - 1),
            };
            let base = k * self.block();
            match (&proc.controls[src], self.layer) {
                (IntervalControl::Single(s), Layer::Relaxed) => {
                    for r in 0..rows {
                        put_sample(&mut z[base + r * w..base + (r + 1) * w], s);
                        self.params[k * rows + r] = s.a;
                    }
                }
                (IntervalControl::Single(s), _) => {
                    put_sample(&mut z[base..base + w], s);
                    self.params[k] = s.a;
                }
                (IntervalControl::Relaxed(r), Layer::Relaxed) => {
                    let row = crate::relax::pad_row(r.clone(), self.spec.n())?;
                    for (i, s) in row.rows.iter().enumerate() {
                        put_sample(&mut z[base + i * w..base + (i + 1) * w], s);
                        self.params[k * rows + i] = s.a;
                    }
                    z[base + rows * w..base + rows * (w + 1)].copy_from_slice(&row.weights);
                }
                (IntervalControl::Relaxed(_), _) => {
                    return Err(Error::Mode("cannot start a non-relaxed solve from a relaxed process".into()))
                }
            }
        }
        self.project(&mut z);
        Ok(z)
    }

    /// Integrates nodes `first..=N` into `states`, keeping earlier nodes.
    pub(crate) fn integrate_from(&self, z: &[f64], first: usize, states: &mut Vec<Vec<f64>>, sc: &mut Scratch) {
        let grid = self.grid(z);
        if states.is_empty() {
            states.push(NodeState::initial(&self.spec, self.layer == Layer::Relaxed).to_flat());
        }
        states.truncate(first + 1);
        let mut cur = states[first].clone();
        for k in first..self.n {
            let ctrl = self.interval_control(z, k);
            integrate::step(&self.spec, &ctrl, grid[k + 1] - grid[k], self.substeps, &mut cur, sc);
            states.push(cur.clone());
        }
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let dim = integrate::state_dim(&self.spec, self.layer == Layer::Relaxed);
        let mut sc = Scratch::new(&self.spec, dim);
        sc.sphere_nu = true;
        sc
    }

    /// Objective and constraints from already integrated states.
    pub(crate) fn assess(&self, z: &[f64], states: &[Vec<f64>], g: &mut Vec<f64>, buf: &mut Vec<f64>) -> f64 {
        let n = self.spec.n();
        let layout = self.spec.layout;
        g.clear();
        let slack = self.slack_index().map(|i| [z[i], z[i + 1], z[i + 2]]);
        let [eh, et, ek] = slack.unwrap_or([0.0; 3]);
        if self.spec.constraint.num_pieces() > 0 {
            for st in &states[1..] {
                self.spec.constraint.pieces(layout, st[0], &st[1..1 + n], buf);
                g.extend(buf.iter().map(|v| v - eh));
            }
        }
        let end = &states[self.n];
        for (row, b) in self.spec.target.rows.iter().zip(&self.spec.target.rhs) {
            g.push(crate::cone::dot(row, &end[..1 + n]) - b - et);
        }
        if self.spec.budget.is_finite() {
            g.push(end[1 + n] - self.spec.budget - ek);
        }
        if let Objective::Probe { delta, .. } = &self.objective {
            for (st, reference) in states[1..].iter().zip(&self.tube[1..]) {
                for c in 0..=n {
                    let e = st[c] - reference[c];
                    g.push(e * e - delta * delta);
                }
            }
        }
        match &self.objective {
            Objective::Cost => self.spec.psi(end[0], &end[1..1 + n], end[1 + n]),
            Objective::Probe { .. } => eh + et + ek,
        }
    }

    pub fn evaluate(&self, z: &[f64]) -> Evaluation {
        let mut states = Vec::with_capacity(self.n + 1);
        let mut sc = self.scratch();
        self.integrate_from(z, 0, &mut states, &mut sc);
        let mut g = Vec::with_capacity(self.kinds.len());
        let mut buf = Vec::new();
        let f = self.assess(z, &states, &mut g, &mut buf);
        Evaluation { f, g, states }
    }

    pub fn process(&self, z: &[f64]) -> Process {
        let eval = self.evaluate(z);
        let relaxed = self.layer == Layer::Relaxed;
        let n = self.spec.n();
        Process {
            layer: self.layer,
            grid: self.grid(z),
            controls: self.controls(z),
            states: eval
                .states
                .iter()
                .map(|s| NodeState::from_flat(s, n, relaxed))
                .collect(),
        }
    }
}

fn put_sample(row: &mut [f64], s: &ControlSample) {
    row[0] = s.w0;
    row[1..].copy_from_slice(&s.w);
}

/// Radius `r ∈ [0, r_max]` of the arc point `((1 − r^d)^{1/d}, r)` nearest
/// to `(a, β)`.
fn project_on_arc(a: f64, beta: f64, d: usize, r_max: f64) -> f64 {
    match d {
        1 => (0.5 * (1.0 - a + beta)).clamp(0.0, r_max),
        2 => {
            if a == 0.0 && beta == 0.0 {
                return 0.0;
            }
            beta.atan2(a).clamp(0.0, r_max.asin()).sin()
        }
        _ => {
            let di = d as i32;
            let q = |r: f64| {
                let c = (1.0 - r.powi(di)).max(0.0).powf(1.0 / d as f64);
                (c - a).powi(2) + (r - beta).powi(2)
            };
            const SAMPLES: usize = 64;
            let h = r_max / SAMPLES as f64;
            let best = (0..=SAMPLES)
                .min_by(|&i, &j| q(i as f64 * h).total_cmp(&q(j as f64 * h)))
                .unwrap_or(0);
            let mut lo = ((best as f64 - 1.0) * h).max(0.0);
            let mut hi = ((best as f64 + 1.0) * h).min(r_max);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..60 {
                let x1 = hi - g * (hi - lo);
                let x2 = lo + g * (hi - lo);
                if q(x1) <= q(x2) {
                    hi = x2;
                } else {
                    lo = x1;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}
