//! Polyhedra `{z : C z ≤ b}`, their normal cones, and projections onto
//! finitely generated cones.

use nalgebra::{DMatrix, DVector};

use crate::lp::{LinearProgram, LpOutcome, RowKind, VarKind};

#[derive(Clone, Debug, PartialEq)]
pub struct Polyhedron {
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl Polyhedron {
    pub fn empty() -> Self {
        Self {
            rows: Vec::new(),
            rhs: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>, rhs: f64) {
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    pub fn is_unconstrained(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest row violation `max_i (c_i·z − b_i)^+`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(c, &b)| (dot(c, z) - b).max(0.0))
            .fold(0.0, f64::max)
    }

    /// `C z − b`, row by row.
    pub fn row_values(&self, z: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(c, &b)| dot(c, z) - b)
            .collect()
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        self.max_violation(z) <= tol
    }

    /// Indices of rows with `c_i·z ≥ b_i − tol`.
    pub fn active_rows(&self, z: &[f64], tol: f64) -> Vec<usize> {
        self.rows
            .iter()
            .zip(&self.rhs)
            .enumerate()
            .filter(|(_, (c, &b))| dot(c, z) >= b - tol)
            .map(|(i, _)| i)
            .collect()
    }

    /// Generators of the normal cone at `z` (the active row normals).
    pub fn normal_generators(&self, z: &[f64], tol: f64) -> Vec<Vec<f64>> {
        self.active_rows(z, tol)
            .into_iter()
            .map(|i| self.rows[i].clone())
            .collect()
    }

    pub fn is_nonempty(&self) -> bool {
        if self.rows.is_empty() {
            return true;
        }
        let dim = self.rows[0].len();
        let mut lp = LinearProgram::new();
        let vars: Vec<usize> = (0..dim).map(|_| lp.add_var(VarKind::Free)).collect();
        for (c, &b) in self.rows.iter().zip(&self.rhs) {
            let coeffs = vars.iter().zip(c).map(|(&v, &a)| (v, a)).collect();
            lp.add_row(coeffs, RowKind::Le, b);
        }
        matches!(lp.solve(), Ok(LpOutcome::Optimal { .. }))
    }

    /// Euclidean projection by Dykstra's alternating projections onto the
    /// half-spaces. Exact after one sweep for axis-aligned rows.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        if self.contains(z, 0.0) {
            return z.to_vec();
        }
        let k = self.rows.len();
        let dim = z.len();
        let norms: Vec<f64> = self.rows.iter().map(|c| dot(c, c)).collect();
        let mut x = z.to_vec();
        let mut corr = vec![vec![0.0; dim]; k];
        for _ in 0..20_000 {
            let prev = x.clone();
            for i in 0..k {
                if norms[i] == 0.0 {
                    continue;
                }
                let y: Vec<f64> = x.iter().zip(&corr[i]).map(|(a, b)| a + b).collect();
                let excess = dot(&self.rows[i], &y) - self.rhs[i];
                let mut px = y.clone();
                if excess > 0.0 {
                    let s = excess / norms[i];
                    for (p, c) in px.iter_mut().zip(&self.rows[i]) {
                        *p -= s * c;
                    }
                }
                for j in 0..dim {
                    corr[i][j] = y[j] - px[j];
                }
                x = px;
            }
            let change: f64 = x
                .iter()
                .zip(&prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if change < 1e-15 {
                break;
            }
        }
        x
    }

    pub fn distance(&self, z: &[f64]) -> f64 {
        if self.contains(z, 0.0) {
            return 0.0;
        }
        let p = self.project(z);
        norm(&sub(z, &p))
    }
}

/// Non-negative least squares (Lawson–Hanson): `min ‖A x − y‖, x ≥ 0`,
/// with `A` given by its columns.
pub fn nnls(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = cols.len();
    let dim = y.len();
    if k == 0 {
        return Vec::new();
    }
    let a = DMatrix::from_fn(dim, k, |r, c| cols[c][r]);
    let yv = DVector::from_column_slice(y);
    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    let tol = 1e-12 * (1.0 + a.abs().max() * yv.abs().max());
    for _outer in 0..(3 * k + 10) {
        let w = a.transpose() * (&yv - &a * &x);
        let candidate = (0..k)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _inner in 0..(3 * k + 10) {
            let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let sub_a = DMatrix::from_fn(dim, idx.len(), |r, c| a[(r, idx[c])]);
            let z = sub_a
                .clone()
                .svd(true, true)
                .solve(&yv, 1e-13)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (c, &i) in idx.iter().enumerate() {
                    x[i] = z[c];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (c, &i) in idx.iter().enumerate() {
                if z[c] <= 0.0 {
                    let denom = x[i] - z[c];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (c, &i) in idx.iter().enumerate() {
                x[i] += alpha * (z[c] - x[i]);
            }
            for &i in &idx {
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Projection of `y` onto `cone{generators}`; returns the projected point.
pub fn project_onto_cone(generators: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let coef = nnls(generators, y);
    let mut out = vec![0.0; y.len()];
    for (g, c) in generators.iter().zip(&coef) {
        for (o, gi) in out.iter_mut().zip(g) {
            *o += c * gi;
        }
    }
    out
}

/// Distance from `y` to `offset + cone{generators}`.
pub fn distance_to_shifted_cone(y: &[f64], offset: &[f64], generators: &[Vec<f64>]) -> f64 {
    let shifted = sub(y, offset);
    let p = project_onto_cone(generators, &shifted);
    norm(&sub(&shifted, &p))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(dim: usize) -> Polyhedron {
        let mut p = Polyhedron::empty();
        for i in 0..dim {
            let mut up = vec![0.0; dim];
            up[i] = 1.0;
            p.push(up.clone(), 1.0);
            up[i] = -1.0;
            p.push(up, 0.0);
        }
        p
    }

    #[test]
    fn box_projection_is_clamping() {
        let b = unit_box(3);
        let p = b.project(&[2.0, -0.5, 0.3]);
        assert_eq!(p, vec![1.0, 0.0, 0.3]);
        assert!((b.distance(&[2.0, -0.5, 0.3]) - (1.0f64 + 0.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn oblique_projection_matches_closed_form() {
        // half-plane x + y ≤ 1 intersected with x ≥ 0
        let mut p = Polyhedron::empty();
        p.push(vec![1.0, 1.0], 1.0);
        p.push(vec![-1.0, 0.0], 0.0);
        let q = p.project(&[2.0, 2.0]);
        assert!((q[0] - 0.5).abs() < 1e-9 && (q[1] - 0.5).abs() < 1e-9);
        let q = p.project(&[-3.0, 5.0]);
        assert!(q[0].abs() < 1e-9 && (q[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn emptiness() {
        let mut p = Polyhedron::empty();
        p.push(vec![1.0], 0.0);
        p.push(vec![-1.0], -1.0);
        assert!(!p.is_nonempty());
        assert!(unit_box(2).is_nonempty());
    }

    #[test]
    fn nnls_cone_projection() {
        let gens = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        // inside the cone
        let p = project_onto_cone(&gens, &[2.0, 1.0]);
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
        // outside: nearest point on ray (1,1)
        let p = project_onto_cone(&gens, &[0.0, 2.0]);
        assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] - 1.0).abs() < 1e-9);
        // polar region -> origin
        let p = project_onto_cone(&gens, &[-1.0, -1.0]);
        assert!(p.iter().all(|v| v.abs() < 1e-12));
        assert!(distance_to_shifted_cone(&[1.0, -1.0], &[0.0, -1.0], &gens) < 1e-12);
    }

    #[test]
    fn normal_generators_at_corner() {
        let b = unit_box(2);
        let g = b.normal_generators(&[1.0, 0.0], 1e-12);
        assert_eq!(g, vec![vec![1.0, 0.0], vec![0.0, -1.0]]);
    }
}
