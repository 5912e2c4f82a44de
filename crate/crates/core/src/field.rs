//! Polynomial scalar and vector fields over the variables `(t, x, a, v)`.
//!
//! Every user-facing callable in a problem file (drift, control coefficients,
//! state constraint, cost) resolves to one of these. Keeping them polynomial
//! gives exact Jacobians for the adjoint code without finite differencing.

use std::fmt;

use crate::error::{Error, Result};

/// Layout of the evaluation point: `[t, x_1..x_n, a_1..a_q, v]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarLayout {
    pub n: usize,
    pub q: usize,
}

impl VarLayout {
    pub fn new(n: usize, q: usize) -> Self {
        Self { n, q }
    }

    pub fn len(&self) -> usize {
        self.n + self.q + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t(&self) -> usize {
        0
    }

    pub fn x(&self, i: usize) -> usize {
        1 + i
    }

    pub fn a(&self, i: usize) -> usize {
        1 + self.n + i
    }

    pub fn v(&self) -> usize {
        1 + self.n + self.q
    }

    /// Writes `(t, x, a, v)` into `buf`, which must have length `len()`.
    pub fn fill(&self, buf: &mut [f64], t: f64, x: &[f64], a: &[f64], v: f64) {
        buf[0] = t;
        buf[1..1 + self.n].copy_from_slice(x);
        buf[1 + self.n..1 + self.n + self.q].copy_from_slice(a);
        buf[1 + self.n + self.q] = v;
    }

    fn lookup(&self, name: &str) -> Option<usize> {
        match name {
            "t" => return Some(self.t()),
            "v" | "nu" => return Some(self.v()),
            _ => {}
        }
        let (prefix, rest) = name.split_at(1);
        let idx: usize = rest.parse().ok()?;
        if idx == 0 {
            return None;
        }
        match prefix {
            "x" if idx <= self.n => Some(self.x(idx - 1)),
            "a" if idx <= self.q => Some(self.a(idx - 1)),
            _ => None,
        }
    }

    fn name(&self, var: usize) -> String {
        if var == 0 {
            "t".into()
        } else if var <= self.n {
            format!("x{var}")
        } else if var <= self.n + self.q {
            format!("a{}", var - self.n)
        } else {
            "v".into()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    /// Sparse `(variable, power)` pairs, powers ≥ 1.
    pub powers: Vec<(usize, u32)>,
}

impl Monomial {
    fn eval(&self, vars: &[f64]) -> f64 {
        let mut out = self.coef;
        for &(var, pow) in &self.powers {
            out *= pow_u(vars[var], pow);
        }
        out
    }

    fn partial(&self, var: usize, vars: &[f64]) -> f64 {
        let mut out = 0.0;
        for (slot, &(v, pow)) in self.powers.iter().enumerate() {
            if v != var {
                continue;
            }
            let mut term = self.coef * pow as f64 * pow_u(vars[v], pow - 1);
            for (other, &(w, p)) in self.powers.iter().enumerate() {
                if other != slot {
                    term *= pow_u(vars[w], p);
                }
            }
            out += term;
        }
        out
    }

    fn degree(&self) -> u32 {
        self.powers.iter().map(|&(_, p)| p).sum()
    }
}

#[inline]
fn pow_u(x: f64, p: u32) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(p as i32),
    }
}

/// A real polynomial in the layout's variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        if c == 0.0 {
            return Self::zero();
        }
        Self {
            terms: vec![Monomial {
                coef: c,
                powers: Vec::new(),
            }],
        }
    }

    /// `Σ coeffs[i]·var_i + offset`.
    pub fn affine(coeffs: &[(usize, f64)], offset: f64) -> Self {
        let mut p = Self::constant(offset);
        for &(var, c) in coeffs {
            if c != 0.0 {
                p.terms.push(Monomial {
                    coef: c,
                    powers: vec![(var, 1)],
                });
            }
        }
        p
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        self.terms.iter().map(|m| m.eval(vars)).sum()
    }

    pub fn partial(&self, var: usize, vars: &[f64]) -> f64 {
        self.terms.iter().map(|m| m.partial(var, vars)).sum()
    }

    pub fn depends_on(&self, var: usize) -> bool {
        self.terms
            .iter()
            .any(|m| m.powers.iter().any(|&(v, _)| v == var))
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Parses `"2*x1^2*x3 - t + 0.5"` style expressions against `layout`.
    pub fn parse(src: &str, layout: VarLayout) -> Result<Self> {
        Parser::new(src, layout).parse()
    }

    pub fn display(&self, layout: VarLayout) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (i, m) in self.terms.iter().enumerate() {
            if i > 0 {
                out.push_str(if m.coef < 0.0 { " - " } else { " + " });
            } else if m.coef < 0.0 {
                out.push('-');
            }
            let c = m.coef.abs();
            let mut parts = Vec::new();
            if c != 1.0 || m.powers.is_empty() {
                parts.push(format!("{c}"));
            }
            for &(v, p) in &m.powers {
                if p == 1 {
                    parts.push(layout.name(v));
                } else {
                    parts.push(format!("{}^{p}", layout.name(v)));
                }
            }
            out.push_str(&parts.join("*"));
        }
        out
    }
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<char>,
    pos: usize,
    layout: VarLayout,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, layout: VarLayout) -> Self {
        Self {
            src,
            chars: src.chars().filter(|c| !c.is_whitespace()).collect(),
            pos: 0,
            layout,
        }
    }

    fn err(&self, msg: impl fmt::Display) -> Error {
        Error::Parse(format!("expression {:?}: {msg}", self.src))
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Polynomial> {
        let mut poly = Polynomial::zero();
        if self.chars.is_empty() {
            return Err(self.err("empty expression"));
        }
        let mut first = true;
        while self.pos < self.chars.len() {
            let sign = match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    1.0
                }
                Some('-') => {
                    self.pos += 1;
                    -1.0
                }
                _ if first => 1.0,
                Some(c) => return Err(self.err(format!("unexpected {c:?}"))),
                None => unreachable!(),
            };
            first = false;
            let mut mono = self.term()?;
            mono.coef *= sign;
            if mono.coef != 0.0 {
                poly.terms.push(mono);
            }
        }
        Ok(poly)
    }

    fn term(&mut self) -> Result<Monomial> {
        let mut mono = Monomial {
            coef: 1.0,
            powers: Vec::new(),
        };
        loop {
            self.factor(&mut mono)?;
            if self.peek() == Some('*') {
                self.pos += 1;
            } else {
                break;
            }
        }
        mono.powers.sort_unstable();
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(mono.powers.len());
        for (v, p) in mono.powers.drain(..) {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        mono.powers = merged;
        Ok(mono)
    }

    fn factor(&mut self, mono: &mut Monomial) -> Result<()> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == '.' => {
                while let Some(c) = self.peek() {
                    let exp_sign = (c == '+' || c == '-')
                        && matches!(self.chars.get(self.pos.wrapping_sub(1)), Some('e' | 'E'));
                    if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                let value: f64 = text
                    .parse()
                    .map_err(|_| self.err(format!("bad number {text:?}")))?;
                mono.coef *= value;
            }
            Some(c) if c.is_ascii_alphabetic() => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric()) {
                    self.pos += 1;
                }
                let name: String = self.chars[start..self.pos].iter().collect();
                let var = self
                    .layout
                    .lookup(&name)
                    .ok_or_else(|| self.err(format!("unknown variable {name:?}")))?;
                let mut pow = 1u32;
                if self.peek() == Some('^') {
                    self.pos += 1;
                    let s = self.pos;
                    while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                        self.pos += 1;
                    }
                    let text: String = self.chars[s..self.pos].iter().collect();
                    pow = text
                        .parse()
                        .map_err(|_| self.err(format!("bad exponent {text:?}")))?;
                }
                if pow > 0 {
                    mono.powers.push((var, pow));
                }
            }
            Some(c) => return Err(self.err(format!("unexpected {c:?}"))),
            None => return Err(self.err("dangling operator")),
        }
        Ok(())
    }
}

/// A vector-valued polynomial field.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub comps: Vec<Polynomial>,
}

impl VectorField {
    pub fn zero(dim: usize) -> Self {
        Self {
            comps: vec![Polynomial::zero(); dim],
        }
    }

    pub fn constant(values: &[f64]) -> Self {
        Self {
            comps: values.iter().map(|&c| Polynomial::constant(c)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    /// Adds `scale · self(vars)` into `out`.
    #[inline]
    pub fn eval_add(&self, vars: &[f64], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        for (o, c) in out.iter_mut().zip(&self.comps) {
            if !c.is_zero() {
                *o += scale * c.eval(vars);
            }
        }
    }

    pub fn eval(&self, vars: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval(vars)).collect()
    }

    /// Adds `scale · ∂self/∂var_j` into column `j - first` of the row-major
    /// `dim × cols` matrix `out`, for `j` in `first..first+cols`.
    pub fn jacobian_add(
        &self,
        vars: &[f64],
        first: usize,
        cols: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        if scale == 0.0 {
            return;
        }
        for (row, c) in self.comps.iter().enumerate() {
            for col in 0..cols {
                let var = first + col;
                if c.depends_on(var) {
                    out[row * cols + col] += scale * c.partial(var, vars);
                }
            }
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        self.comps.iter().any(|c| c.depends_on(var))
    }
}

/// Fields that ship with the library so the bundled problems can refer to
/// them by name.
pub fn builtin(name: &str, layout: VarLayout) -> Option<VectorField> {
    let parse = |srcs: &[&str]| -> Option<VectorField> {
        let comps = srcs
            .iter()
            .map(|s| Polynomial::parse(s, layout))
            .collect::<Result<Vec<_>>>()
            .ok()?;
        Some(VectorField { comps })
    };
    match name {
        "zero" => Some(VectorField::zero(layout.n)),
        "ex51_f" if layout.n == 3 => parse(&["0", "x2*x3", "0"]),
        "ex51_g1" if layout.n == 3 => parse(&["1", "0", "0"]),
        "ex51_g2" if layout.n == 3 => parse(&["0", "-1", "-x1"]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> VarLayout {
        VarLayout::new(3, 1)
    }

    #[test]
    fn parse_and_eval() {
        let p = Polynomial::parse("2*x1^2*x3 - t + 0.5 + a1*v", layout()).unwrap();
        let vars = [0.25, 3.0, 0.0, 0.5, 2.0, -1.0];
        assert_eq!(p.eval(&vars), 2.0 * 9.0 * 0.5 - 0.25 + 0.5 - 2.0);
        assert_eq!(p.degree(), 3);
    }

    #[test]
    fn parse_scientific_and_repeated_vars() {
        let p = Polynomial::parse("1.5e-1*x2*x2", layout()).unwrap();
        assert_eq!(p.terms[0].powers, vec![(2, 2)]);
        assert!((p.eval(&[0.0, 0.0, 2.0, 0.0, 0.0, 0.0]) - 0.6).abs() < 1e-15);
        let q = Polynomial::parse("-1e+2", layout()).unwrap();
        assert_eq!(q.eval(&[0.0; 6]), -100.0);
    }

    #[test]
    fn parse_errors() {
        assert!(Polynomial::parse("x4", layout()).is_err());
        assert!(Polynomial::parse("x1 +", layout()).is_err());
        assert!(Polynomial::parse("", layout()).is_err());
        assert!(Polynomial::parse("y", layout()).is_err());
    }

    #[test]
    fn partials_match_finite_differences() {
        let p = Polynomial::parse("x1^3*x2 - 4*t*x3^2 + a1", layout()).unwrap();
        let vars = [0.3, -0.7, 1.1, 0.4, 2.0, 0.0];
        for var in 0..vars.len() {
            let h = 1e-6;
            let mut plus = vars;
            let mut minus = vars;
            plus[var] += h;
            minus[var] -= h;
            let fd = (p.eval(&plus) - p.eval(&minus)) / (2.0 * h);
            assert!((fd - p.partial(var, &vars)).abs() < 1e-7, "var {var}");
        }
    }

    #[test]
    fn builtin_example_fields() {
        let l = VarLayout::new(3, 0);
        let g2 = builtin("ex51_g2", l).unwrap();
        let mut vars = vec![0.0; l.len()];
        l.fill(&mut vars, 0.0, &[1.0, 0.0, 0.0], &[], 0.0);
        assert_eq!(g2.eval(&vars), vec![0.0, -1.0, -1.0]);
        assert!(builtin("ex51_f", VarLayout::new(2, 0)).is_none());
    }

    #[test]
    fn display_round_trips() {
        let l = layout();
        let p = Polynomial::parse("-x1^2*x3 + 2.5*t - 1", l).unwrap();
        let q = Polynomial::parse(&p.display(l), l).unwrap();
        assert_eq!(p, q);
    }
}
