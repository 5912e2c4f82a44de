//! Problems shipped with the binary and their hand-built reference processes.

use crate::error::{Error, Result};
use crate::model::{
    parse_problem, ControlSample, IntervalControl, Layer, NodeState, Process, ProblemSpec,
    SimplexControlRow,
};

pub const EX51_TOML: &str = include_str!("../problems/ex51.toml");
pub const SCALAR_TOML: &str = include_str!("../problems/scalar.toml");
pub const LQ_TOML: &str = include_str!("../problems/lq.toml");
pub const GAPFIX_TOML: &str = include_str!("../problems/gapfix.toml");

/// `(name, problem file text)` for every bundled problem.
pub const PROBLEMS: [(&str, &str); 4] = [
    ("ex51", EX51_TOML),
    ("scalar", SCALAR_TOML),
    ("lq", LQ_TOML),
    ("gapfix", GAPFIX_TOML),
];

pub fn source(name: &str) -> Option<&'static str> {
    PROBLEMS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn by_name(name: &str) -> Option<ProblemSpec> {
    source(name).map(|s| parse_problem(s).expect("bundled problem parses"))
}

pub fn ex51() -> ProblemSpec {
    parse_problem(EX51_TOML).expect("bundled problem parses")
}

pub fn scalar() -> ProblemSpec {
    parse_problem(SCALAR_TOML).expect("bundled problem parses")
}

pub fn lq() -> ProblemSpec {
    parse_problem(LQ_TOML).expect("bundled problem parses")
}

pub fn gap_fixture() -> ProblemSpec {
    parse_problem(GAPFIX_TOML).expect("bundled problem parses")
}

fn uniform(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

/// The extended minimizer of `ex51` on `n` uniform intervals (`n` even):
/// drift on `[0, 1]`, then the fast direction `w = (−1, 0)` on `]1, 2]`.
/// States are the closed-form trajectory, not an integration.
pub fn ex51_reference(spec: &ProblemSpec, n: usize) -> Result<Process> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::Range(format!("reference grid needs an even interval count, got {n}")));
    }
    let grid = uniform(2.0, n);
    let controls = (0..n)
        .map(|k| {
            if k < n / 2 {
                IntervalControl::Single(ControlSample::drift(spec.m()))
            } else {
                IntervalControl::Single(ControlSample {
                    w0: 0.0,
                    w: vec![-1.0, 0.0],
                    a: 0,
                })
            }
        })
        .collect();
    let states = grid.iter().map(|&s| ex51_reference_state(s)).collect();
    Ok(Process {
        layer: Layer::Extended,
        grid,
        controls,
        states,
    })
}

/// Closed form of the `ex51` reference trajectory at pseudo-time `s`.
pub fn ex51_reference_state(s: f64) -> NodeState {
    if s <= 1.0 {
        NodeState {
            y0: s,
            y: vec![1.0, 0.0, 0.0],
            nu: 0.0,
            xi: None,
        }
    } else {
        NodeState {
            y0: 1.0,
            y: vec![2.0 - s, 0.0, 0.0],
            nu: s - 1.0,
            xi: None,
        }
    }
}

/// The only feasible process of `gapfix`: original time frozen, `x2 = s`.
pub fn gap_fixture_reference(spec: &ProblemSpec, n: usize) -> Result<Process> {
    if n == 0 {
        return Err(Error::Range("reference grid needs at least one interval".into()));
    }
    let grid = uniform(spec.horizon, n);
    let controls = vec![
        IntervalControl::Single(ControlSample {
            w0: 0.0,
            w: vec![1.0],
            a: 0,
        });
        n
    ];
    let states = grid
        .iter()
        .map(|&s| NodeState {
            y0: 0.0,
            y: vec![0.0, s],
            nu: s,
            xi: None,
        })
        .collect();
    Ok(Process {
        layer: Layer::Extended,
        grid,
        controls,
        states,
    })
}

/// Relaxed controls for the scalar problem mixing `w = +1` and `w = −1`
/// with equal weights; the relaxed trajectory is constant.
pub fn averaging_rows(n: usize) -> Vec<IntervalControl> {
    let plus = ControlSample {
        w0: 0.0,
        w: vec![1.0],
        a: 0,
    };
    let minus = ControlSample {
        w0: 0.0,
        w: vec![-1.0],
        a: 0,
    };
    vec![
        IntervalControl::Relaxed(SimplexControlRow {
            rows: vec![plus, minus],
            weights: vec![0.5, 0.5],
        });
        n
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_problems_parse() {
        for (name, _) in PROBLEMS {
            assert!(by_name(name).is_some(), "{name}");
        }
        assert!(by_name("nope").is_none());
    }

    #[test]
    fn references_validate() {
        let spec = ex51();
        ex51_reference(&spec, 40).unwrap().validate(&spec).unwrap();
        assert!(ex51_reference(&spec, 7).is_err());
        let fix = gap_fixture();
        gap_fixture_reference(&fix, 20).unwrap().validate(&fix).unwrap();
    }
}
