//! Independent oracles for the adjoint, the gap fixture and the layer
//! infima, checked against the library.

mod common;

use gapcert::bundled;
use gapcert::gap::{self, ProbeOptions, SweepOptions, SweepPoint};
use gapcert::model::{parse_problem, Layer};
use gapcert::pmp::{self, CertifyOptions, Classification, Mode};
use gapcert::solve::{self, Objective, SolveOptions, TranscribeOptions};
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn adjoint_matches_matrix_exponential(
        n in 1usize..=3,
        entries in prop::collection::vec(-1.0f64..1.0, 9),
        terminal in prop::collection::vec(-1.0f64..1.0, 4),
        horizon in 0.5f64..2.0,
    ) {
        let a = DMatrix::from_fn(n, n, |i, j| entries[3 * i + j]);
        let err = common::adjoint_oracle_error(&a, horizon, &terminal[..=n]);
        prop_assert!(err < 1e-6, "adjoint error {}", err);
    }
}

#[test]
fn fixture_extended_optimum_matches_grid_oracle() {
    let best = common::fixture_extended_optimum();
    assert_eq!(best, 0.0);

    let spec = bundled::gap_fixture();
    let opts = TranscribeOptions {
        n: 20,
        ..TranscribeOptions::default()
    };
    let t = solve::transcribe(&spec, Layer::Extended, &opts, Objective::Cost).unwrap();
    let rep = solve::multistart(&t, 4, 0, &SolveOptions::default(), Default::default()).unwrap();
    assert!(rep.is_feasible(1e-6));
    assert!((rep.objective - best).abs() < 1e-6, "{}", rep.objective);
}

#[test]
fn fixture_probe_floor_matches_grid_oracle() {
    let (floor, delta) = (0.05, 0.2);
    let best = common::fixture_violation_floor(floor, delta);
    assert!((best - 0.2).abs() < 1e-12, "{best}");

    let spec = bundled::gap_fixture();
    let reference = bundled::gap_fixture_reference(&spec, 20).unwrap();
    let opts = ProbeOptions {
        w0_floor: floor,
        sweep: SweepOptions {
            multistart: 2,
            ..SweepOptions::default()
        },
        ..ProbeOptions::default()
    };
    let probe = gap::isolation_probe(&spec, &reference, delta, &[20], &opts).unwrap();
    assert!((probe.points[0].floor - best).abs() < 1e-3, "{:?}", probe.points);
}

#[test]
fn convex_instance_layers_agree() {
    let spec = bundled::lq();
    let sweep = SweepOptions {
        multistart: 2,
        ..SweepOptions::default()
    };
    let pts = [SweepPoint { n: 20, w0_floor: 0.1 }];
    let mut limits = Vec::new();
    for layer in [Layer::Strict, Layer::Extended, Layer::Relaxed] {
        let t = gap::infimum_sweep(&spec, layer, &pts, &sweep).unwrap();
        limits.push(t.limit());
    }
    for l in &limits {
        assert!((l - limits[0]).abs() < 1e-4, "{limits:?}");
    }
}

#[test]
fn non_decreasing_constraint_fails_the_cq() {
    let spec = parse_problem(
        r#"
name = "stuck"
horizon = 1.0

[dynamics]
n = 1
m = 1
d = 1
drift = "zero"
g = [{ k = 1, j = [1], field = "one" }]

[fields.one]
kind = "const"
value = [1.0]

[cone]
signs = ["nonneg"]

[constraint]
kind = "poly"
expr = "x1 - 1"

[cost]
expr = "x1"

[init]
x0 = [1.0]
"#,
    )
    .unwrap();
    let proc = common::drift_process(&spec, 10);
    let samples = pmp::sample_grid(&spec, 32, 8);
    let cq = pmp::check_cq_h6(&spec, &proc, 0.5, &samples, 1e-6).unwrap();
    assert!(cq.boundary);
    assert!(!cq.satisfied);
    assert!(cq.margin >= 0.0, "{}", cq.margin);
}

#[test]
fn witnesses_pass_their_own_residuals() {
    let opts = CertifyOptions::default();
    let ex = bundled::ex51();
    let gf = bundled::gap_fixture();
    let cases = [
        (ex.clone(), bundled::ex51_reference(&ex, 20).unwrap(), Mode::FreeImpulsive),
        (gf.clone(), bundled::gap_fixture_reference(&gf, 20).unwrap(), Mode::Fixed),
    ];
    for (spec, proc, mode) in cases {
        let rep = pmp::classify(&spec, &proc, mode, &opts).unwrap();
        assert!(rep.audit_passed);
        assert_ne!(rep.classification, Classification::NotExtremal);
        for w in &rep.witnesses {
            let r = pmp::residuals(&spec, &proc, &w.multipliers, mode, &opts).unwrap();
            assert!(r.passes(&opts), "{} {:?}", w.label, r);
            for c in [0.5, 3.0] {
                let scaled = pmp::residuals(&spec, &proc, &w.multipliers.scaled(c), mode, &opts).unwrap();
                for ((name, a), (_, b)) in r.rows().iter().zip(scaled.rows()) {
                    assert!((b - c * a).abs() <= 1e-9 * (1.0 + a.abs()), "{name}: {a} vs {b} at scale {c}");
                }
            }
        }
    }
}

#[test]
fn multistart_is_deterministic_across_modes() {
    let spec = bundled::ex51();
    let opts = TranscribeOptions {
        n: 20,
        ..TranscribeOptions::default()
    };
    let t = solve::transcribe(&spec, Layer::Extended, &opts, Objective::Cost).unwrap();
    let sopts = SolveOptions::default();
    let a = solve::multistart(&t, 3, 11, &sopts, gapcert::par::Parallelism::Sequential).unwrap();
    let b = solve::multistart(&t, 3, 11, &sopts, gapcert::par::Parallelism::Parallel).unwrap();
    assert_eq!(a.decision, b.decision);
    assert_eq!(a.start, b.start);
    assert_eq!(
        gapcert::io::emit_process_csv(&a.process).unwrap(),
        gapcert::io::emit_process_csv(&b.process).unwrap()
    );
}
