mod common;

use gapcert::bundled;
use gapcert::embed;
use gapcert::integrate::{self, DEFAULT_SUBSTEPS};
use gapcert::io;
use gapcert::model::{ControlSample, IntervalControl, Layer, Process, ProblemSpec, SimplexControlRow};
use gapcert::relax;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn embedding_round_trip(
        n in 1usize..=3,
        m in 1usize..=2,
        d in 1usize..=2,
        coef in prop::collection::vec(-1.0f64..1.0, 24),
        phase in prop::collection::vec(-1.0f64..1.0, 4),
        horizon in 0.5f64..1.5,
    ) {
        let spec = common::random_problem(n, m, d, &coef);
        let orig = common::smooth_original(&spec, horizon, &phase, 40);
        let (err, mesh, cost) = common::embedding_round_trip(&spec, &orig, 100);
        prop_assert!(cost <= 1e-12);
        prop_assert!(err <= 5.0 * mesh, "error {} vs mesh {}", err, mesh);
    }

    #[test]
    fn native_grid_embedding_inverts_exactly(
        coef in prop::collection::vec(-1.0f64..1.0, 24),
        phase in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let spec = common::random_problem(2, 2, 2, &coef);
        let orig = common::smooth_original(&spec, 1.0, &phase, 20);
        let emb = embed::embed_original(&spec, &orig, None).unwrap();
        let back = embed::invert_embedding(&spec, &emb, 1e-3).unwrap();
        prop_assert_eq!(&back.grid, &orig.grid);
        for (a, b) in back.controls.iter().flatten().zip(orig.controls.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn two_row_relaxed(spec: &ProblemSpec, lam: &[f64], intervals: usize) -> Process {
    let d = spec.d();
    let plus = ControlSample::from_w(vec![0.8], 0, d);
    let minus = ControlSample::from_w(vec![-0.6], 0, d);
    let rows = lam
        .iter()
        .cycle()
        .take(intervals)
        .map(|&l| SimplexControlRow {
            rows: vec![plus.clone(), minus.clone()],
            weights: vec![l, 1.0 - l],
        })
        .collect();
    let grid: Vec<f64> = (0..=intervals).map(|i| i as f64 / intervals as f64).collect();
    relax::integrate_relaxed(spec, rows, grid).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn chattering_error_is_first_order(
        n in 1usize..=2,
        coef in prop::collection::vec(-1.0f64..1.0, 12),
        lam in prop::collection::vec(0.2f64..0.8, 5),
    ) {
        let spec = common::random_problem(n, 1, 1, &coef);
        let rel = two_row_relaxed(&spec, &lam, 5);
        let coarse = relax::sup_error(&spec, &relax::chatter(&spec, &rel, 0.1).unwrap(), &rel);
        let fine = relax::sup_error(&spec, &relax::chatter(&spec, &rel, 0.05).unwrap(), &rel);
        let ratio = coarse / fine;
        prop_assert!((1.6..=2.5).contains(&ratio), "ratio {} ({} / {})", ratio, coarse, fine);
    }

    #[test]
    fn vertex_weights_collapse_to_the_row(
        coef in prop::collection::vec(-1.0f64..1.0, 12),
        k in 0usize..3,
        w in -1.0f64..1.0,
    ) {
        let spec = common::random_problem(2, 1, 1, &coef);
        let sample = ControlSample::from_w(vec![w], 0, 1);
        let other = ControlSample::from_w(vec![-w / 2.0], 0, 1);
        let mut rows = vec![other; 3];
        rows[k] = sample.clone();
        let mut weights = vec![0.0; 3];
        weights[k] = 1.0;
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let rel = relax::integrate_relaxed(&spec, vec![SimplexControlRow { rows, weights }; 10], grid.clone()).unwrap();
        let ext = integrate::integrate(&spec, Layer::Extended, grid, vec![IntervalControl::Single(sample); 10], DEFAULT_SUBSTEPS).unwrap();
        prop_assert!(relax::nodewise_distance(&rel, &ext) <= 1e-12);
        let xi = rel.terminal().xi.as_ref().unwrap();
        prop_assert!((xi.iter().sum::<f64>() - rel.horizon()).abs() <= 1e-12);
    }

    #[test]
    fn process_csv_round_trips(
        ws in prop::collection::vec(-1.0f64..1.0, 12),
        impulsive in any::<bool>(),
    ) {
        let spec = bundled::ex51();
        let controls: Vec<IntervalControl> = ws
            .chunks(2)
            .enumerate()
            .map(|(k, c)| {
                let scale = if impulsive && k == 2 { 1.0 / (c[0].abs() + c[1].abs()).max(1e-3) } else { 0.5 };
                IntervalControl::Single(ControlSample::from_w(vec![c[0] * scale, c[1] * scale], 0, 1))
            })
            .collect();
        let grid: Vec<f64> = (0..=6).map(|i| i as f64 / 3.0).collect();
        let proc = integrate::integrate(&spec, Layer::Extended, grid, controls, DEFAULT_SUBSTEPS).unwrap();
        let text = io::emit_process_csv(&proc).unwrap();
        let back = io::parse_process_csv(&text, &spec).unwrap();
        prop_assert_eq!(&back.grid, &proc.grid);
        prop_assert_eq!(&back.controls, &proc.controls);
        prop_assert_eq!(&back.states, &proc.states);
        prop_assert_eq!(io::emit_process_csv(&back).unwrap(), text);
    }
}

#[test]
fn relaxed_csv_round_trips() {
    let spec = bundled::scalar();
    let grid: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
    let rows = bundled::averaging_rows(8)
        .into_iter()
        .map(|c| match c {
            IntervalControl::Relaxed(r) => r,
            IntervalControl::Single(_) => unreachable!(),
        })
        .collect();
    let rel = relax::integrate_relaxed(&spec, rows, grid).unwrap();
    let text = io::emit_process_csv(&rel).unwrap();
    assert!(text.starts_with("s,r0_lambda,r0_w0,r0_w_1,r0_a_index,r1_lambda"));
    assert_eq!(io::parse_process_csv(&text, &spec).unwrap(), rel);
}

#[test]
fn averaging_fixture_meets_the_sawtooth_bound() {
    let spec = bundled::scalar();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let rows = bundled::averaging_rows(10)
        .into_iter()
        .map(|c| match c {
            IntervalControl::Relaxed(r) => r,
            IntervalControl::Single(_) => unreachable!(),
        })
        .collect();
    let rel = relax::integrate_relaxed(&spec, rows, grid).unwrap();
    for eta in [0.2, 0.1, 0.05] {
        let ext = relax::chatter(&spec, &rel, eta).unwrap();
        let sup = ext.states.iter().map(|z| z.y[0].abs()).fold(0.0, f64::max);
        assert!(sup <= eta / 2.0 + 1e-12, "eta {eta}: {sup}");
    }
}
