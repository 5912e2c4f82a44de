use std::path::Path;

use gapcert::cli::{run, EXIT_ERROR, EXIT_FINDING, EXIT_OK, EXIT_USAGE};
use gapcert::integrate::{self, DEFAULT_SUBSTEPS};
use gapcert::model::{ControlSample, IntervalControl, Layer};
use gapcert::{bundled, io};

fn gapcert(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["gapcert", "--out", out.to_str().unwrap()];
    argv.extend_from_slice(args);
    run(argv)
}

#[test]
fn missing_problem_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gapcert(dir.path(), &["solve", "missing.toml"]), EXIT_ERROR);
}

#[test]
fn bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gapcert(dir.path(), &["solve", "ex51", "--bogus"]), EXIT_USAGE);
    assert_eq!(gapcert(dir.path(), &["certify", "ex51"]), EXIT_USAGE);
    assert_eq!(gapcert(dir.path(), &["frobnicate"]), EXIT_USAGE);
    assert_eq!(gapcert(dir.path(), &["certify", "ex51", "p.csv", "--mode", "sideways"]), EXIT_USAGE);
}

#[test]
fn random_process_is_not_extremal() {
    let dir = tempfile::tempdir().unwrap();
    let spec = bundled::lq();
    let ws = [0.3, -0.7, 0.9, 0.1, -0.4, 0.6, -0.2, 0.8];
    let grid: Vec<f64> = (0..=ws.len()).map(|i| 2.0 * i as f64 / ws.len() as f64).collect();
    let controls = ws
        .iter()
        .map(|&w| IntervalControl::Single(ControlSample::from_w(vec![w], 0, 1)))
        .collect();
    let proc = integrate::integrate(&spec, Layer::Extended, grid, controls, DEFAULT_SUBSTEPS).unwrap();
    let csv = dir.path().join("random.csv");
    io::write_process_csv(&csv, &proc).unwrap();
    let code = gapcert(dir.path(), &["certify", "lq", csv.to_str().unwrap(), "--mode", "free-impulsive"]);
    assert_eq!(code, EXIT_FINDING);
    let report = std::fs::read_to_string(dir.path().join("certify.txt")).unwrap();
    assert!(report.contains("classification = not-extremal"), "{report}");
}

#[test]
fn example_reference_certifies() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gapcert(dir.path(), &["example", "ex51"]), EXIT_OK);
    let reference = dir.path().join("reference.csv");
    let problem = dir.path().join("ex51.toml");
    let args = ["certify", problem.to_str().unwrap(), reference.to_str().unwrap(), "--mode", "free-impulsive"];
    assert_eq!(gapcert(dir.path(), &args), EXIT_OK);
    let report = std::fs::read_to_string(dir.path().join("certify.txt")).unwrap();
    assert!(report.contains("classification = nondegenerate-normal"));
    assert_eq!(gapcert(dir.path(), &["cq", "ex51", reference.to_str().unwrap(), "--sbar", "1"]), EXIT_OK);
}

#[test]
fn solve_output_is_byte_identical_for_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--seed", "7", "solve", "ex51", "--n", "20", "--multistart", "3"];
    assert_eq!(gapcert(a.path(), &args), EXIT_OK);
    assert_eq!(gapcert(b.path(), &args), EXIT_OK);
    for file in ["process.csv", "solve.txt"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
}

#[test]
fn embed_and_chatter_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let orig = dir.path().join("orig.csv");
    std::fs::write(&orig, "t,u_1,a_index\n0,1,0\n0.5,0.5,0\n1,,\n").unwrap();
    assert_eq!(gapcert(dir.path(), &["embed", "scalar", orig.to_str().unwrap()]), EXIT_OK);
    let embedded = std::fs::read_to_string(dir.path().join("embedded.csv")).unwrap();
    assert!(embedded.starts_with("s,w0,w_1,a_index,y0,y_1,nu\n0,0.5,0.5,0,0,0,0\n"), "{embedded}");

    let spec = bundled::scalar();
    let rows = bundled::averaging_rows(4)
        .into_iter()
        .map(|c| match c {
            IntervalControl::Relaxed(r) => r,
            IntervalControl::Single(_) => unreachable!(),
        })
        .collect();
    let rel = gapcert::relax::integrate_relaxed(&spec, rows, vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
    let rel_csv = dir.path().join("relaxed.csv");
    io::write_process_csv(&rel_csv, &rel).unwrap();
    assert_eq!(gapcert(dir.path(), &["chatter", "scalar", rel_csv.to_str().unwrap(), "--eta", "0.1"]), EXIT_OK);
    let chattered = io::read_process_csv(&dir.path().join("chattered.csv"), &spec).unwrap();
    assert!(chattered.states.iter().all(|z| z.y[0].abs() <= 0.05 + 1e-12));
}
