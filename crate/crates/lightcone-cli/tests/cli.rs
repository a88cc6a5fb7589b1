//! End-to-end tests of the command-line interface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lightcone")
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn lightcone")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth_small(dir: &Path, out: &str) -> PathBuf {
    let status = run(
        &[
            "synth",
            "--kind",
            "k_regime",
            "--K",
            "2",
            "--frames",
            "12",
            "--height",
            "24",
            "--width",
            "24",
            "--noise",
            "0.05",
            "--seed",
            "3",
            "--out",
            out,
        ],
        dir,
    );
    assert_exit(&status, 0);
    dir.join(out).join("field.stf1")
}

#[test]
fn help_exits_zero_and_names_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["--help"], tmp.path());
    assert_exit(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["fit", "predict", "eval", "synth", "bounds", "extract"] {
        assert!(text.contains(sub), "help is missing `{sub}`");
    }
}

#[test]
fn parse_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_exit(&run(&["frobnicate"], tmp.path()), 2);
    assert_exit(&run(&["fit", "--no-such-flag"], tmp.path()), 2);
}

#[test]
fn missing_required_options_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let field = synth_small(tmp.path(), "data");
    let field = field.to_str().unwrap();
    // No method.
    let out = run(&["fit", "--input", field, "--out", "m"], tmp.path());
    assert_exit(&out, 2);
    // No input.
    let out = run(&["fit", "--method", "ohp", "--out", "m"], tmp.path());
    assert_exit(&out, 2);
    // No out.
    let out = run(&["fit", "--input", field, "--method", "ohp"], tmp.path());
    assert_exit(&out, 2);
}

#[test]
fn unknown_config_key_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "method = ohp\nbogus_key = 1\n").unwrap();
    let out = run(
        &["fit", "--config", "bad.cfg", "--input", "x.stf1", "--out", "m"],
        tmp.path(),
    );
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn malformed_config_line_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "method ohp\n").unwrap();
    let out = run(
        &["fit", "--config", "bad.cfg", "--input", "x.stf1", "--out", "m"],
        tmp.path(),
    );
    assert_exit(&out, 2);
}

#[test]
fn missing_and_corrupt_data_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &["fit", "--input", "absent.stf1", "--method", "ohp", "--out", "m"],
        tmp.path(),
    );
    assert_exit(&out, 3);
    std::fs::write(tmp.path().join("junk.stf1"), b"not a field at all").unwrap();
    let out = run(
        &["fit", "--input", "junk.stf1", "--method", "ohp", "--out", "m"],
        tmp.path(),
    );
    assert_exit(&out, 3);
}

#[test]
fn reserved_method_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let field = synth_small(tmp.path(), "data");
    let out = run(
        &[
            "fit",
            "--input",
            field.to_str().unwrap(),
            "--method",
            "mixed_licors",
            "--out",
            "m",
        ],
        tmp.path(),
    );
    assert_exit(&out, 4);
    let out = run(
        &[
            "eval",
            "--input",
            field.to_str().unwrap(),
            "--methods",
            "fltp,mixed_licors",
            "--out",
            "e",
        ],
        tmp.path(),
    );
    assert_exit(&out, 4);
}

#[test]
fn cli_flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let field = synth_small(tmp.path(), "data");
    std::fs::write(
        tmp.path().join("fit.cfg"),
        format!(
            "input = {}\nmethod = ohp\nk = 2\nbudget = 900\nseed = 5\n",
            field.display()
        ),
    )
    .unwrap();
    let out = run(
        &["fit", "--config", "fit.cfg", "--out", "a", "--budget", "400"],
        tmp.path(),
    );
    assert_exit(&out, 0);
    let cfg = std::fs::read_to_string(tmp.path().join("a/config.txt")).unwrap();
    assert!(cfg.contains("budget = 400"), "flag should win: {cfg}");
    assert!(cfg.contains("seed = 5"), "file value should survive: {cfg}");
}

#[test]
fn config_record_replays_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let field = synth_small(tmp.path(), "data");
    let out = run(
        &[
            "fit",
            "--input",
            field.to_str().unwrap(),
            "--method",
            "moonshine",
            "--k-max",
            "3",
            "--budget",
            "800",
            "--seed",
            "11",
            "--out",
            "first",
        ],
        tmp.path(),
    );
    assert_exit(&out, 0);
    let out = run(
        &["fit", "--config", "first/config.txt", "--out", "second"],
        tmp.path(),
    );
    assert_exit(&out, 0);
    let a = std::fs::read(tmp.path().join("first/model.lcsm")).unwrap();
    let b = std::fs::read(tmp.path().join("second/model.lcsm")).unwrap();
    assert_eq!(a, b, "replayed model differs");
}

#[test]
fn config_record_rejects_other_command() {
    let tmp = tempfile::tempdir().unwrap();
    let field = synth_small(tmp.path(), "data");
    let out = run(
        &[
            "extract",
            "--input",
            field.to_str().unwrap(),
            "--out",
            "ext",
            "--budget",
            "5",
        ],
        tmp.path(),
    );
    assert_exit(&out, 0);
    // An extract record replayed through fit must be refused.
    let out = run(
        &["fit", "--config", "ext/config.txt", "--out", "m"],
        tmp.path(),
    );
    assert_exit(&out, 2);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let field = synth_small(tmp.path(), "data");
    let field = field.to_str().unwrap();
    for (dir, threads) in [("t1", "1"), ("t4", "4")] {
        let out = run(
            &[
                "eval",
                "--input",
                field,
                "--protocol",
                "frame",
                "--methods",
                "ohp,lclr",
                "--k",
                "2",
                "--skip",
                "3",
                "--budget",
                "700",
                "--bootstrap",
                "80",
                "--seed",
                "13",
                "--threads",
                threads,
                "--out",
                dir,
            ],
            tmp.path(),
        );
        assert_exit(&out, 0);
    }
    let a = std::fs::read(tmp.path().join("t1/metrics.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("t4/metrics.csv")).unwrap();
    assert_eq!(a, b, "metrics differ across thread counts");
}

#[test]
fn predict_writes_field_and_pgm_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let field = synth_small(tmp.path(), "data");
    let field = field.to_str().unwrap();
    let out = run(
        &[
            "fit", "--input", field, "--method", "ohp", "--k", "2", "--budget", "800", "--out",
            "m",
        ],
        tmp.path(),
    );
    assert_exit(&out, 0);
    let out = run(
        &[
            "predict",
            "--model",
            "m/model.lcsm",
            "--input",
            field,
            "--frame",
            "6",
            "--bootstrap",
            "80",
            "--out",
            "p",
        ],
        tmp.path(),
    );
    assert_exit(&out, 0);
    for name in [
        "prediction.stf1",
        "abs_error.stf1",
        "err_pct.stf1",
        "mask.stf1",
        "prediction.pgm",
        "abs_error.pgm",
        "err_pct.pgm",
        "metrics.csv",
        "config.txt",
    ] {
        assert!(tmp.path().join("p").join(name).exists(), "missing {name}");
    }
    let pgm = std::fs::read(tmp.path().join("p/prediction.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n24 24\n255\n"), "bad PGM header");
    assert_eq!(pgm.len(), b"P5\n24 24\n255\n".len() + 24 * 24);
    let metrics = std::fs::read_to_string(tmp.path().join("p/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,K_max,MSE,MSE_CI_lo,MSE_CI_hi,rho,rho_CI_lo,rho_CI_hi,\
         avg_ll,ll_CI_lo,ll_CI_hi,perplexity,fold"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("ohp,2,"), "unexpected row: {row}");
}

#[test]
fn bounds_reports_no_violations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "bounds",
            "--check",
            "both",
            "--trials",
            "400",
            "--mc-trials",
            "250",
            "--support",
            "20",
            "--out",
            "b",
        ],
        tmp.path(),
    );
    assert_exit(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("0 violations"), "stdout: {text}");
    let csv = std::fs::read_to_string(tmp.path().join("b/concentration.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",true"), "failing grid point: {line}");
    }
}

#[test]
fn extract_respects_geometry_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let field = synth_small(tmp.path(), "data");
    let out = run(
        &[
            "extract",
            "--input",
            field.to_str().unwrap(),
            "--h-p",
            "2",
            "--h-f",
            "1",
            "--c",
            "1",
            "--norm",
            "euclidean",
            "--budget",
            "4",
            "--out",
            "ext2",
        ],
        tmp.path(),
    );
    assert_exit(&out, 0);
    let csv = std::fs::read_to_string(tmp.path().join("ext2/cones.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    // h_p = 2, c = 1, euclidean: 5 + 13 predictor cells; h_f = 1: 1 + 5 targets.
    assert_eq!(header.matches("plc_").count(), 18);
    assert_eq!(header.matches("flc_").count(), 6);
    assert_eq!(csv.lines().count(), 5);
}
