use std::path::Path;
use std::process::{Command, Output};

use flashmhf_cli::bench::CSV_HEADER;
use flashmhf_cli::container::load_params;
use flashmhf_cli::report::TABLE_HEADER;
use flashmhf_cli::train::ToyShape;

fn flashmhf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flashmhf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SHORT_TOY: [&str; 6] = ["--set", "steps=20", "--set", "train_seeds=1", "--set", "tokens=512"];

#[test]
fn default_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = flashmhf(&["check"], dir.path());
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.lines().skip(1).take(10).all(|l| l.starts_with("PASS ")), "{text}");
    assert!(text.ends_with("10/10 properties passed\n"));
}

#[test]
fn injected_dsilu_fault_fails_and_names_the_op() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["check", "--inject-fault", "dsilu"];
    args.extend(SHORT_TOY);
    let o = flashmhf(&args, dir.path());
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{text}");
    assert!(text.contains("FAIL gradcheck_op dsilu"), "{text}");
    assert!(text.contains("FAIL gradcheck_full"), "{text}");
    assert!(text.contains("PASS tiling_equivalence"), "{text}");
}

#[test]
fn same_seed_gives_identical_report_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["check", "--seed", "7"];
    args.extend(SHORT_TOY);
    let a = flashmhf(&args, dir.path());
    let b = flashmhf(&args, dir.path());
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("flashmhf check seed=7 "));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(flashmhf(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(flashmhf(&["check", "--precision", "half"], dir.path()).status.code(), Some(2));
    assert_eq!(flashmhf(&["bench", "--set", "reps=0"], dir.path()).status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nwat\n").unwrap();
    let o = flashmhf(&["check", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.cfg:2"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# quick sweep\nscale = 64\nreps = 1\nwarmups = 0\nseed = 3\n").unwrap();
    let o = flashmhf(&["bench", "--config", cfg.to_str().unwrap(), "--scale", "128"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    // Scale 128 puts the smallest L at 192/128 = 1 and d_h at 1.
    assert!(text.lines().nth(1).unwrap().starts_with("flashmhf,1,16,16,22,3,1,"), "{text}");
}

#[test]
fn bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = flashmhf(&["bench", "--scale", "64", "--set", "reps=1", "--set", "warmups=0", "--precision", "single"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 1 + 27);
    assert!(!csv.contains(",fail"));

    let bench = dir.path().join("bench.csv");
    let o = flashmhf(&["report", bench.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert_eq!(md, stdout(&o));
    assert!(md.contains(TABLE_HEADER));
    assert_eq!(md.lines().filter(|l| l.starts_with("| flashmhf |")).count(), 9);
    let merged = std::fs::read_to_string(dir.path().join("merged.csv")).unwrap();
    assert_eq!(merged.lines().count(), 28);
}

#[test]
fn report_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let o = flashmhf(&["report"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains(TABLE_HEADER));
    let o = flashmhf(&["report", "/missing/one.csv", "/missing/two.csv"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("/missing/one.csv") && err.contains("/missing/two.csv"), "{err}");
}

#[test]
fn train_toy_writes_logs_and_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let o = flashmhf(&["train-toy", "--seed", "5", "--set", "steps=10", "--set", "train_seeds=1", "--set", "tokens=256"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout(&o);
    assert_eq!(summary.lines().count(), 5);
    for m in ["flashmhf,5,14400,", "swiglu,5,14400,", "naive_mhffn,5,14432,", "pkv,5,14400,"] {
        assert!(summary.contains(m), "{summary}");
    }
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4 * 10);
    let dims = ToyShape::default().flash_dims().unwrap();
    load_params::<f64>(&dir.path().join("flashmhf_seed5.fmhf"), &dims).unwrap();
}

#[test]
fn divergence_is_flagged_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = flashmhf(&["train-toy", "--set", "lr=50", "--set", "steps=30", "--set", "train_seeds=1", "--set", "tokens=256"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains(",true"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}
