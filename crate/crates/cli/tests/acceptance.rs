//! Acceptance criterion 8: repeated `selftest` and `fit` runs with
//! identical inputs produce byte-identical outputs.

use std::path::Path;
use std::process::{Command, Output};

fn snv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snv"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[test]
fn criterion_8_determinism() {
    let dir = tempdir();

    let fixtures = dir.join("fixtures");
    let status = snv(&["gen-fixtures", "--out", fixtures.to_str().unwrap()], &dir);
    assert!(status.status.success(), "gen-fixtures failed: {status:?}");
    let datasets = fixtures.join("datasets");

    // two selftest runs: identical stdout and identical JSON report
    let self1 = snv(&["selftest", "--draws", "200", "--out", "st1"], &dir);
    let self2 = snv(&["selftest", "--draws", "200", "--out", "st2"], &dir);
    assert!(self1.status.success(), "selftest failed: {self1:?}");
    assert_eq!(self1.stdout, self2.stdout, "selftest stdout differs");
    assert_eq!(
        std::fs::read(dir.join("st1/selftest.json")).unwrap(),
        std::fs::read(dir.join("st2/selftest.json")).unwrap(),
        "selftest JSON differs"
    );

    // two fit runs over the bundled synthetic suite
    for out in ["fit1", "fit2"] {
        let run = snv(
            &[
                "fit",
                "--pipeline",
                datasets.to_str().unwrap(),
                "--out",
                out,
            ],
            &dir,
        );
        assert!(run.status.success(), "fit failed: {run:?}");
    }
    for name in ["fit_summary.json", "fit_summary.txt"] {
        assert_eq!(
            std::fs::read(dir.join("fit1").join(name)).unwrap(),
            std::fs::read(dir.join("fit2").join(name)).unwrap(),
            "{name} differs between runs"
        );
    }

    println!("PASS criterion 8: selftest and fit outputs byte-identical across reruns");
}

fn tempdir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "snv-acceptance-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
