use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sedconc_cli::ExperimentConfig;

const TINY: &str = "\
preset = gaussian-desk
domain.width = 0.2
domain.height = 0.2
grid.fine_nx = 40
grid.fine_ny = 40
grid.coarse_nx = 20
grid.coarse_ny = 20
medium.epsilon = 0.01
profile.center_x = 0.1
profile.center_y = 0.1
profile.sigma = 0.04
acquisition.sources = 3
acquisition.receivers = 24
acquisition.record_t = 0.0004
seeds.realizations = 2
inversion.max_iterations = 400
inversion.gradient_tolerance = 1e-14
";

fn sedconc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sedconc"))
        .args(args)
        .output()
        .unwrap()
}

fn run_in(dir: &Path, config: &Path, args: &[&str]) -> String {
    let mut all = vec![
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ];
    all.extend_from_slice(args);
    let out = sedconc(&all);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_tiny(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY).unwrap();
    path
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn summary_value(path: &Path, key: &str) -> f64 {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .unwrap()
        .1
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn printed_config_reloads_to_the_same_config() {
    for preset in ["gaussian-desk", "chiu-desk"] {
        let out = sedconc(&["--preset", preset, "config"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, ExperimentConfig::preset(preset).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, &text).unwrap();
        let again = sedconc(&["--config", path.to_str().unwrap(), "config"]);
        assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    }
}

#[test]
fn unknown_profile_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    fs::write(&path, "preset = gaussian-desk\nprofile.kind = banana\n").unwrap();
    let out = sedconc(&["--config", path.to_str().unwrap(), "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("profile.kind"));
}

#[test]
fn unknown_preset_and_duplicate_keys_are_config_errors() {
    let out = sedconc(&["--preset", "nope", "config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("preset"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.cfg");
    fs::write(
        &path,
        "preset = chiu-desk\nmedium.c0 = 1500\nmedium.c0 = 1400\n",
    )
    .unwrap();
    let out = sedconc(&["--config", path.to_str().unwrap(), "config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("medium.c0"));
}

#[test]
fn invert_without_records_reports_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let out = sedconc(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
        "invert",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("forward"));
}

#[test]
fn reruns_produce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_in(out, &cfg, &["generate", "--realization", "1"]);
        run_in(out, &cfg, &["forward"]);
    }
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    assert!(fa.len() > 10);
    for f in &fa {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f:?}"
        );
    }
}

#[test]
fn seed_flag_changes_the_realizations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_in(&a, &cfg, &["generate"]);
    run_in(&b, &cfg, &["--seed", "7", "generate"]);
    let cloud = Path::new("realization_000").join("cloud.csv");
    assert_ne!(
        fs::read(a.join(&cloud)).unwrap(),
        fs::read(b.join(&cloud)).unwrap()
    );
    assert_eq!(
        fs::read(a.join("probability_fine.grd")).unwrap(),
        fs::read(b.join("probability_fine.grd")).unwrap()
    );
}

#[test]
fn inverse_crime_inversion_fits_the_data_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let out = dir.path().join("o");
    run_in(&out, &cfg, &["forward"]);
    run_in(
        &out,
        &cfg,
        &["invert", "--data", "effective", "--name", "crime"],
    );
    let inv = out.join("inversion").join("crime");
    let first = summary_value(&inv.join("summary.txt"), "initial_misfit");
    let last = summary_value(&inv.join("summary.txt"), "final_misfit");
    assert!(last < 1e-9 * first, "{first} -> {last}");
    let table = run_in(
        &out,
        &cfg,
        &[
            "estimate",
            "--model",
            inv.join("model.grd").to_str().unwrap(),
        ],
    );
    assert!(table.contains("plain"), "{table}");
    let csv = fs::read_to_string(out.join("estimate").join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}
