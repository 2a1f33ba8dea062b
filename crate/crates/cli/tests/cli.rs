use std::path::Path;
use std::process::{Command, Output};

use ic_align::io::{load_intensity, read_report_json, write_report_json, Report};
use ic_align::solver::{align, Family, Frame, SolverConfig};

fn ic_align(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ic-align"))
        .args(args)
        .env_remove("IC_ALIGN_THREADS")
        .output()
        .expect("spawn ic-align")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn gen(dir: &Path, family: &str, count: &str) {
    let out = ic_align(&["gen", "--family", family, "--count", count, "--seed", "5", "--out", s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn self_alignment_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "affine", "1");
    let t = dir.path().join("pair_0000_template.png");
    let report = dir.path().join("report.json");
    let out = ic_align(&["align", "--family", "affine", "--template", s(&t), "--image", s(&t), "--report", s(&report)]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("objective=0.000000e0"), "{stdout}");
    let r = read_report_json(&report).unwrap();
    assert_eq!(r.final_objective, 0.0);
}

#[test]
fn rigid_without_intrinsics_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "rigid", "1");
    let p = |f: &str| dir.path().join(format!("pair_0000_{f}.png"));
    let out = ic_align(&[
        "align",
        "--family",
        "rigid",
        "--template",
        s(&p("template")),
        "--image",
        s(&p("image")),
        "--template-depth",
        s(&p("template_depth")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--intrinsics"));
}

#[test]
fn rigid_alignment_from_files() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "rigid", "1");
    let p = |f: &str| dir.path().join(format!("pair_0000_{f}.png"));
    let out = ic_align(&[
        "align",
        "--family",
        "rigid",
        "--template",
        s(&p("template")),
        "--image",
        s(&p("image")),
        "--template-depth",
        s(&p("template_depth")),
        "--image-depth",
        s(&p("image_depth")),
        "--intrinsics",
        s(&dir.path().join("intrinsics.txt")),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let out = ic_align(&["align", "--family", "affine", "--template", "/nonexistent/a.png", "--image", "/nonexistent/b.png"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(ic_align(&["align", "--levels", "many"]).status.code(), Some(1));
    assert_eq!(ic_align(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ic_align(&["--help"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_ic-align"))
        .args(["selftest"])
        .env("IC_ALIGN_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for family in ["affine", "rigid"] {
        gen(&a.path().join(family), family, "3");
        gen(&b.path().join(family), family, "3");
        let mut names: Vec<_> = std::fs::read_dir(a.path().join(family))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() > 3);
        for name in names {
            let read = |d: &Path| std::fs::read(d.join(family).join(&name)).unwrap();
            assert_eq!(read(a.path()), read(b.path()), "{family}/{name:?}");
        }
    }
}

#[test]
fn selftest_passes() {
    let out = ic_align(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{stdout}");
}

#[test]
fn flags_override_config_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "affine", "1");
    let t = dir.path().join("pair_0000_template.png");
    let i = dir.path().join("pair_0000_image.png");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "family = \"affine\"\n[solver]\nlevels = 2\nmethod = \"lm_heuristic\"\n").unwrap();
    let report = dir.path().join("r.json");
    let run = |extra: &[&str]| {
        let mut args = vec!["align", "--template", s(&t), "--image", s(&i), "--report", s(&report)];
        args.extend_from_slice(extra);
        let out = ic_align(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        read_report_json(&report).unwrap()
    };
    let defaults = run(&["--family", "affine"]);
    assert_eq!(defaults.config, SolverConfig::default());
    let from_config = run(&["--config", s(&config)]);
    assert_eq!(from_config.config.levels, 2);
    assert_eq!(from_config.config.method.to_string(), "lm_heuristic");
    assert_eq!(from_config.config.iters_per_level, 3);
    let overridden = run(&["--config", s(&config), "--levels", "1", "--robust", "tukey"]);
    assert_eq!(overridden.config.levels, 1);
    assert_eq!(overridden.config.method.to_string(), "lm_heuristic");
    assert_eq!(overridden.trace.len(), 1);
    assert_eq!(overridden.config.robust.name(), "tukey");

    std::fs::write(&config, "lveels = 2\n").unwrap();
    let out = ic_align(&["align", "--config", s(&config), "--template", s(&t), "--image", s(&i)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_report_matches_library_call() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "affine", "1");
    let t = dir.path().join("pair_0000_template.png");
    let i = dir.path().join("pair_0000_image.png");
    let cli_report = dir.path().join("cli.json");
    let out = ic_align(&["align", "--family", "affine", "--template", s(&t), "--image", s(&i), "--report", s(&cli_report)]);
    assert!(out.status.success());

    let cfg = SolverConfig::default();
    let template = Frame::intensity(load_intensity(&t).unwrap());
    let image = Frame::intensity(load_intensity(&i).unwrap());
    let result = align(&template, &image, Family::Affine, &cfg).unwrap();
    let lib_report = dir.path().join("lib.json");
    write_report_json(&Report::new(&result, &cfg), &lib_report).unwrap();
    assert_eq!(std::fs::read(&cli_report).unwrap(), std::fs::read(&lib_report).unwrap());
}

#[test]
fn eval_writes_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "affine", "4");
    let out = ic_align(&["eval", "--manifest", s(&dir.path().join("manifest.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = ic_align::io::read_batch_csv(dir.path().join("eval.csv")).unwrap();
    let names: Vec<_> = rows.iter().map(|r| r.pair.as_str()).collect();
    assert_eq!(names, ["pair_0000", "pair_0001", "pair_0002", "pair_0003"]);
    assert!(rows.iter().all(|r| r.affine_l1.unwrap() < 1e-3));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("mean L1 error"), "{stdout}");
}

#[test]
fn eval_rejects_a_broken_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    std::fs::write(&manifest, "{\"schema_version\": 1}").unwrap();
    assert_eq!(ic_align(&["eval", "--manifest", s(&manifest)]).status.code(), Some(1));
}
