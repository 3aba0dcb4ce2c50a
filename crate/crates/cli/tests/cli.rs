use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_factor-alloc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(
        &path,
        r#"
seed = 4

[domain]
dim = 1
side = 4.0
resolution = 32

[inputs]
mode = "independent"

[inputs.xi]
kind = "smoothed_density"
intensity = 3.0
center_intensity = 2.0
bandwidth = 0.3

[inputs.eta]
kind = "poisson"
intensity = 3.0
"#,
    )
    .unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("out");
    let o = run(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("branch = \"mutually_singular\""), "{stdout}");
    assert!(stdout.contains("PASS balance"), "{stdout}");
    for f in [
        "xi.txt",
        "eta.txt",
        "cost.txt",
        "plan.txt",
        "allocation.txt",
        "report.toml",
        "summary.toml",
        "histogram.txt",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let r = run(&["report", s(&out)]);
    assert!(r.status.success());
    assert!(String::from_utf8_lossy(&r.stdout).contains("balance_error"));
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["run", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(run(&["run", "--config", s(&cfg), "--out", s(&b)]).status.success());
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("g");
    let o = run(&[
        "generate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--resolution",
        "16",
        "--seed",
        "9",
    ]);
    assert!(o.status.success());
    let xi = fs::read_to_string(out.join("xi.txt")).unwrap();
    assert!(xi.starts_with("domain 1 4 16\n"), "{xi}");
    let forced = run(&["run", "--config", s(&cfg), "--out", s(&out), "--branch", "general"]);
    let text = String::from_utf8_lossy(&forced.stdout);
    assert!(text.contains("branch = "), "{text}");
}

#[test]
fn step_by_step_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("steps");
    assert!(run(&["generate", "--config", s(&cfg), "--out", s(&out)])
        .status
        .success());
    assert!(run(&["cost", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let (xi, eta, cost) = (out.join("xi.txt"), out.join("eta.txt"), out.join("cost.txt"));
    let alloc = run(&[
        "allocate",
        "--xi",
        s(&xi),
        "--eta",
        s(&eta),
        "--cost",
        s(&cost),
        "--out",
        s(&out),
    ]);
    assert!(alloc.status.success(), "{}", String::from_utf8_lossy(&alloc.stderr));
    let allocation = out.join("allocation.txt");
    let summary = out.join("summary.toml");
    let v = run(&[
        "verify",
        "--xi",
        s(&xi),
        "--eta",
        s(&eta),
        "--allocation",
        s(&allocation),
        "--cost",
        s(&cost),
        "--out",
        s(&summary),
    ]);
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stdout));
    assert!(summary.exists());

    // semicoupling from the heavier of the two files
    let xi_mass: f64 = mass(&xi);
    let eta_mass: f64 = mass(&eta);
    let (src, tgt) = if xi_mass >= eta_mass { (&xi, &eta) } else { (&eta, &xi) };
    let plan = out.join("plan.txt");
    let p = run(&[
        "solve",
        "--source",
        s(src),
        "--target",
        s(tgt),
        "--cost",
        s(&cost),
        "--out",
        s(&plan),
    ]);
    assert!(p.status.success(), "{}", String::from_utf8_lossy(&p.stderr));
    assert!(fs::read_to_string(&plan).unwrap().starts_with("source "));
}

fn mass(path: &Path) -> f64 {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().last().unwrap().parse::<f64>().unwrap())
        .sum()
}

#[test]
fn corrupted_allocation_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let xi = dir.path().join("xi.txt");
    let eta = dir.path().join("eta.txt");
    let alloc = dir.path().join("allocation.txt");
    fs::write(&xi, "domain 1 8 8\n0.5 1\n4.5 1\n").unwrap();
    fs::write(&eta, "domain 1 8 8\n1.5 1\n5.5 1\n").unwrap();
    fs::write(&alloc, "0 1.5 1\n1 5.5 1\n").unwrap();
    let args = |a: &Path| {
        run(&[
            "verify",
            "--xi",
            s(&xi),
            "--eta",
            s(&eta),
            "--allocation",
            s(a),
            "--slack",
            "0",
        ])
    };
    assert_eq!(args(&alloc).status.code(), Some(0));
    // second atom sent to the first target: distance 4 > budget 2
    fs::write(&alloc, "0 1.5 1\n1 1.5 1\n").unwrap();
    let bad = args(&alloc);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL balance"));
}

#[test]
fn errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = \"x\"\n").unwrap();
    let o = run(&["run", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let missing = run(&["generate", "--config", s(&config(dir.path()))]);
    assert_eq!(missing.status.code(), Some(2), "no output directory given");
}
