use std::f64::consts::PI;
use std::process::{Command, Output};

fn pathwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathwise"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Rows as (header, records) with every cell kept as text.
fn parse(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    assert!(csv.ends_with('\n') && !csv.contains('\r'));
    let mut lines = csv.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    for r in &rows {
        assert_eq!(r.len(), header.len());
    }
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn levy_reproduces_lacunary_area() {
    let (h, rows) = parse(&stdout(&pathwise(&[
        "levy",
        "--alpha",
        "0.5",
        "--m",
        "4",
        "--grid-log2",
        "16",
    ])));
    assert_eq!(rows.len(), 1);
    let area: f64 = rows[0][column(&h, "area_12")].parse().unwrap();
    let predicted: f64 = rows[0][column(&h, "predicted")].parse().unwrap();
    assert!((predicted + 8.0 * PI).abs() < 1e-12);
    assert!(((area + 8.0 * PI) / (8.0 * PI)).abs() <= 0.01);
    let rel: f64 = rows[0][column(&h, "rel_err")].parse().unwrap();
    assert!(rel <= 0.01);
}

#[test]
fn integrate_identity_left_point() {
    let csv = stdout(&pathwise(&[
        "integrate",
        "--path",
        "smooth:t",
        "--gamma",
        "0",
        "--levels",
        "1..10",
    ]));
    let (h, rows) = parse(&csv);
    assert_eq!(rows.len(), 10);
    let last: f64 = rows[9][column(&h, "value")].parse().unwrap();
    let n = 1024.0;
    // sum_{i<n} (i/n)(1/n) = (n-1)/(2n)
    assert_eq!(last, (n - 1.0) / (2.0 * n));
}

#[test]
fn bad_gamma_exits_two_naming_the_flag() {
    let out = pathwise(&["integrate", "--gamma", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--gamma"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn other_validation_failures_exit_two() {
    for args in [
        vec!["qv", "--grid-log2", "6", "--levels", "0..6"],
        vec!["qv", "--grid-log2", "6", "--levels", "2..7"],
        vec!["levy", "--alpha", "1.2"],
        vec!["levy", "--path", "brownian"],
        vec!["functional-ito", "--t", "0.3", "--grid-log2", "4"],
        vec!["variation", "--p", "0.5"],
        vec!["integrate", "--path", "fbm"],
    ] {
        let out = pathwise(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn incoherent_sewing_exits_three() {
    let out = pathwise(&["sewing", "--path", "brownian", "--grid-log2", "8"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("premise"));
}

#[test]
fn sewing_of_identity() {
    let (h, rows) = parse(&stdout(&pathwise(&[
        "sewing",
        "--grid-log2",
        "10",
        "--levels",
        "10",
    ])));
    let raw: f64 = rows[0][column(&h, "phi_end")].parse().unwrap();
    let ex: f64 = rows[0][column(&h, "phi_end_extrapolated")].parse().unwrap();
    assert_eq!(raw, 0.5 - 0.5 / 1024.0);
    assert!((ex - 0.5).abs() < 1e-14);
    assert_eq!(rows[0][column(&h, "certificate_holds")], "true");
}

#[test]
fn same_config_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for target in [&a, &b] {
        let out = pathwise(&[
            "control-check",
            "--seed",
            "7",
            "--grid-log2",
            "9",
            "--levels",
            "6..9",
            "--out",
            target.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        assert!(out.stdout.is_empty());
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!x.is_empty());
    assert_eq!(x, y);
    let other = stdout(&pathwise(&[
        "control-check",
        "--seed",
        "8",
        "--grid-log2",
        "9",
        "--levels",
        "6..9",
    ]));
    assert_ne!(other.as_bytes(), &x[..]);
}

#[test]
fn floats_round_trip() {
    let csv = stdout(&pathwise(&[
        "qv",
        "--grid-log2",
        "10",
        "--levels",
        "10",
        "--seed",
        "3",
    ]));
    let (h, rows) = parse(&csv);
    let cell = &rows[0][column(&h, "bracket_end")];
    let v: f64 = cell.parse().unwrap();
    assert_eq!(&format!("{v:?}"), cell);
    assert!(cell.len() > 10);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# experiment\ncommand = integrate\npath = smooth:t\ngamma = 1\nlevels = 1..4\n",
    )
    .unwrap();
    let from_file = stdout(&pathwise(&["--config", cfg.to_str().unwrap()]));
    let (h, rows) = parse(&from_file);
    assert_eq!(rows.len(), 4);
    let right: f64 = rows[3][column(&h, "value")].parse().unwrap();
    assert_eq!(right, 0.5 + 0.5 / 16.0);
    let overridden = stdout(&pathwise(&[
        "integrate",
        "--config",
        cfg.to_str().unwrap(),
        "--gamma",
        "0.5",
    ]));
    let (h, rows) = parse(&overridden);
    assert_eq!(rows[3][column(&h, "value")], "0.5");

    std::fs::write(&cfg, "command = integrate\n\ngamma = 3\n").unwrap();
    let out = pathwise(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("gamma"), "{err}");
}

#[test]
fn every_command_writes_a_header() {
    let runs: [&[&str]; 8] = [
        &["levy", "--grid-log2", "10", "--m", "2"],
        &["integrate", "--grid-log2", "6"],
        &["variation", "--grid-log2", "6"],
        &["control-check", "--grid-log2", "8", "--levels", "6..8"],
        &["qv", "--grid-log2", "6", "--path", "brownian:2"],
        &[
            "ito-check",
            "--grid-log2",
            "6",
            "--path",
            "brownian:2",
            "--functional",
            "half-norm",
        ],
        &[
            "functional-ito",
            "--grid-log2",
            "6",
            "--functional",
            "integral:identity:terminal",
        ],
        &["sewing", "--grid-log2", "6", "--path", "smooth:t2"],
    ];
    for args in runs {
        let (h, rows) = parse(&stdout(&pathwise(args)));
        assert_eq!(h[0], "level", "{args:?}");
        assert!(!rows.is_empty(), "{args:?}");
    }
}

#[test]
fn terminal_dirac_functional_telescopes() {
    let csv = stdout(&pathwise(&[
        "functional-ito",
        "--grid-log2",
        "8",
        "--levels",
        "1..8",
        "--functional",
        "integral:identity:terminal",
        "--t",
        "0.75",
    ]));
    let (h, rows) = parse(&csv);
    for r in rows {
        let res: f64 = r[column(&h, "residual")].parse().unwrap();
        assert!(res < 1e-12);
    }
}
