use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hybridcorr::io::read_matrix_csv;
use hybridcorr::psd::{is_psd, DEFAULT_PSD_TOL};
use hybridcorr::study::read_table_csv;
use tempfile::TempDir;

const G2_HESTON: &str = r#"
[[components]]
kind = "g2"
a = 0.1
b = 0.2
sigma = 0.01
eta = 0.02
rho_xy = 0.5

[[components]]
kind = "heston"
kappa = 1.0
theta = 0.2
xi = 0.3
v0 = 0.1
rho_sv = -0.8

[tenors]
g2 = [10.0, 30.0]

[[cross_blocks]]
i = 0
j = 1
values = [[0.1, -0.2], [0.3, -0.4]]

[simulation]
n = 20000
dt = 0.004
seed = 11
rate_observable = "martingale_loading"
"#;

const TWO_EQUITIES: &str = r#"
[[components]]
kind = "heston"
kappa = 1.0
theta = 0.2
xi = 0.3
v0 = 0.1
rho_sv = 0.9

[[components]]
kind = "heston"
kappa = 1.0
theta = 0.2
xi = 0.3
v0 = 0.1
rho_sv = 0.9

[bindings]
"c0.s" = "spx"
"c0.v" = "spx_var"
"c1.s" = "sx5e"
"c1.v" = "sx5e_var"
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hybridcorr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// Panel whose equity increments are ±the same driver, so the draft is indefinite
/// against inner correlations of 0.9.
fn contradictory_panel() -> String {
    let mut text = String::from("t,spx,spx_var,sx5e,sx5e_var\n");
    let mut level = 0.0;
    for k in 0..200 {
        level += (k as f64 * 1.7).sin();
        let _ = std::fmt::Write::write_fmt(
            &mut text,
            format_args!("{},{level},{level},{level},{}\n", k as f64 / 250.0, -level),
        );
    }
    text
}

#[test]
fn simulated_panel_round_trips_through_estimation() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sys.toml", G2_HESTON);
    let panel = p(dir.path(), "panel.csv");
    let out = p(dir.path(), "out");
    assert!(run(&["simulate", "--config", &cfg, "--out", &panel])
        .status
        .success());
    let o = run(&[
        "estimate", "--config", &cfg, "--panel", &panel, "--out", &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let repaired = read_matrix_csv(
        fs::File::open(dir.path().join("out/repaired.csv")).unwrap(),
        None,
    )
    .unwrap();
    let truth = [[0.1, -0.2], [0.3, -0.4]];
    for (r, row) in truth.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            let err = (repaired.get(r, 2 + c) - want).abs();
            assert!(err < 0.04, "entry ({r},{c}) off by {err}");
        }
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["block_sizes"], serde_json::json!([2, 2]));
    assert!(report["repair"]["alpha_star"].is_number());
    assert!(report["pairs"][0]["condition_numbers"][0].as_f64().unwrap() > 1.0);
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sys.toml", G2_HESTON);
    let (a, b) = (p(dir.path(), "a.csv"), p(dir.path(), "b.csv"));
    assert!(
        run(&["simulate", "--config", &cfg, "--out", &a, "--n", "500"])
            .status
            .success()
    );
    assert!(
        run(&["simulate", "--config", &cfg, "--out", &b, "--n", "500"])
            .status
            .success()
    );
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let (o1, o2) = (p(dir.path(), "o1"), p(dir.path(), "o2"));
    assert!(
        run(&["estimate", "--config", &cfg, "--panel", &a, "--out", &o1])
            .status
            .success()
    );
    assert!(
        run(&["estimate", "--config", &cfg, "--panel", &a, "--out", &o2])
            .status
            .success()
    );
    for f in ["draft.csv", "repaired.csv", "report.json"] {
        assert_eq!(
            fs::read(dir.path().join("o1").join(f)).unwrap(),
            fs::read(dir.path().join("o2").join(f)).unwrap()
        );
    }
}

#[test]
fn missing_bound_column_is_a_parse_error_naming_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "eq.toml", TWO_EQUITIES);
    let panel = contradictory_panel().replace("sx5e_var", "other");
    let panel = write(
        dir.path(),
        "panel.csv",
        &panel.replacen(",other", ",c1.iv", 1),
    );
    let o = run(&[
        "estimate",
        "--config",
        &cfg,
        "--panel",
        &panel,
        "--out",
        &p(dir.path(), "out"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sx5e_var"), "{}", stderr(&o));
}

#[test]
fn repair_switch_controls_the_not_psd_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "eq.toml", TWO_EQUITIES);
    let panel = write(dir.path(), "panel.csv", &contradictory_panel());

    let off = p(dir.path(), "off");
    let o = run(&[
        "estimate",
        "--config",
        &cfg,
        "--panel",
        &panel,
        "--out",
        &off,
        "--no-repair",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("not PSD"));
    assert!(dir.path().join("off/draft.csv").exists());
    assert!(!dir.path().join("off/repaired.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("off/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["flags"], serde_json::json!(["not PSD"]));
    assert_eq!(report["draft"]["psd"], serde_json::json!(false));

    let on = p(dir.path(), "on");
    assert!(
        run(&["estimate", "--config", &cfg, "--panel", &panel, "--out", &on])
            .status
            .success()
    );
    let draft = read_matrix_csv(
        fs::File::open(dir.path().join("on/draft.csv")).unwrap(),
        None,
    )
    .unwrap();
    let fixed = read_matrix_csv(
        fs::File::open(dir.path().join("on/repaired.csv")).unwrap(),
        None,
    )
    .unwrap();
    assert!(is_psd(fixed.entries(), DEFAULT_PSD_TOL));
    for b in 0..2 {
        assert_eq!(fixed.block(b, b), draft.block(b, b));
    }
}

#[test]
fn unobserved_variance_is_completed() {
    let dir = TempDir::new().unwrap();
    let text = TWO_EQUITIES.replace(
        "[bindings]",
        "[pipeline]\nunobserved_variance = [1]\n\n[bindings]",
    );
    let cfg = write(dir.path(), "eq.toml", &text);
    let panel = write(dir.path(), "panel.csv", &contradictory_panel());
    let o = run(&[
        "estimate",
        "--config",
        &cfg,
        "--panel",
        &panel,
        "--out",
        &p(dir.path(), "out"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/completed.csv").exists());

    let o = run(&[
        "estimate",
        "--config",
        &cfg,
        "--panel",
        &panel,
        "--out",
        &p(dir.path(), "x"),
        "--no-complete",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn unbound_variance_must_be_marked_unobserved() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "eq.toml",
        &TWO_EQUITIES.replace("\"c1.v\" = \"sx5e_var\"\n", ""),
    );
    let panel = write(
        dir.path(),
        "panel.csv",
        &contradictory_panel().replacen("sx5e_var", "c9.v", 1),
    );
    let o = run(&[
        "estimate",
        "--config",
        &cfg,
        "--panel",
        &panel,
        "--out",
        &p(dir.path(), "out"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unobserved_variance"), "{}", stderr(&o));
}

#[test]
fn repair_command_reports_and_rejects_bad_blocks() {
    let dir = TempDir::new().unwrap();
    let m = ",a.0,b.0,c.0\na.0,1,0.9,0.9\nb.0,0.9,1,-0.9\nc.0,0.9,-0.9,1\n";
    let path = write(dir.path(), "m.csv", m);
    let out = p(dir.path(), "out");
    let o = run(&["repair", &path, "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    let alpha = report["result"]["alpha_star"].as_f64().unwrap();
    assert!(alpha > 0.0 && alpha < 1.0);
    assert_eq!(report["block_sizes"], serde_json::json!([1, 1, 1]));
    let fixed = read_matrix_csv(
        fs::File::open(dir.path().join("out/repaired.csv")).unwrap(),
        None,
    )
    .unwrap();
    assert!(is_psd(fixed.entries(), DEFAULT_PSD_TOL));

    let o = run(&["repair", &path, "--blocks", "3"]);
    assert_eq!(o.status.code(), Some(4));

    let o = run(&[
        "repair",
        &write(dir.path(), "bad.csv", ",a.0,b.0\na.0,1,0.2\nb.0,0.3,1\n"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn study_output_is_reproducible_csv() {
    let args = [
        "study", "--preset", "g2g2", "--n", "100", "--n", "200", "--trials", "40", "--format",
        "csv", "--seed", "5",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let records = read_table_csv(&String::from_utf8(a.stdout).unwrap()).unwrap();
    assert_eq!(records.len(), 8);
    assert!(records.iter().all(|r| r.n_trials == 40 && r.failures == 0));
}

#[test]
fn study_with_constant_rate_fails_with_exit_three() {
    let dir = TempDir::new().unwrap();
    let text = r#"
[[components]]
kind = "g1"
a = 0.1
sigma = 1e-300

[[components]]
kind = "heston"
kappa = 1.0
theta = 0.2
xi = 0.3
v0 = 0.1
rho_sv = -0.8

[[cross_blocks]]
i = 0
j = 1
values = [[0.1, 0.0]]
"#;
    let cfg = write(dir.path(), "s.toml", text);
    let o = run(&["study", "--config", &cfg, "--n", "50", "--trials", "20"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.toml", "[[components]]\nkind = \"g3\"\n");
    assert_eq!(run(&["coeffs", "--config", &bad]).status.code(), Some(2));
    assert_eq!(
        run(&["study", "--preset", "nope", "--n", "10", "--trials", "4"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["simulate", "--config", &p(dir.path(), "absent.toml")])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn indefinite_simulation_matrix_exits_with_four() {
    let dir = TempDir::new().unwrap();
    let text = G2_HESTON.replace("[[0.1, -0.2], [0.3, -0.4]]", "[[0.9, -0.9], [0.9, -0.9]]");
    let cfg = write(dir.path(), "sys.toml", &text);
    let o = run(&["simulate", "--config", &cfg, "--n", "10"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn coeffs_prints_the_coefficient_system() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sys.toml", G2_HESTON);
    let o = run(&["coeffs", "--config", &cfg]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("pair (0, 1)"));
    assert!(text.contains("R[10.0]") && text.contains("R[30.0]"));
}
