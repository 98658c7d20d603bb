use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn fixture(name: &str) -> PathBuf {
    Path::new(FIXTURES).join(name)
}

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cold<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_cold"))
        .args(args)
        .env_remove("COLD_WORKERS")
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_column(path: &Path, col: usize) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

fn toy_dir() -> TempDir {
    let dir = TempDir::new().unwrap();
    for name in [
        "toy_config.json",
        "toy_encodings.csv",
        "toy_predictor.json",
        "toy_decoder.json",
    ] {
        fs::copy(fixture(name), dir.path().join(name)).unwrap();
    }
    dir
}

fn edit_config(dir: &Path, f: impl FnOnce(&mut Value)) -> PathBuf {
    let path = dir.join("toy_config.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn density_args<'a>(out: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let enc = fixture("encodings_2d.csv");
    let pts = fixture("points_2d.csv");
    let mut args: Vec<String> = vec![
        "density".into(),
        "--encodings".into(),
        s(&enc).into(),
        "--points".into(),
        s(&pts).into(),
        "--out".into(),
        s(out).into(),
    ];
    args.extend(extra.iter().map(|a| a.to_string()));
    args
}

#[test]
fn density_exact_matches_oracle_fixture() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.csv");
    let r = cold(density_args(&out, &[]));
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("point_index,log_density\n"));
    let ours: String = std::iter::once("point_index,log_density".to_string())
        .chain(text.lines().skip(1).map(|l| {
            let (i, v) = l.split_once(',').unwrap();
            format!("{i},{:.11e}", v.parse::<f64>().unwrap())
        }))
        .map(|l| l + "\n")
        .collect();
    assert_eq!(ours, fs::read_to_string(fixture("density_2d_oracle.csv")).unwrap());
}

#[test]
fn density_knn_full_k_equals_exact() {
    let dir = TempDir::new().unwrap();
    let exact = dir.path().join("e.csv");
    let knn = dir.path().join("k.csv");
    assert_eq!(cold(density_args(&exact, &[])).code, 0);
    assert_eq!(cold(density_args(&knn, &["--mode", "knn", "--k", "5"])).code, 0);
    for (a, b) in read_column(&knn, 1).iter().zip(read_column(&exact, 1)) {
        assert!((a - b).abs() / b.abs().max(1.0) < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn density_knn_with_saved_index() {
    let dir = TempDir::new().unwrap();
    let idx = dir.path().join("means.hnsw");
    let enc = fixture("encodings_2d.csv");
    let r = cold(["index", "--encodings", s(&enc), "--out", s(&idx)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let exact = dir.path().join("e.csv");
    let knn = dir.path().join("k.csv");
    assert_eq!(cold(density_args(&exact, &[])).code, 0);
    let r = cold(density_args(&knn, &["--mode", "knn", "--k", "5", "--index", s(&idx)]));
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(read_column(&knn, 1).len(), 10);

    // an index over other means is rejected
    let other = dir.path().join("other.hnsw");
    assert_eq!(
        cold(["index", "--encodings", s(&fixture("toy_encodings.csv")), "--out", s(&other)]).code,
        0
    );
    let r = cold(density_args(&knn, &["--mode", "knn", "--k", "5", "--index", s(&other)]));
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn density_flag_misuse_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.csv");
    for extra in [
        &["--mode", "knn"][..],
        &["--k", "2"],
        &["--mode", "knn", "--k", "0"],
        &["--mode", "knn", "--k", "6"],
        &["--mode", "knn", "--k", "5", "--ef", "4"],
        &["--mode", "fuzzy"],
        &["--mode", "knn", "--k", "2", "--m", "1"],
        &["--unknown"],
    ] {
        let r = cold(density_args(&out, extra));
        assert_eq!(r.code, 1, "{extra:?}: {}", r.stderr);
        assert!(!out.exists());
    }
    let r = cold(["density", "--points", s(&fixture("points_2d.csv"))]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("Usage"), "{}", r.stderr);
}

#[test]
fn density_malformed_inputs_are_data_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.csv");
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "mu_0,var_0\n1.0,-1.0\n").unwrap();
    let pts3 = dir.path().join("p3.csv");
    fs::write(&pts3, "a,b,c\n1,2,3\n").unwrap();
    let pts_bin = dir.path().join("pts.bin");
    let sample = cold(["sample", "--dim", "2", "--count", "3", "--b", "1", "--seed", "1", "--out", s(&pts_bin)]);
    assert_eq!(sample.code, 0);
    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"COLDENC1\x01").unwrap();
    let cases: Vec<(PathBuf, PathBuf)> = vec![
        (bad.clone(), fixture("points_2d.csv")),
        (dir.path().join("missing.csv"), fixture("points_2d.csv")),
        (fixture("encodings_2d.csv"), pts3),
        (fixture("encodings_2d.csv"), dir.path().join("missing.bin")),
        // a points file where encodings are expected
        (pts_bin.clone(), fixture("points_2d.csv")),
        (garbage, fixture("points_2d.csv")),
    ];
    for (enc, pts) in cases {
        let r = cold([
            "density",
            "--encodings",
            s(&enc),
            "--points",
            s(&pts),
            "--out",
            s(&out),
        ]);
        assert_eq!(r.code, 2, "{enc:?} {pts:?}: {}", r.stderr);
    }
    let r = cold(["density", "--encodings", s(&pts_bin), "--points", s(&pts_bin), "--out", s(&out)]);
    assert!(r.stderr.contains("found a points file"), "{}", r.stderr);
}

#[test]
fn sample_is_reproducible_and_validated() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let c = dir.path().join("c.bin");
    let args = |p: &Path, seed: &str| {
        vec![
            "sample".to_string(),
            "--dim".into(),
            "3".into(),
            "--count".into(),
            "50".into(),
            "--b".into(),
            "4".into(),
            "--seed".into(),
            seed.into(),
            "--out".into(),
            s(p).into(),
        ]
    };
    assert_eq!(cold(args(&a, "9")).code, 0);
    assert_eq!(cold(args(&b, "9")).code, 0);
    assert_eq!(cold(args(&c, "10")).code, 0);
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    assert_ne!(bytes, fs::read(&c).unwrap());
    assert_eq!(&bytes[..8], b"COLDPTS1");
    assert_eq!(bytes.len(), 16 + 50 * 3 * 8);

    for (flag, value) in [("--count", "0"), ("--b", "0"), ("--b", "-1"), ("--dim", "0"), ("--count", "x")] {
        let mut v = args(&a, "1");
        let i = v.iter().position(|x| x == flag).unwrap();
        v[i + 1] = value.into();
        assert_eq!(cold(&v).code, 1, "{flag} {value}");
    }
}

#[test]
fn b_sweep_variances_scale() {
    let dir = TempDir::new().unwrap();
    let enc = fixture("toy_encodings.csv");
    for b in [1.0, 2.0, 4.0, 8.0] {
        let pts = dir.path().join(format!("p{b}.bin"));
        let bs = b.to_string();
        let r = cold(["sample", "--dim", "2", "--count", "20000", "--b", &bs, "--seed", "3", "--out", s(&pts)]);
        assert_eq!(r.code, 0);
        // the log-density of N(0, I) along the samples recovers E‖x‖² = 2b
        let out = dir.path().join("d.csv");
        assert_eq!(cold(["density", "--encodings", s(&enc), "--points", s(&pts), "--out", s(&out)]).code, 0);
        let ld = read_column(&out, 1);
        let norm2: f64 = ld.iter().map(|l| -2.0 * (l + (2.0 * std::f64::consts::PI).ln())).sum::<f64>() / ld.len() as f64;
        assert!((norm2 / (2.0 * b) - 1.0).abs() < 0.05, "b = {b}: {norm2}");
    }
}

#[test]
fn optimize_matches_golden_and_closed_form() {
    let dir = toy_dir();
    let r = cold(["optimize", "--config", s(&dir.path().join("toy_config.json"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let report = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(report, fs::read_to_string(fixture("toy_report.golden.json")).unwrap());
    let starts = fs::read_to_string(dir.path().join("starts.csv")).unwrap();
    assert_eq!(starts, fs::read_to_string(fixture("toy_starts.golden.csv")).unwrap());

    // the best value of z₀ + z₁/2 over ‖z‖² ≤ −2(η + log 2π) is r·‖c‖
    let r2 = -2.0 * (-3.0 + (2.0 * std::f64::consts::PI).ln());
    let analytic = r2.sqrt() * 1.25f64.sqrt();
    let v: Value = serde_json::from_str(&report).unwrap();
    let max = v["aggregates"]["max_true_score"].as_f64().unwrap();
    assert!((max - analytic).abs() < 1e-3, "{max} vs {analytic}");
}

#[test]
fn report_aggregates_match_recomputation() {
    let v: Value = serde_json::from_str(&fs::read_to_string(fixture("toy_report.golden.json")).unwrap()).unwrap();
    let starts = v["starts"].as_array().unwrap();
    let eta = v["eta"].as_f64().unwrap();
    let mut lds: Vec<f64> = starts.iter().map(|s| s["optimum_log_density"].as_f64().unwrap()).collect();
    lds.sort_by(f64::total_cmp);
    let n = lds.len();
    let median = if n % 2 == 1 { lds[n / 2] } else { (lds[n / 2 - 1] + lds[n / 2]) / 2.0 };
    let scores: Vec<f64> = starts.iter().filter_map(|s| s["true_score"].as_f64()).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ok = starts.iter().filter(|s| s["decoded"].is_array()).count();
    let agg = &v["aggregates"];
    assert_eq!(agg["median_log_density"].as_f64().unwrap(), median);
    assert!((agg["mean_true_score"].as_f64().unwrap() - mean).abs() <= 1e-15 * mean.abs());
    assert_eq!(agg["max_true_score"].as_f64().unwrap(), max);
    assert_eq!(agg["valid_fraction"].as_f64().unwrap(), ok as f64 / n as f64);
    for s in starts {
        assert!(s["start_log_density"].as_f64().unwrap() >= eta);
    }
}

#[test]
fn optimize_error_paths() {
    // threshold above the largest achievable log-density
    let dir = toy_dir();
    let cfg = edit_config(dir.path(), |v| v["eta"] = Value::from(-1.0));
    let r = cold(["optimize", "--config", s(&cfg)]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("no feasible starts"), "{}", r.stderr);
    assert!(!dir.path().join("report.json").exists());

    let dir = toy_dir();
    fs::remove_file(dir.path().join("toy_predictor.json")).unwrap();
    assert_eq!(cold(["optimize", "--config", s(&dir.path().join("toy_config.json"))]).code, 2);

    let dir = toy_dir();
    let cfg = edit_config(dir.path(), |v| v["extra"] = Value::from(1));
    assert_eq!(cold(["optimize", "--config", s(&cfg)]).code, 2);

    let dir = toy_dir();
    let cfg = edit_config(dir.path(), |v| v["grid"]["count"] = Value::from(0));
    assert_eq!(cold(["optimize", "--config", s(&cfg)]).code, 2);

    let dir = toy_dir();
    let cfg = edit_config(dir.path(), |v| v["true_score"]["coefficients"] = serde_json::json!([1.0, 0.5, 2.0]));
    assert_eq!(cold(["optimize", "--config", s(&cfg)]).code, 0);
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(v["starts"][0]["error"].is_string());

    assert_eq!(cold(["optimize", "--config", "/nonexistent/cfg.json"]).code, 2);
    assert_eq!(cold(["optimize"]).code, 1);
}

#[test]
fn optimize_flags_when_every_decode_fails() {
    let dir = toy_dir();
    fs::write(
        dir.path().join("toy_decoder.json"),
        r#"{"w": [[1e308, 0.0], [0.0, 1e308]], "b": [1.7e308, 1.7e308]}"#,
    )
    .unwrap();
    let r = cold(["optimize", "--config", s(&dir.path().join("toy_config.json"))]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["all_decodes_failed"], Value::Bool(true));
    assert_eq!(v["aggregates"]["valid_fraction"].as_f64(), Some(0.0));
    let csv = fs::read_to_string(dir.path().join("starts.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",false,")));
}

#[test]
fn optimize_knn_mode_and_worker_counts() {
    let mut reports = Vec::new();
    for workers in ["1", "3", "8"] {
        let dir = toy_dir();
        let cfg = edit_config(dir.path(), |v| {
            v["mode"] = serde_json::json!({"kind": "knn", "k": 1, "ef_search": 8});
        });
        let r = cold(["--workers", workers, "optimize", "--config", s(&cfg)]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        reports.push(fs::read(dir.path().join("report.json")).unwrap());
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));

    let dir = toy_dir();
    let cfg = edit_config(dir.path(), |v| v["mode"] = serde_json::json!({"kind": "knn", "k": 2}));
    assert_eq!(cold(["optimize", "--config", s(&cfg)]).code, 2);
}

#[test]
fn workers_env_fallback_and_validation() {
    let dir = toy_dir();
    let cfg = dir.path().join("toy_config.json");
    let out = Command::new(env!("CARGO_BIN_EXE_cold"))
        .args(["optimize", "--config", s(&cfg)])
        .env("COLD_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read_to_string(dir.path().join("report.json")).unwrap(),
        fs::read_to_string(fixture("toy_report.golden.json")).unwrap()
    );
    assert_eq!(cold(["--workers", "0", "optimize", "--config", s(&cfg)]).code, 1);
    assert_eq!(cold(["--workers", "many", "optimize", "--config", s(&cfg)]).code, 1);
}

#[test]
fn objective_values_and_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o.csv");
    let run = |metric: &str, images: &[PathBuf]| {
        let mut args = vec!["objective".to_string(), "--metric".into(), metric.into(), "--images".into()];
        args.extend(images.iter().map(|p| s(p).to_string()));
        args.extend(["--out".to_string(), s(&out).to_string()]);
        let r = cold(&args);
        let rows: Vec<Vec<String>> = if r.code == 0 {
            fs::read_to_string(&out)
                .unwrap()
                .lines()
                .map(|l| l.split(',').map(String::from).collect())
                .collect()
        } else {
            Vec::new()
        };
        (r.code, rows)
    };

    let (code, rows) = run("thickness", &[fixture("white.pgm"), fixture("blank.pgm")]);
    assert_eq!(code, 0);
    assert_eq!(rows[0], ["path", "value", "error"]);
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 255.0);
    assert_eq!(rows[2][1].parse::<f64>().unwrap(), 0.0);

    let (code, rows) = run("aspect", &[fixture("rectangle.pgm"), fixture("blank.pgm")]);
    assert_eq!(code, 0);
    assert_eq!(rows[1][1].parse::<f64>().unwrap(), 1.8);
    assert_eq!(rows[2][1..], ["", "undefined"]);

    let missing = dir.path().join("missing.pgm");
    let (code, rows) = run("rotation", &[fixture("blank.pgm"), fixture("antidiagonal.pgm"), missing.clone()]);
    assert_eq!(code, 0);
    assert_eq!(rows[1][1..], ["", "undefined"]);
    assert_eq!(rows[2][1].parse::<f64>().unwrap(), -1.0);
    assert!(rows[3][1].is_empty() && !rows[3][2].is_empty());

    let junk = dir.path().join("junk.pgm");
    fs::write(&junk, b"P2 not binary").unwrap();
    let (code, _) = run("thickness", &[missing, junk]);
    assert_eq!(code, 2);
    assert_eq!(run("width", &[fixture("white.pgm")]).0, 1);
    assert_eq!(run("thickness", &[]).0, 1);
}

#[test]
fn diversity_outputs() {
    let one = fixture("one_pixel.pgm");
    let blank = fixture("blank.pgm");
    let r = cold(["diversity", "--images", s(&one), s(&blank)]);
    assert_eq!(r.code, 0);
    assert_eq!(r.stdout, format!("{:.11e}\n", 1.0 / 784.0));
    assert_eq!(r.stdout.trim().parse::<f64>().unwrap(), 1.27551020408e-3);
    let swapped = cold(["diversity", "--images", s(&blank), s(&one), s(&fixture("white.pgm"))]);
    let again = cold(["diversity", "--images", s(&fixture("white.pgm")), s(&one), s(&blank)]);
    assert_eq!(swapped.stdout, again.stdout);
    assert_eq!(cold(["diversity", "--images", s(&one), s(&one)]).stdout.trim().parse::<f64>().unwrap(), 0.0);

    assert_eq!(cold(["diversity", "--images", s(&one)]).code, 1);
    assert_eq!(cold(["diversity"]).code, 1);
    let dir = TempDir::new().unwrap();
    let small = dir.path().join("small.pgm");
    fs::write(&small, b"P5\n2 2\n255\n\x00\x01\x02\x03").unwrap();
    assert_eq!(cold(["diversity", "--images", s(&one), s(&small)]).code, 2);
    assert_eq!(cold(["diversity", "--images", s(&one), s(&dir.path().join("none.pgm"))]).code, 2);
}

#[test]
fn bench_knn_table_shape() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b.csv");
    let enc = fixture("encodings_2d.csv");
    let pts = fixture("points_2d.csv");
    let r = cold([
        "bench-knn",
        "--encodings",
        s(&enc),
        "--points",
        s(&pts),
        "--ks",
        "5,1,3,3",
        "--warmup",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,approx_mean,exact_mean,approx_seconds,exact_seconds");
    let rows: Vec<Vec<f64>> = lines[1..]
        .iter()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [1.0, 3.0, 5.0]);
    assert!(rows.windows(2).all(|w| w[0][1] <= w[1][1]));
    let last = rows.last().unwrap();
    assert!((last[1] - last[2]).abs() / last[2].abs().max(1.0) < 1e-10);
    assert!(rows.iter().all(|r| r[3] > 0.0 && r[4] > 0.0));

    for ks in ["0", "6", "1,x", ""] {
        let r = cold(["bench-knn", "--encodings", s(&enc), "--points", s(&pts), "--ks", ks, "--out", s(&out)]);
        assert_eq!(r.code, 1, "{ks}: {}", r.stderr);
    }
    let r = cold([
        "bench-knn",
        "--encodings",
        s(&dir.path().join("missing.csv")),
        "--points",
        s(&pts),
        "--ks",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 2);
}

#[test]
fn every_subcommand_documents_its_flags() {
    let expected: &[(&str, &[&str])] = &[
        ("density", &["--encodings", "--points", "--mode", "--k", "--ef", "--out"]),
        ("sample", &["--dim", "--count", "--b", "--seed", "--out"]),
        ("optimize", &["--config"]),
        ("objective", &["--metric", "--images", "--out"]),
        ("diversity", &["--images"]),
        ("bench-knn", &["--encodings", "--points", "--ks", "--out"]),
        ("index", &["--encodings", "--out"]),
    ];
    for (cmd, flags) in expected {
        let r = cold([*cmd, "--help"]);
        assert_eq!(r.code, 0);
        for flag in *flags {
            assert!(r.stdout.contains(flag), "{cmd} help lacks {flag}");
        }
        assert!(r.stdout.contains("--workers"));
        assert_eq!(cold([*cmd, "--no-such-flag"]).code, 1, "{cmd}");
    }
    assert_eq!(cold(["--help"]).code, 0);
    assert_eq!(cold(["--version"]).code, 0);
    assert_eq!(cold(Vec::<&str>::new()).code, 1);
    assert_eq!(cold(["frobnicate"]).code, 1);
}
