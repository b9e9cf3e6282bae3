//! End-to-end tests driving the `mipca` executable.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mipca() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mipca"))
}

fn run(args: &[&str]) -> Output {
    mipca().args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        stderr_of(out)
    );
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        stderr_of(out)
    );
}

fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, content).unwrap();
    path
}

/// A deterministic 12×3 table with three missing cells; the columns are
/// strongly collinear so a rank-1 fit reconstructs them well.
fn incomplete_csv() -> String {
    let mut text = String::new();
    for i in 0..12 {
        let a = 1.0 + i as f64;
        let b = 2.0 * a + 0.1 * (i as f64).sin();
        let c = -a + 0.2 * (i as f64).cos();
        let cell = |v: f64, missing: bool| {
            if missing {
                "NA".to_string()
            } else {
                format!("{v}")
            }
        };
        let row = [
            cell(a, i == 7),
            cell(b, i == 3),
            cell(c, i == 0),
        ];
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}

fn parse_table(text: &str, delimiter: char) -> Vec<Vec<Option<f64>>> {
    text.lines()
        .map(|line| {
            line.split(delimiter)
                .map(|field| {
                    if field.is_empty() || field == "NA" {
                        None
                    } else {
                        Some(field.parse::<f64>().unwrap())
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn impute_fills_missing_cells_and_preserves_observed_ones() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "x.csv", &incomplete_csv());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "impute",
        "--rank",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert_success(&out);

    let original = parse_table(&incomplete_csv(), ',');
    let completed_text = fs::read_to_string(out_dir.join("x_completed.csv")).unwrap();
    let completed = parse_table(&completed_text, ',');
    assert_eq!(completed.len(), 12);
    for (i, row) in original.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let value = completed[i][j].expect("no missing cells remain");
            if let Some(v) = cell {
                assert_eq!(value, *v, "observed cell ({i},{j}) changed");
            }
        }
    }
    // The collinear pattern makes the imputations land near the truth.
    assert!((completed[7][0].unwrap() - 8.0).abs() < 1.0);
}

#[test]
fn impute_writes_manifest_and_run_cfg() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "x.csv", &incomplete_csv());
    let out_dir = dir.path().join("out");
    let out = run(&[
        "impute",
        "--rank",
        "1",
        "--seed",
        "9",
        "--out-dir",
        out_dir.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert_success(&out);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "mipca");
    assert_eq!(manifest["command"], "impute");
    assert_eq!(manifest["rng"], "ChaCha8");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"][0], "x_completed.csv");
    assert_eq!(manifest["config"]["rank"], "1");
    assert_eq!(manifest["config"]["seed"], "9");

    let cfg = fs::read_to_string(out_dir.join("run.cfg")).unwrap();
    assert!(cfg.contains("rank=1"));
    assert!(cfg.contains("seed=9"));
    assert!(cfg.contains(&format!("input={}", input.display())));
}

#[test]
fn mi_writes_datasets_and_trace_and_reruns_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "x.csv", &incomplete_csv());
    let mi_args = |out_dir: &Path| {
        vec![
            "mi".to_string(),
            "--rank".to_string(),
            "1".to_string(),
            "-M".to_string(),
            "3".to_string(),
            "--lstart".to_string(),
            "50".to_string(),
            "--spacing".to_string(),
            "10".to_string(),
            "--seed".to_string(),
            "4".to_string(),
            "--out-dir".to_string(),
            out_dir.display().to_string(),
            input.display().to_string(),
        ]
    };
    let dir_a = dir.path().join("a");
    let dir_b = dir.path().join("b");
    let out_a = mipca().args(mi_args(&dir_a)).output().unwrap();
    let out_b = mipca().args(mi_args(&dir_b)).output().unwrap();
    assert_success(&out_a);
    assert_success(&out_b);

    let names = ["x_imp1.csv", "x_imp2.csv", "x_imp3.csv", "x_trace.csv"];
    for name in names {
        let a = fs::read(dir_a.join(name)).unwrap();
        let b = fs::read(dir_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // Distinct imputations differ somewhere (the data has missing cells).
    assert_ne!(
        fs::read(dir_a.join("x_imp1.csv")).unwrap(),
        fs::read(dir_a.join("x_imp2.csv")).unwrap()
    );

    // Observed cells survive in every imputed dataset.
    let original = parse_table(&incomplete_csv(), ',');
    for name in &names[..3] {
        let table = parse_table(&fs::read_to_string(dir_a.join(name)).unwrap(), ',');
        for (i, row) in original.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    assert_eq!(table[i][j], Some(*v));
                }
            }
        }
    }

    // Re-running from the recorded config reproduces everything.
    let dir_c = dir.path().join("c");
    let out_c = run(&[
        "mi",
        "--config",
        dir_a.join("run.cfg").to_str().unwrap(),
        "--out-dir",
        dir_c.to_str().unwrap(),
    ]);
    assert_success(&out_c);
    for name in names {
        let a = fs::read(dir_a.join(name)).unwrap();
        let c = fs::read(dir_c.join(name)).unwrap();
        assert_eq!(a, c, "{name} differs after a config-file re-run");
    }
    let mut manifest_a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir_a.join("manifest.json")).unwrap()).unwrap();
    let mut manifest_c: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir_c.join("manifest.json")).unwrap()).unwrap();
    for m in [&mut manifest_a, &mut manifest_c] {
        m["created_unix"] = 0.into();
        m["config"]["out_dir"] = "".into();
    }
    assert_eq!(manifest_a, manifest_c);
}

#[test]
fn mi_requires_a_rank_choice() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "x.csv", &incomplete_csv());
    let out = run(&["mi", input.to_str().unwrap()]);
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("--rank"));
}

#[test]
fn mi_on_complete_data_warns_and_writes_identical_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let complete: String = incomplete_csv().replace("NA", "0.5");
    let input = write_file(dir.path(), "full.csv", &complete);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "mi",
        "--rank",
        "1",
        "-M",
        "3",
        "--lstart",
        "10",
        "--spacing",
        "2",
        "--seed",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert!(stderr_of(&out).contains("no missing cells"));
    let first = fs::read(out_dir.join("full_imp1.csv")).unwrap();
    for k in 2..=3 {
        assert_eq!(
            first,
            fs::read(out_dir.join(format!("full_imp{k}.csv"))).unwrap()
        );
    }
}

/// Pooling oracle: the textbook combination rules applied directly.
mod oracle {
    use statrs::distribution::{ContinuousCDF, StudentsT};

    pub fn mean_analysis(col: &[f64]) -> (f64, f64, f64) {
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        (mean, ss / (n - 1.0) / n, n - 1.0)
    }

    pub fn corr_analysis(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for i in 0..x.len() {
            let dx = x[i] - mx;
            let dy = y[i] - my;
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        let rho: f64 = sxy / (sxx.sqrt() * syy.sqrt());
        let z = 0.5 * ((1.0 + rho) / (1.0 - rho)).ln();
        (z, 1.0 / (n - 3.0), n - 3.0)
    }

    /// (estimate, within, between, total, df, ci_low, ci_high) on the
    /// analysis scale.
    pub fn pool(analyses: &[(f64, f64, f64)]) -> (f64, f64, f64, f64, f64, f64, f64) {
        let m = analyses.len() as f64;
        let est = analyses.iter().map(|a| a.0).sum::<f64>() / m;
        let within = analyses.iter().map(|a| a.1).sum::<f64>() / m;
        let between =
            analyses.iter().map(|a| (a.0 - est) * (a.0 - est)).sum::<f64>() / (m - 1.0);
        let total = within + (1.0 + 1.0 / m) * between;
        let nu_com = analyses[0].2;
        let nu_obs = (nu_com + 1.0) / (nu_com + 3.0) * nu_com * within / total;
        let df = if between == 0.0 {
            nu_obs
        } else {
            let r = (1.0 + 1.0 / m) * between / within;
            let nu_old = (m - 1.0) * (1.0 + 1.0 / r) * (1.0 + 1.0 / r);
            1.0 / (1.0 / nu_old + 1.0 / nu_obs)
        };
        let t = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975);
        let half = t * total.sqrt();
        (est, within, between, total, df, est - half, est + half)
    }
}

#[test]
fn pool_matches_a_direct_implementation_of_the_pooling_rules() {
    let dir = tempfile::tempdir().unwrap();
    // Three hand-built "imputed" datasets over the same 6 rows.
    let base_x = [1.0, 2.5, 3.1, 4.7, 5.2, 6.9];
    let base_y = [2.1, 4.9, 6.0, 9.6, 10.1, 14.2];
    let mut paths = Vec::new();
    let mut columns = Vec::new();
    for k in 0..3 {
        let x: Vec<f64> = base_x
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.05 * k as f64 * (i % 2) as f64)
            .collect();
        let y: Vec<f64> = base_y
            .iter()
            .enumerate()
            .map(|(i, v)| v - 0.07 * k as f64 * ((i + 1) % 2) as f64)
            .collect();
        let mut text = String::new();
        for i in 0..x.len() {
            text.push_str(&format!("{},{}\n", x[i], y[i]));
        }
        paths.push(write_file(dir.path(), &format!("imp{k}.csv"), &text));
        columns.push((x, y));
    }

    let out_dir = dir.path().join("out");
    let mut args = vec![
        "pool".to_string(),
        "--quantity".to_string(),
        "mean:1".to_string(),
        "--quantity".to_string(),
        "corr:1,2".to_string(),
        "--out-dir".to_string(),
        out_dir.display().to_string(),
    ];
    args.extend(paths.iter().map(|p| p.display().to_string()));
    let out = mipca().args(&args).output().unwrap();
    assert_success(&out);

    let table = fs::read_to_string(out_dir.join("pooled.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "quantity,estimate,within,between,total_variance,df,ci_low,ci_high"
    );
    // The numeric fields are always the last seven; the quantity label
    // may itself contain (quoted) delimiters.
    let parse_row = |line: &str| -> Vec<f64> {
        let fields: Vec<&str> = line.split(',').collect();
        fields[fields.len() - 7..]
            .iter()
            .map(|f| f.parse().unwrap())
            .collect()
    };
    let mean_line = lines.next().unwrap();
    let corr_line = lines.next().unwrap();
    assert!(mean_line.starts_with("mean:1,"));
    assert!(corr_line.starts_with("\"corr:1,2\","));
    let mean_row = parse_row(mean_line);
    let corr_row = parse_row(corr_line);

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * b.abs().max(1.0);

    let mean_oracle: Vec<(f64, f64, f64)> = columns
        .iter()
        .map(|(x, _)| oracle::mean_analysis(x))
        .collect();
    let (est, within, between, total, df, lo, hi) = oracle::pool(&mean_oracle);
    for (got, want) in mean_row
        .iter()
        .zip([est, within, between, total, df, lo, hi])
    {
        assert!(close(*got, want), "mean row: got {got}, want {want}");
    }

    let corr_oracle: Vec<(f64, f64, f64)> = columns
        .iter()
        .map(|(x, y)| oracle::corr_analysis(x, y))
        .collect();
    let (z_est, within, between, total, df, z_lo, z_hi) = oracle::pool(&corr_oracle);
    let expected = [
        z_est.tanh(),
        within,
        between,
        total,
        df,
        z_lo.tanh(),
        z_hi.tanh(),
    ];
    for (got, want) in corr_row.iter().zip(expected) {
        assert!(close(*got, want), "corr row: got {got}, want {want}");
    }
}

#[test]
fn pool_needs_at_least_two_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "one.csv", "1,2\n3,4\n5,6\n7,8\n");
    let out = run(&[
        "pool",
        "--quantity",
        "mean:1",
        input.to_str().unwrap(),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn malformed_cells_exit_with_the_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_file(dir.path(), "bad.csv", "1,2\n3,abc\n");
    let out = run(&["impute", "--rank", "1", bad.to_str().unwrap()]);
    assert_exit(&out, 3);
    let stderr = stderr_of(&out);
    assert!(stderr.contains("row 2"), "stderr: {stderr}");
    assert!(stderr.contains("column 2"), "stderr: {stderr}");
    assert!(stderr.contains("abc"), "stderr: {stderr}");

    let ragged = write_file(dir.path(), "ragged.csv", "1,2\n3\n");
    let out = run(&["impute", "--rank", "1", ragged.to_str().unwrap()]);
    assert_exit(&out, 3);

    let out = run(&[
        "impute",
        "--rank",
        "1",
        dir.path().join("absent.csv").to_str().unwrap(),
    ]);
    assert_exit(&out, 3);
}

#[test]
fn model_failures_exit_with_the_model_code() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "x.csv", &incomplete_csv());
    let out = run(&["impute", "--rank", "50", input.to_str().unwrap()]);
    assert_exit(&out, 4);
}

#[test]
fn unknown_flags_exit_with_the_usage_code() {
    let out = run(&["impute", "--frobnicate", "x.csv"]);
    assert_exit(&out, 2);
    let out = run(&["warp", "x.csv"]);
    assert_exit(&out, 2);
}

#[test]
fn cv_reports_candidates_and_selection() {
    let dir = tempfile::tempdir().unwrap();
    // 30×4 with a dominant rank-1 pattern and scattered missing cells.
    let mut text = String::new();
    for i in 0..30 {
        let t = (1 + i) as f64;
        let row = [t, 2.0 * t + 0.01 * (i as f64).sin(), -t, 0.5 * t];
        let fields: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, v)| {
                if (i + j) % 11 == 5 {
                    "NA".to_string()
                } else {
                    format!("{v}")
                }
            })
            .collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    let input = write_file(dir.path(), "x.csv", &text);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "cv",
        "--candidates",
        "1..3",
        "--seed",
        "5",
        "--out-dir",
        out_dir.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert!(stdout_of(&out).contains("selected rank"));

    let report = fs::read_to_string(out_dir.join("cv.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "rank,msep,selected");
    assert_eq!(lines.len(), 4);
    let selected: usize = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(selected, 1, "exactly one candidate is marked selected");
}

#[test]
fn standardize_rescales_outputs_to_the_original_scale() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for i in 0..12 {
        let a = 1.0 + i as f64;
        let b = 1000.0 * (2.0 * a + 0.1 * (i as f64).sin());
        if i == 4 {
            text.push_str(&format!("{a},NA\n"));
        } else {
            text.push_str(&format!("{a},{b}\n"));
        }
    }
    let input = write_file(dir.path(), "scaled.csv", &text);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "impute",
        "--rank",
        "1",
        "--standardize",
        "--out-dir",
        out_dir.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert_success(&out);
    let completed = parse_table(
        &fs::read_to_string(out_dir.join("scaled_completed.csv")).unwrap(),
        ',',
    );
    let original = parse_table(&text, ',');
    for (i, row) in original.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                assert_eq!(completed[i][j], Some(*v));
            }
        }
    }
    // The imputed cell lands on the thousands scale, near 2·a·1000 = 10000.
    let imputed = completed[4][1].unwrap();
    assert!(
        (imputed - 10000.0).abs() < 2000.0,
        "imputed value {imputed} is not on the original scale"
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_file(dir.path(), "x.csv", &incomplete_csv());
    let cfg = write_file(
        dir.path(),
        "run.cfg",
        &format!("rank=1\nseed=1\ninput={}\n", input.display()),
    );
    let out_dir = dir.path().join("out");
    let out = run(&[
        "impute",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], "2", "flag beats config");
    assert_eq!(manifest["config"]["rank"], "1", "config fills the rest");
}

#[test]
fn custom_delimiter_and_header_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = "alpha;beta\n1;2\n3;?\n5;6\n7;8\n9;10\n11;12\n13;14\n15;16\n";
    let input = write_file(dir.path(), "named.csv", text);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "impute",
        "--rank",
        "1",
        "--delimiter",
        ";",
        "--na-token",
        "?",
        "--header",
        "--out-dir",
        out_dir.to_str().unwrap(),
        input.to_str().unwrap(),
    ]);
    assert_success(&out);
    let completed = fs::read_to_string(out_dir.join("named_completed.csv")).unwrap();
    assert!(completed.starts_with("alpha;beta\n"));
    assert!(!completed.contains('?'));
    assert!(completed.contains(';'));
}

#[test]
fn simulate_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--n",
        "25",
        "--p",
        "4",
        "--design",
        "block:0.5",
        "--missing-rate",
        "0.1",
        "--rank",
        "1",
        "--quantity",
        "mean:1",
        "--methods",
        "full_data,bayes_mipca",
        "--reps",
        "3",
        "-M",
        "2",
        "--lstart",
        "20",
        "--spacing",
        "5",
        "--seed",
        "99",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let report = fs::read_to_string(out_dir.join("simreport.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(
        lines[0],
        "quantity,method,bias,bias_se,rmse,median_ci_width,coverage,failures,K"
    );
    assert_eq!(lines.len(), 3, "one row per (quantity, method)");
    assert!(lines[1].starts_with("mean:1,full_data,"));
    assert!(lines[2].starts_with("mean:1,bayes_mipca,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config"]["design"], "block:0.5");
}
