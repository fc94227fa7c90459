use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rmlab_cli::artifacts::{EvalOutput, RlooMeta, RunReport};
use rmlab_cli::summary::{MeanStd, Summary};
use rmlab_cli::ExperimentConfig;

fn rmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmlab"))
        .args(args)
        .env("RMLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rmlab(args);
    assert!(
        out.status.success(),
        "rmlab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = rmlab(args);
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small world so each test trains in well under a second per run.
fn small_world(root: &Path) -> std::path::PathBuf {
    let w = root.join("world");
    ok(&["gen-world", "--out", s(&w), "--seed", "3", "--train-size", "128", "--valid-size", "24"]);
    w
}

#[test]
fn gen_world_is_deterministic_per_seed() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    ok(&["gen-world", "--out", s(&a), "--seed", "7"]);
    ok(&["gen-world", "--out", s(&b), "--seed", "7"]);
    for f in ["world.json", "datasets.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("run.log").is_file());
    let c = d.path().join("c");
    ok(&["gen-world", "--out", s(&c), "--seed", "8"]);
    assert_ne!(fs::read(a.join("datasets.bin")).unwrap(), fs::read(c.join("datasets.bin")).unwrap());
}

#[test]
fn gen_world_rejects_bad_dims_and_reused_dirs() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("w");
    let (c, msg) = code(&["gen-world", "--out", s(&out), "--d-x", "1"]);
    assert_eq!(c, 2);
    assert!(msg.contains("d_x"), "{msg}");
    assert!(!out.exists(), "a rejected config must not create the directory");

    ok(&["gen-world", "--out", s(&out), "--train-size", "16", "--valid-size", "8"]);
    let (c, msg) = code(&["gen-world", "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(msg.contains("--force"), "{msg}");
    ok(&["gen-world", "--out", s(&out), "--train-size", "16", "--valid-size", "8", "--force"]);
}

#[test]
fn zero_lambda_bsr_reproduces_bt_exactly() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let (bt, bsr) = (d.path().join("bt"), d.path().join("bsr0"));
    ok(&["train", "--world", s(&w), "--out", s(&bt), "--loss", "bt", "--seed", "5"]);
    ok(&["train", "--world", s(&w), "--out", s(&bsr), "--loss", "bt-bsr", "--lambda", "0", "--seed", "5"]);
    assert_eq!(fs::read(bt.join("metrics.csv")).unwrap(), fs::read(bsr.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(bt.join("rm.ckpt")).unwrap(), fs::read(bsr.join("rm.ckpt")).unwrap());
    let r: RunReport = serde_json::from_slice(&fs::read(bsr.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.label, "bt-bsr-lambda-0");
}

#[test]
fn seeds_flag_makes_one_directory_per_seed() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let out = d.path().join("runs");
    let stdout = ok(&["train", "--world", s(&w), "--out", s(&out), "--seeds", "4", "--epochs", "1"]);
    assert_eq!(stdout.lines().count(), 4);
    for n in 0..4 {
        let run = out.join(format!("seed-{n}"));
        for f in ["rm.ckpt", "rm.meta.json", "metrics.csv", "report.json", "run.log"] {
            assert!(run.join(f).is_file(), "{}", run.join(f).display());
        }
    }
    let header = fs::read_to_string(out.join("seed-0/metrics.csv")).unwrap();
    assert!(header.starts_with("step,epoch,train_loss,head_norm,hdist_mean,hdist_std,hdist_skew,acc_id,"));
}

#[test]
fn unknown_loss_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let (c, msg) = code(&["train", "--world", s(d.path()), "--out", s(&d.path().join("o")), "--loss", "bt-xyz"]);
    assert_eq!(c, 2);
    assert!(msg.contains("bt-bsr"), "{msg}");
}

#[test]
fn divergence_keeps_last_finite_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let cfg = d.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"train": {"optimizer": {"kind": "sgd"}, "learning_rate": 1.7976931348623157e308}}"#,
    )
    .unwrap();
    let out = d.path().join("run");
    let (c, msg) = code(&["train", "--world", s(&w), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(c, 3, "{msg}");
    assert!(out.join("rm.ckpt").is_file());
    let meta: rmlab_cli::artifacts::RunMeta = serde_json::from_slice(&fs::read(out.join("rm.meta.json")).unwrap()).unwrap();
    assert!(meta.diverged_at.is_some_and(|s| s >= 1 && s <= meta.total_steps));
}

#[test]
fn eval_gold_is_perfect_and_reruns_identically() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let (a, b) = (d.path().join("a.json"), d.path().join("b.json"));
    ok(&["eval", "--world", s(&w), "--gold", "--out", s(&a)]);
    let e: EvalOutput = serde_json::from_slice(&fs::read(&a).unwrap()).unwrap();
    assert_eq!(e.eval.acc_id, 1.0);
    assert_eq!((e.eval.tau_prompt, e.eval.tau_response, e.eval.tau_mutual), (1.0, 1.0, 1.0));

    let run = d.path().join("run");
    ok(&["train", "--world", s(&w), "--out", s(&run), "--epochs", "1"]);
    ok(&["eval", "--world", s(&w), "--run", s(&run), "--out", s(&a)]);
    ok(&["eval", "--world", s(&w), "--checkpoint", s(&run.join("rm.ckpt")), "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let e: EvalOutput = serde_json::from_slice(&fs::read(&a).unwrap()).unwrap();
    let r: RunReport = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(e.diagnostics.unwrap(), r.diagnostics);
}

#[test]
fn eval_without_checkpoint_is_missing_artifact() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let (c, _) = code(&["eval", "--world", s(&w), "--run", s(&d.path().join("nope")), "--out", s(&d.path().join("e.json"))]);
    assert_eq!(c, 4);
    let (c, _) = code(&["eval", "--world", s(&d.path().join("nowhere")), "--gold", "--out", s(&d.path().join("e.json"))]);
    assert_eq!(c, 4);
}

#[test]
fn rloo_pins_policy_under_huge_beta_and_is_seeded() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let run = d.path().join("run");
    ok(&["train", "--world", s(&w), "--out", s(&run), "--epochs", "1"]);

    let pinned = d.path().join("pinned");
    ok(&["rloo", "--world", s(&w), "--rm", s(&run), "--out", s(&pinned), "--beta", "1000", "--steps", "60"]);
    let m: RlooMeta = serde_json::from_slice(&fs::read(pinned.join("rloo.meta.json")).unwrap()).unwrap();
    assert!(m.final_kl < 1e-2, "kl {}", m.final_kl);
    assert_eq!(m.proxy, "bt");

    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for dir in [&a, &b] {
        ok(&["rloo", "--world", s(&w), "--rm", s(&run), "--out", s(dir), "--steps", "40", "--seed", "9"]);
    }
    for f in ["rloo_metrics.csv", "policy.ckpt", "rloo.meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(a.join("rloo_metrics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 41);
    assert!(rows.starts_with("step,proxy_reward_mean,gold_reward_mean,kl,entropy,lr"));
}

#[test]
fn rloo_without_reward_model_is_missing_artifact() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let (c, msg) = code(&["rloo", "--world", s(&w), "--rm", s(&d.path().join("none")), "--out", s(&d.path().join("o"))]);
    assert_eq!(c, 4, "{msg}");
}

#[test]
fn report_aggregates_per_objective_and_draws_every_series() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let runs = d.path().join("runs");
    for loss in ["bt", "bt-bsr"] {
        ok(&[
            "train", "--world", s(&w), "--out", s(&runs.join(loss)), "--loss", loss, "--seeds", "2", "--epochs", "1",
        ]);
    }
    ok(&["rloo", "--world", s(&w), "--rm", s(&runs.join("bt/seed-0")), "--out", s(&runs.join("rl")), "--steps", "10"]);
    let table = ok(&["report", "--dir", s(&runs), "--charts"]);
    assert!(table.contains("bt-bsr"));

    let summary: Summary = serde_json::from_slice(&fs::read(runs.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.rows.len(), 2);
    assert_eq!(summary.rows[0].label, "bt");
    for row in &summary.rows {
        assert_eq!(row.seeds, vec![0, 1]);
        let reports: Vec<RunReport> = (0..2)
            .map(|n| {
                let p = runs.join(&row.label).join(format!("seed-{n}/report.json"));
                serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
            })
            .collect();
        let (a, b) = (reports[0].diagnostics.eval.tau_mutual, reports[1].diagnostics.eval.tau_mutual);
        let mean = (a + b) / 2.0;
        let want = MeanStd {
            mean,
            std: (((a - mean).powi(2) + (b - mean).powi(2)) / 2.0).sqrt(),
        };
        assert!((row.tau_mutual.mean - want.mean).abs() < 1e-15);
        assert!((row.tau_mutual.std - want.std).abs() < 1e-15);
        let h: Vec<f64> = reports.iter().map(|r| r.diagnostics.head_norm).collect();
        assert!((row.head_norm.mean - (h[0] + h[1]) / 2.0).abs() < 1e-15);
    }
    assert_eq!(summary.rloo.len(), 1);
    let c = summary.comparisons.unwrap();
    assert_eq!(c.tau_mutual_higher.seeds, vec![0, 1]);

    let charts: Vec<_> = fs::read_dir(runs.join("charts")).unwrap().map(|e| e.unwrap().file_name()).collect();
    let train_series = rmlab_cli::records::metrics_header().len() - 2;
    let rloo_series = rmlab_cli::records::RLOO_HEADER.len() - 1;
    assert_eq!(charts.len(), train_series + rloo_series);
    assert!(runs.join("charts/train_head_norm.svg").is_file());
    assert!(runs.join("charts/rloo_expected_gold.svg").is_file());
}

#[test]
fn report_on_empty_directory_fails() {
    let d = tempfile::tempdir().unwrap();
    let (c, _) = code(&["report", "--dir", s(d.path())]);
    assert_eq!(c, 4);
}

#[test]
fn defaults_print_a_loadable_config() {
    let text = ok(&["defaults"]);
    let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn thread_cap_must_be_positive() {
    let d = tempfile::tempdir().unwrap();
    let w = small_world(d.path());
    let out = Command::new(env!("CARGO_BIN_EXE_rmlab"))
        .args(["train", "--world", s(&w), "--out", s(&d.path().join("r"))])
        .env("RMLAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
