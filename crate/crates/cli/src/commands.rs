//! One function per subcommand. Each validates its inputs before touching
//! the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use rmlab::diagnostics::{diagnose, evaluate};
use rmlab::goldworld::{
    build_datasets, generate_world, load_bundle, load_world, save_bundle, save_world, DatasetBundle, GoldWorld,
    SizeConfig, WorldConfig, DATASETS_FILE, WORLD_FILE,
};
use rmlab::losses::LossSpec;
use rmlab::rloosim::{build_candidate_sets, rloo_train, PolicyParams, RlooConfig, RlooError, RlooRunLog};
use rmlab::rmcore::{
    init_reward_model, load_checkpoint, save_checkpoint, ModelDims, RewardModelParams, Scorer, POLICY_MAGIC, RM_MAGIC,
};
use rmlab::trainkit::{train_rm, HookResult, MetricsLog, Snapshot, TrainConfig, TrainError};

use crate::args::{EvalArgs, ExperimentArgs, GenWorldArgs, ReportArgs, RlooArgs, TrainArgs};
use crate::artifacts::{
    EvalOutput, RlooMeta, RunMeta, RunReport, POLICY_CKPT, REPORT, RLOO_META, RM_CKPT, RM_META, SUMMARY,
};
use crate::config::{candidate_seed, dataset_seed, rm_init_seed, run_label, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::fsutil::{prepare_out_dir, read_json, require, write_file, write_json, RunLog};
use crate::records::{metrics_csv, rloo_csv, METRICS_CSV, RLOO_CSV};
use crate::summary::{self, Summary};

pub const THREADS_ENV: &str = "RMLAB_THREADS";

/// Worker threads: `RMLAB_THREADS` if set, else the machine's parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs independent jobs on a bounded pool. Results keep job order; the
/// first failing job's error is returned after all jobs finish.
pub fn run_parallel<T, R, F>(jobs: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync + Send,
{
    let threads = worker_count()?.min(jobs.len()).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let results: Vec<Result<R>> = pool.install(|| jobs.into_par_iter().map(&f).collect());
    results.into_iter().collect()
}

pub fn load_world_dir(dir: &Path) -> Result<(GoldWorld, DatasetBundle)> {
    require(&dir.join(WORLD_FILE))?;
    require(&dir.join(DATASETS_FILE))?;
    Ok((load_world(dir)?, load_bundle(dir)?))
}

fn write_world(dir: &Path, world_cfg: &WorldConfig, sizes: SizeConfig, seed: u64) -> Result<(GoldWorld, DatasetBundle)> {
    let log = RunLog::open(dir)?;
    log.line(format!("gen-world seed={seed}"));
    let world = generate_world(world_cfg, seed)?;
    let bundle = build_datasets(&world, sizes, dataset_seed(seed))?;
    save_world(dir, &world)?;
    save_bundle(dir, &bundle)?;
    log.line(format!(
        "wrote {} train triplets, {} id triplets, {}/{}/{} prompt/response/mutual groups",
        bundle.d_train.len(),
        bundle.d_id.len(),
        bundle.d_prompt_ood.len(),
        bundle.d_response_ood.len(),
        bundle.d_mutual_ood.len()
    ));
    Ok((world, bundle))
}

pub fn gen_world(a: &GenWorldArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(v) = a.d_x {
        cfg.world.d_x = v;
    }
    if let Some(v) = a.d_y {
        cfg.world.d_y = v;
    }
    if let Some(v) = a.train_size {
        cfg.sizes.train = v;
    }
    if let Some(v) = a.valid_size {
        cfg.sizes.valid = v;
    }
    cfg.world.validate()?;
    cfg.sizes.validate(&cfg.world)?;
    prepare_out_dir(&a.out, a.force)?;
    write_world(&a.out, &cfg.world, cfg.sizes, cfg.seed)?;
    Ok(())
}

fn model_dims(world: &GoldWorld, hidden: &[usize]) -> Result<ModelDims> {
    let dims = ModelDims {
        input_dim: world.config.input_dim(),
        hidden: hidden.to_vec(),
    };
    dims.validate()?;
    Ok(dims)
}

fn write_metrics(dir: &Path, log: &MetricsLog) -> Result<()> {
    write_file(&dir.join(METRICS_CSV), metrics_csv(log)?)
}

/// Trains one reward model into `dir` and writes its artifacts.
pub fn train_one(
    world: &GoldWorld,
    bundle: &DatasetBundle,
    dims: &ModelDims,
    base: &TrainConfig,
    seed: u64,
    dir: &Path,
) -> Result<RunReport> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let log = RunLog::open(dir)?;
    let label = run_label(&base.loss);
    let cfg = TrainConfig { seed, ..base.clone() };
    let init_seed = rm_init_seed(seed);
    let init = init_reward_model(dims.clone(), init_seed)?;
    let total_steps = cfg.total_steps(bundle.d_train.len());
    log.line(format!("train {label} seed={seed} steps={total_steps}"));

    let hook = |snap: &Snapshot<'_>| -> HookResult { Ok(diagnose(snap.params, bundle)?.named_values()) };
    let mut meta = RunMeta {
        label: label.clone(),
        seed,
        world_seed: world.seed,
        init_seed,
        dims: dims.clone(),
        train: cfg.clone(),
        total_steps,
        diverged_at: None,
    };
    let outcome = match train_rm(&init, bundle, &cfg, hook) {
        Ok(o) => o,
        Err(TrainError::Diverged { step, last_good, log: mlog }) => {
            save_checkpoint(&dir.join(RM_CKPT), &last_good, RM_MAGIC)?;
            write_metrics(dir, &mlog)?;
            meta.diverged_at = Some(step);
            write_json(&dir.join(RM_META), &meta)?;
            log.line(format!("diverged at step {step}; kept last finite checkpoint"));
            return Err(CliError::Diverged(format!(
                "{label} seed {seed} diverged at step {step}; last finite checkpoint is {}",
                dir.join(RM_CKPT).display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    save_checkpoint(&dir.join(RM_CKPT), &outcome.params, RM_MAGIC)?;
    write_metrics(dir, &outcome.log)?;
    let diagnostics = diagnose(&outcome.params, bundle)?;
    let report = RunReport {
        label,
        loss: cfg.loss,
        seed,
        final_train_loss: outcome.log.last().map_or(f64::NAN, |r| r.train_loss),
        diagnostics,
    };
    write_json(&dir.join(RM_META), &meta)?;
    write_json(&dir.join(REPORT), &report)?;
    log.line(format!(
        "done: train_loss={:.6} acc_id={:.4} tau_mutual={:.4}",
        report.final_train_loss, report.diagnostics.eval.acc_id, report.diagnostics.eval.tau_mutual
    ));
    Ok(report)
}

pub fn train(a: &TrainArgs) -> Result<Vec<RunReport>> {
    let cfg = ExperimentConfig::load_or_default(a.config.as_deref())?;
    let mut tc = cfg.train.clone();
    if let Some(k) = a.loss {
        tc.loss.kind = k;
    }
    if let Some(v) = a.lambda {
        tc.loss.lambda = v;
    }
    if let Some(v) = a.margin {
        tc.loss.margin = v;
    }
    if let Some(v) = a.bsr_variant {
        tc.loss.bsr_variant = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.log_every {
        tc.log_every = v;
        tc.eval_every = v;
    }
    if a.seeds == Some(0) {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let (world, bundle) = load_world_dir(&a.world)?;
    let dims = model_dims(&world, &cfg.model_hidden)?;
    tc.validate(bundle.d_train.len())?;
    prepare_out_dir(&a.out, a.force)?;

    let first = a.seed.unwrap_or(0);
    let jobs: Vec<(u64, PathBuf)> = match a.seeds {
        None => vec![(first, a.out.clone())],
        Some(n) => (0..n as u64)
            .map(|i| (first + i, a.out.join(format!("seed-{}", first + i))))
            .collect(),
    };
    run_parallel(jobs, |(seed, dir)| train_one(&world, &bundle, &dims, &tc, seed, &dir))
}

pub fn eval(a: &EvalArgs) -> Result<EvalOutput> {
    let (world, bundle) = load_world_dir(&a.world)?;
    let out = if a.gold {
        EvalOutput {
            scorer: "gold".into(),
            eval: evaluate(&world, &bundle)?,
            diagnostics: None,
        }
    } else {
        let ckpt = match (&a.run, &a.checkpoint) {
            (Some(run), _) => run.join(RM_CKPT),
            (None, Some(c)) => c.clone(),
            (None, None) => return Err(CliError::Config("eval needs one of --run, --checkpoint or --gold".into())),
        };
        let params = load_rm(&ckpt, &world)?;
        let d = diagnose(&params, &bundle)?;
        EvalOutput {
            scorer: "checkpoint".into(),
            eval: d.eval,
            diagnostics: Some(d),
        }
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    write_json(&a.out, &out)?;
    Ok(out)
}

fn load_rm(path: &Path, world: &GoldWorld) -> Result<RewardModelParams> {
    require(path)?;
    let params = load_checkpoint(path, RM_MAGIC)?;
    let want = world.config.input_dim();
    if params.dims().input_dim != want {
        return Err(CliError::Config(format!(
            "checkpoint {} takes {}-dim inputs, world produces {want}",
            path.display(),
            params.dims().input_dim
        )));
    }
    Ok(params)
}

fn write_rloo_log(dir: &Path, log: &RlooRunLog) -> Result<()> {
    write_file(&dir.join(RLOO_CSV), rloo_csv(log)?)
}

/// Runs RLOO against `proxy` into `dir` and writes its artifacts.
pub fn rloo_one(world: &GoldWorld, proxy_label: &str, proxy: &dyn Scorer, rc: &RlooConfig, dir: &Path) -> Result<RlooMeta> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let log = RunLog::open(dir)?;
    log.line(format!(
        "rloo proxy={proxy_label} seed={} beta={} steps={}",
        rc.seed, rc.beta, rc.steps
    ));
    let cseed = candidate_seed(rc.seed);
    let sets = build_candidate_sets(world, rc.n_prompts, rc.n_candidates, cseed)?;
    let dims = model_dims(world, &rc.policy_hidden)?;
    let init = PolicyParams::init(dims, rc.seed)?;

    let mut meta = RlooMeta {
        proxy: proxy_label.to_string(),
        seed: rc.seed,
        world_seed: world.seed,
        candidate_seed: cseed,
        config: rc.clone(),
        final_expected_gold: f64::NAN,
        final_expected_proxy: f64::NAN,
        final_kl: f64::NAN,
        diverged_at: None,
    };
    let outcome = match rloo_train(&init, &init, proxy, &sets, rc) {
        Ok(o) => o,
        Err(RlooError::Diverged { step, last_good, log: rlog }) => {
            save_checkpoint(&dir.join(POLICY_CKPT), &last_good.net, POLICY_MAGIC)?;
            write_rloo_log(dir, &rlog)?;
            meta.diverged_at = Some(step);
            write_json(&dir.join(RLOO_META), &meta)?;
            log.line(format!("diverged at step {step}; kept last finite policy"));
            return Err(CliError::Diverged(format!(
                "rloo on {proxy_label} seed {} diverged at step {step}",
                rc.seed
            )));
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&dir.join(POLICY_CKPT), &outcome.policy.net, POLICY_MAGIC)?;
    write_rloo_log(dir, &outcome.log)?;
    if let Some(last) = outcome.log.records.last() {
        meta.final_expected_gold = last.expected_gold;
        meta.final_expected_proxy = last.expected_proxy;
        meta.final_kl = last.kl;
    }
    write_json(&dir.join(RLOO_META), &meta)?;
    log.line(format!(
        "done: expected_gold={:.6} expected_proxy={:.6} kl={:.6}",
        meta.final_expected_gold, meta.final_expected_proxy, meta.final_kl
    ));
    Ok(meta)
}

pub fn rloo(a: &RlooArgs) -> Result<RlooMeta> {
    let cfg = ExperimentConfig::load_or_default(a.config.as_deref())?;
    let mut rc = cfg.rloo.clone();
    if let Some(v) = a.beta {
        rc.beta = v;
    }
    if let Some(v) = a.steps {
        rc.steps = v;
    }
    if let Some(v) = a.k {
        rc.k = v;
    }
    if let Some(v) = a.lr {
        rc.learning_rate = v;
    }
    if let Some(v) = a.seed {
        rc.seed = v;
    }
    if let Some(v) = a.kl_in_reward {
        rc.kl_in_reward = v;
    }
    rc.validate()?;
    require(&a.world.join(WORLD_FILE))?;
    let world = load_world(&a.world)?;

    let (label, rm) = match (&a.rm, a.gold_proxy) {
        (_, true) => ("gold".to_string(), None),
        (Some(run), false) => {
            let params = load_rm(&run.join(RM_CKPT), &world)?;
            let meta_path = run.join(RM_META);
            let label = if meta_path.is_file() {
                read_json::<RunMeta>(&meta_path)?.label
            } else {
                "rm".to_string()
            };
            (label, Some(params))
        }
        (None, false) => return Err(CliError::Config("rloo needs --rm <run dir> or --gold-proxy".into())),
    };
    prepare_out_dir(&a.out, a.force)?;
    match &rm {
        Some(p) => rloo_one(&world, &label, p, &rc, &a.out),
        None => rloo_one(&world, &label, &world, &rc, &a.out),
    }
}

pub fn report(a: &ReportArgs) -> Result<Summary> {
    let scan = summary::scan(&a.dir)?;
    if scan.is_empty() {
        return Err(CliError::Missing(format!("no run outputs under {}", a.dir.display())));
    }
    let s = summary::summarize(&scan)?;
    let out = a.out.clone().unwrap_or_else(|| a.dir.join(SUMMARY));
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    write_json(&out, &s)?;
    if a.charts {
        summary::write_charts(&a.dir, &scan, &parent.join("charts"))?;
    }
    Ok(s)
}

/// World, every (objective, seed) reward model, RLOO on the chosen proxies,
/// then the summary and charts, all under one directory.
pub fn experiment(a: &ExperimentArgs) -> Result<Summary> {
    let cfg = ExperimentConfig::load_or_default(a.config.as_deref())?;
    cfg.validate()?;
    prepare_out_dir(&a.out, a.force)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    let log = RunLog::open(&a.out)?;

    let world_dir = a.out.join("world");
    fs::create_dir_all(&world_dir).map_err(|e| CliError::io(&world_dir, e))?;
    let (world, bundle) = write_world(&world_dir, &cfg.world, cfg.sizes, cfg.seed)?;
    log.line("world ready");

    let dims = cfg.model_dims();
    let run_dir = |spec: &LossSpec, seed: u64| a.out.join("runs").join(run_label(spec)).join(format!("seed-{seed}"));
    let jobs: Vec<(TrainConfig, u64)> = cfg
        .losses
        .iter()
        .flat_map(|spec| {
            let tc = TrainConfig {
                loss: *spec,
                ..cfg.train.clone()
            };
            cfg.seeds.iter().map(move |&s| (tc.clone(), s))
        })
        .collect();
    log.line(format!("training {} reward models", jobs.len()));
    run_parallel(jobs, |(tc, seed)| {
        train_one(&world, &bundle, &dims, &tc, seed, &run_dir(&tc.loss, seed))
    })?;

    let rloo_jobs: Vec<(LossSpec, u64)> = cfg
        .rloo_losses
        .iter()
        .filter_map(|k| cfg.losses.iter().find(|l| l.kind == *k))
        .flat_map(|spec| cfg.seeds.iter().map(move |&s| (*spec, s)))
        .collect();
    log.line(format!("running {} RLOO jobs", rloo_jobs.len()));
    run_parallel(rloo_jobs, |(spec, seed)| {
        let label = run_label(&spec);
        let params = load_rm(&run_dir(&spec, seed).join(RM_CKPT), &world)?;
        let rc = RlooConfig { seed, ..cfg.rloo.clone() };
        let dir = a.out.join("rloo").join(&label).join(format!("seed-{seed}"));
        rloo_one(&world, &label, &params, &rc, &dir)
    })?;

    let s = report(&ReportArgs {
        dir: a.out.clone(),
        out: None,
        charts: true,
    })?;
    log.line("summary written");
    Ok(s)
}
