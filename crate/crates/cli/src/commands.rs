use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use forecast::adapt::{
    build_style_references, finetune, refine_batch, AdaptConfig, RefineConfig, Strategy,
};
use forecast::dataio::{invariant_dim, EnvData, Split};
use forecast::report::{EvalReport, EvalRow};
use forecast::suites::{self, EnvSplits, StyleData};
use forecast::trainer::{self, Stage, StageOutcome, TrainConfig};
use forecast::ExperimentConfig;

use crate::artifacts::{self, Manifest, Meta};
use crate::{Cli, Command, Mode, Suite};

/// A failure raised by the front end itself, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = cli.experiment_config()?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Simulate { spurious } => simulate(&cfg, out, *spurious),
        Command::Augment => augment(&cfg, out),
        Command::Train { mode, suite } => train(&cfg, out, *suite, *mode, cli.seed),
        Command::Eval {
            suite,
            checkpoint: Some(dir),
        } => eval_checkpoint(&cfg, out, *suite, dir),
        Command::Eval {
            suite,
            checkpoint: None,
        } => eval_suite(&cfg, out, *suite),
        Command::Adapt {
            strategy,
            k,
            checkpoint,
        } => adapt(&cfg, out, (*strategy).into(), *k as usize, checkpoint),
        Command::Refine {
            iters,
            refs,
            checkpoint,
        } => refine(&cfg, out, *iters, *refs, checkpoint),
        Command::Report { input } => report(out, input),
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn report_path(out: &Path) -> PathBuf {
    out.join("report.csv")
}

fn check_finite(rows: &[EvalRow]) -> anyhow::Result<()> {
    match rows
        .iter()
        .find(|r| !(r.ade.is_finite() && r.fde.is_finite()))
    {
        Some(r) => Err(Failure::numerical(format!(
            "non-finite error for {} on {}",
            r.method, r.environment
        ))
        .into()),
        None => Ok(()),
    }
}

/// Checks and appends rows to `<out>/report.csv`, echoing them.
fn append_rows(out: &Path, rows: &[EvalRow]) -> anyhow::Result<()> {
    check_finite(rows)?;
    EvalReport::append_csv(&report_path(out), rows)?;
    for r in rows {
        println!(
            "{} {} seed {}: ade {:.4} fde {:.4}",
            r.method, r.environment, r.seed, r.ade, r.fde
        );
    }
    Ok(())
}

fn row(method: &str, env: &str, seed: u64, (ade, fde): (f64, f64)) -> EvalRow {
    EvalRow {
        method: method.into(),
        environment: env.into(),
        seed,
        ade,
        fde,
        k_batches: None,
        refine_iters: None,
    }
}

// ---------------------------------------------------------------- data

fn simulate(cfg: &ExperimentConfig, out: &Path, spurious: bool) -> anyhow::Result<()> {
    let dir = out.join("data").join("styles");
    let manifests = suites::write_style_datasets(cfg, &dir)?;
    for m in &manifests {
        log::info!("wrote {} datasets to {}", m.id, dir.display());
    }
    artifacts::write_json(&dir.join("datasets.json"), &manifests)?;
    if spurious {
        let cfg = ExperimentConfig {
            spurious: forecast::config::SpuriousSuiteConfig {
                data_dir: None,
                ..cfg.spurious.clone()
            },
            ..cfg.clone()
        };
        let root = out.join("data").join("subsets");
        for (subset, splits) in suites::spurious_scenes(&cfg)? {
            for (name, scenes) in ["train", "val", "test"].iter().zip(&splits) {
                let path = root.join(&subset).join(format!("{name}.tsv"));
                std::fs::create_dir_all(path.parent().expect("has parent"))?;
                simkit::write_tsv(&path, scenes).map_err(forecast::Error::from)?;
            }
        }
        log::info!("wrote subset stand-ins to {}", root.display());
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct EnvSummary {
    id: String,
    role: &'static str,
    train: usize,
    val: usize,
    test: usize,
    hashes: BTreeMap<String, String>,
}

fn summarize(env: &EnvSplits, role: &'static str) -> EnvSummary {
    let mut hashes = BTreeMap::new();
    env.hashes(&mut hashes);
    EnvSummary {
        id: env.id.clone(),
        role,
        train: env.train.len(),
        val: env.val.len(),
        test: env.test.len(),
        hashes,
    }
}

fn augment(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let (train, test) = suites::spurious_envs(&suites::spurious_scenes(cfg)?)?;
    let envs: Vec<EnvSummary> = train
        .iter()
        .map(|e| summarize(e, "train"))
        .chain(test.iter().map(|(_, e)| summarize(e, "test")))
        .collect();
    for e in &envs {
        println!(
            "{} ({}): {} / {} / {} windows",
            e.id, e.role, e.train, e.val, e.test
        );
    }
    artifacts::write_json(&out.join("augment").join("environments.json"), &envs)
}

fn style_train_envs(cfg: &ExperimentConfig) -> anyhow::Result<Vec<EnvSplits>> {
    Ok(cfg
        .style
        .train_styles
        .iter()
        .map(|&d| suites::style_env(d, cfg.style.counts, cfg.data_seed, &cfg.sim))
        .collect::<forecast::Result<_>>()?)
}

fn target_env(cfg: &ExperimentConfig) -> anyhow::Result<EnvSplits> {
    Ok(suites::style_env(
        cfg.transfer.target_style,
        cfg.style.counts,
        cfg.data_seed,
        &cfg.sim,
    )?)
}

// ---------------------------------------------------------------- train

fn method_name(cfg: &ExperimentConfig, suite: Suite, mode: Mode) -> anyhow::Result<String> {
    Ok(match (suite, mode) {
        (Suite::Style, Mode::Erm) => suites::VANILLA.into(),
        (Suite::Style, Mode::Invariant) => suites::INVARIANT.into(),
        (Suite::Style, Mode::Modular) => match cfg.train.backbone {
            trainer::BackboneMode::Erm => suites::MODULAR.into(),
            trainer::BackboneMode::Invariant => suites::INV_MOD.into(),
        },
        (Suite::Spurious, Mode::Erm) => "erm".into(),
        (Suite::Spurious, Mode::Invariant) => suites::invariant_method_name(spurious_lambda(cfg)?),
        (Suite::Spurious, Mode::Modular) => {
            return Err(
                Failure::config("the spurious suite trains erm and invariant models only").into(),
            )
        }
        (Suite::Transfer, _) => {
            return Err(Failure::config(
                "transfer bases are modular style checkpoints; use --suite style",
            )
            .into())
        }
    })
}

fn spurious_lambda(cfg: &ExperimentConfig) -> anyhow::Result<f64> {
    cfg.spurious
        .lambdas
        .first()
        .copied()
        .ok_or_else(|| Failure::config("spurious.lambdas is empty").into())
}

pub fn checkpoint_dir(out: &Path, suite: Suite, mode: Mode, seed: u64) -> PathBuf {
    let suite = match suite {
        Suite::Style => "style",
        Suite::Spurious => "spurious",
        Suite::Transfer => "transfer",
    };
    let mode = match mode {
        Mode::Erm => "erm",
        Mode::Invariant => "invariant",
        Mode::Modular => "modular",
    };
    out.join("checkpoints")
        .join(format!("{suite}-{mode}-seed{seed}"))
}

fn train(
    cfg: &ExperimentConfig,
    out: &Path,
    suite: Suite,
    mode: Mode,
    seed: u64,
) -> anyhow::Result<()> {
    let method = method_name(cfg, suite, mode)?;
    let (splits, input_dim) = match suite {
        Suite::Spurious => (
            suites::spurious_envs(&suites::spurious_scenes(cfg)?)?.0,
            invariant_dim(true),
        ),
        _ => (style_train_envs(cfg)?, invariant_dim(false)),
    };
    let envs: Vec<EnvData> = splits.iter().map(EnvSplits::env_data).collect();
    let trains: Vec<&Split> = envs.iter().map(|e| &e.train).collect();
    let mut model = suites::initial_model(input_dim, seed, &trains)?;
    let style_cfg = |lambda: f64| TrainConfig {
        seed,
        lambda,
        ..cfg.train.clone()
    };
    let stages: Vec<StageOutcome> = match (suite, mode) {
        (Suite::Spurious, Mode::Erm) => vec![trainer::train_erm(
            &mut model,
            &envs,
            &suites::spurious_train_config(cfg, seed, None),
        )?],
        (Suite::Spurious, _) => vec![trainer::train_invariant(
            &mut model,
            &envs,
            &suites::spurious_train_config(cfg, seed, Some(spurious_lambda(cfg)?)),
        )?],
        (_, Mode::Erm) => vec![trainer::train_erm(
            &mut model,
            &envs,
            &style_cfg(cfg.train.lambda),
        )?],
        (_, Mode::Invariant) => vec![trainer::train_invariant(
            &mut model,
            &envs,
            &style_cfg(cfg.style.lambda),
        )?],
        (_, Mode::Modular) => trainer::train_modular_staged(
            &mut model,
            &envs,
            &style_cfg(cfg.style.lambda),
            Stage::Backbone,
        )?,
    };

    let dir = checkpoint_dir(out, suite, mode, seed);
    let config_hash = cfg.hash()?;
    let meta = Meta {
        suite,
        mode,
        method: method.clone(),
        seed,
        k_batches: None,
        config_hash: config_hash.clone(),
    };
    artifacts::save_checkpoint(&dir, &model, &meta)?;
    let trace = dir.join("trace.csv");
    artifacts::write_trace(&trace, &stages)?;
    let mut dataset_hashes = BTreeMap::new();
    for e in &splits {
        e.hashes(&mut dataset_hashes);
    }
    let manifest = Manifest {
        command: format!("train --suite {suite:?} --mode {mode:?} --seed {seed}").to_lowercase(),
        config: cfg,
        config_hash,
        dataset_hashes,
        stages: artifacts::stage_summaries(&stages),
        trace_csv: trace,
        checkpoint: dir.clone(),
        checkpoint_hash: model.hash(),
    };
    artifacts::write_json(&dir.join("manifest.json"), &manifest)?;
    for s in &manifest.stages {
        println!(
            "{method} seed {seed} {}: {} epochs, kept epoch {:?}, val {:.5}",
            s.stage, s.epochs, s.best_epoch, s.best_val
        );
    }
    println!("checkpoint {}", dir.display());
    Ok(())
}

// ---------------------------------------------------------------- eval

fn eval_checkpoint(
    cfg: &ExperimentConfig,
    out: &Path,
    suite: Suite,
    dir: &Path,
) -> anyhow::Result<()> {
    let (model, meta) = artifacts::load_checkpoint(dir)?;
    if meta.config_hash != cfg.hash()? {
        log::warn!("{} was trained under a different config", dir.display());
    }
    let suite = if meta.suite == Suite::Spurious {
        Suite::Spurious
    } else {
        suite
    };
    let mut rows = Vec::new();
    match suite {
        Suite::Spurious => {
            let (_, test) = suites::spurious_envs(&suites::spurious_scenes(cfg)?)?;
            for (_, env) in &test {
                rows.push(row(
                    &meta.method,
                    &env.id,
                    meta.seed,
                    suites::eval_invariant(&model, env)?,
                ));
            }
        }
        Suite::Style | Suite::Transfer => {
            let envs = if suite == Suite::Transfer {
                vec![target_env(cfg)?]
            } else {
                let data = StyleData::simulate(cfg)?;
                data.train.into_iter().chain(data.test).collect()
            };
            for env in &envs {
                let e = if meta.mode == Mode::Modular {
                    suites::eval_modular(&model, env, cfg.train.style_obs, meta.seed)?
                } else {
                    suites::eval_invariant(&model, env)?
                };
                let mut r = row(&meta.method, &env.id, meta.seed, e);
                r.k_batches = meta.k_batches;
                rows.push(r);
            }
        }
    }
    append_rows(out, &rows)
}

fn finish_suite(out: &Path, name: &str, report: &EvalReport) -> anyhow::Result<()> {
    check_finite(&report.rows)?;
    let dir = out.join(name);
    report.write_all(&dir)?;
    EvalReport::append_csv(&report_path(out), &report.rows)?;
    print_table(report);
    println!("{name} suite written to {}", dir.display());
    Ok(())
}

fn eval_suite(cfg: &ExperimentConfig, out: &Path, suite: Suite) -> anyhow::Result<()> {
    match suite {
        Suite::Style => {
            let output = suites::run_style_suite(cfg)?;
            let config_hash = cfg.hash()?;
            for run in &output.runs {
                for (method, model) in [
                    (suites::VANILLA, &run.vanilla),
                    (suites::INVARIANT, &run.invariant),
                    (suites::MODULAR, &run.modular),
                    (suites::INV_MOD, &run.inv_mod),
                ] {
                    let mode = match method {
                        suites::VANILLA => Mode::Erm,
                        suites::INVARIANT => Mode::Invariant,
                        _ => Mode::Modular,
                    };
                    let meta = Meta {
                        suite: Suite::Style,
                        mode,
                        method: method.into(),
                        seed: run.seed,
                        k_batches: None,
                        config_hash: config_hash.clone(),
                    };
                    let name = format!("{}-seed{}", method.replace('+', "-"), run.seed);
                    artifacts::save_checkpoint(
                        &out.join("style").join("checkpoints").join(name),
                        model,
                        &meta,
                    )?;
                }
            }
            finish_suite(out, "style", &output.report)
        }
        Suite::Spurious => {
            let report = suites::run_spurious_suite(cfg)?;
            finish_suite(out, "spurious", &report)?;
            let methods: std::collections::BTreeSet<&str> =
                report.rows.iter().map(|r| r.method.as_str()).collect();
            for m in methods {
                println!(
                    "{m}: degradation ratio {:.3}",
                    suites::degradation_ratio(&report, m)?
                );
            }
            Ok(())
        }
        Suite::Transfer => {
            let mut bases = Vec::new();
            for &seed in &cfg.seeds {
                let dir = checkpoint_dir(out, Suite::Style, Mode::Modular, seed);
                if !dir.join("meta.json").exists() {
                    return Err(forecast::Error::MissingArtifact(format!(
                        "{} missing; run `train --mode modular --seed {seed}` first",
                        dir.display()
                    ))
                    .into());
                }
                bases.push((seed, artifacts::load_checkpoint(&dir)?.0));
            }
            let data = StyleData {
                train: Vec::new(),
                test: vec![target_env(cfg)?],
            };
            finish_suite(
                out,
                "transfer",
                &suites::run_transfer_suite(cfg, &bases, &data)?,
            )
        }
    }
}

// ---------------------------------------------------------------- adaptation

fn require_modular(meta: &Meta, dir: &Path) -> anyhow::Result<()> {
    if meta.mode != Mode::Modular {
        return Err(Failure::config(format!(
            "{} is a {} model, not a modular one",
            dir.display(),
            meta.method
        ))
        .into());
    }
    Ok(())
}

fn adapt(
    cfg: &ExperimentConfig,
    out: &Path,
    strategy: Strategy,
    k: usize,
    dir: &Path,
) -> anyhow::Result<()> {
    let (base, meta) = artifacts::load_checkpoint(dir)?;
    require_modular(&meta, dir)?;
    let target = target_env(cfg)?;
    let pool = suites::transfer_pool(cfg, &target, meta.seed)?;
    let acfg = AdaptConfig {
        seed: meta.seed,
        ..cfg.adapt.clone()
    };
    let (adapted, outcome) = finetune(&base, &pool, strategy, k, &acfg)?;
    let obs = suites::transfer_observations(cfg, &pool, k)?;
    let c = adapted.encode_style(&obs)?;
    let pred = adapted.predict_with_code(&target.test.inputs, &c)?;
    let mut r = row(
        strategy.name(),
        &target.id,
        meta.seed,
        forecast::metrics::mean_errors(&pred, &target.test.targets)?,
    );
    r.k_batches = Some(k);
    append_rows(out, &[r])?;

    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tag = if strategy == Strategy::All {
        "all"
    } else {
        "mod"
    };
    let adapted_dir = out.join("checkpoints").join(format!("{name}-{tag}-k{k}"));
    let meta = Meta {
        suite: Suite::Transfer,
        method: strategy.name().into(),
        k_batches: Some(k),
        ..meta
    };
    artifacts::save_checkpoint(&adapted_dir, &adapted, &meta)?;
    artifacts::write_json(&adapted_dir.join("adapt.json"), &outcome)?;
    println!(
        "{} epochs, kept epoch {:?}; checkpoint {}",
        outcome.epochs_run,
        outcome.best_epoch,
        adapted_dir.display()
    );
    Ok(())
}

fn refine(
    cfg: &ExperimentConfig,
    out: &Path,
    iters: usize,
    refs: Option<usize>,
    dir: &Path,
) -> anyhow::Result<()> {
    let (model, meta) = artifacts::load_checkpoint(dir)?;
    require_modular(&meta, dir)?;
    let target = target_env(cfg)?;
    // adapted checkpoints reuse the observations they were adapted on
    let obs = match meta.k_batches {
        Some(k) => {
            suites::transfer_observations(cfg, &suites::transfer_pool(cfg, &target, meta.seed)?, k)?
        }
        None => trainer::reference_obs(&target.val, cfg.train.style_obs, meta.seed)?,
    };
    let rcfg = RefineConfig {
        iters,
        refs: refs.unwrap_or(cfg.refine.refs),
        ..cfg.refine
    };
    let c = model.encode_style(&obs)?;
    let references = build_style_references(&model, &obs, rcfg.refs)?;
    let (pred, outcomes) = refine_batch(&model, &target.test_windows, &c, &references, &rcfg)?;
    let warnings = outcomes.iter().filter(|o| o.warning).count();
    if warnings > 0 {
        log::warn!("{warnings} windows stopped on a non-finite objective");
    }
    let method = if meta.method == suites::FINETUNE_MOD {
        suites::FINETUNE_MOD_REFINE.to_string()
    } else {
        format!("{}+refine", meta.method)
    };
    let mut r = row(
        &method,
        &target.id,
        meta.seed,
        forecast::metrics::mean_errors(&pred, &target.test.targets)?,
    );
    r.k_batches = meta.k_batches;
    r.refine_iters = Some(iters);
    append_rows(out, &[r])?;
    let accepted: usize = outcomes.iter().map(|o| o.accepted).sum();
    println!("{accepted} accepted steps over {} windows", outcomes.len());
    Ok(())
}

// ---------------------------------------------------------------- report

fn report(out: &Path, inputs: &[PathBuf]) -> anyhow::Result<()> {
    let inputs = if inputs.is_empty() {
        vec![report_path(out)]
    } else {
        inputs.to_vec()
    };
    let mut report = EvalReport::default();
    for path in &inputs {
        for r in EvalReport::read_csv(path)? {
            report.push(r);
        }
    }
    let dir = out.join("summary");
    report.write_all(&dir)?;
    print_table(&report);
    println!("summary written to {}", dir.display());
    Ok(())
}

fn print_table(report: &EvalReport) {
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
    println!(
        "{:<22} {:<12} {:>3} {:>5} {:>3} {:>17} {:>17}",
        "method", "environment", "k", "iters", "n", "ade", "fde"
    );
    for a in report.aggregates() {
        println!(
            "{:<22} {:<12} {:>3} {:>5} {:>3} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            a.method,
            a.environment,
            opt(a.k_batches),
            opt(a.refine_iters),
            a.n,
            a.ade_mean,
            a.ade_std,
            a.fde_mean,
            a.fde_std
        );
    }
}
