//! Seeded experiment suites: spurious-feature robustness, style shifts and
//! low-shot transfer. Each returns an [`EvalReport`] with one row per
//! (method, environment, seed) cell plus the hashes that identify the run.

use std::collections::BTreeMap;
use std::path::Path;

use diffcore::Tensor64;
use rand::seq::SliceRandom;
use simkit::{generate_scenes, load_tsv, SimConfig, SplitCounts, TrajectoryScene};

use crate::adapt::{build_style_references, finetune, refine_batch, Strategy};
use crate::config::ExperimentConfig;
use crate::dataio::{
    add_spurious_channel, invariant_dim, spurious_env_id, window_scenes, EnvData, InstanceWindow,
    Split, SPURIOUS_TEST_ALPHAS, SPURIOUS_TEST_SUBSET, SPURIOUS_TRAIN, SUBSETS,
};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{Architecture, ModularModel};
use crate::report::{split_hash, EvalReport, EvalRow};
use crate::trainer::{
    reference_obs, rng_for, train_contrastive, train_erm, train_invariant, train_styled, Stage,
    StageOutcome, TrainConfig,
};

/// Train/val/test data of one environment, with the test windows kept for
/// refinement.
#[derive(Clone, Debug)]
pub struct EnvSplits {
    pub id: String,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub test_windows: Vec<InstanceWindow>,
}

impl EnvSplits {
    pub fn from_windows(
        id: String,
        train: &[InstanceWindow],
        val: &[InstanceWindow],
        test: Vec<InstanceWindow>,
    ) -> Result<Self> {
        Ok(Self {
            id,
            train: Split::from_windows(train)?,
            val: Split::from_windows(val)?,
            test: Split::from_windows(&test)?,
            test_windows: test,
        })
    }

    pub fn env_data(&self) -> EnvData {
        EnvData {
            id: self.id.clone(),
            train: self.train.clone(),
            val: self.val.clone(),
        }
    }

    pub fn hashes(&self, out: &mut BTreeMap<String, String>) {
        for (name, split) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            out.insert(format!("{}/{name}", self.id), split_hash(split));
        }
    }
}

/// Dataset seed of one style so that environments do not share placements.
pub fn style_seed(data_seed: u64, separation: f64) -> u64 {
    data_seed
        .wrapping_mul(1_000_003)
        .wrapping_add((separation * 1000.0).round() as u64)
}

/// Simulated scenes of one style, split by split.
pub fn simulate_style_scenes(
    separation: f64,
    counts: SplitCounts,
    data_seed: u64,
    sim: &SimConfig,
) -> Result<[Vec<TrajectoryScene>; 3]> {
    let seed = style_seed(data_seed, separation);
    Ok([
        generate_scenes(separation, simkit::Split::Train, counts.train, seed, sim)?,
        generate_scenes(separation, simkit::Split::Val, counts.val, seed, sim)?,
        generate_scenes(separation, simkit::Split::Test, counts.test, seed, sim)?,
    ])
}

pub fn style_env(
    separation: f64,
    counts: SplitCounts,
    data_seed: u64,
    sim: &SimConfig,
) -> Result<EnvSplits> {
    let [train, val, test] = simulate_style_scenes(separation, counts, data_seed, sim)?;
    EnvSplits::from_windows(
        simkit::style_env_id(separation),
        &window_scenes(&train),
        &window_scenes(&val),
        window_scenes(&test),
    )
}

fn errors(pred: &Tensor64, truth: &Tensor64) -> Result<(f64, f64)> {
    metrics::mean_errors(pred, truth)
}

fn row(method: &str, environment: &str, seed: u64, (ade, fde): (f64, f64)) -> EvalRow {
    EvalRow {
        method: method.into(),
        environment: environment.into(),
        seed,
        ade,
        fde,
        k_batches: None,
        refine_iters: None,
    }
}

/// Seeded model with scaling fitted on the training splits.
pub fn initial_model(input_dim: usize, seed: u64, train: &[&Split]) -> Result<ModularModel> {
    let mut m = ModularModel::new(Architecture::trajectory(input_dim), seed)?;
    m.fit_scaling(train)?;
    Ok(m)
}

// ---------------------------------------------------------------- spurious

/// Scenes of each subset (train, val, test).
pub type SubsetScenes = BTreeMap<String, [Vec<TrajectoryScene>; 3]>;

/// Loads `<dir>/<subset>/{train,val,test}.tsv` for every subset, or
/// simulates stand-ins (one seed per subset, shared separation) when no
/// directory is configured.
pub fn spurious_scenes(cfg: &ExperimentConfig) -> Result<SubsetScenes> {
    let sp = &cfg.spurious;
    let mut out = BTreeMap::new();
    for (i, subset) in SUBSETS.iter().enumerate() {
        let scenes = match &sp.data_dir {
            Some(dir) => {
                let load = |split: &str| -> Result<Vec<TrajectoryScene>> {
                    let path = dir.join(subset).join(format!("{split}.tsv"));
                    if !path.exists() {
                        return Err(Error::MissingArtifact(format!(
                            "{} missing",
                            path.display()
                        )));
                    }
                    Ok(load_tsv(&path, subset, cfg.sim.dt)?)
                };
                [load("train")?, load("val")?, load("test")?]
            }
            None => simulate_style_scenes(
                sp.separation,
                sp.counts,
                cfg.data_seed + 17 * (i as u64 + 1),
                &cfg.sim,
            )?,
        };
        out.insert(subset.to_string(), scenes);
    }
    Ok(out)
}

fn spurious_windows(
    scenes: &[TrajectoryScene],
    subset: &str,
    alpha: f64,
) -> Result<Vec<InstanceWindow>> {
    let mut w = window_scenes(scenes);
    if w.is_empty() {
        return Err(Error::InvalidInput(format!(
            "subset {subset} has no 20-frame windows"
        )));
    }
    add_spurious_channel(&mut w, subset, alpha)?;
    Ok(w)
}

/// Training environments and the test environments keyed by α.
pub type SpuriousEnvs = (Vec<EnvSplits>, Vec<(f64, EnvSplits)>);

/// Training environments (one α per subset) and the held-out test subset
/// at every test α.
pub fn spurious_envs(scenes: &SubsetScenes) -> Result<SpuriousEnvs> {
    let get = |s: &str| {
        scenes
            .get(s)
            .ok_or_else(|| Error::MissingArtifact(format!("subset {s} missing")))
    };
    let train = SPURIOUS_TRAIN
        .iter()
        .map(|&(subset, alpha)| {
            let [tr, va, te] = get(subset)?;
            EnvSplits::from_windows(
                spurious_env_id(subset, alpha),
                &spurious_windows(tr, subset, alpha)?,
                &spurious_windows(va, subset, alpha)?,
                spurious_windows(te, subset, alpha)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let [tr, va, te] = get(SPURIOUS_TEST_SUBSET)?;
    let test = SPURIOUS_TEST_ALPHAS
        .iter()
        .map(|&alpha| {
            let s = SPURIOUS_TEST_SUBSET;
            let env = EnvSplits::from_windows(
                spurious_env_id(s, alpha),
                &spurious_windows(tr, s, alpha)?,
                &spurious_windows(va, s, alpha)?,
                spurious_windows(te, s, alpha)?,
            )?;
            Ok((alpha, env))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

pub fn invariant_method_name(lambda: f64) -> String {
    format!("invariant-l{lambda}")
}

/// Backbone schedule of the spurious suite; `lambda` switches on the
/// penalty after the warm-up.
pub fn spurious_train_config(
    cfg: &ExperimentConfig,
    seed: u64,
    lambda: Option<f64>,
) -> TrainConfig {
    let sp = &cfg.spurious;
    TrainConfig {
        seed,
        epochs: crate::trainer::StageEpochs {
            backbone: sp.epochs,
            ..cfg.train.epochs
        },
        lambda: lambda.unwrap_or(0.0),
        penalty_warmup: if lambda.is_some() { sp.warmup } else { 0 },
        ..cfg.train.clone()
    }
}

/// ERM and one invariant model per configured λ, trained on the four
/// training subsets and evaluated on the test subset at every α.
pub fn run_spurious_suite(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let scenes = spurious_scenes(cfg)?;
    let (train, test) = spurious_envs(&scenes)?;
    let envs: Vec<EnvData> = train.iter().map(EnvSplits::env_data).collect();
    let mut report = EvalReport {
        config_hash: cfg.hash()?,
        ..Default::default()
    };
    for e in train.iter().chain(test.iter().map(|(_, e)| e)) {
        e.hashes(&mut report.dataset_hashes);
    }
    let trains: Vec<&Split> = envs.iter().map(|e| &e.train).collect();
    for &seed in &cfg.seeds {
        let init = initial_model(invariant_dim(true), seed, &trains)?;
        let mut runs: Vec<(String, ModularModel)> = Vec::new();
        let mut erm = init.clone();
        train_erm(&mut erm, &envs, &spurious_train_config(cfg, seed, None))?;
        runs.push(("erm".into(), erm));
        for &lambda in &cfg.spurious.lambdas {
            let mut m = init.clone();
            train_invariant(
                &mut m,
                &envs,
                &spurious_train_config(cfg, seed, Some(lambda)),
            )?;
            runs.push((invariant_method_name(lambda), m));
        }
        for (method, model) in &runs {
            report
                .checkpoint_hashes
                .insert(format!("{method}/seed{seed}"), model.hash());
            for (_, env) in &test {
                let pred = model.predict_invariant(&env.test.inputs)?;
                report.push(row(
                    method,
                    &env.id,
                    seed,
                    errors(&pred, &env.test.targets)?,
                ));
            }
            log::info!("spurious suite: seed {seed} {method} done");
        }
    }
    Ok(report)
}

/// ADE at α = 64 over the mean ADE at the training αs {1, 2, 4, 8}, on
/// seed means.
pub fn degradation_ratio(report: &EvalReport, method: &str) -> Result<f64> {
    let at = |alpha: f64| {
        report.require_ade(
            method,
            &spurious_env_id(SPURIOUS_TEST_SUBSET, alpha),
            None,
            None,
        )
    };
    let train_alphas: Vec<f64> = SPURIOUS_TRAIN.iter().map(|&(_, a)| a).collect();
    let base = train_alphas
        .iter()
        .map(|&a| at(a))
        .collect::<Result<Vec<_>>>()?;
    Ok(at(64.0)? / (base.iter().sum::<f64>() / base.len() as f64))
}

// ------------------------------------------------------------------- style

pub const VANILLA: &str = "vanilla";
pub const INVARIANT: &str = "invariant";
pub const MODULAR: &str = "modular";
pub const INV_MOD: &str = "inv+mod";
pub const IID: &str = "iid";

#[derive(Clone, Debug)]
pub struct StyleData {
    pub train: Vec<EnvSplits>,
    pub test: Vec<EnvSplits>,
}

impl StyleData {
    pub fn simulate(cfg: &ExperimentConfig) -> Result<Self> {
        let make = |styles: &[f64]| -> Result<Vec<EnvSplits>> {
            styles
                .iter()
                .map(|&d| style_env(d, cfg.style.counts, cfg.data_seed, &cfg.sim))
                .collect()
        };
        Ok(Self {
            train: make(&cfg.style.train_styles)?,
            test: make(&cfg.style.test_styles)?,
        })
    }

    pub fn env(&self, separation: f64) -> Result<&EnvSplits> {
        let id = simkit::style_env_id(separation);
        self.train
            .iter()
            .chain(&self.test)
            .find(|e| e.id == id)
            .ok_or_else(|| Error::MissingArtifact(format!("no dataset for {id}")))
    }
}

/// Models and traces of one seed of the style suite.
#[derive(Clone, Debug)]
pub struct StyleRun {
    pub seed: u64,
    pub vanilla: ModularModel,
    pub invariant: ModularModel,
    pub modular: ModularModel,
    pub inv_mod: ModularModel,
    /// Inv+Mod stages 2-4.
    pub with_pretrain: Vec<StageOutcome>,
    /// Inv+Mod stages 3-4 without contrastive pre-training.
    pub without_pretrain: Vec<StageOutcome>,
}

#[derive(Clone, Debug)]
pub struct StyleSuiteOutput {
    pub report: EvalReport,
    pub runs: Vec<StyleRun>,
    pub data: StyleData,
}

/// Stages 2-4 (or 3-4) on top of a trained backbone.
pub fn train_style_stages(
    backbone: &ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
    pretrain: bool,
) -> Result<(ModularModel, Vec<StageOutcome>)> {
    let mut m = backbone.clone();
    let mut out = Vec::new();
    if pretrain {
        out.push(train_contrastive(&mut m, envs, cfg)?);
    }
    out.push(train_styled(&mut m, envs, cfg, Stage::Modulator)?);
    out.push(train_styled(&mut m, envs, cfg, Stage::Joint)?);
    Ok((m, out))
}

/// Modular prediction errors on an environment's test split, the style code
/// taken from fixed observations of its validation split.
pub fn eval_modular(
    model: &ModularModel,
    env: &EnvSplits,
    style_obs: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let refs = reference_obs(&env.val, style_obs, seed)?;
    let c = model.encode_style(&refs)?;
    errors(
        &model.predict_with_code(&env.test.inputs, &c)?,
        &env.test.targets,
    )
}

pub fn eval_invariant(model: &ModularModel, env: &EnvSplits) -> Result<(f64, f64)> {
    errors(
        &model.predict_invariant(&env.test.inputs)?,
        &env.test.targets,
    )
}

pub fn run_style_suite(cfg: &ExperimentConfig) -> Result<StyleSuiteOutput> {
    cfg.validate()?;
    let data = StyleData::simulate(cfg)?;
    run_style_suite_on(cfg, data)
}

pub fn run_style_suite_on(cfg: &ExperimentConfig, data: StyleData) -> Result<StyleSuiteOutput> {
    let envs: Vec<EnvData> = data.train.iter().map(EnvSplits::env_data).collect();
    let trains: Vec<&Split> = envs.iter().map(|e| &e.train).collect();
    let mut report = EvalReport {
        config_hash: cfg.hash()?,
        ..Default::default()
    };
    for e in data.train.iter().chain(&data.test) {
        e.hashes(&mut report.dataset_hashes);
    }
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let init = initial_model(invariant_dim(false), seed, &trains)?;
        let mut vanilla = init.clone();
        train_erm(&mut vanilla, &envs, &tc)?;
        let mut invariant = init;
        train_invariant(
            &mut invariant,
            &envs,
            &TrainConfig {
                lambda: cfg.style.lambda,
                ..tc.clone()
            },
        )?;
        let (modular, _) = train_style_stages(&vanilla, &envs, &tc, true)?;
        let (inv_mod, with_pretrain) = train_style_stages(&invariant, &envs, &tc, true)?;
        let (_, without_pretrain) = train_style_stages(&invariant, &envs, &tc, false)?;

        for (method, model, styled) in [
            (VANILLA, &vanilla, false),
            (INVARIANT, &invariant, false),
            (MODULAR, &modular, true),
            (INV_MOD, &inv_mod, true),
        ] {
            report
                .checkpoint_hashes
                .insert(format!("{method}/seed{seed}"), model.hash());
            let eval = |env: &EnvSplits| {
                if styled {
                    eval_modular(model, env, cfg.train.style_obs, seed)
                } else {
                    eval_invariant(model, env)
                }
            };
            let mut iid = (0.0, 0.0);
            for env in &data.train {
                let e = eval(env)?;
                iid = (iid.0 + e.0, iid.1 + e.1);
                report.push(row(method, &env.id, seed, e));
            }
            let n = data.train.len() as f64;
            report.push(row(method, IID, seed, (iid.0 / n, iid.1 / n)));
            for env in &data.test {
                report.push(row(method, &env.id, seed, eval(env)?));
            }
        }
        log::info!("style suite: seed {seed} done");
        runs.push(StyleRun {
            seed,
            vanilla,
            invariant,
            modular,
            inv_mod,
            with_pretrain,
            without_pretrain,
        });
    }
    Ok(StyleSuiteOutput { report, runs, data })
}

/// Validation ADE of the joint stage after `fraction` of its epochs.
pub fn joint_val_ade_at(stages: &[StageOutcome], fraction: f64) -> Result<f64> {
    let joint = stages
        .iter()
        .find(|s| s.stage == Stage::Joint)
        .ok_or_else(|| Error::MissingArtifact("no joint-stage trace".into()))?;
    let n = joint.trace.len();
    if n == 0 {
        return Err(Error::MissingArtifact("empty joint-stage trace".into()));
    }
    let epoch = ((n as f64 * fraction).round() as usize).clamp(1, n);
    joint.trace[epoch - 1]
        .val_ade
        .ok_or_else(|| Error::MissingArtifact("joint stage has no validation ADE".into()))
}

// ---------------------------------------------------------------- transfer

pub const FINETUNE_ALL: &str = "finetune-all";
pub const FINETUNE_MOD: &str = "finetune-mod";
pub const FINETUNE_MOD_REFINE: &str = "finetune-mod+refine";

/// Seeded sample of the target's training windows large enough for the
/// largest shot count; adaptation with k batches uses its first k batches.
pub fn transfer_pool(cfg: &ExperimentConfig, target: &EnvSplits, seed: u64) -> Result<Split> {
    let max_k = cfg.transfer.shots.iter().copied().max().unwrap_or(1);
    let budget = max_k * cfg.adapt.batch_size;
    if target.train.len() < budget {
        return Err(Error::InvalidInput(format!(
            "{} has {} training windows, transfer needs {budget}",
            target.id,
            target.train.len()
        )));
    }
    let mut rng = rng_for(seed, 400);
    let mut order: Vec<usize> = (0..target.train.len()).collect();
    order.shuffle(&mut rng);
    target.train.select(&order[..budget])
}

/// Style observations for the code and references at `k` batches, drawn
/// from the k-batch sample only.
pub fn transfer_observations(cfg: &ExperimentConfig, pool: &Split, k: usize) -> Result<Tensor64> {
    let rows: Vec<usize> = (0..cfg
        .adapt
        .style_obs
        .min(k * cfg.adapt.batch_size)
        .min(pool.len()))
        .collect();
    Ok(pool.style.select_rows(&rows)?)
}

/// Low-shot transfer of each base model to the target style: fine-tune all
/// style parameters, fine-tune f only, and f only plus refinement, for every
/// shot count.
pub fn run_transfer_suite(
    cfg: &ExperimentConfig,
    bases: &[(u64, ModularModel)],
    data: &StyleData,
) -> Result<EvalReport> {
    cfg.validate()?;
    let target = data.env(cfg.transfer.target_style)?;
    let mut report = EvalReport {
        config_hash: cfg.hash()?,
        ..Default::default()
    };
    target.hashes(&mut report.dataset_hashes);
    for (seed, base) in bases {
        let pool = transfer_pool(cfg, target, *seed)?;
        let acfg = crate::adapt::AdaptConfig {
            seed: *seed,
            ..cfg.adapt.clone()
        };
        report
            .checkpoint_hashes
            .insert(format!("base/seed{seed}"), base.hash());
        for &k in &cfg.transfer.shots {
            let obs = transfer_observations(cfg, &pool, k)?;
            for strategy in [Strategy::All, Strategy::ModulatorOnly] {
                let (adapted, _) = finetune(base, &pool, strategy, k, &acfg)?;
                let c = adapted.encode_style(&obs)?;
                let pred = adapted.predict_with_code(&target.test.inputs, &c)?;
                let mut r = row(
                    strategy.name(),
                    &target.id,
                    *seed,
                    errors(&pred, &target.test.targets)?,
                );
                r.k_batches = Some(k);
                report.push(r);
                if strategy == Strategy::ModulatorOnly {
                    let refs = build_style_references(&adapted, &obs, cfg.refine.refs)?;
                    let (refined, _) =
                        refine_batch(&adapted, &target.test_windows, &c, &refs, &cfg.refine)?;
                    let mut r = row(
                        FINETUNE_MOD_REFINE,
                        &target.id,
                        *seed,
                        errors(&refined, &target.test.targets)?,
                    );
                    r.k_batches = Some(k);
                    r.refine_iters = Some(cfg.refine.iters);
                    report.push(r);
                }
            }
        }
        log::info!("transfer suite: seed {seed} done");
    }
    Ok(report)
}

/// Writes a style dataset for every configured style under `dir`.
pub fn write_style_datasets(
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<simkit::StyleManifest>> {
    cfg.style
        .train_styles
        .iter()
        .chain(&cfg.style.test_styles)
        .map(|&d| {
            Ok(simkit::generate_dataset(
                dir,
                d,
                cfg.style.counts,
                style_seed(cfg.data_seed, d),
                &cfg.sim,
            )?)
        })
        .collect()
}
