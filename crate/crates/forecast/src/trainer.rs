//! Training drivers: pooled ERM, per-environment invariant training and the
//! four-stage modular protocol.
//!
//! Stages: (1) φ+g on the task (ERM or invariant), (2) ψ+h on the
//! contrastive loss, (3) f on the task with everything else frozen,
//! (4) ψ, f, g, h on task + contrastive with φ frozen.

use diffcore::{Graph64, Optimizer64, Tensor64, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{EnvData, Split};
use crate::error::{Error, Result};
use crate::losses::{
    combined_invariant_objective_with, invariant_penalty, style_contrastive, task_loss,
    PenaltyEstimator,
};
use crate::metrics;
use crate::model::{Bound, Group, ModularModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneMode {
    Erm,
    Invariant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Backbone,
    Contrastive,
    Modulator,
    Joint,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Backbone => "backbone",
            Stage::Contrastive => "contrastive",
            Stage::Modulator => "modulator",
            Stage::Joint => "joint",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEpochs {
    pub backbone: usize,
    pub contrastive: usize,
    pub modulator: usize,
    pub joint: usize,
}

impl Default for StageEpochs {
    fn default() -> Self {
        Self {
            backbone: 100,
            contrastive: 50,
            modulator: 20,
            joint: 300,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// φ and g.
    pub baseline: f64,
    pub style_encoder: f64,
    pub projection: f64,
    pub modulator: f64,
    pub modulator_adapt: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            baseline: 0.001,
            style_encoder: 0.0005,
            projection: 0.01,
            modulator: 0.01,
            modulator_adapt: 0.001,
        }
    }
}

impl LearningRates {
    pub fn for_group(&self, group: Group) -> f64 {
        match group {
            Group::Phi | Group::G => self.baseline,
            Group::Psi => self.style_encoder,
            Group::F => self.modulator,
            Group::H => self.projection,
        }
    }
}

/// Validation score minimized by backbone checkpoint selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Displacement error.
    #[default]
    ValError,
    /// The training objective: task loss plus λ times the penalty.
    ValObjective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: StageEpochs,
    pub lr: LearningRates,
    pub lambda: f64,
    /// Backbone epochs trained with λ = 0 before the penalty switches on.
    pub penalty_warmup: usize,
    pub penalty_estimator: PenaltyEstimator,
    /// Score that picks the kept backbone epoch.
    pub selection: Selection,
    pub tau: f64,
    pub contrastive_coef: f64,
    pub seed: u64,
    pub backbone: BackboneMode,
    pub skip_contrastive: bool,
    /// Scenes drawn per environment for one contrastive batch.
    pub contrastive_per_env: usize,
    /// Observations averaged into one style code.
    pub style_obs: usize,
    /// Coordinates per predicted point: 2 for trajectories.
    pub point_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: StageEpochs::default(),
            lr: LearningRates::default(),
            lambda: 1.0,
            penalty_warmup: 0,
            penalty_estimator: PenaltyEstimator::default(),
            selection: Selection::default(),
            tau: 0.1,
            contrastive_coef: 1.0,
            seed: 0,
            backbone: BackboneMode::Invariant,
            skip_contrastive: false,
            contrastive_per_env: 16,
            style_obs: 8,
            point_dim: 2,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.lr.baseline,
            self.lr.style_encoder,
            self.lr.projection,
            self.lr.modulator,
            self.lr.modulator_adapt,
        ];
        if self.batch_size == 0
            || self.style_obs == 0
            || self.point_dim == 0
            || self.contrastive_per_env < 2
        {
            return Err(Error::Config(
                "batch sizes and counts must be positive (contrastive_per_env >= 2)".into(),
            ));
        }
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!(
                "learning rates must be positive: {rates:?}"
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "λ must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) || !(self.contrastive_coef >= 0.0) {
            return Err(Error::Config(
                "τ must be > 0 and the contrastive coefficient >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One row of a training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean validation ADE (mean absolute error for scalar targets); absent
    /// for the contrastive stage.
    pub val_ade: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub trace: Vec<EpochRecord>,
    /// Epoch of the kept checkpoint; `None` if no epoch beat the starting point.
    pub best_epoch: Option<usize>,
    pub best_val: f64,
}

/// Per-environment index stream that reshuffles when exhausted, so small
/// environments never starve larger ones.
#[derive(Clone, Debug)]
pub struct Batcher {
    order: Vec<usize>,
    cursor: usize,
}

impl Batcher {
    pub fn new(n: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("cannot batch an empty split".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Ok(Self { order, cursor: 0 })
    }

    /// Next `size` indices, or fewer if the split itself is smaller.
    pub fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `count` distinct indices below `n` (all of them if `n <= count`).
pub(crate) fn sample_indices(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, count.min(n)).into_vec()
}

fn steps_per_epoch(sizes: impl Iterator<Item = usize>, batch: usize) -> usize {
    sizes.max().unwrap_or(0).div_ceil(batch).max(1)
}

/// Adam state for each trainable group.
pub(crate) struct GroupOptimizers(Vec<(Group, Optimizer64)>);

impl GroupOptimizers {
    pub(crate) fn new(rates: &[(Group, f64)]) -> Result<Self> {
        Ok(Self(
            rates
                .iter()
                .map(|&(g, lr)| Ok((g, Optimizer64::adam(lr)?)))
                .collect::<Result<_>>()?,
        ))
    }

    pub(crate) fn groups(&self) -> Vec<Group> {
        self.0.iter().map(|(g, _)| *g).collect()
    }

    /// Builds a loss on a fresh graph, backpropagates and updates every
    /// trainable group. Returns the loss value.
    pub(crate) fn step(
        &mut self,
        model: &mut ModularModel,
        build: impl FnOnce(&mut Graph64, &Bound) -> Result<Var>,
    ) -> Result<f64> {
        let mut g = Graph64::new();
        let bound = model.bind(&mut g, &self.groups());
        let loss = build(&mut g, &bound)?;
        let value = g.value(loss).item()?;
        let grads = g.backward(loss)?;
        model.accumulate(&bound, &grads)?;
        for (group, opt) in &mut self.0 {
            opt.step(&mut model.group_mut(*group).params_mut())?;
        }
        Ok(value)
    }
}

fn diverged(stage: Stage, epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Diff(diffcore::Error::NonFinite { .. }) => Error::Diverged {
            stage: stage.name().into(),
            epoch,
        },
        other => other,
    }
}

fn check_finite(v: f64, stage: Stage, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            stage: stage.name().into(),
            epoch,
        })
    }
}

/// Mean ADE for trajectories, mean absolute error for scalar targets.
pub fn displacement_error(pred: &Tensor64, truth: &Tensor64, point_dim: usize) -> Result<f64> {
    if point_dim == 2 {
        Ok(metrics::mean_errors(pred, truth)?.0)
    } else {
        metrics::mean_abs_error(pred, truth)
    }
}

fn task_value(pred: &Tensor64, truth: &Tensor64, point_dim: usize) -> Result<f64> {
    let mut g = Graph64::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(truth.clone()));
    let l = task_loss(&mut g, p, t, point_dim)?;
    Ok(g.value(l).item()?)
}

/// Validation objective (task loss plus `lambda` times the full-split
/// penalty) and displacement error of `g(φ(x))`, averaged over
/// environments. With `lambda = 0` the objective is the plain task loss.
pub fn validate_invariant(
    model: &ModularModel,
    envs: &[EnvData],
    lambda: f64,
    point_dim: usize,
) -> Result<(f64, f64)> {
    let (mut loss, mut err) = (0.0, 0.0);
    for env in envs {
        let pred = model.predict_invariant(&env.val.inputs)?;
        let mut g = Graph64::new();
        let (p, t) = (
            g.constant(pred.clone()),
            g.constant(env.val.targets.clone()),
        );
        let risk = task_loss(&mut g, p, t, point_dim)?;
        loss += g.value(risk).item()?;
        if lambda > 0.0 {
            let pen = invariant_penalty(&mut g, p, t, point_dim)?;
            loss += lambda * g.value(pen).item()?;
        }
        err += displacement_error(&pred, &env.val.targets, point_dim)?;
    }
    let n = envs.len() as f64;
    Ok((loss / n, err / n))
}

/// Fixed style observations used as the reference set of each environment's
/// validation split.
pub fn reference_obs(split: &Split, count: usize, seed: u64) -> Result<Tensor64> {
    let mut rng = rng_for(seed, 100);
    Ok(split
        .style
        .select_rows(&sample_indices(split.len(), count, &mut rng))?)
}

/// Validation loss and ADE of the modular forward, with each environment's
/// style code taken from fixed validation references.
pub fn validate_modular(
    model: &ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let (mut loss, mut err) = (0.0, 0.0);
    for env in envs {
        let refs = reference_obs(&env.val, cfg.style_obs, cfg.seed)?;
        let c = model.encode_style(&refs)?;
        let pred = model.predict_with_code(&env.val.inputs, &c)?;
        loss += task_value(&pred, &env.val.targets, cfg.point_dim)?;
        err += displacement_error(&pred, &env.val.targets, cfg.point_dim)?;
    }
    let n = envs.len() as f64;
    Ok((loss / n, err / n))
}

fn check_envs(envs: &[EnvData], min: usize) -> Result<()> {
    if envs.len() < min {
        return Err(Error::InvalidInput(format!(
            "need at least {min} environments, got {}",
            envs.len()
        )));
    }
    Ok(())
}

/// Keeps the best model seen so far by validation score.
struct BestKeeper {
    best: ModularModel,
    best_val: f64,
    best_epoch: Option<usize>,
}

impl BestKeeper {
    fn new(model: &ModularModel, val: f64) -> Self {
        Self {
            best: model.clone(),
            best_val: val,
            best_epoch: None,
        }
    }

    fn offer(&mut self, model: &ModularModel, val: f64, epoch: usize) {
        if val < self.best_val || (self.best_epoch.is_none() && !self.best_val.is_finite()) {
            self.best = model.clone();
            self.best_val = val;
            self.best_epoch = Some(epoch);
        }
    }

    fn finish(
        self,
        model: &mut ModularModel,
        stage: Stage,
        trace: Vec<EpochRecord>,
    ) -> StageOutcome {
        *model = self.best;
        StageOutcome {
            stage,
            trace,
            best_epoch: self.best_epoch,
            best_val: self.best_val,
        }
    }
}

/// Stage 1: trains φ+g on `g(φ(x))`. ERM pools and shuffles all training
/// environments; invariant mode draws one batch per environment each step
/// and applies the penalty per environment.
pub fn train_backbone(
    model: &mut ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    check_envs(envs, 1)?;
    let stage = Stage::Backbone;
    let mut rng = rng_for(cfg.seed, stage.stream());
    let mut opts =
        GroupOptimizers::new(&[(Group::Phi, cfg.lr.baseline), (Group::G, cfg.lr.baseline)])?;
    let pd = cfg.point_dim;
    let pooled = match cfg.backbone {
        BackboneMode::Erm => Some(Split::concat(
            &envs.iter().map(|e| &e.train).collect::<Vec<_>>(),
        )?),
        BackboneMode::Invariant => None,
    };
    let mut batchers = match &pooled {
        Some(p) => vec![Batcher::new(p.len(), &mut rng)?],
        None => envs
            .iter()
            .map(|e| Batcher::new(e.train.len(), &mut rng))
            .collect::<Result<_>>()?,
    };
    let steps = match &pooled {
        Some(p) => steps_per_epoch(std::iter::once(p.len()), cfg.batch_size),
        None => steps_per_epoch(envs.iter().map(|e| e.train.len()), cfg.batch_size),
    };
    let sel_lambda = match cfg.backbone {
        BackboneMode::Erm => 0.0,
        BackboneMode::Invariant => cfg.lambda,
    };
    let score = |obj: f64, err: f64| match cfg.selection {
        Selection::ValError => err,
        Selection::ValObjective => obj,
    };
    let (v0, a0) = validate_invariant(model, envs, sel_lambda, pd)?;
    let mut keeper = BestKeeper::new(model, score(v0, a0));
    log::debug!("backbone start: val loss {v0:.5} err {a0:.5}");
    let mut trace = Vec::with_capacity(cfg.epochs.backbone);
    for epoch in 1..=cfg.epochs.backbone {
        let lambda = if epoch <= cfg.penalty_warmup {
            0.0
        } else {
            cfg.lambda
        };
        let mut total = 0.0;
        for _ in 0..steps {
            let loss = match &pooled {
                Some(p) => {
                    let b = p.select(&batchers[0].next(cfg.batch_size, &mut rng))?;
                    opts.step(model, |g, m| {
                        let x = g.constant(b.inputs);
                        let y = g.constant(b.targets);
                        let pred = m.predict_invariant(g, x)?;
                        task_loss(g, pred, y, pd)
                    })
                }
                None => {
                    let batches: Vec<Split> = envs
                        .iter()
                        .zip(batchers.iter_mut())
                        .map(|(e, bt)| e.train.select(&bt.next(cfg.batch_size, &mut rng)))
                        .collect::<Result<_>>()?;
                    opts.step(model, |g, m| {
                        let mut pairs = Vec::with_capacity(batches.len());
                        for b in batches {
                            let x = g.constant(b.inputs);
                            let y = g.constant(b.targets);
                            pairs.push((m.predict_invariant(g, x)?, y));
                        }
                        combined_invariant_objective_with(
                            g,
                            &pairs,
                            lambda,
                            pd,
                            cfg.penalty_estimator,
                        )
                    })
                }
            }
            .map_err(diverged(stage, epoch))?;
            total += check_finite(loss, stage, epoch)?;
        }
        let (val_loss, val_err) =
            validate_invariant(model, envs, sel_lambda, pd).map_err(diverged(stage, epoch))?;
        check_finite(val_loss, stage, epoch)?;
        // Penalty warm-up epochs are not eligible: the kept model must have
        // seen the full objective.
        if epoch > cfg.penalty_warmup || cfg.lambda == 0.0 {
            keeper.offer(model, score(val_loss, val_err), epoch);
        } else {
            keeper = BestKeeper::new(model, score(val_loss, val_err));
        }
        trace.push(EpochRecord {
            stage,
            epoch,
            train_loss: total / steps as f64,
            val_loss,
            val_ade: Some(val_err),
        });
    }
    Ok(keeper.finish(model, stage, trace))
}

/// Stage 1 in ERM mode.
pub fn train_erm(
    model: &mut ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
) -> Result<StageOutcome> {
    train_backbone(
        model,
        envs,
        &TrainConfig {
            backbone: BackboneMode::Erm,
            ..cfg.clone()
        },
    )
}

/// Stage 1 in invariant mode; needs at least two environments.
pub fn train_invariant(
    model: &mut ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
) -> Result<StageOutcome> {
    check_envs(envs, 2)?;
    train_backbone(
        model,
        envs,
        &TrainConfig {
            backbone: BackboneMode::Invariant,
            ..cfg.clone()
        },
    )
}

pub const LAMBDA_GRID: [f64; 6] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];

/// One invariant model per λ, all from the same initial model.
pub fn train_lambda_grid(
    init: &ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
    lambdas: &[f64],
) -> Result<Vec<(f64, ModularModel, StageOutcome)>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut m = init.clone();
            let out = train_invariant(
                &mut m,
                envs,
                &TrainConfig {
                    lambda,
                    ..cfg.clone()
                },
            )?;
            Ok((lambda, m, out))
        })
        .collect()
}

/// Balanced contrastive batch: up to `per_env` style observations from each
/// environment, labelled by environment index.
pub fn contrastive_batch(
    splits: &[&Split],
    per_env: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor64, Vec<usize>)> {
    if splits.len() < 2 {
        return Err(Error::InvalidInput(
            "contrastive batches need at least two environments".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (e, s) in splits.iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::ContrastiveBatch {
                env: e,
                missing: "positive",
            });
        }
        for i in sample_indices(s.len(), per_env, rng) {
            rows.push(s.style.row(i).to_vec());
            labels.push(e);
        }
    }
    Ok((Tensor64::from_rows(&rows)?, labels))
}

fn contrastive_term(
    g: &mut Graph64,
    m: &Bound,
    obs: Tensor64,
    labels: &[usize],
    tau: f64,
) -> Result<Var> {
    let o = g.constant(obs);
    let p = m.project_each(g, o)?;
    style_contrastive(g, p, labels, tau)
}

fn validate_contrastive(model: &ModularModel, envs: &[EnvData], cfg: &TrainConfig) -> Result<f64> {
    let mut rng = rng_for(cfg.seed, 200);
    let (obs, labels) = contrastive_batch(
        &envs.iter().map(|e| &e.val).collect::<Vec<_>>(),
        cfg.contrastive_per_env,
        &mut rng,
    )?;
    let mut g = Graph64::new();
    let b = model.bind(&mut g, &[]);
    let l = contrastive_term(&mut g, &b, obs, &labels, cfg.tau)?;
    Ok(g.value(l).item()?)
}

/// Stage 2: ψ+h on the style contrastive loss alone. The kept checkpoint
/// has the lowest validation contrastive loss.
pub fn train_contrastive(
    model: &mut ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    check_envs(envs, 2)?;
    let stage = Stage::Contrastive;
    let mut rng = rng_for(cfg.seed, stage.stream());
    let mut opts = GroupOptimizers::new(&[
        (Group::Psi, cfg.lr.style_encoder),
        (Group::H, cfg.lr.projection),
    ])?;
    let steps = steps_per_epoch(envs.iter().map(|e| e.train.len()), cfg.batch_size);
    let trains: Vec<&Split> = envs.iter().map(|e| &e.train).collect();
    let mut keeper = BestKeeper::new(model, validate_contrastive(model, envs, cfg)?);
    let mut trace = Vec::with_capacity(cfg.epochs.contrastive);
    for epoch in 1..=cfg.epochs.contrastive {
        let mut total = 0.0;
        for _ in 0..steps {
            let (obs, labels) = contrastive_batch(&trains, cfg.contrastive_per_env, &mut rng)?;
            let loss = opts
                .step(model, |g, m| contrastive_term(g, m, obs, &labels, cfg.tau))
                .map_err(diverged(stage, epoch))?;
            total += check_finite(loss, stage, epoch)?;
        }
        let val = validate_contrastive(model, envs, cfg).map_err(diverged(stage, epoch))?;
        keeper.offer(model, check_finite(val, stage, epoch)?, epoch);
        trace.push(EpochRecord {
            stage,
            epoch,
            train_loss: total / steps as f64,
            val_loss: val,
            val_ade: None,
        });
    }
    Ok(keeper.finish(model, stage, trace))
}

/// One training batch per environment plus the observations its style code
/// is averaged from.
pub(crate) struct StyledBatch {
    pub(crate) batch: Split,
    pub(crate) obs: Tensor64,
}

pub(crate) fn styled_batches(
    splits: &[&Split],
    batchers: &mut [Batcher],
    batch_size: usize,
    style_obs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StyledBatch>> {
    splits
        .iter()
        .zip(batchers.iter_mut())
        .map(|(s, b)| {
            let batch = s.select(&b.next(batch_size, rng))?;
            let obs = s
                .style
                .select_rows(&sample_indices(s.len(), style_obs, rng))?;
            Ok(StyledBatch { batch, obs })
        })
        .collect()
}

/// Mean task loss over environments of the modular forward, each environment
/// using the style code of its own observations.
pub(crate) fn styled_task_loss(
    g: &mut Graph64,
    m: &Bound,
    batches: Vec<StyledBatch>,
    point_dim: usize,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(batches.len());
    for sb in batches {
        let x = g.constant(sb.batch.inputs);
        let y = g.constant(sb.batch.targets);
        let o = g.constant(sb.obs);
        let c = m.style(g, o)?;
        let pred = m.predict(g, x, c)?;
        terms.push(task_loss(g, pred, y, point_dim)?);
    }
    let stacked = g.concat_cols(&terms)?;
    Ok(g.mean(stacked)?)
}

/// Stage 3 (f only, task loss) or stage 4 (ψ, f, g, h on task plus
/// contrastive). φ is never trained here.
pub fn train_styled(
    model: &mut ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<StageOutcome> {
    cfg.validate()?;
    check_envs(envs, 1)?;
    let (groups, epochs, contrastive) = match stage {
        Stage::Modulator => (vec![Group::F], cfg.epochs.modulator, false),
        Stage::Joint => (
            vec![Group::Psi, Group::F, Group::G, Group::H],
            cfg.epochs.joint,
            envs.len() >= 2 && cfg.contrastive_coef > 0.0,
        ),
        other => {
            return Err(Error::Config(format!(
                "{} is not a styled stage",
                other.name()
            )))
        }
    };
    let rates: Vec<(Group, f64)> = groups.iter().map(|&g| (g, cfg.lr.for_group(g))).collect();
    let mut opts = GroupOptimizers::new(&rates)?;
    let mut rng = rng_for(cfg.seed, stage.stream());
    let trains: Vec<&Split> = envs.iter().map(|e| &e.train).collect();
    let mut batchers: Vec<Batcher> = trains
        .iter()
        .map(|s| Batcher::new(s.len(), &mut rng))
        .collect::<Result<_>>()?;
    let steps = steps_per_epoch(trains.iter().map(|s| s.len()), cfg.batch_size);
    let (_, a0) = validate_modular(model, envs, cfg)?;
    let mut keeper = BestKeeper::new(model, a0);
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut total = 0.0;
        for _ in 0..steps {
            let batches = styled_batches(
                &trains,
                &mut batchers,
                cfg.batch_size,
                cfg.style_obs,
                &mut rng,
            )?;
            let cbatch = if contrastive {
                Some(contrastive_batch(
                    &trains,
                    cfg.contrastive_per_env,
                    &mut rng,
                )?)
            } else {
                None
            };
            let loss = opts
                .step(model, |g, m| {
                    let task = styled_task_loss(g, m, batches, cfg.point_dim)?;
                    match cbatch {
                        Some((obs, labels)) => {
                            let con = contrastive_term(g, m, obs, &labels, cfg.tau)?;
                            let weighted = g.scale(con, cfg.contrastive_coef)?;
                            Ok(g.add(task, weighted)?)
                        }
                        None => Ok(task),
                    }
                })
                .map_err(diverged(stage, epoch))?;
            total += check_finite(loss, stage, epoch)?;
        }
        let (val_loss, val_err) =
            validate_modular(model, envs, cfg).map_err(diverged(stage, epoch))?;
        keeper.offer(model, check_finite(val_err, stage, epoch)?, epoch);
        trace.push(EpochRecord {
            stage,
            epoch,
            train_loss: total / steps as f64,
            val_loss,
            val_ade: Some(val_err),
        });
    }
    Ok(keeper.finish(model, stage, trace))
}

/// Runs the stages from `from` onwards; stage 2 is skipped when configured.
pub fn train_modular_staged(
    model: &mut ModularModel,
    envs: &[EnvData],
    cfg: &TrainConfig,
    from: Stage,
) -> Result<Vec<StageOutcome>> {
    cfg.validate()?;
    let mut out = Vec::new();
    if from <= Stage::Backbone {
        out.push(train_backbone(model, envs, cfg)?);
    }
    if from <= Stage::Contrastive && !cfg.skip_contrastive {
        out.push(train_contrastive(model, envs, cfg)?);
    }
    if from <= Stage::Modulator {
        out.push(train_styled(model, envs, cfg, Stage::Modulator)?);
    }
    out.push(train_styled(model, envs, cfg, Stage::Joint)?);
    Ok(out)
}
