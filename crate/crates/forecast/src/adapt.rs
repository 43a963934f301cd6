//! Low-shot transfer to a new environment and test-time refinement of the
//! modulated latent against style references.

use diffcore::{Graph64, Tensor64, Var};
use serde::{Deserialize, Serialize};

use crate::dataio::{neighbor_future_cv, InstanceWindow, Split, OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::model::{Bound, Group, ModularModel};
use crate::trainer::{
    displacement_error, rng_for, sample_indices, styled_batches, styled_task_loss, Batcher,
    GroupOptimizers, LearningRates,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// ψ, f, g and h.
    All,
    /// f only.
    #[serde(rename = "mod")]
    ModulatorOnly,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::All => "finetune-all",
            Strategy::ModulatorOnly => "finetune-mod",
        }
    }

    pub fn groups(self) -> &'static [Group] {
        match self {
            Strategy::All => &[Group::Psi, Group::F, Group::G, Group::H],
            Strategy::ModulatorOnly => &[Group::F],
        }
    }
}

pub const MAX_SHOTS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without holdout improvement before stopping.
    pub patience: usize,
    /// Fraction of the adaptation samples held out for early stopping.
    pub holdout: f64,
    pub style_obs: usize,
    pub lr: LearningRates,
    pub point_dim: usize,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 50,
            patience: 10,
            holdout: 0.25,
            style_obs: 8,
            lr: LearningRates::default(),
            point_dim: 2,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    /// Learning rate of `group` when adapting. The modulator always uses its
    /// adaptation rate.
    pub fn rate(&self, group: Group) -> f64 {
        match group {
            Group::F => self.lr.modulator_adapt,
            other => self.lr.for_group(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutcome {
    pub strategy: Strategy,
    pub k: usize,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub holdout_trace: Vec<f64>,
}

/// Fine-tunes a copy of `model` on the first `k * batch_size` rows of
/// `samples`. The last quarter of those rows is held out for early stopping;
/// φ is never trained.
pub fn finetune(
    model: &ModularModel,
    samples: &Split,
    strategy: Strategy,
    k: usize,
    cfg: &AdaptConfig,
) -> Result<(ModularModel, AdaptOutcome)> {
    if !(1..=MAX_SHOTS).contains(&k) {
        return Err(Error::InvalidInput(format!(
            "k must be in 1..={MAX_SHOTS}, got {k}"
        )));
    }
    if cfg.batch_size == 0 || cfg.style_obs == 0 || !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::Config(
            "adaptation batch size, style count and holdout fraction are invalid".into(),
        ));
    }
    let budget = k * cfg.batch_size;
    if samples.len() < budget {
        return Err(Error::InvalidInput(format!(
            "{budget} adaptation samples needed, {} given",
            samples.len()
        )));
    }
    let n_hold = ((budget as f64 * cfg.holdout).round() as usize).clamp(1, budget - 1);
    let train = samples.select(&(0..budget - n_hold).collect::<Vec<_>>())?;
    let hold = samples.select(&(budget - n_hold..budget).collect::<Vec<_>>())?;

    let mut rng = rng_for(cfg.seed, 300 + k as u64);
    let refs = train
        .style
        .select_rows(&sample_indices(train.len(), cfg.style_obs, &mut rng))?;
    let holdout_error = |m: &ModularModel| -> Result<f64> {
        let c = m.encode_style(&refs)?;
        displacement_error(
            &m.predict_with_code(&hold.inputs, &c)?,
            &hold.targets,
            cfg.point_dim,
        )
    };

    let mut current = model.clone();
    let rates: Vec<(Group, f64)> = strategy
        .groups()
        .iter()
        .map(|&g| (g, cfg.rate(g)))
        .collect();
    let mut opts = GroupOptimizers::new(&rates)?;
    let mut batchers = vec![Batcher::new(train.len(), &mut rng)?];
    let steps = train.len().div_ceil(cfg.batch_size);
    let mut best = (holdout_error(&current)?, current.clone(), None);
    let mut trace = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        for _ in 0..steps {
            let batches = styled_batches(
                &[&train],
                &mut batchers,
                cfg.batch_size,
                cfg.style_obs,
                &mut rng,
            )?;
            opts.step(&mut current, |g, m| {
                styled_task_loss(g, m, batches, cfg.point_dim)
            })?;
        }
        let err = holdout_error(&current)?;
        trace.push(err);
        if err < best.0 {
            best = (err, current.clone(), Some(epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let outcome = AdaptOutcome {
        strategy,
        k,
        epochs_run: trace.len(),
        best_epoch: best.2,
        holdout_trace: trace,
    };
    Ok((best.1, outcome))
}

/// Projected embeddings of the first `count` observation rows; the targets
/// test-time refinement pulls towards.
pub fn build_style_references(
    model: &ModularModel,
    obs: &Tensor64,
    count: usize,
) -> Result<Tensor64> {
    if count == 0 || obs.rows() == 0 {
        return Err(Error::InvalidInput(
            "style references need at least one observation".into(),
        ));
    }
    let rows: Vec<usize> = (0..count.min(obs.rows())).collect();
    let picked = obs.select_rows(&rows)?;
    let codes = model.style_codes(&picked)?;
    model.project(&codes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub iters: usize,
    pub step: f64,
    pub max_halvings: usize,
    pub refs: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iters: 3,
            step: 0.05,
            max_halvings: 5,
            refs: 8,
        }
    }
}

/// What refinement needs besides the model input: the observed past and,
/// if present, the nearest neighbor's past and extrapolated future, all
/// relative to the primary agent as laid out by the style features.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineContext {
    pub input: Vec<f64>,
    pub past: [[f64; 2]; OBS_LEN],
    pub neighbor_past: Option<[[f64; 2]; OBS_LEN]>,
    pub neighbor_future: Option<[[f64; 2]; PRED_LEN]>,
}

impl RefineContext {
    pub fn from_window(w: &InstanceWindow) -> Self {
        Self {
            input: crate::dataio::invariant_features(w),
            past: w.past,
            neighbor_past: w.neighbors.first().map(|n| n.past),
            neighbor_future: neighbor_future_cv(w),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    /// `1 x 2·PRED_LEN` prediction after refinement.
    pub prediction: Tensor64,
    pub unrefined: Tensor64,
    /// Objective at the start and after every accepted step.
    pub objective: Vec<f64>,
    pub accepted: usize,
    /// Set when refinement aborted on a non-finite objective; the
    /// prediction is then the unrefined one.
    pub warning: bool,
}

/// Builds the style observation `[past, ŷ]` around a prediction variable.
fn pseudo_observation(g: &mut Graph64, ctx: &RefineContext, pred: Var) -> Result<Var> {
    let flat = |pts: &[[f64; 2]]| -> Tensor64 {
        Tensor64::row_vector(pts.iter().flatten().copied().collect())
    };
    let past = g.constant(flat(&ctx.past));
    match (&ctx.neighbor_past, &ctx.neighbor_future) {
        (Some(np), Some(nf)) => {
            let rel_past: Vec<[f64; 2]> = np
                .iter()
                .zip(&ctx.past)
                .map(|(n, p)| [n[0] - p[0], n[1] - p[1]])
                .collect();
            let rel_past = g.constant(flat(&rel_past));
            let nf = g.constant(flat(nf));
            let rel_future = g.sub(nf, pred)?;
            Ok(g.concat_cols(&[past, pred, rel_past, rel_future])?)
        }
        _ => {
            let zeros = g.constant(Tensor64::zeros(1, 4 * (OBS_LEN + PRED_LEN) / 2));
            Ok(g.concat_cols(&[past, pred, zeros])?)
        }
    }
}

/// Mean over references of `1 - cos(p̂, p_ref)` where `p̂` embeds the
/// pseudo-observation decoded from `z_tilde`.
fn refine_objective(
    g: &mut Graph64,
    b: &Bound,
    ctx: &RefineContext,
    z_tilde: Var,
    refs: &Tensor64,
) -> Result<Var> {
    let pred = b.decode(g, z_tilde)?;
    let obs = pseudo_observation(g, ctx, pred)?;
    let p = b.project_each(g, obs)?;
    let p = g.broadcast_rows(p, refs.rows())?;
    let r = g.constant(refs.clone());
    let cos = g.cosine_rows(p, r)?;
    let mean = g.mean(cos)?;
    let neg = g.scale(mean, -1.0)?;
    Ok(g.add_scalar(neg, 1.0)?)
}

fn objective_at(
    model: &ModularModel,
    ctx: &RefineContext,
    z: &Tensor64,
    refs: &Tensor64,
) -> Result<(f64, Tensor64)> {
    let mut g = Graph64::new();
    let b = model.bind(&mut g, &[]);
    let zv = g.variable(z.clone());
    let obj = refine_objective(&mut g, &b, ctx, zv, refs)?;
    let value = g.value(obj).item()?;
    let grad = g.backward(obj)?.take(zv)?;
    Ok((value, grad))
}

/// Gradient descent on the modulated latent of one instance. Weights are
/// only read. A step is accepted when it lowers the objective; otherwise it
/// is halved, up to `max_halvings` times, after which refinement stops.
pub fn test_time_refine(
    model: &ModularModel,
    ctx: &RefineContext,
    c: &Tensor64,
    refs: &Tensor64,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    if refs.rows() == 0 {
        return Err(Error::InvalidInput(
            "refinement needs at least one reference".into(),
        ));
    }
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(Error::Config(format!(
            "refinement step must be positive, got {}",
            cfg.step
        )));
    }
    let x = Tensor64::row_vector(ctx.input.clone());
    let z0 = model.modulate(&model.encode_invariant(&x)?, c)?;
    let unrefined = model.decode(&z0)?;
    let mut out = RefineOutcome {
        prediction: unrefined.clone(),
        unrefined,
        objective: Vec::new(),
        accepted: 0,
        warning: false,
    };
    if cfg.iters == 0 {
        return Ok(out);
    }
    let abort = |mut out: RefineOutcome| {
        log::warn!("refinement objective became non-finite; keeping the unrefined prediction");
        out.prediction = out.unrefined.clone();
        out.warning = true;
        out
    };
    let (mut value, mut grad) = match objective_at(model, ctx, &z0, refs) {
        Ok(v) if v.0.is_finite() && v.1.is_finite() => v,
        Ok(_) | Err(Error::Diff(diffcore::Error::NonFinite { .. })) => return Ok(abort(out)),
        Err(e) => return Err(e),
    };
    out.objective.push(value);
    let mut z = z0;
    'outer: while out.accepted < cfg.iters {
        let mut step = cfg.step;
        for _ in 0..=cfg.max_halvings {
            let cand = z.zip_map(&grad, "refine", |a, b| a - step * b)?;
            match objective_at(model, ctx, &cand, refs) {
                Ok((v, gr)) if v.is_finite() && gr.is_finite() => {
                    if v < value {
                        z = cand;
                        value = v;
                        grad = gr;
                        out.accepted += 1;
                        out.objective.push(value);
                        continue 'outer;
                    }
                }
                Ok(_) | Err(Error::Diff(diffcore::Error::NonFinite { .. })) => {
                    return Ok(abort(out))
                }
                Err(e) => return Err(e),
            }
            step /= 2.0;
        }
        break;
    }
    out.prediction = model.decode(&z)?;
    Ok(out)
}

/// Refines every window of `windows` against one reference set and returns
/// the stacked predictions.
pub fn refine_batch(
    model: &ModularModel,
    windows: &[InstanceWindow],
    c: &Tensor64,
    refs: &Tensor64,
    cfg: &RefineConfig,
) -> Result<(Tensor64, Vec<RefineOutcome>)> {
    let outcomes: Vec<RefineOutcome> = windows
        .iter()
        .map(|w| test_time_refine(model, &RefineContext::from_window(w), c, refs, cfg))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| o.prediction.data().to_vec())
        .collect();
    Ok((Tensor64::from_rows(&rows)?, outcomes))
}

/// The style features the refinement pseudo observation produces for a given
/// prediction, without a graph; used to check the layout.
pub fn pseudo_observation_values(ctx: &RefineContext, pred: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph64::new();
    let p = g.constant(Tensor64::row_vector(pred.to_vec()));
    let o = pseudo_observation(&mut g, ctx, p)?;
    Ok(g.value(o).data().to_vec())
}
