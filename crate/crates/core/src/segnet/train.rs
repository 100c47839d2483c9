use rand::seq::SliceRandom;

use super::loss::{loss_and_grad, LossTerms, Regime, TargetItem};
use super::model::{init_model, SegModel};
use super::{adadelta_step, OptimizerState};
use crate::error::{Error, Result};
use crate::raster::Dataset;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Weight of the source term; the target term gets `1 - gamma`.
    pub gamma: f64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub epochs: usize,
    pub seed: u64,
    pub rho: f64,
    pub eps: f64,
    pub w_image: f64,
    pub w_superpixel: f64,
    /// Architecture preset name.
    pub arch: String,
}

impl TrainConfig {
    /// Mixed 5 + 5 batches for the adapted regimes, 15 source images for NoAdapt.
    pub fn for_regime(regime: Regime) -> Self {
        let (batch_source, batch_target) = if regime.is_adapted() { (5, 5) } else { (15, 0) };
        TrainConfig {
            regime,
            gamma: 0.5,
            batch_source,
            batch_target,
            epochs: 8,
            seed: 0,
            rho: 0.95,
            eps: 1e-6,
            w_image: 1.0,
            w_superpixel: 1.0,
            arch: "small".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.batch_source == 0 || self.epochs == 0 {
            return bad("batch_source and epochs must be at least 1".into());
        }
        if self.regime.is_adapted() && self.batch_target == 0 {
            return bad(format!("regime {} needs batch_target >= 1", self.regime));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.eps > 0.0) {
            return bad(format!("AdaDelta rho {} / eps {}", self.rho, self.eps));
        }
        if !(self.w_image >= 0.0 && self.w_superpixel >= 0.0) {
            return bad("property weights must be nonnegative".into());
        }
        Ok(())
    }
}

/// Mean loss terms over one epoch's steps.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub terms: LossTerms,
    /// Validation score after the epoch, when monitored.
    pub validation: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SegModel,
    pub state: OptimizerState,
    pub history: Vec<EpochRecord>,
    /// Highest-scoring epoch and its parameters, when monitored.
    pub best: Option<(usize, SegModel)>,
}

/// Trains a fresh model for a fixed number of epochs.
///
/// An epoch walks a seeded permutation of the source set in batches of
/// `batch_source` (a trailing partial batch is dropped). Adapted regimes
/// pair every step with `batch_target` target items drawn without
/// replacement from a separately seeded permutation, reshuffled when used
/// up. NoAdapt never looks at `target`.
pub fn train(cfg: &TrainConfig, source: &Dataset, target: &[TargetItem]) -> Result<TrainOutcome> {
    run(cfg, source, target, None)
}

/// [`train`], scoring the model with `score` after every epoch and keeping
/// the best-scoring parameters (earliest on ties).
pub fn train_with_validation(
    cfg: &TrainConfig,
    source: &Dataset,
    target: &[TargetItem],
    score: &mut dyn FnMut(&SegModel) -> Result<f64>,
) -> Result<TrainOutcome> {
    run(cfg, source, target, Some(score))
}

fn run(
    cfg: &TrainConfig,
    source: &Dataset,
    target: &[TargetItem],
    mut score: Option<&mut dyn FnMut(&SegModel) -> Result<f64>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labeled = source.labeled()?;
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("empty source set".into()));
    }
    if cfg.regime.is_adapted() && target.is_empty() {
        return Err(Error::Regime(format!(
            "regime {} needs target images",
            cfg.regime
        )));
    }
    let channels = labeled[0].0.channels();
    let mut model = init_model(&cfg.arch, channels, source.num_classes, cfg.seed)?;
    let mut state = OptimizerState::zeros(model.params.len());
    let mut source_rng = crate::seeded_rng(cfg.seed, 1);
    let mut target_rng = crate::seeded_rng(cfg.seed, 2);

    let batch_source = cfg.batch_source.min(labeled.len());
    let steps = labeled.len() / batch_source;
    let mut source_order: Vec<usize> = (0..labeled.len()).collect();
    let mut target_order: Vec<usize> = (0..target.len()).collect();
    let mut target_cursor = target.len();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, SegModel, f64)> = None;
    for epoch in 0..cfg.epochs {
        source_order.shuffle(&mut source_rng);
        let mut sum = LossTerms::default();
        for step in 0..steps {
            let batch: Vec<_> = source_order[step * batch_source..(step + 1) * batch_source]
                .iter()
                .map(|&i| labeled[i])
                .collect();
            let mut tbatch = Vec::new();
            if cfg.regime.is_adapted() {
                for _ in 0..cfg.batch_target {
                    if target_cursor == target.len() {
                        target_order.shuffle(&mut target_rng);
                        target_cursor = 0;
                    }
                    tbatch.push(target[target_order[target_cursor]]);
                    target_cursor += 1;
                }
            }
            let (terms, grad) = loss_and_grad(&model, &batch, &tbatch, cfg)?;
            if !terms.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    msg: format!("loss {} at step {step}", terms.total),
                });
            }
            adadelta_step(&mut model.params, &grad, &mut state, cfg.rho, cfg.eps)?;
            sum.total += terms.total;
            sum.source += terms.source;
            sum.target += terms.target;
        }
        let n = steps as f64;
        let terms = LossTerms {
            total: sum.total / n,
            source: sum.source / n,
            target: sum.target / n,
        };
        let validation = match score.as_mut() {
            Some(f) => Some(f(&model)?),
            None => None,
        };
        log::info!(
            "{} epoch {}: loss {:.5} (source {:.5}, target {:.5}){}",
            cfg.regime.label(),
            epoch + 1,
            terms.total,
            terms.source,
            terms.target,
            validation
                .map(|v| format!(", validation {v:.4}"))
                .unwrap_or_default()
        );
        if let Some(v) = validation {
            if best.as_ref().is_none_or(|b| v > b.2) {
                best = Some((epoch, model.clone(), v));
            }
        }
        history.push(EpochRecord {
            epoch,
            terms,
            validation,
        });
    }
    Ok(TrainOutcome {
        model,
        state,
        history,
        best: best.map(|(e, m, _)| (e, m)),
    })
}
