//! Estimators of a target image's global label distribution, all trained
//! on source images only.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::{source_mean, uniform_dist, GlobalFeature, LabelDistribution};
use crate::error::{Error, Result};
use crate::raster::{load_tensor, save_tensor, Tensor};

/// Multinomial logistic regression trained against soft (distribution) targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRegModel {
    /// `classes x dims`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub dims: usize,
    pub classes: usize,
    pub trained_on: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRegConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            epochs: 300,
            lr: 0.05,
            l2: 0.1,
            batch_size: 16,
            seed: 0,
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl LogRegModel {
    pub fn zeros(dims: usize, classes: usize) -> Self {
        LogRegModel {
            weights: vec![0.0; dims * classes],
            bias: vec![0.0; classes],
            dims,
            classes,
            trained_on: 0,
        }
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * self.dims..(c + 1) * self.dims];
                self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        softmax_in_place(&mut z);
        z
    }

    /// Writes `<prefix>.weights.cdat`, `<prefix>.bias.cdat` and a `<prefix>.txt` sidecar.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let prefix = prefix.as_ref().to_string_lossy().into_owned();
        save_tensor(
            &Tensor::from_f64(vec![self.classes, self.dims], &self.weights)?,
            format!("{prefix}.weights.cdat"),
        )?;
        save_tensor(
            &Tensor::from_f64(vec![self.classes], &self.bias)?,
            format!("{prefix}.bias.cdat"),
        )?;
        let sidecar = format!(
            "dims={}\nclasses={}\ntrained_on={}\n",
            self.dims, self.classes, self.trained_on
        );
        let path = format!("{prefix}.txt");
        std::fs::write(&path, sidecar).map_err(|e| Error::io(path, e))
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let prefix = prefix.as_ref().to_string_lossy().into_owned();
        let path = format!("{prefix}.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let field = |name: &str| -> Result<usize> {
            text.lines()
                .find_map(|l| l.strip_prefix(name)?.strip_prefix('='))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("{path}: missing {name}")))
        };
        let (dims, classes) = (field("dims")?, field("classes")?);
        let weights = load_tensor(format!("{prefix}.weights.cdat"))?;
        let bias = load_tensor(format!("{prefix}.bias.cdat"))?;
        if weights.shape != [classes, dims] || bias.shape != [classes] {
            return Err(Error::Shape(format!(
                "{prefix}: tensors do not match dims={dims} classes={classes}"
            )));
        }
        Ok(LogRegModel {
            weights: weights.to_f64(),
            bias: bias.to_f64(),
            dims,
            classes,
            trained_on: field("trained_on")?,
        })
    }
}

fn check_training_set(
    feats: &[GlobalFeature],
    targets: &[LabelDistribution],
) -> Result<(usize, usize)> {
    if feats.is_empty() || feats.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "need equally many features and targets, got {} and {}",
            feats.len(),
            targets.len()
        )));
    }
    let dims = feats[0].dim();
    let classes = targets[0].num_classes();
    if feats.iter().any(|f| f.dim() != dims) || targets.iter().any(|t| t.num_classes() != classes) {
        return Err(Error::Shape(
            "inconsistent feature or class dimensions".into(),
        ));
    }
    Ok((dims, classes))
}

/// Minimizes mean `cross_entropy(target, softmax(Wx + b)) + l2 * |W|^2` by
/// shuffled mini-batch gradient descent.
///
/// The L2 part is applied as a proximal (implicit) step so large `l2`
/// values shrink the weights instead of making the iteration unstable.
pub fn fit_logreg(
    feats: &[GlobalFeature],
    targets: &[LabelDistribution],
    cfg: &LogRegConfig,
) -> Result<LogRegModel> {
    let (dims, classes) = check_training_set(feats, targets)?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(cfg.l2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bad logistic regression config {cfg:?}"
        )));
    }
    let mut model = LogRegModel::zeros(dims, classes);
    model.trained_on = feats.len();
    let mut rng = crate::seeded_rng(cfg.seed, 0);
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let mut grad_w = vec![0.0; dims * classes];
    let mut grad_b = vec![0.0; classes];
    let shrink = 1.0 / (1.0 + 2.0 * cfg.lr * cfg.l2);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad_w.fill(0.0);
            grad_b.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = feats[i].as_slice();
                let q = model.probs(x);
                for c in 0..classes {
                    let dz = (q[c] - targets[i].probs()[c]) * scale;
                    grad_b[c] += dz;
                    for (g, v) in grad_w[c * dims..(c + 1) * dims].iter_mut().zip(x) {
                        *g += dz * v;
                    }
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&grad_w) {
                *w = (*w - cfg.lr * g) * shrink;
            }
            for (b, g) in model.bias.iter_mut().zip(&grad_b) {
                *b -= cfg.lr * g;
            }
        }
        let loss = feats
            .iter()
            .zip(targets)
            .map(|(f, t)| {
                let q = model.probs(f.as_slice());
                t.probs()
                    .iter()
                    .zip(&q)
                    .filter(|(&p, _)| p > 0.0)
                    .map(|(&p, &qc)| -p * qc.max(super::LOG_EPS).ln())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / feats.len() as f64;
        if !loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                msg: format!("logistic regression loss became {loss}"),
            });
        }
    }
    Ok(model)
}

pub fn predict_logreg(model: &LogRegModel, feat: &GlobalFeature) -> Result<LabelDistribution> {
    if feat.dim() != model.dims {
        return Err(Error::Shape(format!(
            "feature has {} dims, model expects {}",
            feat.dim(),
            model.dims
        )));
    }
    LabelDistribution::new(model.probs(feat.as_slice()))
}

/// Mean label distribution of the `k` sources nearest in Euclidean feature
/// distance; ties go to the lower source index.
pub fn knn_estimate(
    query: &GlobalFeature,
    source_feats: &[GlobalFeature],
    source_dists: &[LabelDistribution],
    k: usize,
) -> Result<LabelDistribution> {
    if source_feats.is_empty() || source_feats.len() != source_dists.len() {
        return Err(Error::InvalidArgument(format!(
            "kNN needs a nonempty source set with one distribution per feature ({} vs {})",
            source_feats.len(),
            source_dists.len()
        )));
    }
    if k == 0 || k > source_feats.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            source_feats.len()
        )));
    }
    let mut ranked: Vec<(f64, usize)> = source_feats
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if f.dim() != query.dim() {
                return Err(Error::Shape(format!(
                    "source feature {i} has {} dims, query has {}",
                    f.dim(),
                    query.dim()
                )));
            }
            let d2 = f
                .as_slice()
                .iter()
                .zip(query.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            Ok((d2, i))
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest: Vec<LabelDistribution> = ranked[..k]
        .iter()
        .map(|&(_, i)| source_dists[i].clone())
        .collect();
    source_mean(&nearest)
}

/// Floor on the per-dimension spread. Features are fractions and means in
/// `[0, 1]`; a histogram bin that is nearly constant on the source would
/// otherwise be magnified into a huge coordinate on a shifted domain.
pub const MIN_STD: f64 = 0.05;

/// Per-dimension z-scoring fitted on the source features.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(feats: &[GlobalFeature]) -> Result<Self> {
        let first = feats
            .first()
            .ok_or_else(|| Error::InvalidArgument("standardizer needs features".into()))?;
        let d = first.dim();
        let n = feats.len() as f64;
        let mut mean = vec![0.0; d];
        for f in feats {
            for (m, v) in mean.iter_mut().zip(f.as_slice()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for f in feats {
            for ((s, v), m) in var.iter_mut().zip(f.as_slice()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| 1.0 / v.sqrt().max(MIN_STD))
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, f: &GlobalFeature) -> GlobalFeature {
        GlobalFeature(
            f.as_slice()
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((v, m), s)| (v - m) * s)
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    LogReg,
    Knn,
    SourceMean,
    Uniform,
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lr" | "logreg" => Ok(EstimatorKind::LogReg),
            "knn" | "nn" => Ok(EstimatorKind::Knn),
            "source_mean" | "src_mean" => Ok(EstimatorKind::SourceMean),
            "uniform" => Ok(EstimatorKind::Uniform),
            other => Err(Error::Config(format!("unknown estimator {other:?}"))),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::LogReg => "lr",
            EstimatorKind::Knn => "knn",
            EstimatorKind::SourceMean => "source_mean",
            EstimatorKind::Uniform => "uniform",
        })
    }
}

/// A fitted global label-distribution estimator.
#[derive(Clone, Debug)]
pub enum GlobalEstimator {
    LogReg {
        standardizer: Option<Standardizer>,
        model: LogRegModel,
    },
    Knn {
        feats: Vec<GlobalFeature>,
        dists: Vec<LabelDistribution>,
        k: usize,
    },
    SourceMean(LabelDistribution),
    Uniform(usize),
}

impl GlobalEstimator {
    /// Fits `kind` on source features and their ground-truth distributions.
    pub fn fit(
        kind: EstimatorKind,
        feats: &[GlobalFeature],
        dists: &[LabelDistribution],
        knn_k: usize,
        zscore: bool,
        logreg: &LogRegConfig,
    ) -> Result<Self> {
        let (_, classes) = check_training_set(feats, dists)?;
        Ok(match kind {
            EstimatorKind::LogReg => {
                let standardizer = if zscore {
                    Some(Standardizer::fit(feats)?)
                } else {
                    None
                };
                let model = match &standardizer {
                    Some(s) => {
                        let z: Vec<GlobalFeature> = feats.iter().map(|f| s.apply(f)).collect();
                        fit_logreg(&z, dists, logreg)?
                    }
                    None => fit_logreg(feats, dists, logreg)?,
                };
                GlobalEstimator::LogReg {
                    standardizer,
                    model,
                }
            }
            EstimatorKind::Knn => {
                if knn_k == 0 || knn_k > feats.len() {
                    return Err(Error::InvalidArgument(format!(
                        "k = {knn_k} must be in 1..={}",
                        feats.len()
                    )));
                }
                GlobalEstimator::Knn {
                    feats: feats.to_vec(),
                    dists: dists.to_vec(),
                    k: knn_k,
                }
            }
            EstimatorKind::SourceMean => GlobalEstimator::SourceMean(source_mean(dists)?),
            EstimatorKind::Uniform => GlobalEstimator::Uniform(classes),
        })
    }

    pub fn kind(&self) -> EstimatorKind {
        match self {
            GlobalEstimator::LogReg { .. } => EstimatorKind::LogReg,
            GlobalEstimator::Knn { .. } => EstimatorKind::Knn,
            GlobalEstimator::SourceMean(_) => EstimatorKind::SourceMean,
            GlobalEstimator::Uniform(_) => EstimatorKind::Uniform,
        }
    }

    pub fn estimate(&self, feat: &GlobalFeature) -> Result<LabelDistribution> {
        match self {
            GlobalEstimator::LogReg {
                standardizer,
                model,
            } => match standardizer {
                Some(s) => predict_logreg(model, &s.apply(feat)),
                None => predict_logreg(model, feat),
            },
            GlobalEstimator::Knn { feats, dists, k } => knn_estimate(feat, feats, dists, *k),
            GlobalEstimator::SourceMean(d) => Ok(d.clone()),
            GlobalEstimator::Uniform(c) => uniform_dist(*c),
        }
    }
}
