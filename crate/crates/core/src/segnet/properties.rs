//! Inferring the target properties: image-level label distributions from
//! a global estimator and landmark superpixels from a superpixel classifier,
//! both fit on the source domain only.

use super::loss::{Regime, TargetProperties};
use crate::error::{Error, Result};
use crate::labeldist::{
    dist_from_mask, global_features, EstimatorKind, GlobalEstimator, GlobalFeature,
    LabelDistribution, LogRegConfig,
};
use crate::raster::{Dataset, Image, VOID};
use crate::superpix::{
    classify_sp, dominant_label, select_landmarks, slic, sp_features, train_sp_svm,
    ColorPrototypeScorer, ConfidenceMode, LandmarkSet, SlicParams, SuperpixelPartition, SvmConfig,
    SvmModel,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyConfig {
    pub estimator: EstimatorKind,
    pub knn_k: usize,
    /// Standardize features before logistic regression.
    pub zscore: bool,
    pub logreg: LogRegConfig,
    pub slic: SlicParams,
    pub svm: SvmConfig,
    pub confidence: ConfidenceMode,
    pub temperature: f64,
    /// Share of each image's superpixels kept as landmarks.
    pub fraction: f64,
}

impl Default for PropertyConfig {
    fn default() -> Self {
        PropertyConfig {
            estimator: EstimatorKind::LogReg,
            knn_k: 5,
            zscore: true,
            logreg: LogRegConfig::default(),
            slic: SlicParams::default(),
            svm: SvmConfig::default(),
            confidence: ConfidenceMode::Margin,
            temperature: 0.08,
            fraction: 0.6,
        }
    }
}

/// Everything fit on the source domain that property inference needs.
#[derive(Clone, Debug)]
pub struct PropertyModels {
    pub estimator: GlobalEstimator,
    pub scorer: ColorPrototypeScorer,
    pub svm: SvmModel,
    pub num_classes: usize,
}

pub fn fit_property_models(source: &Dataset, cfg: &PropertyConfig) -> Result<PropertyModels> {
    let labeled = source.labeled()?;
    if labeled.is_empty() {
        return Err(Error::InvalidArgument("empty source set".into()));
    }
    let feats: Vec<GlobalFeature> = labeled
        .iter()
        .map(|(img, _)| global_features(img))
        .collect::<Result<_>>()?;
    let dists: Vec<LabelDistribution> = labeled
        .iter()
        .map(|(_, m)| dist_from_mask(m))
        .collect::<Result<_>>()?;
    let estimator = GlobalEstimator::fit(
        cfg.estimator,
        &feats,
        &dists,
        cfg.knn_k,
        cfg.zscore,
        &cfg.logreg,
    )?;

    let scorer = ColorPrototypeScorer::fit(source, cfg.temperature)?;
    let mut sp_feats = Vec::new();
    let mut sp_labels = Vec::new();
    for (img, mask) in &labeled {
        let part = slic(img, &cfg.slic)?;
        let feats = sp_features(&part, &scorer.scores(img)?)?;
        for (f, label) in feats.into_iter().zip(dominant_label(&part, mask)?) {
            if label != VOID {
                sp_feats.push(f);
                sp_labels.push(label as usize);
            }
        }
    }
    let svm = train_sp_svm(&sp_feats, &sp_labels, source.num_classes, &cfg.svm)?;
    Ok(PropertyModels {
        estimator,
        scorer,
        svm,
        num_classes: source.num_classes,
    })
}

/// Inferred properties of one target image.
#[derive(Clone, Debug)]
pub struct InferredProperties {
    pub image_dist: LabelDistribution,
    pub partition: SuperpixelPartition,
    /// `(superpixel, class, confidence)` for every superpixel.
    pub classified: Vec<(usize, usize, f64)>,
    pub landmarks: LandmarkSet,
}

impl InferredProperties {
    /// The subset of properties `regime` trains with.
    pub fn for_regime(&self, regime: Regime) -> Result<TargetProperties> {
        TargetProperties::new(
            regime.uses_image().then(|| self.image_dist.clone()),
            regime
                .uses_superpixels()
                .then_some((&self.partition, &self.landmarks)),
        )
    }
}

/// Infers properties image by image; needs no target labels.
pub fn infer_properties(
    images: &[&Image],
    models: &PropertyModels,
    cfg: &PropertyConfig,
) -> Result<Vec<InferredProperties>> {
    images
        .iter()
        .map(|img| {
            let image_dist = models.estimator.estimate(&global_features(img)?)?;
            let partition = slic(img, &cfg.slic)?;
            let feats = sp_features(&partition, &models.scorer.scores(img)?)?;
            let classified = feats
                .iter()
                .enumerate()
                .map(|(id, f)| {
                    classify_sp(&models.svm, f, cfg.confidence).map(|(c, conf)| (id, c, conf))
                })
                .collect::<Result<Vec<_>>>()?;
            let landmarks = select_landmarks(&classified, cfg.fraction, models.num_classes)?;
            Ok(InferredProperties {
                image_dist,
                partition,
                classified,
                landmarks,
            })
        })
        .collect()
}
