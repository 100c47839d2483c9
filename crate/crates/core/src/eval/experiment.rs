//! End-to-end experiments: data, property inference, the four training
//! regimes and the two report tables.

use std::time::{Duration, Instant};

use super::config::ExperimentConfig;
use super::metrics::{evaluate_masks, evaluate_model, Metrics, UNDEFINED_IOU};
use super::report::ReportTable;
use crate::error::{Error, Result};
use crate::labeldist::{
    chi2_distance, dist_from_mask, dist_from_prediction, global_features, EstimatorKind,
    GlobalEstimator, GlobalFeature, LabelDistribution,
};
use crate::raster::{Dataset, LabelMask, VOID};
use crate::scenegen::class_name;
use crate::segnet::{
    fit_property_models, forward, infer_properties, train, InferredProperties, PropertyModels,
    Regime, SegModel, TargetItem, TargetProperties, TrainOutcome,
};
use crate::superpix::dominant_label;

/// Datasets and inferred properties shared by every row of an experiment.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub source: Dataset,
    /// Adaptation images, masks stripped.
    pub target: Dataset,
    /// Labeled evaluation images.
    pub val: Dataset,
    pub models: PropertyModels,
    pub target_props: Vec<InferredProperties>,
    pub val_props: Vec<InferredProperties>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let [source, target, val] = cfg.generate_all()?;
    prepare_with(cfg, source, target.without_masks(), val)
}

/// Like [`prepare`], on given datasets.
pub fn prepare_with(
    cfg: &ExperimentConfig,
    source: Dataset,
    target: Dataset,
    val: Dataset,
) -> Result<Prepared> {
    let pcfg = cfg.property_config();
    let models = fit_property_models(&source, &pcfg)?;
    let target_props = infer_properties(&target.images(), &models, &pcfg)?;
    let val_props = infer_properties(&val.images(), &models, &pcfg)?;
    Ok(Prepared {
        cfg: cfg.clone(),
        source,
        target,
        val,
        models,
        target_props,
        val_props,
    })
}

impl Prepared {
    /// Trains `regime` with the shared data and seed.
    pub fn train(&self, regime: Regime) -> Result<SegModel> {
        Ok(self.train_outcome(regime)?.model)
    }

    pub fn train_outcome(&self, regime: Regime) -> Result<TrainOutcome> {
        let tcfg = self.cfg.train_config(regime);
        let props: Vec<TargetProperties> = if regime.is_adapted() {
            self.target_props
                .iter()
                .map(|p| p.for_regime(regime))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let items: Vec<TargetItem> = self
            .target
            .items
            .iter()
            .zip(&props)
            .map(|(s, props)| TargetItem {
                image: &s.image,
                props,
            })
            .collect();
        train(&tcfg, &self.source, &items)
    }
}

/// Superpixel classification accuracy against dominant ground-truth labels,
/// pooled over all images. Superpixels whose pixels are all void are skipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuperpixelAccuracy {
    pub all: f64,
    pub landmarks: f64,
}

pub fn superpixel_accuracy(
    props: &[InferredProperties],
    labeled: &Dataset,
) -> Result<SuperpixelAccuracy> {
    let truth = labeled.labeled()?;
    if truth.len() != props.len() {
        return Err(Error::Shape(
            "properties and dataset differ in length".into(),
        ));
    }
    let (mut all, mut all_ok, mut lm, mut lm_ok) = (0usize, 0usize, 0usize, 0usize);
    for (p, (_, mask)) in props.iter().zip(&truth) {
        let dominant = dominant_label(&p.partition, mask)?;
        for &(id, class, _) in &p.classified {
            if dominant[id] != VOID {
                all += 1;
                all_ok += usize::from(dominant[id] as usize == class);
            }
        }
        for l in &p.landmarks.entries {
            if dominant[l.superpixel] != VOID {
                lm += 1;
                lm_ok += usize::from(dominant[l.superpixel] as usize == l.class);
            }
        }
    }
    if all == 0 || lm == 0 {
        return Err(Error::EmptyRegion("no labeled superpixels to score".into()));
    }
    Ok(SuperpixelAccuracy {
        all: all_ok as f64 / all as f64,
        landmarks: lm_ok as f64 / lm as f64,
    })
}

/// Paints superpixel classes onto pixels; with `landmarks_only` every
/// non-landmark pixel is void.
pub fn paint_superpixels(
    p: &InferredProperties,
    num_classes: usize,
    landmarks_only: bool,
) -> Result<LabelMask> {
    let mut class_of = vec![VOID; p.partition.num_superpixels()];
    if landmarks_only {
        for l in &p.landmarks.entries {
            class_of[l.superpixel] = l.class as u8;
        }
    } else {
        for &(id, class, _) in &p.classified {
            class_of[id] = class as u8;
        }
    }
    let labels = p
        .partition
        .assignment()
        .iter()
        .map(|&s| class_of[s as usize])
        .collect();
    LabelMask::new(
        p.partition.width(),
        p.partition.height(),
        num_classes,
        labels,
    )
}

/// `config_sha256`, `seed` and `version` lines for report footers.
pub fn provenance(cfg: &ExperimentConfig) -> Vec<String> {
    vec![
        format!("config_sha256={}", cfg.digest()),
        format!("seed={}", cfg.seed),
        format!("version=cdaseg {}", env!("CARGO_PKG_VERSION")),
    ]
}

pub const ABLATION_ROWS: [&str; 6] = [
    "NoAdapt",
    "Ours(I)",
    "SP",
    "SP Lndmk",
    "Ours(SP)",
    "Ours(I+SP)",
];

fn iou_row(m: &Metrics) -> Vec<f64> {
    std::iter::once(100.0 * m.mean_iou)
        .chain(
            m.per_class_iou
                .iter()
                .map(|&v| if v == UNDEFINED_IOU { v } else { 100.0 * v }),
        )
        .collect()
}

fn ablation_columns(num_classes: usize) -> Vec<String> {
    std::iter::once("mean_iou".to_string())
        .chain((0..num_classes).map(class_name))
        .collect()
}

/// Everything an ablation produces, with wall-clock timings.
pub struct AblationOutcome {
    pub table: ReportTable,
    pub metrics: Vec<(String, Metrics)>,
    pub sp_accuracy: SuperpixelAccuracy,
    pub noadapt: SegModel,
    pub train_time: Duration,
}

/// Runs the six ablation rows in order, calling `on_row` with the partial
/// table after each one.
pub fn run_ablation_with(
    prep: &Prepared,
    noadapt: Option<SegModel>,
    on_row: &mut dyn FnMut(&ReportTable) -> Result<()>,
) -> Result<AblationOutcome> {
    let c = prep.val.num_classes;
    let mut table = ReportTable::new(ablation_columns(c));
    table.footer = provenance(&prep.cfg);
    let mut metrics = Vec::new();
    let mut train_time = Duration::ZERO;
    let sp_accuracy = superpixel_accuracy(&prep.val_props, &prep.val)?;
    let mut noadapt_model = noadapt;
    for name in ABLATION_ROWS {
        let mut m = match name {
            "SP" | "SP Lndmk" => {
                let masks = prep
                    .val_props
                    .iter()
                    .map(|p| paint_superpixels(p, c, name == "SP Lndmk"))
                    .collect::<Result<Vec<_>>>()?;
                let mut m = evaluate_masks(&masks, &prep.val)?;
                m.sp_accuracy = Some(if name == "SP" {
                    sp_accuracy.all
                } else {
                    sp_accuracy.landmarks
                });
                m
            }
            _ => {
                let regime = Regime::ALL
                    .into_iter()
                    .find(|r| r.label() == name)
                    .expect("known row");
                let model = match (&noadapt_model, regime) {
                    (Some(model), Regime::NoAdapt) => model.clone(),
                    _ => {
                        let start = Instant::now();
                        let model = prep.train(regime)?;
                        train_time += start.elapsed();
                        model
                    }
                };
                let m = evaluate_model(&model, &prep.val)?;
                if regime == Regime::NoAdapt {
                    noadapt_model = Some(model);
                }
                m
            }
        };
        m.chi2_mean = None;
        log::info!("{name}: mean IoU {:.2}", 100.0 * m.mean_iou);
        table.push(name, iou_row(&m))?;
        metrics.push((name.to_string(), m));
        on_row(&table)?;
    }
    Ok(AblationOutcome {
        table,
        metrics,
        sp_accuracy,
        noadapt: noadapt_model.expect("NoAdapt row ran"),
        train_time,
    })
}

pub fn run_ablation(cfg: &ExperimentConfig) -> Result<ReportTable> {
    let prep = prepare(cfg)?;
    Ok(run_ablation_with(&prep, None, &mut |_| Ok(()))?.table)
}

pub const TABLE1_ROWS: [&str; 5] = ["Uniform", "NoAdapt", "Source mean", "kNN", "LR"];

/// Mean chi-squared distance between true and estimated label
/// distributions of the evaluation images, per method.
pub fn table1_with(prep: &Prepared, noadapt: &SegModel) -> Result<ReportTable> {
    let val = prep.val.labeled()?;
    let truth: Vec<LabelDistribution> = val
        .iter()
        .map(|(_, m)| dist_from_mask(m))
        .collect::<Result<_>>()?;
    let val_feats: Vec<GlobalFeature> = val
        .iter()
        .map(|(img, _)| global_features(img))
        .collect::<Result<_>>()?;
    let src = prep.source.labeled()?;
    let src_feats: Vec<GlobalFeature> = src
        .iter()
        .map(|(img, _)| global_features(img))
        .collect::<Result<_>>()?;
    let src_dists: Vec<LabelDistribution> = src
        .iter()
        .map(|(_, m)| dist_from_mask(m))
        .collect::<Result<_>>()?;
    let pcfg = prep.cfg.property_config();

    let mean_chi2 = |est: &dyn Fn(usize) -> Result<LabelDistribution>| -> Result<f64> {
        let mut sum = 0.0;
        for (i, t) in truth.iter().enumerate() {
            sum += chi2_distance(t, &est(i)?);
        }
        Ok(sum / truth.len() as f64)
    };
    let mut table = ReportTable::new(vec!["mean_chi2".into()]);
    table.lower_is_better = true;
    table.footer = provenance(&prep.cfg);
    for name in TABLE1_ROWS {
        let value = match name {
            "NoAdapt" => mean_chi2(&|i| dist_from_prediction(&forward(noadapt, val[i].0)?, None))?,
            _ => {
                let kind = match name {
                    "Uniform" => EstimatorKind::Uniform,
                    "Source mean" => EstimatorKind::SourceMean,
                    "kNN" => EstimatorKind::Knn,
                    _ => EstimatorKind::LogReg,
                };
                let est = GlobalEstimator::fit(
                    kind,
                    &src_feats,
                    &src_dists,
                    pcfg.knn_k,
                    pcfg.zscore,
                    &pcfg.logreg,
                )?;
                mean_chi2(&|i| est.estimate(&val_feats[i]))?
            }
        };
        log::info!("{name}: mean chi2 {value:.4}");
        table.push(name, vec![value])?;
    }
    Ok(table)
}

pub fn run_table1(cfg: &ExperimentConfig) -> Result<ReportTable> {
    let prep = prepare(cfg)?;
    let noadapt = prep.train(Regime::NoAdapt)?;
    table1_with(&prep, &noadapt)
}
