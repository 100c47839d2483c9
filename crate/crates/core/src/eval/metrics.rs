use crate::error::{Error, Result};
use crate::raster::{Dataset, LabelMask, VOID};
use crate::segnet::{forward, SegModel};

/// Whole-set pixel tallies. Rows are truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: usize,
    pub matrix: Vec<u64>,
    /// Pixels whose truth is void.
    pub void_skipped: u64,
    /// Labeled pixels the prediction left void, per truth class. They count
    /// as false negatives.
    pub missed: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        ConfusionCounts {
            classes,
            matrix: vec![0; classes * classes],
            void_skipped: 0,
            missed: vec![0; classes],
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.matrix[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum::<u64>() + self.missed.iter().sum::<u64>() + self.void_skipped
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape("confusion matrices of different sizes".into()));
        }
        self.matrix
            .iter_mut()
            .zip(&other.matrix)
            .for_each(|(a, b)| *a += b);
        self.missed
            .iter_mut()
            .zip(&other.missed)
            .for_each(|(a, b)| *a += b);
        self.void_skipped += other.void_skipped;
        Ok(())
    }
}

/// Adds one image. A void prediction on a labeled pixel is a miss.
pub fn accumulate_confusion(
    pred: &LabelMask,
    truth: &LabelMask,
    counts: &mut ConfusionCounts,
) -> Result<()> {
    if !pred.same_shape(truth.width(), truth.height()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    if pred.num_classes() != counts.classes || truth.num_classes() != counts.classes {
        return Err(Error::Shape(
            "class count differs from the confusion matrix".into(),
        ));
    }
    let c = counts.classes;
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        if t == VOID {
            counts.void_skipped += 1;
        } else if p == VOID {
            counts.missed[t as usize] += 1;
        } else {
            counts.matrix[t as usize * c + p as usize] += 1;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// `-1` marks a class absent from both truth and prediction.
    pub per_class_iou: Vec<f64>,
    pub mean_iou: f64,
    pub chi2_mean: Option<f64>,
    pub sp_accuracy: Option<f64>,
}

pub const UNDEFINED_IOU: f64 = -1.0;

/// `TP / (TP + FP + FN)` per class, averaged over the defined classes.
pub fn iou_from_confusion(counts: &ConfusionCounts) -> Metrics {
    let c = counts.classes;
    let per_class_iou: Vec<f64> = (0..c)
        .map(|k| {
            let tp = counts.get(k, k);
            let fp: u64 = (0..c).filter(|&r| r != k).map(|r| counts.get(r, k)).sum();
            let fn_: u64 = (0..c)
                .filter(|&j| j != k)
                .map(|j| counts.get(k, j))
                .sum::<u64>()
                + counts.missed[k];
            let denom = tp + fp + fn_;
            if denom == 0 {
                UNDEFINED_IOU
            } else {
                tp as f64 / denom as f64
            }
        })
        .collect();
    let defined: Vec<f64> = per_class_iou
        .iter()
        .copied()
        .filter(|&v| v != UNDEFINED_IOU)
        .collect();
    let mean_iou = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Metrics {
        per_class_iou,
        mean_iou,
        chi2_mean: None,
        sp_accuracy: None,
    }
}

/// Confusion of `preds` (aligned with `dataset.items`) against the masks.
pub fn confusion_of(preds: &[LabelMask], dataset: &Dataset) -> Result<ConfusionCounts> {
    let truth = dataset.labeled()?;
    if preds.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} images",
            preds.len(),
            truth.len()
        )));
    }
    let mut counts = ConfusionCounts::new(dataset.num_classes);
    for (p, (_, t)) in preds.iter().zip(&truth) {
        accumulate_confusion(p, t, &mut counts)?;
    }
    Ok(counts)
}

pub fn evaluate_masks(preds: &[LabelMask], dataset: &Dataset) -> Result<Metrics> {
    Ok(iou_from_confusion(&confusion_of(preds, dataset)?))
}

/// Worker count from `CDASEG_THREADS`; unset or `0` means one per core.
pub fn worker_threads() -> usize {
    let auto = || std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("CDASEG_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => auto(),
            Ok(n) => n,
            Err(_) => {
                log::warn!("ignoring CDASEG_THREADS={v:?}");
                auto()
            }
        },
        Err(_) => auto(),
    }
}

/// Argmax predictions of `model` on every image, in item order.
pub fn predict_masks(model: &SegModel, dataset: &Dataset) -> Result<Vec<LabelMask>> {
    predict_masks_with(model, dataset, worker_threads())
}

fn predict_masks_with(
    model: &SegModel,
    dataset: &Dataset,
    threads: usize,
) -> Result<Vec<LabelMask>> {
    let predict = |s: &crate::raster::Sample| Ok(forward(model, &s.image)?.argmax_mask());
    let threads = threads.min(dataset.len());
    if threads <= 1 {
        return dataset.items.iter().map(predict).collect();
    }
    let chunk = dataset.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = dataset
            .items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(predict).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(dataset.len());
        for h in handles {
            out.extend(h.join().expect("prediction worker panicked")?);
        }
        Ok(out)
    })
}

pub fn evaluate_model(model: &SegModel, dataset: &Dataset) -> Result<Metrics> {
    // fail on unlabeled items before spending time on forward passes
    dataset.labeled()?;
    evaluate_masks(&predict_masks(model, dataset)?, dataset)
}
