//! The segmentation network and how it is trained.

mod adadelta;
mod checkpoint;
pub mod gradcheck;
mod loss;
mod model;
mod properties;
mod train;

pub use adadelta::{adadelta_step, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{loss_and_grad, LandmarkRegion, LossTerms, Regime, TargetItem, TargetProperties};
pub use model::{forward, init_model, Arch, ConvLayer, SegModel};
pub use properties::{
    fit_property_models, infer_properties, InferredProperties, PropertyConfig, PropertyModels,
};
pub use train::{train, train_with_validation, EpochRecord, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::labeldist::argmax;
use crate::raster::LabelMask;

/// Per-pixel class probabilities, pixel-major (`H*W x C`).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    width: usize,
    height: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl Prediction {
    pub fn new(width: usize, height: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes == 0 || probs.len() != width * height * classes {
            return Err(Error::Shape(format!(
                "{} probabilities for {width}x{height} pixels and {classes} classes",
                probs.len()
            )));
        }
        for (i, px) in probs.chunks_exact(classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "pixel {i} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(Self::from_parts(width, height, classes, probs))
    }

    pub(crate) fn from_parts(width: usize, height: usize, classes: usize, probs: Vec<f64>) -> Self {
        Prediction {
            width,
            height,
            classes,
            probs,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.probs[index * self.classes..(index + 1) * self.classes]
    }

    /// Hard labels; ties go to the lowest class.
    pub fn argmax_mask(&self) -> LabelMask {
        let labels = (0..self.num_pixels())
            .map(|i| argmax(self.pixel(i)) as u8)
            .collect();
        LabelMask::new(self.width, self.height, self.classes, labels).expect("argmax is in range")
    }
}
