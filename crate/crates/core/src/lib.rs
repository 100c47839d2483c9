//! Curriculum domain adaptation for semantic segmentation.
//!
//! The pipeline first solves two "easy" problems on the unlabeled target
//! domain: estimating the image-level label distribution of every target
//! image, and labeling a confident subset of its superpixels (landmarks).
//! Those inferred properties then regularize the training of a small
//! pixel-wise segmentation network alongside the labeled source images.
//!
//! Module map:
//!
//! * [`raster`]: images, label masks, datasets and their on-disk formats.
//! * [`scenegen`]: the synthetic paired source/target scene generator.
//! * [`labeldist`]: label-distribution math and the global estimators.
//! * [`superpix`]: SLIC superpixels, context features, the linear SVM and
//!   landmark selection.
//! * [`segnet`]: the segmentation network, the joint objective, AdaDelta and
//!   the training regimes.
//! * [`eval`]: IoU metrics, experiment configuration and report tables.
//! * [`cli`]: the `cdaseg` command line.

pub mod cli;
pub mod error;
pub mod eval;
pub mod labeldist;
pub mod raster;
pub mod scenegen;
pub mod segnet;
pub mod superpix;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The single RNG used everywhere: ChaCha8, seeded from a `u64` and an
/// explicit stream id so independent consumers never share a sequence.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
