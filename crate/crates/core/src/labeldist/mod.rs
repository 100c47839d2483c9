//! Label distributions: the fraction of pixels of each class in an image or
//! region, and the losses and distances defined on them.

mod estimators;
mod features;

pub use estimators::{
    fit_logreg, knn_estimate, predict_logreg, EstimatorKind, GlobalEstimator, LogRegConfig,
    LogRegModel, Standardizer,
};
pub use features::{global_features, gray_world, GlobalFeature, GLOBAL_FEATURE_DIM};

use crate::error::{Error, Result};
use crate::raster::LabelMask;
use crate::segnet::Prediction;

/// Clamp applied to predicted probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-6;

/// A point on the probability simplex over `C` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument(
                "distribution over zero classes".into(),
            ));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "distribution entries must be finite and nonnegative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {sum}, not 1"
            )));
        }
        Ok(LabelDistribution { probs })
    }

    /// Normalizes nonnegative weights. Fails if they sum to zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::EmptyRegion("weights sum to zero".into()));
        }
        LabelDistribution::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Self {
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        LabelDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Pixel-occupancy distribution of a mask, ignoring void pixels.
pub fn dist_from_mask(mask: &LabelMask) -> Result<LabelDistribution> {
    let mut counts = vec![0u64; mask.num_classes()];
    let mut total = 0u64;
    for i in 0..mask.num_pixels() {
        if let Some(c) = mask.class_of(i) {
            counts[c] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyRegion("mask has no labeled pixels".into()));
    }
    Ok(LabelDistribution {
        probs: counts
            .into_iter()
            .map(|n| n as f64 / total as f64)
            .collect(),
    })
}

/// Mean softmax output over `region` (pixel indices), or over the whole image.
pub fn dist_from_prediction(
    pred: &Prediction,
    region: Option<&[usize]>,
) -> Result<LabelDistribution> {
    let c = pred.num_classes();
    let mut sum = vec![0.0; c];
    let n = match region {
        Some(pixels) => {
            for &i in pixels {
                if i >= pred.num_pixels() {
                    return Err(Error::Shape(format!(
                        "region pixel {i} outside a {}-pixel prediction",
                        pred.num_pixels()
                    )));
                }
                for (s, p) in sum.iter_mut().zip(pred.pixel(i)) {
                    *s += p;
                }
            }
            pixels.len()
        }
        None => {
            for i in 0..pred.num_pixels() {
                for (s, p) in sum.iter_mut().zip(pred.pixel(i)) {
                    *s += p;
                }
            }
            pred.num_pixels()
        }
    };
    if n == 0 {
        return Err(Error::EmptyRegion("prediction region is empty".into()));
    }
    LabelDistribution::new(sum.into_iter().map(|s| s / n as f64).collect())
}

/// `-sum_c p[c] * ln(max(q[c], LOG_EPS))`, i.e. `H(p) + KL(p || q)`.
pub fn cross_entropy(p: &LabelDistribution, q: &LabelDistribution) -> f64 {
    debug_assert_eq!(p.num_classes(), q.num_classes());
    p.probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| -pc * qc.max(LOG_EPS).ln())
        .sum()
}

pub fn entropy(p: &LabelDistribution) -> f64 {
    p.probs
        .iter()
        .filter(|&&pc| pc > 0.0)
        .map(|&pc| -pc * pc.ln())
        .sum()
}

/// Symmetric histogram chi-squared distance `1/2 sum (p-q)^2 / (p+q)`, in `[0, 1]`.
pub fn chi2_distance(p: &LabelDistribution, q: &LabelDistribution) -> f64 {
    debug_assert_eq!(p.num_classes(), q.num_classes());
    let d = 0.5
        * p.probs
            .iter()
            .zip(&q.probs)
            .filter(|(&a, &b)| a + b > 0.0)
            .map(|(&a, &b)| (a - b) * (a - b) / (a + b))
            .sum::<f64>();
    // disjoint supports give exactly 1 in real arithmetic, one ulp more in floats
    d.min(1.0)
}

pub fn source_mean(dists: &[LabelDistribution]) -> Result<LabelDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| Error::InvalidArgument("source mean of an empty list".into()))?;
    let c = first.num_classes();
    let mut sum = vec![0.0; c];
    for d in dists {
        if d.num_classes() != c {
            return Err(Error::Shape("distributions disagree on class count".into()));
        }
        for (s, p) in sum.iter_mut().zip(&d.probs) {
            *s += p;
        }
    }
    let n = dists.len() as f64;
    LabelDistribution::new(sum.into_iter().map(|s| s / n).collect())
}

pub fn uniform_dist(num_classes: usize) -> Result<LabelDistribution> {
    if num_classes == 0 {
        return Err(Error::InvalidArgument(
            "uniform distribution over zero classes".into(),
        ));
    }
    Ok(LabelDistribution {
        probs: vec![1.0 / num_classes as f64; num_classes],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::VOID;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dist(v: &[f64]) -> LabelDistribution {
        LabelDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mask_distribution_counts() {
        let m = LabelMask::new(2, 2, 3, vec![0, 0, 1, 2]).unwrap();
        assert_eq!(dist_from_mask(&m).unwrap().probs(), &[0.5, 0.25, 0.25]);
        let m = LabelMask::new(2, 2, 3, vec![0; 4]).unwrap();
        assert_eq!(
            dist_from_mask(&m).unwrap(),
            LabelDistribution::one_hot(0, 3)
        );
        let m = LabelMask::new(2, 1, 3, vec![VOID, 1]).unwrap();
        assert_eq!(dist_from_mask(&m).unwrap().probs(), &[0.0, 1.0, 0.0]);
        let m = LabelMask::new(2, 1, 3, vec![VOID, VOID]).unwrap();
        assert!(matches!(dist_from_mask(&m), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn prediction_distribution() {
        let p = Prediction::new(1, 1, 2, vec![0.7, 0.3]).unwrap();
        let d = dist_from_prediction(&p, None).unwrap();
        assert_abs_diff_eq!(d.probs()[0], 0.7);
        let p = Prediction::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dist_from_prediction(&p, None).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(
            dist_from_prediction(&p, Some(&[1])).unwrap().probs(),
            &[0.0, 1.0]
        );
        assert!(matches!(
            dist_from_prediction(&p, Some(&[])),
            Err(Error::EmptyRegion(_))
        ));
    }

    #[test]
    fn one_hot_prediction_matches_mask() {
        let labels: Vec<u8> = (0..36).map(|i| ((i * 7) % 4) as u8).collect();
        let m = LabelMask::new(6, 6, 4, labels).unwrap();
        let p = Prediction::new(6, 6, 4, m.one_hot()).unwrap();
        let a = dist_from_prediction(&p, None).unwrap();
        let b = dist_from_mask(&m).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let half = dist(&[0.5, 0.5]);
        assert_abs_diff_eq!(
            cross_entropy(&half, &half),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        // term-by-term H(p) + KL(p || q)
        let p = LabelDistribution::one_hot(0, 2);
        let q = dist(&[0.8, 0.2]);
        let h = 0.0;
        let kl = 1.0 * (1.0f64 / 0.8).ln();
        assert_abs_diff_eq!(cross_entropy(&p, &q), h + kl, epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&p, &q), 0.223144, epsilon = 1e-6);
        // a zero in q is clamped, not infinite
        let z = LabelDistribution::one_hot(1, 2);
        assert_abs_diff_eq!(cross_entropy(&p, &z), -(LOG_EPS.ln()), epsilon = 1e-9);
    }

    #[test]
    fn chi2_values() {
        let e0 = LabelDistribution::one_hot(0, 2);
        let e1 = LabelDistribution::one_hot(1, 2);
        assert_eq!(chi2_distance(&e0, &e0), 0.0);
        assert_abs_diff_eq!(chi2_distance(&e0, &e1), 1.0);
        let half = dist(&[0.5, 0.5]);
        assert_abs_diff_eq!(chi2_distance(&half, &e0), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn means_and_uniform() {
        let m = source_mean(&[
            LabelDistribution::one_hot(0, 2),
            LabelDistribution::one_hot(1, 2),
        ])
        .unwrap();
        assert_eq!(m.probs(), &[0.5, 0.5]);
        assert!(uniform_dist(16)
            .unwrap()
            .probs()
            .iter()
            .all(|&p| p == 0.0625));
        let p = dist(&[0.2, 0.3, 0.5]);
        let m = source_mean(&vec![p.clone(); 7]).unwrap();
        for (a, b) in m.probs().iter().zip(p.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(source_mean(&[]).is_err());
        assert!(uniform_dist(0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    fn simplex(n: usize) -> impl Strategy<Value = LabelDistribution> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |w| {
            // sparsify a little so exact zeros get exercised
            let w: Vec<f64> = w
                .into_iter()
                .map(|x| if x < 0.15 { 0.0 } else { x })
                .collect();
            LabelDistribution::from_weights(w).ok()
        })
    }

    proptest! {
        #[test]
        fn gibbs_inequality(p in simplex(5), q in simplex(5)) {
            let gap = cross_entropy(&p, &q) - entropy(&p);
            prop_assert!(gap >= -1e-9);
            prop_assert!(cross_entropy(&p, &p) - entropy(&p) <= 1e-12);
        }

        #[test]
        fn chi2_is_a_bounded_symmetric_distance(p in simplex(4), q in simplex(4)) {
            let d = chi2_distance(&p, &q);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
            prop_assert_eq!(d, chi2_distance(&q, &p));
            prop_assert_eq!(chi2_distance(&p, &p), 0.0);
        }
    }
}
