//! The joint objective: pixel-wise cross-entropy on labeled source images
//! plus cross-entropies between inferred target properties and the
//! network's averaged predictions.

use std::fmt;
use std::str::FromStr;

use super::model::{backward, forward_trace, SegModel};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::labeldist::{LabelDistribution, LOG_EPS};
use crate::raster::{Image, LabelMask};
use crate::superpix::{LandmarkSet, SuperpixelPartition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Source images only.
    NoAdapt,
    /// Image-level label distributions.
    Image,
    /// Landmark superpixels.
    Superpixel,
    ImageSuperpixel,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::NoAdapt,
        Regime::Image,
        Regime::Superpixel,
        Regime::ImageSuperpixel,
    ];

    pub fn uses_image(self) -> bool {
        matches!(self, Regime::Image | Regime::ImageSuperpixel)
    }

    pub fn uses_superpixels(self) -> bool {
        matches!(self, Regime::Superpixel | Regime::ImageSuperpixel)
    }

    pub fn is_adapted(self) -> bool {
        self != Regime::NoAdapt
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Regime::NoAdapt => "NoAdapt",
            Regime::Image => "Ours(I)",
            Regime::Superpixel => "Ours(SP)",
            Regime::ImageSuperpixel => "Ours(I+SP)",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::NoAdapt => "noadapt",
            Regime::Image => "i",
            Regime::Superpixel => "sp",
            Regime::ImageSuperpixel => "i+sp",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "noadapt" => Ok(Regime::NoAdapt),
            "i" => Ok(Regime::Image),
            "sp" => Ok(Regime::Superpixel),
            "i+sp" | "isp" => Ok(Regime::ImageSuperpixel),
            _ => Err(Error::Regime(format!(
                "unknown regime {s:?} (noadapt, i, sp, i+sp)"
            ))),
        }
    }
}

/// Pixels of one landmark superpixel and its label distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkRegion {
    pub pixels: Vec<usize>,
    pub dist: LabelDistribution,
}

/// What is known about one unlabeled target image.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TargetProperties {
    pub image_dist: Option<LabelDistribution>,
    pub landmarks: Option<Vec<LandmarkRegion>>,
}

impl TargetProperties {
    pub fn new(
        image_dist: Option<LabelDistribution>,
        superpixels: Option<(&SuperpixelPartition, &LandmarkSet)>,
    ) -> Result<Self> {
        let landmarks = match superpixels {
            None => None,
            Some((part, set)) => {
                let members = part.members();
                let mut regions = Vec::with_capacity(set.len());
                for l in &set.entries {
                    let pixels = members.get(l.superpixel).cloned().ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "landmark superpixel {} outside a {}-superpixel partition",
                            l.superpixel,
                            part.num_superpixels()
                        ))
                    })?;
                    regions.push(LandmarkRegion {
                        pixels,
                        dist: l.distribution.clone(),
                    });
                }
                Some(regions)
            }
        };
        Ok(TargetProperties {
            image_dist,
            landmarks,
        })
    }
}

/// A target image paired with its inferred properties. Carries no mask.
#[derive(Clone, Copy, Debug)]
pub struct TargetItem<'a> {
    pub image: &'a Image,
    pub props: &'a TargetProperties,
}

/// `total = gamma * source + (1 - gamma) * target`, each term averaged over
/// its half of the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub source: f64,
    pub target: f64,
}

fn log_softmax(logits: &[f64], classes: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; hw * classes];
    for i in 0..hw {
        let mut max = f64::NEG_INFINITY;
        for c in 0..classes {
            max = max.max(logits[c * hw + i]);
        }
        let sum: f64 = (0..classes).map(|c| (logits[c * hw + i] - max).exp()).sum();
        let lse = max + sum.ln();
        for c in 0..classes {
            out[i * classes + c] = logits[c * hw + i] - lse;
        }
    }
    out
}

/// Cross-entropy between `p` and the mean of `q` over `pixels` (all pixels
/// when `None`), and `dC/dz` added into planar `dz` scaled by `weight`.
fn regional_term(
    q: &[f64],
    classes: usize,
    hw: usize,
    pixels: Option<&[usize]>,
    p: &[f64],
    weight: Option<(f64, &mut [f64])>,
) -> f64 {
    let mut mean = vec![0.0; classes];
    let count = pixels.map_or(hw, <[usize]>::len);
    let mut add = |i: usize| {
        for (m, v) in mean.iter_mut().zip(&q[i * classes..(i + 1) * classes]) {
            *m += v;
        }
    };
    match pixels {
        Some(px) => px.iter().for_each(|&i| add(i)),
        None => (0..hw).for_each(add),
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let value: f64 = p
        .iter()
        .zip(&mean)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &mc)| -pc * mc.max(LOG_EPS).ln())
        .sum();
    if let Some((weight, dz)) = weight {
        // dC/d(mean_c), zero where the log is clamped
        let g: Vec<f64> = p
            .iter()
            .zip(&mean)
            .map(|(&pc, &mc)| {
                if pc > 0.0 && mc > LOG_EPS {
                    -pc / mc
                } else {
                    0.0
                }
            })
            .collect();
        let coef = weight / count as f64;
        let mut push = |i: usize| {
            let qi = &q[i * classes..(i + 1) * classes];
            let s: f64 = g.iter().zip(qi).map(|(a, b)| a * b).sum();
            for j in 0..classes {
                dz[j * hw + i] += coef * qi[j] * (g[j] - s);
            }
        };
        match pixels {
            Some(px) => px.iter().for_each(|&i| push(i)),
            None => (0..hw).for_each(push),
        }
    }
    value
}

fn check_regime(
    cfg: &TrainConfig,
    source_len: usize,
    target: &[TargetItem],
    classes: usize,
) -> Result<()> {
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma {} outside [0, 1]",
            cfg.gamma
        )));
    }
    if source_len == 0 {
        return Err(Error::InvalidArgument("empty source batch".into()));
    }
    let regime = cfg.regime;
    if regime == Regime::NoAdapt && !target.is_empty() {
        return Err(Error::Regime("NoAdapt takes no target images".into()));
    }
    if regime.is_adapted() && target.is_empty() {
        return Err(Error::Regime(format!(
            "regime {regime} needs target images"
        )));
    }
    for (t, item) in target.iter().enumerate() {
        if regime.uses_image() {
            match &item.props.image_dist {
                None => {
                    return Err(Error::Regime(format!(
                        "target item {t} lacks an image-level distribution"
                    )))
                }
                Some(d) if d.num_classes() != classes => {
                    return Err(Error::Shape(format!(
                        "target item {t} distribution has {} classes",
                        d.num_classes()
                    )))
                }
                _ => {}
            }
        }
        if regime.uses_superpixels() {
            let regions = item.props.landmarks.as_ref().ok_or_else(|| {
                Error::Regime(format!("target item {t} lacks landmark superpixels"))
            })?;
            let hw = item.image.num_pixels();
            for r in regions {
                if r.dist.num_classes() != classes {
                    return Err(Error::Shape(format!(
                        "target item {t} landmark has {} classes",
                        r.dist.num_classes()
                    )));
                }
                if r.pixels.is_empty() || r.pixels.iter().any(|&i| i >= hw) {
                    return Err(Error::Shape(format!(
                        "target item {t} has an empty or out-of-image landmark"
                    )));
                }
            }
        }
    }
    Ok(())
}

fn evaluate(
    model: &SegModel,
    source: &[(&Image, &LabelMask)],
    target: &[TargetItem],
    cfg: &TrainConfig,
    want_grad: bool,
) -> Result<(LossTerms, Vec<f64>)> {
    let classes = model.num_classes();
    check_regime(cfg, source.len(), target, classes)?;
    let gamma = if cfg.regime == Regime::NoAdapt {
        1.0
    } else {
        cfg.gamma
    };
    let mut grad = if want_grad {
        vec![0.0; model.params.len()]
    } else {
        Vec::new()
    };
    let mut terms = LossTerms::default();

    let source_scale = gamma / source.len() as f64;
    for (img, mask) in source {
        if !mask.same_shape(img.width(), img.height()) || mask.num_classes() != classes {
            return Err(Error::Shape(
                "source mask does not match its image or the model".into(),
            ));
        }
        let trace = forward_trace(model, img)?;
        let hw = img.num_pixels();
        let logq = log_softmax(trace.logits(), classes, hw);
        let labeled: Vec<(usize, usize)> = (0..hw)
            .filter_map(|i| mask.class_of(i).map(|c| (i, c)))
            .collect();
        if labeled.is_empty() {
            log::warn!("source image without labeled pixels contributes nothing");
            continue;
        }
        let n = labeled.len() as f64;
        let ce = -labeled
            .iter()
            .map(|&(i, c)| logq[i * classes + c])
            .sum::<f64>()
            / n;
        terms.source += ce / source.len() as f64;
        terms.total += source_scale * ce;
        if want_grad && source_scale != 0.0 {
            let mut dz = vec![0.0; classes * hw];
            let coef = source_scale / n;
            for &(i, y) in &labeled {
                for j in 0..classes {
                    let q = logq[i * classes + j].exp();
                    dz[j * hw + i] = coef * (q - if j == y { 1.0 } else { 0.0 });
                }
            }
            backward(model, &trace, dz, &mut grad);
        }
    }

    let target_scale = if target.is_empty() {
        0.0
    } else {
        (1.0 - gamma) / target.len() as f64
    };
    for item in target {
        let trace = forward_trace(model, item.image)?;
        let hw = item.image.num_pixels();
        let q: Vec<f64> = log_softmax(trace.logits(), classes, hw)
            .into_iter()
            .map(f64::exp)
            .collect();
        let backprop = want_grad && target_scale != 0.0;
        let mut dz = if backprop {
            vec![0.0; classes * hw]
        } else {
            Vec::new()
        };
        let mut value = 0.0;
        if cfg.regime.uses_image() {
            let p = item.props.image_dist.as_ref().expect("checked above");
            let w = cfg.w_image;
            let g = backprop.then(|| (target_scale * w, dz.as_mut_slice()));
            value += w * regional_term(&q, classes, hw, None, p.probs(), g);
        }
        if cfg.regime.uses_superpixels() {
            let regions = item.props.landmarks.as_ref().expect("checked above");
            if regions.is_empty() {
                log::warn!("target image without landmarks skips the superpixel term");
            } else {
                let w = cfg.w_superpixel / regions.len() as f64;
                for r in regions {
                    let g = backprop.then(|| (target_scale * w, dz.as_mut_slice()));
                    value += w * regional_term(&q, classes, hw, Some(&r.pixels), r.dist.probs(), g);
                }
            }
        }
        terms.target += value / target.len() as f64;
        terms.total += target_scale * value;
        if backprop {
            backward(model, &trace, dz, &mut grad);
        }
    }
    Ok((terms, grad))
}

/// Loss terms and the gradient of `total` with respect to `model.params`.
///
/// NoAdapt treats `gamma` as 1 and takes no target items. When the target
/// weight `1 - gamma` is zero the target images are still evaluated for the
/// reported term but contribute nothing to the gradient.
pub fn loss_and_grad(
    model: &SegModel,
    source: &[(&Image, &LabelMask)],
    target: &[TargetItem],
    cfg: &TrainConfig,
) -> Result<(LossTerms, Vec<f64>)> {
    evaluate(model, source, target, cfg, true)
}

pub(crate) fn loss_only(
    model: &SegModel,
    source: &[(&Image, &LabelMask)],
    target: &[TargetItem],
    cfg: &TrainConfig,
) -> Result<LossTerms> {
    Ok(evaluate(model, source, target, cfg, false)?.0)
}
