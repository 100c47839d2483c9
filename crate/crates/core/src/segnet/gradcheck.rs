//! Finite-difference verification of [`loss_and_grad`](super::loss_and_grad)
//! on random small models and batches, cycling through all regimes.

use rand::seq::index::sample;
use rand::Rng;

use super::loss::{loss_and_grad, loss_only, LandmarkRegion, Regime, TargetItem, TargetProperties};
use super::model::{forward_trace, init_model, SegModel};
use super::TrainConfig;
use crate::error::Result;
use crate::labeldist::LabelDistribution;
use crate::raster::{Image, LabelMask, VOID};
use crate::superpix::{select_landmarks, slic, SlicParams};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub probes: usize,
    /// Coordinates compared per probe.
    pub coords: usize,
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            probes: 20,
            coords: 10,
            step: 1e-3,
            tolerance: 1e-3,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub regime: Regime,
    pub gamma: f64,
    pub checks: Vec<CoordCheck>,
    /// Coordinates redrawn because a step of `+-h` flipped a ReLU.
    pub kinks_skipped: usize,
}

impl ProbeReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub probes: Vec<ProbeReport>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.probes
            .iter()
            .map(ProbeReport::max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tolerance
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

struct Probe {
    model: SegModel,
    source: Vec<(Image, LabelMask)>,
    target: Vec<(Image, TargetProperties)>,
    cfg: TrainConfig,
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, 3, |_, _, _| rng.random::<f64>()).expect("in range")
}

fn random_simplex(rng: &mut impl Rng, classes: usize) -> LabelDistribution {
    LabelDistribution::from_weights((0..classes).map(|_| rng.random::<f64>() + 0.05).collect())
        .expect("positive")
}

fn make_probe(seed: u64, index: usize) -> Result<Probe> {
    let mut rng = crate::seeded_rng(seed, 1000 + index as u64);
    let regime = Regime::ALL[index % 4];
    // target-only, source-only and mixed weightings in turn
    let gamma = match (index / 4) % 3 {
        0 => rng.random_range(0.2..0.8),
        1 => 0.0,
        _ => 1.0,
    };
    let classes = rng.random_range(3..=6);
    let (w, h) = (rng.random_range(6..=10), rng.random_range(6..=10));
    let mut model = init_model("small", 3, classes, rng.random())?;
    // nonzero biases so every parameter block matters
    let mut offset = 0;
    for layer in &model.arch.layers {
        offset += layer.weight_len();
        for b in &mut model.params[offset..offset + layer.out_ch] {
            *b = rng.random_range(-0.1..0.1);
        }
        offset += layer.out_ch;
    }

    let mut source = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        let img = random_image(&mut rng, w, h);
        let labels = (0..w * h)
            .map(|_| {
                if rng.random::<f64>() < 0.1 {
                    VOID
                } else {
                    rng.random_range(0..classes) as u8
                }
            })
            .collect();
        source.push((img, LabelMask::new(w, h, classes, labels)?));
    }
    let mut target = Vec::new();
    if regime.is_adapted() {
        for _ in 0..rng.random_range(1..=2) {
            let img = random_image(&mut rng, w, h);
            let image_dist = regime
                .uses_image()
                .then(|| random_simplex(&mut rng, classes));
            let landmarks = if regime.uses_superpixels() {
                let part = slic(
                    &img,
                    &SlicParams {
                        k: 6,
                        ..SlicParams::default()
                    },
                )?;
                let classified: Vec<_> = (0..part.num_superpixels())
                    .map(|id| (id, rng.random_range(0..classes), rng.random::<f64>()))
                    .collect();
                let set = select_landmarks(&classified, 0.6, classes)?;
                let members = part.members();
                Some(
                    set.entries
                        .iter()
                        .map(|l| LandmarkRegion {
                            pixels: members[l.superpixel].clone(),
                            dist: l.distribution.clone(),
                        })
                        .collect(),
                )
            } else {
                None
            };
            target.push((
                img,
                TargetProperties {
                    image_dist,
                    landmarks,
                },
            ));
        }
    }
    let cfg = TrainConfig {
        gamma,
        w_image: rng.random_range(0.5..1.5),
        w_superpixel: rng.random_range(0.5..1.5),
        ..TrainConfig::for_regime(regime)
    };
    Ok(Probe {
        model,
        source,
        target,
        cfg,
    })
}

fn active_units(model: &SegModel, images: &[&Image]) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for img in images {
        out.extend(forward_trace(model, img)?.active_units(model));
    }
    Ok(out)
}

fn check_probe(seed: u64, index: usize, cfg: &GradcheckConfig) -> Result<ProbeReport> {
    let probe = make_probe(seed, index)?;
    let source: Vec<(&Image, &LabelMask)> = probe.source.iter().map(|(i, m)| (i, m)).collect();
    let target: Vec<TargetItem> = probe
        .target
        .iter()
        .map(|(image, props)| TargetItem { image, props })
        .collect();
    let images: Vec<&Image> = source
        .iter()
        .map(|s| s.0)
        .chain(target.iter().map(|t| t.image))
        .collect();
    let (_, grad) = loss_and_grad(&probe.model, &source, &target, &probe.cfg)?;
    let base_units = active_units(&probe.model, &images)?;

    let mut rng = crate::seeded_rng(seed, 2000 + index as u64);
    let n = probe.model.params.len();
    let mut candidates = sample(&mut rng, n, n.min(cfg.coords * 10))
        .into_vec()
        .into_iter();
    let mut checks = Vec::with_capacity(cfg.coords);
    let mut kinks_skipped = 0;
    let mut model = probe.model.clone();
    while checks.len() < cfg.coords {
        let Some(index) = candidates.next() else {
            break;
        };
        let x = model.params[index];
        model.params[index] = x + cfg.step;
        let plus = loss_only(&model, &source, &target, &probe.cfg)?.total;
        let plus_units = active_units(&model, &images)?;
        model.params[index] = x - cfg.step;
        let minus = loss_only(&model, &source, &target, &probe.cfg)?.total;
        let minus_units = active_units(&model, &images)?;
        model.params[index] = x;
        if plus_units != base_units || minus_units != base_units {
            kinks_skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        checks.push(CoordCheck {
            index,
            analytic: grad[index],
            numeric,
            rel_err: relative_error(grad[index], numeric, cfg.floor),
        });
    }
    Ok(ProbeReport {
        regime: probe.cfg.regime,
        gamma: probe.cfg.gamma,
        checks,
        kinks_skipped,
    })
}

/// Runs `cfg.probes` probes derived from `seed`.
pub fn run_gradcheck(seed: u64, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let probes = (0..cfg.probes)
        .map(|i| check_probe(seed, i, cfg))
        .collect::<Result<_>>()?;
    Ok(GradcheckReport {
        probes,
        tolerance: cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-8), 0.0);
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-8) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0, 1e-8) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn every_regime_passes() {
        let report = run_gradcheck(
            3,
            &GradcheckConfig {
                probes: 8,
                ..GradcheckConfig::default()
            },
        )
        .unwrap();
        let regimes: Vec<Regime> = report.probes.iter().map(|p| p.regime).collect();
        assert_eq!(&regimes[..4], &Regime::ALL);
        for p in &report.probes {
            assert_eq!(p.checks.len(), 10);
        }
        assert!(
            report.passed(),
            "max relative error {}",
            report.max_rel_err()
        );
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        // perturbing a loss term without touching its gradient must fail the check
        let probe = make_probe(5, 1).unwrap();
        let source: Vec<(&Image, &LabelMask)> = probe.source.iter().map(|(i, m)| (i, m)).collect();
        let target: Vec<TargetItem> = probe
            .target
            .iter()
            .map(|(image, props)| TargetItem { image, props })
            .collect();
        let (_, grad) = loss_and_grad(&probe.model, &source, &target, &probe.cfg).unwrap();
        let weighted = TrainConfig {
            w_image: probe.cfg.w_image * 2.0,
            ..probe.cfg.clone()
        };
        let mut model = probe.model.clone();
        let last = model.params.len() - 1;
        let h = 1e-3;
        model.params[last] += h;
        let plus = loss_only(&model, &source, &target, &weighted)
            .unwrap()
            .total;
        model.params[last] -= 2.0 * h;
        let minus = loss_only(&model, &source, &target, &weighted)
            .unwrap()
            .total;
        let numeric = (plus - minus) / (2.0 * h);
        assert!(relative_error(grad[last], numeric, 1e-8) > 1e-3);
    }
}
