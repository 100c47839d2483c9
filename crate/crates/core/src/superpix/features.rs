use super::SuperpixelPartition;
use crate::error::{Error, Result};
use crate::labeldist::gray_world;
use crate::raster::{Dataset, Image, LabelMask, VOID};

/// A `W x H x M` raster of per-pixel scores, pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub data: Vec<f64>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * depth {
            return Err(Error::Shape(format!(
                "score map needs {} values, got {}",
                width * height * depth,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "score map has non-finite entries".into(),
            ));
        }
        Ok(ScoreMap {
            width,
            height,
            depth,
            data,
        })
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.depth..(index + 1) * self.depth]
    }
}

/// Per-pixel scores from color prototypes: a softmin over the distances to
/// each class's mean source color, followed by the color itself
/// (`M = C + F`). Colors are gray-world normalized per image throughout.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorPrototypeScorer {
    /// Mean source color per class; `None` for classes never seen.
    pub prototypes: Vec<Option<Vec<f64>>>,
    pub temperature: f64,
}

impl ColorPrototypeScorer {
    pub fn fit(source: &Dataset, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature {temperature} must be > 0"
            )));
        }
        let pairs = source.labeled()?;
        let channels = pairs
            .first()
            .map(|(img, _)| img.channels())
            .ok_or_else(|| Error::InvalidArgument("no source images".into()))?;
        let c = source.num_classes;
        let mut sums = vec![vec![0.0; channels]; c];
        let mut counts = vec![0usize; c];
        for (img, mask) in pairs {
            if img.channels() != channels {
                return Err(Error::Shape(
                    "source images disagree on channel count".into(),
                ));
            }
            let colors = gray_world(img);
            for i in 0..img.num_pixels() {
                if let Some(class) = mask.class_of(i) {
                    counts[class] += 1;
                    for (s, v) in sums[class]
                        .iter_mut()
                        .zip(&colors[i * channels..(i + 1) * channels])
                    {
                        *s += v;
                    }
                }
            }
        }
        let prototypes = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Ok(ColorPrototypeScorer {
            prototypes,
            temperature,
        })
    }

    pub fn depth(&self, channels: usize) -> usize {
        self.prototypes.len() + channels
    }

    pub fn scores(&self, img: &Image) -> Result<ScoreMap> {
        let f = img.channels();
        if let Some(p) = self.prototypes.iter().flatten().find(|p| p.len() != f) {
            return Err(Error::Shape(format!(
                "prototypes have {} channels, image has {f}",
                p.len()
            )));
        }
        let m = self.depth(f);
        let mut data = Vec::with_capacity(img.num_pixels() * m);
        let mut logits = vec![0.0; self.prototypes.len()];
        let colors = gray_world(img);
        for px in colors.chunks_exact(f) {
            for (l, proto) in logits.iter_mut().zip(&self.prototypes) {
                *l = match proto {
                    Some(p) => {
                        let d2: f64 = px.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                        -d2.sqrt() / self.temperature
                    }
                    None => f64::NEG_INFINITY,
                };
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                data.extend(std::iter::repeat(0.0).take(logits.len()));
            } else {
                let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                data.extend(logits.iter().map(|l| (l - max).exp() / total));
            }
            data.extend_from_slice(px);
        }
        ScoreMap::new(img.width(), img.height(), m, data)
    }
}

/// Concatenated `[self, left, right, above, below]` mean-score blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelFeature(pub Vec<f64>);

impl SuperpixelFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Features for every superpixel of `part`.
///
/// Block 0 is the superpixel's mean score. The neighbor blocks are the mean
/// scores of the superpixels containing the pixels one seed spacing `S` to
/// the left, right, above and below the centroid; a lookup that leaves the
/// image or lands back in the same superpixel yields a zero block.
pub fn sp_features(
    part: &SuperpixelPartition,
    scores: &ScoreMap,
) -> Result<Vec<SuperpixelFeature>> {
    if scores.width != part.width() || scores.height != part.height() {
        return Err(Error::Shape(format!(
            "scores are {}x{}, partition is {}x{}",
            scores.width,
            scores.height,
            part.width(),
            part.height()
        )));
    }
    let m = scores.depth;
    let k = part.num_superpixels();
    let mut means = vec![0.0; k * m];
    for (i, &a) in part.assignment().iter().enumerate() {
        for (acc, v) in means[a as usize * m..(a as usize + 1) * m]
            .iter_mut()
            .zip(scores.pixel(i))
        {
            *acc += v;
        }
    }
    for (sp, &n) in part.sizes().iter().enumerate() {
        means[sp * m..(sp + 1) * m]
            .iter_mut()
            .for_each(|v| *v /= n as f64);
    }

    let s = part.spacing();
    let (w, h) = (part.width() as f64, part.height() as f64);
    let lookup = |row: f64, col: f64| -> Option<usize> {
        let (r, c) = (row.round(), col.round());
        (r >= 0.0 && c >= 0.0 && r < h && c < w).then(|| part.label_at(r as usize, c as usize))
    };
    Ok(part
        .centroids()
        .iter()
        .enumerate()
        .map(|(sp, &(row, col))| {
            let mut v = Vec::with_capacity(5 * m);
            v.extend_from_slice(&means[sp * m..(sp + 1) * m]);
            for probe in [
                lookup(row, col - s),
                lookup(row, col + s),
                lookup(row - s, col),
                lookup(row + s, col),
            ] {
                match probe {
                    Some(n) if n != sp => v.extend_from_slice(&means[n * m..(n + 1) * m]),
                    _ => v.extend(std::iter::repeat(0.0).take(m)),
                }
            }
            SuperpixelFeature(v)
        })
        .collect())
}

/// Modal non-void class of each superpixel (ties to the lowest class);
/// [`VOID`] when a superpixel has no labeled pixel.
pub fn dominant_label(part: &SuperpixelPartition, mask: &LabelMask) -> Result<Vec<u8>> {
    if !mask.same_shape(part.width(), part.height()) {
        return Err(Error::Shape("mask and partition sizes differ".into()));
    }
    let c = mask.num_classes();
    let mut counts = vec![0usize; part.num_superpixels() * c];
    for (i, &a) in part.assignment().iter().enumerate() {
        if let Some(class) = mask.class_of(i) {
            counts[a as usize * c + class] += 1;
        }
    }
    Ok(counts
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (class, &n) in row.iter().enumerate() {
                if n > row[best] {
                    best = class;
                }
            }
            if row[best] == 0 {
                VOID
            } else {
                best as u8
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Domain, Sample};
    use rand::Rng;

    fn uniform_scores(w: usize, h: usize, v: &[f64]) -> ScoreMap {
        let data = (0..w * h).flat_map(|_| v.iter().copied()).collect();
        ScoreMap::new(w, h, v.len(), data).unwrap()
    }

    #[test]
    fn single_superpixel_has_zero_neighbors() {
        let part = SuperpixelPartition::from_assignment(4, 4, vec![0; 16]).unwrap();
        let f = sp_features(&part, &uniform_scores(4, 4, &[0.25, 0.5])).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(&f[0].0[..2], &[0.25, 0.5]);
        assert!(f[0].0[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_scores_give_uniform_self_blocks() {
        let assignment: Vec<u32> = (0..64)
            .map(|i| ((i / 8) / 4 * 2 + (i % 8) / 4) as u32)
            .collect();
        let part = SuperpixelPartition::from_assignment(8, 8, assignment).unwrap();
        let v = [0.1, 0.7, 0.3];
        for f in sp_features(&part, &uniform_scores(8, 8, &v)).unwrap() {
            for (a, b) in f.0[..3].iter().zip(&v) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn side_by_side_superpixels_see_each_other() {
        let assignment: Vec<u32> = (0..32).map(|i| u32::from(i % 8 >= 4)).collect();
        let part = SuperpixelPartition::from_assignment(8, 4, assignment).unwrap();
        let data: Vec<f64> = (0..32)
            .map(|i| if i % 8 >= 4 { 2.0 } else { 1.0 })
            .collect();
        let scores = ScoreMap::new(8, 4, 1, data).unwrap();
        let f = sp_features(&part, &scores).unwrap();
        // [self, left, right, above, below]
        assert_eq!(f[0].0, vec![1.0, 0.0, 2.0, 0.0, 0.0]);
        assert_eq!(f[1].0, vec![2.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let part = SuperpixelPartition::from_assignment(2, 2, vec![0; 4]).unwrap();
        assert!(sp_features(&part, &uniform_scores(3, 2, &[1.0])).is_err());
    }

    #[test]
    fn dominant_label_rules() {
        let part = SuperpixelPartition::from_assignment(10, 1, vec![0, 0, 0, 1, 1, 1, 1, 1, 2, 2])
            .unwrap();
        let mask = LabelMask::new(10, 1, 4, vec![3, 3, 3, 0, 1, 1, 0, 1, VOID, VOID]).unwrap();
        assert_eq!(dominant_label(&part, &mask).unwrap(), vec![3, 1, VOID]);

        let part = SuperpixelPartition::from_assignment(10, 1, vec![0; 10]).unwrap();
        let mask = LabelMask::new(10, 1, 2, vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0]).unwrap();
        assert_eq!(dominant_label(&part, &mask).unwrap(), vec![0]);
    }

    #[test]
    fn dominant_label_matches_brute_force() {
        let mut rng = crate::seeded_rng(11, 0);
        for _ in 0..20 {
            let assignment: Vec<u32> = (0..144).map(|_| rng.random_range(0..6)).collect();
            let Ok(part) = SuperpixelPartition::from_assignment(12, 12, assignment.clone()) else {
                continue;
            };
            let labels: Vec<u8> = (0..144)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        VOID
                    } else {
                        rng.random_range(0..5)
                    }
                })
                .collect();
            let mask = LabelMask::new(12, 12, 5, labels.clone()).unwrap();
            let got = dominant_label(&part, &mask).unwrap();
            for sp in 0..part.num_superpixels() {
                let mut hist = [0usize; 5];
                for i in 0..144 {
                    if assignment[i] as usize == sp && labels[i] != VOID {
                        hist[labels[i] as usize] += 1;
                    }
                }
                let max = *hist.iter().max().unwrap();
                let expect = if max == 0 {
                    VOID
                } else {
                    hist.iter().position(|&n| n == max).unwrap() as u8
                };
                assert_eq!(got[sp], expect);
            }
        }
    }

    #[test]
    fn prototype_scores() {
        let img = Image::new(2, 1, 3, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let mask = LabelMask::new(2, 1, 3, vec![0, 1]).unwrap();
        let ds = Dataset::new(
            Domain::Source,
            3,
            vec![Sample {
                id: 0,
                image: img.clone(),
                mask: Some(mask),
            }],
        )
        .unwrap();
        let scorer = ColorPrototypeScorer::fit(&ds, 0.1).unwrap();
        assert_eq!(scorer.prototypes[2], None);
        let s = scorer.scores(&img).unwrap();
        assert_eq!(s.depth, 6);
        let px = s.pixel(0);
        assert!(px[0] > 0.99 && px[2] == 0.0);
        assert_eq!(&px[3..], &[0.0, 0.0, 0.0]);
    }
}
