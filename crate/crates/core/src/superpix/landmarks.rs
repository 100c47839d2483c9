use crate::error::{Error, Result};
use crate::labeldist::LabelDistribution;

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub superpixel: usize,
    pub class: usize,
    pub confidence: f64,
    /// One-hot at `class`.
    pub distribution: LabelDistribution,
}

/// Landmarks sorted by descending confidence.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LandmarkSet {
    pub entries: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Keeps the `ceil(fraction * K)` most confident of `K` classified
/// superpixels, given as `(id, class, confidence)`. Equal confidences keep
/// the lower id first.
pub fn select_landmarks(
    classified: &[(usize, usize, f64)],
    fraction: f64,
    num_classes: usize,
) -> Result<LandmarkSet> {
    if classified.is_empty() {
        return Err(Error::InvalidArgument("no classified superpixels".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "landmark fraction {fraction} not in (0, 1]"
        )));
    }
    if let Some(&(id, class, _)) = classified.iter().find(|e| e.1 >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "superpixel {id} has class {class} out of {num_classes}"
        )));
    }
    // 0.55 * 100 evaluates to 55.00000000000001; keep 55, not 56
    let keep =
        ((fraction * classified.len() as f64 - 1e-9).ceil() as usize).clamp(1, classified.len());
    let mut ranked = classified.to_vec();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    Ok(LandmarkSet {
        entries: ranked[..keep]
            .iter()
            .map(|&(superpixel, class, confidence)| Landmark {
                superpixel,
                class,
                confidence,
                distribution: LabelDistribution::one_hot(class, num_classes),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_top_sixty_percent() {
        let classified: Vec<(usize, usize, f64)> = (0..10)
            .map(|i| {
                (
                    i,
                    i % 3,
                    [5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0, 0.5, 6.0, 4.0][i],
                )
            })
            .collect();
        let set = select_landmarks(&classified, 0.6, 3).unwrap();
        assert_eq!(set.len(), 6);
        let ids: Vec<usize> = set.entries.iter().map(|l| l.superpixel).collect();
        assert_eq!(ids, vec![2, 6, 4, 8, 0, 9]);
        for l in &set.entries {
            assert_eq!(l.distribution, LabelDistribution::one_hot(l.class, 3));
        }
    }

    #[test]
    fn full_fraction_sorts_everything() {
        let classified = vec![(0, 0, 1.0), (1, 1, 3.0), (2, 0, 2.0)];
        let set = select_landmarks(&classified, 1.0, 2).unwrap();
        let conf: Vec<f64> = set.entries.iter().map(|l| l.confidence).collect();
        assert_eq!(conf, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn ties_keep_lower_ids() {
        let classified: Vec<(usize, usize, f64)> = (0..5).rev().map(|i| (i, 0, 1.0)).collect();
        let set = select_landmarks(&classified, 0.4, 1).unwrap();
        let ids: Vec<usize> = set.entries.iter().map(|l| l.superpixel).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn rounding_and_errors() {
        let classified: Vec<(usize, usize, f64)> = (0..7).map(|i| (i, 0, i as f64)).collect();
        assert_eq!(select_landmarks(&classified, 0.6, 1).unwrap().len(), 5); // ceil(4.2)
        assert!(select_landmarks(&[], 0.6, 1).is_err());
        assert!(select_landmarks(&classified, 0.0, 1).is_err());
        assert!(select_landmarks(&classified, 1.5, 1).is_err());
        assert!(select_landmarks(&classified, 0.5, 0).is_err());
    }
}
