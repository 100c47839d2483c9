//! Superpixels and landmark selection.
//!
//! Target images are over-segmented with SLIC, each superpixel is described
//! by its mean per-pixel scores plus those of its four spatial neighbors, and
//! a one-vs-rest linear SVM trained on source superpixels (labeled with their
//! dominant class) classifies them. The most confident fraction become
//! landmarks, each carrying a one-hot label distribution.

mod features;
mod landmarks;
mod slic;
mod svm;

pub use features::{
    dominant_label, sp_features, ColorPrototypeScorer, ScoreMap, SuperpixelFeature,
};
pub use landmarks::{select_landmarks, Landmark, LandmarkSet};
pub use slic::{slic, SlicParams};
pub use svm::{classify_sp, decision_values, train_sp_svm, ConfidenceMode, SvmConfig, SvmModel};

use crate::error::{Error, Result};

/// Assignment of every pixel to one of `k` superpixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelPartition {
    width: usize,
    height: usize,
    assignment: Vec<u32>,
    k: usize,
    /// `(row, col)` mean position of each superpixel.
    centroids: Vec<(f64, f64)>,
    sizes: Vec<usize>,
}

impl SuperpixelPartition {
    /// Builds a partition from raw ids, which must be exactly `0..k` with no gaps.
    pub fn from_assignment(width: usize, height: usize, assignment: Vec<u32>) -> Result<Self> {
        if assignment.len() != width * height || assignment.is_empty() {
            return Err(Error::Shape(format!(
                "assignment has {} entries for a {width}x{height} image",
                assignment.len()
            )));
        }
        let k = *assignment.iter().max().unwrap() as usize + 1;
        let mut sizes = vec![0usize; k];
        let mut sums = vec![(0.0, 0.0); k];
        for (i, &a) in assignment.iter().enumerate() {
            let a = a as usize;
            sizes[a] += 1;
            sums[a].0 += (i / width) as f64;
            sums[a].1 += (i % width) as f64;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "superpixel {empty} is empty"
            )));
        }
        let centroids = sums
            .iter()
            .zip(&sizes)
            .map(|(&(r, c), &n)| (r / n as f64, c / n as f64))
            .collect();
        Ok(SuperpixelPartition {
            width,
            height,
            assignment,
            k,
            centroids,
            sizes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_superpixels(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn label_at(&self, row: usize, col: usize) -> usize {
        self.assignment[row * self.width + col] as usize
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Nominal seed spacing `sqrt(W * H / K)`.
    pub fn spacing(&self) -> f64 {
        ((self.width * self.height) as f64 / self.k as f64).sqrt()
    }

    /// Pixel indices of each superpixel, in scan order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (i, &a) in self.assignment.iter().enumerate() {
            out[a as usize].push(i);
        }
        out
    }

    /// Superpixel ids as P5 bytes, for inspection. Needs `K <= 255`.
    pub fn encode_pgm(&self) -> Result<Vec<u8>> {
        if self.k > 255 {
            return Err(Error::InvalidArgument(format!(
                "{} superpixels do not fit in an 8-bit map",
                self.k
            )));
        }
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.assignment.iter().map(|&a| a as u8));
        Ok(out)
    }
}

/// Labels the 4-connected components of `labels`; returns per-pixel component ids
/// and the number of components. Components are numbered in scan order.
pub fn connected_components(width: usize, height: usize, labels: &[u32]) -> (Vec<usize>, usize) {
    let mut comp = vec![usize::MAX; labels.len()];
    let mut n = 0;
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = n;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / width, i % width);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == labels[i] {
                    comp[j] = n;
                    stack.push(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < width {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - width);
            }
            if r + 1 < height {
                visit(i + width);
            }
        }
        n += 1;
    }
    (comp, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_assignment_stats() {
        let p = SuperpixelPartition::from_assignment(4, 2, vec![0, 0, 1, 1, 0, 0, 1, 1]).unwrap();
        assert_eq!(p.num_superpixels(), 2);
        assert_eq!(p.sizes(), &[4, 4]);
        assert_eq!(p.centroids(), &[(0.5, 0.5), (0.5, 2.5)]);
        assert_eq!(p.members()[1], vec![2, 3, 6, 7]);
        assert!(SuperpixelPartition::from_assignment(2, 1, vec![0, 2]).is_err());
        assert!(SuperpixelPartition::from_assignment(2, 1, vec![0]).is_err());
    }

    #[test]
    fn components_split_disconnected_labels() {
        let (comp, n) = connected_components(3, 1, &[0, 1, 0]);
        assert_eq!(n, 3);
        assert_eq!(comp, vec![0, 1, 2]);
    }

    #[test]
    fn id_map_export() {
        let assignment: Vec<u32> = (0..100).collect();
        let p = SuperpixelPartition::from_assignment(10, 10, assignment).unwrap();
        let bytes = p.encode_pgm().unwrap();
        assert_eq!(*bytes.last().unwrap(), 99);
        assert!(bytes.starts_with(b"P5\n10 10\n255\n"));
        let big: Vec<u32> = (0..300).collect();
        let p = SuperpixelPartition::from_assignment(300, 1, big).unwrap();
        assert!(p.encode_pgm().is_err());
    }
}
