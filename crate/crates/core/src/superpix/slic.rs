//! SLIC-style superpixels: grid-seeded local k-means in joint color and
//! position space, followed by connectivity enforcement.

use super::{connected_components, SuperpixelPartition};
use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct SlicParams {
    /// Requested number of superpixels.
    pub k: usize,
    /// Weight of spatial distance relative to color distance per seed spacing.
    pub compactness: f64,
    pub iters: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            k: 100,
            compactness: 0.15,
            iters: 10,
        }
    }
}

#[derive(Clone)]
struct Center {
    row: f64,
    col: f64,
    color: Vec<f64>,
}

/// Seed grid with `nx * ny ~= k` cells. Among grids within 10% of `k` the
/// one closest to the image aspect ratio wins; otherwise the closest count.
fn grid_shape(width: usize, height: usize, k: usize) -> (usize, usize) {
    let aspect = (width as f64 / height as f64).ln();
    let mut best = (1, 1);
    let mut best_key = (true, f64::INFINITY, f64::INFINITY);
    for nx in 1..=width.min(k) {
        let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, height);
        let count_err = (nx * ny).abs_diff(k) as f64 / k as f64;
        let aspect_err = ((nx as f64 / ny as f64).ln() - aspect).abs();
        let near = count_err <= 0.1;
        let key = if near {
            (false, aspect_err, count_err)
        } else {
            (true, count_err, aspect_err)
        };
        if key < best_key {
            best_key = key;
            best = (nx, ny);
        }
    }
    best
}

fn joint_distance(
    img: &Image,
    index: usize,
    row: f64,
    col: f64,
    c: &Center,
    spatial_w2: f64,
) -> f64 {
    let color: f64 = img
        .pixel(index)
        .iter()
        .zip(&c.color)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let (dr, dc) = (row - c.row, col - c.col);
    color + spatial_w2 * (dr * dr + dc * dc)
}

/// Over-segments `img` into about `params.k` compact, 4-connected superpixels.
///
/// Seeds sit at the centers of a regular grid and take the mean color of
/// their cell. Each iteration assigns every pixel to the nearest center
/// within two cell sizes, using `|color|^2 + (compactness / S)^2 |position|^2`
/// with `S = sqrt(W * H / K)`, then moves centers to their members' means.
/// Afterwards each cluster keeps its largest connected piece; every other
/// piece is merged into the adjacent superpixel whose center is nearest.
pub fn slic(img: &Image, params: &SlicParams) -> Result<SuperpixelPartition> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    if params.k == 0 || params.k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot make {} superpixels from {n} pixels",
            params.k
        )));
    }
    if !(params.compactness > 0.0) || params.iters == 0 {
        return Err(Error::InvalidArgument(format!(
            "bad SLIC parameters {params:?}"
        )));
    }
    let s = (n as f64 / params.k as f64).sqrt();
    let spatial_w2 = (params.compactness / s).powi(2);
    let (nx, ny) = grid_shape(w, h, params.k);
    let (cell_w, cell_h) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let channels = img.channels();

    let mut centers = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        let (r0, r1) = (gy * h / ny, (gy + 1) * h / ny);
        for gx in 0..nx {
            let (c0, c1) = (gx * w / nx, (gx + 1) * w / nx);
            let mut color = vec![0.0; channels];
            for row in r0..r1 {
                for col in c0..c1 {
                    for (m, v) in color.iter_mut().zip(img.at(row, col)) {
                        *m += v;
                    }
                }
            }
            let count = ((r1 - r0) * (c1 - c0)).max(1) as f64;
            color.iter_mut().for_each(|m| *m /= count);
            centers.push(Center {
                row: (gy as f64 + 0.5) * cell_h - 0.5,
                col: (gx as f64 + 0.5) * cell_w - 0.5,
                color,
            });
        }
    }

    let reach_r = 2.0 * cell_h;
    let reach_c = 2.0 * cell_w;
    let mut labels = vec![u32::MAX; n];
    let mut best = vec![f64::INFINITY; n];
    let mut round = 0;
    // extra rounds (at most `iters`) only while some cluster is empty
    while round < params.iters || (round < 2 * params.iters && has_empty(&labels, centers.len())) {
        round += 1;
        labels.fill(u32::MAX);
        best.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let r0 = (c.row - reach_r).floor().max(0.0) as usize;
            let r1 = ((c.row + reach_r).ceil() as usize).min(h - 1);
            let c0 = (c.col - reach_c).floor().max(0.0) as usize;
            let c1 = ((c.col + reach_c).ceil() as usize).min(w - 1);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let i = row * w + col;
                    let d = joint_distance(img, i, row as f64, col as f64, c, spatial_w2);
                    if d < best[i] {
                        best[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        // pixels no window reached go to the spatially nearest center
        for i in 0..n {
            if labels[i] == u32::MAX {
                let (row, col) = ((i / w) as f64, (i % w) as f64);
                let nearest = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| ((c.row - row).powi(2) + (c.col - col).powi(2), k))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .unwrap()
                    .1;
                labels[i] = nearest as u32;
            }
        }
        let mut sums = vec![(0.0, 0.0, vec![0.0; channels], 0usize); centers.len()];
        for i in 0..n {
            let acc = &mut sums[labels[i] as usize];
            acc.0 += (i / w) as f64;
            acc.1 += (i % w) as f64;
            for (m, v) in acc.2.iter_mut().zip(img.pixel(i)) {
                *m += v;
            }
            acc.3 += 1;
        }
        let mut worst: Vec<usize> = (0..n).collect();
        worst.sort_by(|&a, &b| best[b].total_cmp(&best[a]).then(a.cmp(&b)));
        let mut worst = worst.into_iter();
        for (c, (sr, sc, color, count)) in centers.iter_mut().zip(sums) {
            if count > 0 {
                let cnt = count as f64;
                c.row = sr / cnt;
                c.col = sc / cnt;
                c.color = color.into_iter().map(|v| v / cnt).collect();
            } else if let Some(i) = worst.next() {
                // an emptied cluster restarts at the worst-fitting pixel
                c.row = (i / w) as f64;
                c.col = (i % w) as f64;
                c.color = img.pixel(i).to_vec();
            }
        }
    }

    enforce_connectivity(img, &mut labels, &centers, spatial_w2);

    // compact ids, preserving center order
    let mut remap = vec![u32::MAX; centers.len()];
    let mut next = 0u32;
    let mut used = vec![false; centers.len()];
    for &l in &labels {
        used[l as usize] = true;
    }
    for (k, u) in used.iter().enumerate() {
        if *u {
            remap[k] = next;
            next += 1;
        }
    }
    for l in labels.iter_mut() {
        *l = remap[*l as usize];
    }
    SuperpixelPartition::from_assignment(w, h, labels)
}

fn has_empty(labels: &[u32], k: usize) -> bool {
    let mut used = vec![false; k];
    for &l in labels {
        if let Some(u) = used.get_mut(l as usize) {
            *u = true;
        }
    }
    used.contains(&false)
}

fn enforce_connectivity(img: &Image, labels: &mut [u32], centers: &[Center], spatial_w2: f64) {
    let (w, h) = (img.width(), img.height());
    let (comp, ncomp) = connected_components(w, h, labels);
    let mut comp_size = vec![0usize; ncomp];
    let mut comp_label = vec![0u32; ncomp];
    for (i, &c) in comp.iter().enumerate() {
        comp_size[c] += 1;
        comp_label[c] = labels[i];
    }
    // largest piece of each cluster stays; ties keep the earliest piece
    let mut keeper = vec![usize::MAX; centers.len()];
    for c in 0..ncomp {
        let l = comp_label[c] as usize;
        if keeper[l] == usize::MAX || comp_size[c] > comp_size[keeper[l]] {
            keeper[l] = c;
        }
    }
    let mut settled: Vec<bool> = (0..ncomp)
        .map(|c| keeper[comp_label[c] as usize] == c)
        .collect();
    if settled.iter().all(|&s| s) {
        return;
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for (i, &c) in comp.iter().enumerate() {
        members[c].push(i);
    }
    let channels = img.channels();
    let mut pending: Vec<usize> = (0..ncomp).filter(|&c| !settled[c]).collect();
    while !pending.is_empty() {
        let mut still = Vec::new();
        for &c in &pending {
            let mut candidates: Vec<u32> = Vec::new();
            for &i in &members[c] {
                let (r, col) = (i / w, i % w);
                let mut look = |j: usize| {
                    if comp[j] != c && settled[comp[j]] {
                        candidates.push(labels[j]);
                    }
                };
                if col > 0 {
                    look(i - 1);
                }
                if col + 1 < w {
                    look(i + 1);
                }
                if r > 0 {
                    look(i - w);
                }
                if r + 1 < h {
                    look(i + w);
                }
            }
            if candidates.is_empty() {
                still.push(c);
                continue;
            }
            candidates.sort_unstable();
            candidates.dedup();
            // the orphan's own mean position and color
            let cnt = members[c].len() as f64;
            let mut probe = Center {
                row: 0.0,
                col: 0.0,
                color: vec![0.0; channels],
            };
            for &i in &members[c] {
                probe.row += (i / w) as f64 / cnt;
                probe.col += (i % w) as f64 / cnt;
                for (m, v) in probe.color.iter_mut().zip(img.pixel(i)) {
                    *m += v / cnt;
                }
            }
            let target = candidates
                .iter()
                .map(|&l| {
                    let center = &centers[l as usize];
                    let color: f64 = probe
                        .color
                        .iter()
                        .zip(&center.color)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let d = color
                        + spatial_w2
                            * ((probe.row - center.row).powi(2) + (probe.col - center.col).powi(2));
                    (d, l)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap()
                .1;
            for &i in &members[c] {
                labels[i] = target;
            }
            settled[c] = true;
        }
        // every image is connected, so each pass settles at least one piece
        debug_assert!(still.len() < pending.len());
        pending = still;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize) -> SlicParams {
        SlicParams {
            k,
            ..SlicParams::default()
        }
    }

    #[test]
    fn constant_image_gives_grid_blocks() {
        let img = Image::new(8, 8, 3, vec![0.4; 192]).unwrap();
        let p = slic(&img, &params(4)).unwrap();
        assert_eq!(p.num_superpixels(), 4);
        for row in 0..8 {
            for col in 0..8 {
                let expect = (row / 4) * 2 + col / 4;
                assert_eq!(p.label_at(row, col), expect, "({row}, {col})");
            }
        }
        assert_eq!(p.centroids()[0], (1.5, 1.5));
    }

    #[test]
    fn grid_counts_track_the_request() {
        assert_eq!(grid_shape(64, 64, 100), (10, 10));
        assert_eq!(grid_shape(80, 40, 8), (4, 2));
        for (w, h) in [(24, 80), (80, 24), (37, 53), (64, 64)] {
            for k in 4..=150 {
                let (nx, ny) = grid_shape(w, h, k);
                let off = (nx * ny).abs_diff(k) as f64 / k as f64;
                assert!(off <= 0.1, "{w}x{h} k={k}: {nx}x{ny}");
            }
        }
    }

    #[test]
    fn two_color_halves_are_recovered() {
        // top/bottom halves on a square image
        let img = Image::from_fn(8, 8, 3, |r, _, _| if r < 4 { 0.9 } else { 0.1 }).unwrap();
        let p = slic(&img, &params(2)).unwrap();
        assert_eq!(p.num_superpixels(), 2);
        for i in 0..64 {
            assert_eq!(
                p.assignment()[i],
                p.assignment()[if i < 32 { 0 } else { 63 }]
            );
        }
        assert_ne!(p.assignment()[0], p.assignment()[63]);

        // left/right halves on a wide image, with an off-center boundary
        let img = Image::from_fn(
            16,
            8,
            3,
            |_, c, ch| if c < 6 { 0.8 } else { 0.2 * ch as f64 },
        )
        .unwrap();
        let p = slic(&img, &params(2)).unwrap();
        assert_eq!(p.num_superpixels(), 2);
        for r in 0..8 {
            for c in 0..16 {
                assert_eq!(p.label_at(r, c), usize::from(c >= 6));
            }
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let img = Image::new(2, 2, 1, vec![0.0; 4]).unwrap();
        assert!(slic(&img, &params(5)).is_err());
        assert!(slic(&img, &params(0)).is_err());
        let bad = SlicParams {
            compactness: 0.0,
            ..params(2)
        };
        assert!(slic(&img, &bad).is_err());
    }

    #[test]
    fn single_superpixel_covers_everything() {
        let img = Image::from_fn(5, 3, 3, |r, c, _| ((r * 5 + c) % 3) as f64 / 2.0).unwrap();
        let p = slic(&img, &params(1)).unwrap();
        assert_eq!(p.num_superpixels(), 1);
        assert_eq!(p.sizes(), &[15]);
    }
}
