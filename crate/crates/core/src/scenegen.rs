//! Synthetic paired "urban scene" domains.
//!
//! Every scene shares one canonical layout: sky on top, a band of building
//! blocks, a sidewalk strip and the road at the bottom, with cars,
//! vegetation, poles and signs painted over it in painter's order. Domains
//! differ only in appearance (texture period, lighting, noise) and in where
//! the horizon sits, never in what the labels mean.
//!
//! Generation is a pure function of `(params, width, height, seed)`. All
//! randomness comes from ChaCha8 seeded with the item seed (see
//! [`crate::seeded_rng`]), so datasets are reproducible bit for bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::raster::{Dataset, Domain, Image, LabelMask, Sample, MAX_CLASSES};

pub const SKY: u8 = 0;
pub const BUILDING: u8 = 1;
pub const ROAD: u8 = 2;
pub const SIDEWALK: u8 = 3;
pub const VEGETATION: u8 = 4;
pub const CAR: u8 = 5;
pub const POLE: u8 = 6;
pub const SIGN: u8 = 7;

/// Number of named classes; configurations may add generic ones up to [`MAX_CLASSES`].
pub const BASE_CLASSES: usize = 8;

pub const CLASS_NAMES: [&str; BASE_CLASSES] = [
    "sky",
    "building",
    "road",
    "sidewalk",
    "vegetation",
    "car",
    "pole",
    "sign",
];

/// Display name of class `c`.
pub fn class_name(c: usize) -> String {
    CLASS_NAMES
        .get(c)
        .map_or_else(|| format!("class{c}"), |s| (*s).to_string())
}

// Fixed layout constants shared by all domains.
const ROAD_TOP_FRAC: f64 = 0.72;
const SIDEWALK_FRAC: f64 = 0.08;
const TEXTURE_AMPLITUDE: f64 = 0.12;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainParams {
    pub num_classes: usize,
    /// Period in pixels of the repeating surface textures.
    pub texture_period: f64,
    pub noise_sigma: f64,
    /// Mean sky/building boundary as a fraction of the image height.
    pub horizon_frac: f64,
    /// Per-image uniform jitter (fraction of height) of the band boundaries.
    pub layout_jitter: f64,
    pub lighting_gain: f64,
    /// Base color per class, `num_classes` rows.
    pub palette: Vec<[f64; 3]>,
    /// Expected number of foreground objects per image.
    pub object_rate: f64,
}

fn default_palette(num_classes: usize) -> Vec<[f64; 3]> {
    let base = [
        [0.55, 0.70, 0.90], // sky
        [0.50, 0.36, 0.30], // building
        [0.30, 0.30, 0.33], // road
        [0.52, 0.50, 0.48], // sidewalk
        [0.22, 0.50, 0.18], // vegetation
        [0.18, 0.22, 0.62], // car
        [0.72, 0.70, 0.62], // pole
        [0.90, 0.78, 0.10], // sign
    ];
    (0..num_classes)
        .map(|c| {
            if c < BASE_CLASSES {
                base[c]
            } else {
                // spread extra classes around the color cube
                let t = c as f64;
                [
                    (0.5 + 0.45 * (t * 1.7).sin()).clamp(0.0, 1.0),
                    (0.5 + 0.45 * (t * 2.3).cos()).clamp(0.0, 1.0),
                    (0.5 + 0.45 * (t * 0.9).sin()).clamp(0.0, 1.0),
                ]
            }
        })
        .collect()
}

/// The simulated (labeled) domain.
pub fn preset_source() -> DomainParams {
    DomainParams {
        num_classes: BASE_CLASSES,
        texture_period: 8.0,
        noise_sigma: 0.02,
        horizon_frac: 0.30,
        layout_jitter: 0.08,
        lighting_gain: 1.0,
        palette: default_palette(BASE_CLASSES),
        object_rate: 4.0,
    }
}

/// The "real" (unlabeled) domain: same palette and classes, shifted appearance.
pub fn preset_target() -> DomainParams {
    DomainParams {
        texture_period: 5.0,
        noise_sigma: 0.2,
        horizon_frac: 0.40,
        lighting_gain: 1.6,
        ..preset_source()
    }
}

impl DomainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(BASE_CLASSES..=MAX_CLASSES).contains(&self.num_classes) {
            return bad(format!(
                "num_classes must be in {BASE_CLASSES}..={MAX_CLASSES}, got {}",
                self.num_classes
            ));
        }
        if !(self.horizon_frac > 0.1 && self.horizon_frac < 0.6) {
            return bad(format!(
                "horizon_frac {} not in (0.1, 0.6)",
                self.horizon_frac
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if !(self.lighting_gain > 0.0) {
            return bad(format!("lighting_gain {} must be > 0", self.lighting_gain));
        }
        if !(self.texture_period > 0.0) {
            return bad(format!(
                "texture_period {} must be > 0",
                self.texture_period
            ));
        }
        if !(0.0..0.2).contains(&self.layout_jitter) {
            return bad(format!(
                "layout_jitter {} not in [0, 0.2)",
                self.layout_jitter
            ));
        }
        if !(self.object_rate >= 0.0 && self.object_rate.is_finite()) {
            return bad(format!("object_rate {} must be >= 0", self.object_rate));
        }
        if self.palette.len() != self.num_classes {
            return bad(format!(
                "palette has {} rows, expected {}",
                self.palette.len(),
                self.num_classes
            ));
        }
        if self
            .palette
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return bad("palette entries must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Flat `key=value` pairs, each key prefixed with `prefix`.
    pub fn to_kv(&self, prefix: &str) -> Vec<(String, String)> {
        let palette = self
            .palette
            .iter()
            .map(|c| format!("{},{},{}", c[0], c[1], c[2]))
            .collect::<Vec<_>>()
            .join(";");
        [
            ("num_classes", self.num_classes.to_string()),
            ("texture_period", self.texture_period.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("horizon_frac", self.horizon_frac.to_string()),
            ("layout_jitter", self.layout_jitter.to_string()),
            ("lighting_gain", self.lighting_gain.to_string()),
            ("palette", palette),
            ("object_rate", self.object_rate.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
    }

    /// Sets one field from its text form. Returns `false` for unknown keys.
    ///
    /// Changing `num_classes` regrows the palette with default colors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
        };
        match key {
            "num_classes" => {
                let c: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: expected an integer")))?;
                if c != self.num_classes {
                    let mut palette = default_palette(c);
                    for (dst, src) in palette.iter_mut().zip(&self.palette) {
                        *dst = *src;
                    }
                    self.palette = palette;
                    self.num_classes = c;
                }
            }
            "texture_period" => self.texture_period = num(value)?,
            "noise_sigma" => self.noise_sigma = num(value)?,
            "horizon_frac" => self.horizon_frac = num(value)?,
            "layout_jitter" => self.layout_jitter = num(value)?,
            "lighting_gain" => self.lighting_gain = num(value)?,
            "object_rate" => self.object_rate = num(value)?,
            "palette" => {
                let mut rows = Vec::new();
                for row in value.split(';') {
                    let vals: Vec<f64> = row.split(',').map(num).collect::<Result<_>>()?;
                    if vals.len() != 3 {
                        return Err(Error::Config(format!(
                            "{key}: palette rows need 3 values, got {row:?}"
                        )));
                    }
                    rows.push([vals[0], vals[1], vals[2]]);
                }
                self.palette = rows;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub image: Image,
    pub mask: LabelMask,
}

fn warn_degenerate_palette(params: &DomainParams) {
    for i in 0..params.palette.len() {
        for j in i + 1..params.palette.len() {
            if params.palette[i] == params.palette[j] {
                log::warn!("palette rows {i} and {j} are identical; classes are indistinguishable by color");
            }
        }
    }
}

struct Canvas {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    shade: Vec<f64>,
}

impl Canvas {
    fn fill(&mut self, top: i64, left: i64, bottom: i64, right: i64, class: u8, shade: f64) {
        let top = top.clamp(0, self.height as i64) as usize;
        let bottom = bottom.clamp(0, self.height as i64) as usize;
        let left = left.clamp(0, self.width as i64) as usize;
        let right = right.clamp(0, self.width as i64) as usize;
        for row in top..bottom {
            for col in left..right {
                let i = row * self.width + col;
                self.labels[i] = class;
                self.shade[i] = shade;
            }
        }
    }
}

/// Surface modulation in roughly `[-1, 1]` for class `class` at `(row, col)`.
fn texture(class: u8, row: usize, col: usize, period: f64) -> f64 {
    use std::f64::consts::TAU;
    let (y, x) = (row as f64, col as f64);
    let phase = |v: f64| (v / period).rem_euclid(1.0);
    match class {
        SKY => 0.0,
        BUILDING => {
            // windows
            if phase(x) < 0.5 && phase(y) < 0.5 {
                -1.0
            } else {
                0.3
            }
        }
        ROAD => (TAU * y / period).sin() * 0.6,
        SIDEWALK => {
            let tile = ((x / period).floor() + (y / period).floor()) as i64;
            if tile.rem_euclid(2) == 0 {
                0.8
            } else {
                -0.8
            }
        }
        VEGETATION => (TAU * x / period).sin() * (TAU * y / period).sin(),
        CAR => {
            if phase(x) < 0.2 {
                -0.5
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Renders one scene.
pub fn generate_scene(
    params: &DomainParams,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<SceneSample> {
    params.validate()?;
    if width < 16 || height < 16 {
        return Err(Error::InvalidArgument(format!(
            "scenes need at least 16x16 pixels, got {width}x{height}"
        )));
    }
    warn_degenerate_palette(params);

    let mut rng = crate::seeded_rng(seed, 0);
    let h = height as f64;
    let w = width as f64;
    let jitter = |rng: &mut ChaCha8Rng, amount: f64| rng.random_range(-1.0..=1.0) * amount;

    let sky_end =
        ((params.horizon_frac + jitter(&mut rng, params.layout_jitter)) * h).round() as i64;
    let sidewalk_h = (SIDEWALK_FRAC * h).round().max(1.0) as i64;
    let mut road_top =
        ((ROAD_TOP_FRAC + jitter(&mut rng, 0.5 * params.layout_jitter)) * h).round() as i64;
    road_top = road_top
        .max(sky_end + sidewalk_h + 2)
        .min(height as i64 - 2);
    let sidewalk_top = road_top - sidewalk_h;

    let mut canvas = Canvas {
        width,
        height,
        labels: vec![SKY; width * height],
        shade: vec![1.0; width * height],
    };
    // building blocks, each with its own brightness
    let mut left = 0i64;
    while left < width as i64 {
        let block_w = (rng.random_range(0.1..0.3) * w).round().max(2.0) as i64;
        let shade = rng.random_range(0.85..1.15);
        canvas.fill(sky_end, left, sidewalk_top, left + block_w, BUILDING, shade);
        left += block_w;
    }
    canvas.fill(sidewalk_top, 0, road_top, width as i64, SIDEWALK, 1.0);
    canvas.fill(road_top, 0, height as i64, width as i64, ROAD, 1.0);

    let n_objects = if params.object_rate > 0.0 {
        let d = Poisson::new(params.object_rate)
            .map_err(|e| Error::InvalidArgument(format!("object_rate: {e}")))?;
        d.sample(&mut rng) as usize
    } else {
        0
    };
    let extra_classes = params.num_classes - BASE_CLASSES;
    for _ in 0..n_objects {
        let kind: f64 = rng.random();
        let extra_share = if extra_classes > 0 { 0.2 } else { 0.0 };
        let kind = kind * (1.0 + extra_share);
        if kind < 0.35 {
            // car on the road
            let cw = (rng.random_range(0.12..0.22) * w).round().max(3.0) as i64;
            let ch = (rng.random_range(0.35..0.55) * cw as f64).round().max(2.0) as i64;
            let bottom = rng.random_range(road_top + 2..=height as i64);
            let x0 = rng.random_range(-cw / 2..width as i64 - cw / 2);
            canvas.fill(
                bottom - ch,
                x0,
                bottom,
                x0 + cw,
                CAR,
                rng.random_range(0.8..1.2),
            );
        } else if kind < 0.6 {
            // vegetation standing on the sidewalk
            let vw = (rng.random_range(0.08..0.2) * w).round().max(2.0) as i64;
            let vh = (rng.random_range(0.08..0.2) * h).round().max(2.0) as i64;
            let bottom = sidewalk_top + sidewalk_h / 2 + 1;
            let x0 = rng.random_range(-vw / 2..width as i64 - vw / 2);
            canvas.fill(
                bottom - vh,
                x0,
                bottom,
                x0 + vw,
                VEGETATION,
                rng.random_range(0.85..1.15),
            );
        } else if kind < 1.0 {
            // pole, sometimes carrying a sign
            let pw = (w / 48.0).round().max(1.0) as i64;
            let ph = (rng.random_range(0.25..0.45) * h).round() as i64;
            let x0 = rng.random_range(0..width as i64 - pw);
            let bottom = sidewalk_top + sidewalk_h / 2 + 1;
            canvas.fill(bottom - ph, x0, bottom, x0 + pw, POLE, 1.0);
            if rng.random_bool(0.5) {
                let s = (w * 0.06).round().max(2.0) as i64;
                let top = bottom - ph;
                canvas.fill(top, x0 - s / 2, top + s, x0 - s / 2 + s, SIGN, 1.0);
            }
        } else {
            // a generic extra class below the horizon
            let class = (BASE_CLASSES + rng.random_range(0..extra_classes)) as u8;
            let s = (rng.random_range(0.05..0.12) * w).round().max(2.0) as i64;
            let y0 = rng.random_range(sky_end..height as i64);
            let x0 = rng.random_range(0..width as i64);
            canvas.fill(y0, x0, y0 + s, x0 + s, class, 1.0);
        }
    }

    let mut data = Vec::with_capacity(width * height * 3);
    for row in 0..height {
        for col in 0..width {
            let i = row * width + col;
            let class = canvas.labels[i];
            let base = params.palette[usize::from(class)];
            let modulation =
                1.0 + TEXTURE_AMPLITUDE * texture(class, row, col, params.texture_period);
            for &b in &base {
                let mut v = b * modulation * canvas.shade[i] * params.lighting_gain;
                if params.noise_sigma > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    v += params.noise_sigma * n;
                }
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(SceneSample {
        image: Image::new(width, height, 3, data)?,
        mask: LabelMask::new(width, height, params.num_classes, canvas.labels)?,
    })
}

/// `n` scenes; item `i` uses seed `base_seed + i` and id `i`.
pub fn generate_dataset(
    params: &DomainParams,
    n: usize,
    width: usize,
    height: usize,
    base_seed: u64,
    domain: Domain,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let items = (0..n)
        .map(|i| {
            let s = generate_scene(params, width, height, base_seed.wrapping_add(i as u64))?;
            Ok(Sample {
                id: i,
                image: s.image,
                mask: Some(s.mask),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(domain, params.num_classes, items)
}
