//! Images, label masks, datasets and their file formats.
//!
//! Images are stored as binary PPM (P6) and masks as binary PGM (P5), both
//! with maxval 255. Mask value 255 is reserved for void pixels. Real-valued
//! arrays use a small native tensor format:
//!
//! ```text
//! "CDAT" | u8 version = 1 | u8 rank | rank x u32 LE dims | f32 LE payload
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Mask value marking an unscored pixel.
pub const VOID: u8 = 255;

/// Upper bound on the number of classes a mask can carry.
pub const MAX_CLASSES: usize = 32;

const TENSOR_MAGIC: &[u8; 4] = b"CDAT";
const TENSOR_VERSION: u8 = 1;

/// A `W x H x F` raster with values in `[0, 1]`, stored row-major with
/// channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "image value {} at index {pos} is outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from `f(row, col, channel)`; values are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    data.push(f(row, col, ch).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel values of pixel `index = row * width + col`.
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        self.pixel(row * self.width + col)
    }

    /// Returns the image with every value snapped to the nearest 1/255 step.
    pub fn quantized(&self) -> Image {
        Image {
            data: self
                .data
                .iter()
                .map(|&v| f64::from(quantize(v)) / 255.0)
                .collect(),
            ..self.clone()
        }
    }
}

/// Per-pixel class indices in `[0, C)`, or [`VOID`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if num_classes == 0 || num_classes > MAX_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be in 1..={MAX_CLASSES}, got {num_classes}"
            )));
        }
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "mask has {} labels, expected {}",
                labels.len(),
                width * height
            )));
        }
        if let Some(pos) = labels
            .iter()
            .position(|&l| l != VOID && usize::from(l) >= num_classes)
        {
            return Err(Error::LabelRange {
                row: pos / width,
                col: pos % width,
                value: labels[pos],
                classes: num_classes,
            });
        }
        Ok(LabelMask {
            width,
            height,
            num_classes,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Class of pixel `index`, or `None` for void.
    pub fn class_of(&self, index: usize) -> Option<usize> {
        match self.labels[index] {
            VOID => None,
            l => Some(usize::from(l)),
        }
    }

    /// One-hot expansion `Y(i, j, c)`, pixel-major; void pixels are all zero.
    pub fn one_hot(&self) -> Vec<f64> {
        let c = self.num_classes;
        let mut out = vec![0.0; self.labels.len() * c];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != VOID {
                out[i * c + usize::from(l)] = 1.0;
            }
        }
        out
    }

    pub fn same_shape(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Source => f.write_str("source"),
            Domain::Target => f.write_str("target"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub image: Image,
    pub mask: Option<LabelMask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub domain: Domain,
    pub num_classes: usize,
    pub items: Vec<Sample>,
}

impl Dataset {
    pub fn new(domain: Domain, num_classes: usize, items: Vec<Sample>) -> Result<Self> {
        for item in &items {
            if let Some(mask) = &item.mask {
                if mask.num_classes() != num_classes {
                    return Err(Error::Shape(format!(
                        "item {} has {} classes, dataset has {num_classes}",
                        item.id,
                        mask.num_classes()
                    )));
                }
                if !mask.same_shape(item.image.width(), item.image.height()) {
                    return Err(Error::Shape(format!(
                        "item {}: mask and image sizes differ",
                        item.id
                    )));
                }
            }
        }
        Ok(Dataset {
            domain,
            num_classes,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn manifest(&self) -> Vec<usize> {
        self.items.iter().map(|s| s.id).collect()
    }

    pub fn images(&self) -> Vec<&Image> {
        self.items.iter().map(|s| &s.image).collect()
    }

    /// Image/mask pairs; fails if any item is unlabeled.
    pub fn labeled(&self) -> Result<Vec<(&Image, &LabelMask)>> {
        self.items
            .iter()
            .map(|s| match &s.mask {
                Some(m) => Ok((&s.image, m)),
                None => Err(Error::InvalidArgument(format!(
                    "item {} has no label mask",
                    s.id
                ))),
            })
            .collect()
    }

    /// Copy of the dataset with every mask removed.
    pub fn without_masks(&self) -> Dataset {
        Dataset {
            domain: self.domain,
            num_classes: self.num_classes,
            items: self
                .items
                .iter()
                .map(|s| Sample {
                    id: s.id,
                    image: s.image.clone(),
                    mask: None,
                })
                .collect(),
        }
    }
}

/// Round-half-up quantization of a `[0, 1]` value to a byte.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// A problem found while decoding bytes, before a path is attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    pub offset: usize,
    pub msg: String,
}

impl DecodeError {
    pub(crate) fn new(offset: usize, msg: impl Into<String>) -> Self {
        DecodeError {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn at(self, path: &Path) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            offset: self.offset,
            msg: self.msg,
        }
    }
}

struct Header {
    width: usize,
    height: usize,
    payload_start: usize,
}

fn parse_netpbm_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, DecodeError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(DecodeError::new(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (n, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(DecodeError::new(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(DecodeError::new(pos, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DecodeError::new(start, "number out of range"))?;
        if n < 2 && *field == 0 {
            return Err(DecodeError::new(start, "zero image dimension"));
        }
    }
    if fields[2] != 255 {
        return Err(DecodeError::new(
            pos,
            format!("maxval {} unsupported, expected 255", fields[2]),
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(DecodeError::new(pos, "expected whitespace after maxval")),
    }
    Ok(Header {
        width: fields[0],
        height: fields[1],
        payload_start: pos,
    })
}

fn payload<'a>(
    bytes: &'a [u8],
    header: &Header,
    per_pixel: usize,
) -> Result<&'a [u8], DecodeError> {
    let need = header.width * header.height * per_pixel;
    let have = bytes.len() - header.payload_start;
    if have < need {
        return Err(DecodeError::new(
            bytes.len(),
            format!("truncated payload: {have} of {need} bytes"),
        ));
    }
    Ok(&bytes[header.payload_start..header.payload_start + need])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, DecodeError> {
    let header = parse_netpbm_header(bytes, b"P6")?;
    let data = payload(bytes, &header, 3)?
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Image::new(header.width, header.height, 3, data)
        .map_err(|e| DecodeError::new(header.payload_start, e.to_string()))
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "PPM needs 3 channels, image has {}",
            img.channels()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8], num_classes: usize) -> Result<LabelMask, DecodeError> {
    let header = parse_netpbm_header(bytes, b"P5")?;
    let labels = payload(bytes, &header, 1)?.to_vec();
    if let Some(pos) = labels
        .iter()
        .position(|&l| l != VOID && usize::from(l) >= num_classes)
    {
        let (row, col) = (pos / header.width, pos % header.width);
        return Err(DecodeError::new(
            header.payload_start + pos,
            Error::LabelRange {
                row,
                col,
                value: labels[pos],
                classes: num_classes,
            }
            .to_string(),
        ));
    }
    LabelMask::new(header.width, header.height, num_classes, labels)
        .map_err(|e| DecodeError::new(header.payload_start, e.to_string()))
}

pub fn encode_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.labels());
    out
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a P6 image, or a rank-3 `H x W x F` native tensor.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let mut offset = 0;
        let t = decode_tensor(&bytes, &mut offset).map_err(|e| e.at(path))?;
        if t.shape.len() != 3 {
            return Err(DecodeError::new(5, "image tensor must have rank 3").at(path));
        }
        let data = t.data.iter().map(|&v| f64::from(v)).collect();
        return Image::new(t.shape[1], t.shape[0], t.shape[2], data);
    }
    decode_ppm(&bytes).map_err(|e| e.at(path))
}

/// Loads a P5 mask. Values `>= num_classes` other than 255 are rejected.
pub fn load_mask(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelMask> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    decode_pgm(&bytes, num_classes).map_err(|e| e.at(path))
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(img)?)
}

pub fn save_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(mask))
}

/// Shaped `f32` array as stored in the native tensor format.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    if t.shape.len() > usize::from(u8::MAX) {
        return Err(Error::Shape(format!(
            "tensor rank {} too large",
            t.shape.len()
        )));
    }
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::Shape(format!("tensor dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Decodes one tensor starting at `*offset`, advancing it past the tensor.
pub fn decode_tensor(bytes: &[u8], offset: &mut usize) -> Result<Tensor, DecodeError> {
    let start = *offset;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], DecodeError> {
        let end = *pos + n;
        if end > bytes.len() {
            return Err(DecodeError::new(bytes.len(), "truncated tensor"));
        }
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    let mut pos = start;
    if take(&mut pos, 4)? != TENSOR_MAGIC {
        return Err(DecodeError::new(start, "expected tensor magic CDAT"));
    }
    let version = take(&mut pos, 1)?[0];
    if version != TENSOR_VERSION {
        return Err(DecodeError::new(
            pos - 1,
            format!("unsupported tensor version {version}"),
        ));
    }
    let rank = usize::from(take(&mut pos, 1)?[0]);
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let b = take(&mut pos, 4)?;
        shape.push(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| DecodeError::new(pos, "tensor size overflows"))?;
    let bytes_needed = n
        .checked_mul(4)
        .ok_or_else(|| DecodeError::new(pos, "tensor size overflows"))?;
    let payload = take(&mut pos, bytes_needed)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    *offset = pos;
    Ok(Tensor { shape, data })
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    encode_tensor(t, &mut bytes)?;
    write_file(path.as_ref(), &bytes)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let mut offset = 0;
    let t = decode_tensor(&bytes, &mut offset).map_err(|e| e.at(path))?;
    if offset != bytes.len() {
        return Err(DecodeError::new(offset, "trailing bytes after tensor").at(path));
    }
    Ok(t)
}

pub fn image_path(root: &Path, split: &str, id: usize) -> PathBuf {
    root.join(split).join(format!("img_{id:05}.ppm"))
}

pub fn mask_path(root: &Path, split: &str, id: usize) -> PathBuf {
    root.join(split).join(format!("lab_{id:05}.pgm"))
}

/// Writes `<root>/<split>/img_%05d.ppm`, `lab_%05d.pgm` and `manifest.txt`.
pub fn save_dataset(ds: &Dataset, root: impl AsRef<Path>, split: &str) -> Result<()> {
    let root = root.as_ref();
    let dir = root.join(split);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut manifest = String::new();
    for item in &ds.items {
        save_image(&item.image, image_path(root, split, item.id))?;
        if let Some(mask) = &item.mask {
            save_mask(mask, mask_path(root, split, item.id))?;
        }
        manifest.push_str(&format!("{:05}\n", item.id));
    }
    write_file(&dir.join("manifest.txt"), manifest.as_bytes())
}

/// Reads a split written by [`save_dataset`]. Masks are optional per item.
pub fn load_dataset(
    root: impl AsRef<Path>,
    split: &str,
    num_classes: usize,
    domain: Domain,
) -> Result<Dataset> {
    let root = root.as_ref();
    let manifest_path = root.join(split).join("manifest.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id: usize = line.parse().map_err(|_| Error::Format {
            path: manifest_path.clone(),
            offset: lineno,
            msg: format!("bad manifest id {line:?}"),
        })?;
        let image = load_image(image_path(root, split, id))?;
        let mpath = mask_path(root, split, id);
        let mask = if mpath.exists() {
            Some(load_mask(&mpath, num_classes)?)
        } else {
            None
        };
        items.push(Sample { id, image, mask });
    }
    Dataset::new(domain, num_classes, items)
}
