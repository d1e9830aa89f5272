//! Image datasets, preprocessing and the FTDS v1 file format.
//!
//! FTDS v1 layout (all integers little-endian):
//!
//! ```text
//! "FTDS1"            5 bytes magic
//! label_mode         u8   (0 = one-hot, 1 = multi-hot)
//! N, C, H, W, K      u32 each
//! pixels             N·C·H·W f32, sample-major, CHW within a sample
//! labels             N·K bytes, each 0 or 1
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMatrix, TaskKind, Tensor};
use crate::zoo::Family;

pub const MAGIC: &[u8; 5] = b"FTDS1";
pub const HEADER_LEN: usize = 5 + 1 + 5 * 4;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: LabelMatrix,
    kind: TaskKind,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: LabelMatrix, kind: TaskKind, split: Split) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::dim(format!(
                "dataset images must be N×C×H×W, got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.rows() {
            return Err(Error::dim(format!(
                "{} images but {} label rows",
                images.shape()[0],
                labels.rows()
            )));
        }
        labels.validate(kind)?;
        Ok(Dataset {
            images,
            labels,
            kind,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    /// `[C, H, W]` of every sample.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> Tensor {
        let [c, h, w] = self.image_shape();
        let stride = c * h * w;
        Tensor::new(
            vec![c, h, w],
            self.images.data()[i * stride..(i + 1) * stride].to_vec(),
        )
        .expect("slice has sample size")
    }

    /// Images and labels of the given rows, as a training batch.
    pub fn batch(&self, rows: &[usize]) -> Result<(Tensor, LabelMatrix)> {
        Ok((self.images.gather_rows(rows)?, self.labels.gather_rows(rows)?))
    }

    /// Applies [`preprocess`] to every sample.
    pub fn preprocessed(&self, cfg: &PreprocessConfig) -> Result<Dataset> {
        let mut data = Vec::new();
        let mut shape = None;
        for i in 0..self.len() {
            let img = preprocess(&self.image(i), cfg)?;
            shape.get_or_insert_with(|| img.shape().to_vec());
            data.extend_from_slice(img.data());
        }
        let s = shape.unwrap_or_else(|| vec![self.image_shape()[0], cfg.crop, cfg.crop]);
        let images = Tensor::new(vec![self.len(), s[0], s[1], s[2]], data)?;
        Dataset::new(images, self.labels.clone(), self.kind, self.split)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub resize_shorter_side: usize,
    pub crop: usize,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
}

impl PreprocessConfig {
    /// ImageNet statistics with the given resize/crop.
    pub fn imagenet(resize_shorter_side: usize, crop: usize) -> Self {
        PreprocessConfig {
            resize_shorter_side,
            crop,
            channel_mean: IMAGENET_MEAN.to_vec(),
            channel_std: IMAGENET_STD.to_vec(),
        }
    }

    /// Per-family resize targets (37/41/41 for a 32-pixel crop), scaled to
    /// `crop`.
    pub fn for_family(family: Family, crop: usize) -> Self {
        let ratio = match family {
            Family::MiniResNet => 37.0 / 32.0,
            Family::MiniDense | Family::MiniVgg => 41.0 / 32.0,
        };
        let resize = ((crop as f64 * ratio).round() as usize).max(crop);
        PreprocessConfig::imagenet(resize, crop)
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.resize_shorter_side == 0 || self.crop == 0 {
            return Err(Error::Config("resize and crop sizes must be positive".into()));
        }
        if self.crop > self.resize_shorter_side {
            return Err(Error::Config(format!(
                "crop {} exceeds resized shorter side {}",
                self.crop, self.resize_shorter_side
            )));
        }
        if self.channel_mean.len() != channels || self.channel_std.len() != channels {
            return Err(Error::Config(format!(
                "normalization statistics given for {}/{} channels, image has {channels}",
                self.channel_mean.len(),
                self.channel_std.len()
            )));
        }
        if self.channel_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("channel std must be positive".into()));
        }
        Ok(())
    }
}

/// Size after scaling so that the shorter side equals `target`.
pub fn resized_dims(h: usize, w: usize, target: usize) -> (usize, usize) {
    if h <= w {
        let nw = ((w as f64 * target as f64 / h as f64).round() as usize).max(target);
        (target, nw)
    } else {
        let nh = ((h as f64 * target as f64 / w as f64).round() as usize).max(target);
        (nh, target)
    }
}

/// Bilinear resize of a `C×H×W` image using pixel-center alignment.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("expected C×H×W image, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let coords = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * inp as f64 / out as f64 - 0.5)
                    .clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (coords(out_h, h), coords(out_w, w));
    let d = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(if fy == 0.0 { top } else { top * (1.0 - fy) + bottom * fy });
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Resize (shorter side) → per-channel normalize → center crop.
pub fn preprocess(img: &Tensor, cfg: &PreprocessConfig) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("expected C×H×W image, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    cfg.validate(c)?;
    let (rh, rw) = resized_dims(h, w, cfg.resize_shorter_side);
    if cfg.crop > rh || cfg.crop > rw {
        return Err(Error::Config(format!(
            "crop {} larger than resized image {rh}x{rw}",
            cfg.crop
        )));
    }
    let mut resized = resize_bilinear(img, rh, rw)?;
    let area = rh * rw;
    for (ch, plane) in resized.data_mut().chunks_mut(area).enumerate() {
        let (m, sd) = (cfg.channel_mean[ch], cfg.channel_std[ch]);
        plane.iter_mut().for_each(|v| *v = (*v - m) / sd);
    }
    let (top, left) = ((rh - cfg.crop) / 2, (rw - cfg.crop) / 2);
    let d = resized.data();
    let mut out = Vec::with_capacity(c * cfg.crop * cfg.crop);
    for ch in 0..c {
        for i in 0..cfg.crop {
            let row = ch * area + (top + i) * rw + left;
            out.extend_from_slice(&d[row..row + cfg.crop]);
        }
    }
    Tensor::new(vec![c, cfg.crop, cfg.crop], out)
}

pub fn encode_ftds(ds: &Dataset) -> Vec<u8> {
    let s = ds.images.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + ds.images.len() * 4 + ds.labels.data().len());
    out.extend_from_slice(MAGIC);
    out.push(match ds.kind {
        TaskKind::MultiClass => 0,
        TaskKind::MultiLabel => 1,
    });
    for v in [s[0], s[1], s[2], s[3], ds.num_classes()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in ds.images.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(ds.labels.data());
    out
}

/// Pixels are stored as `f32`; values that are not exactly representable
/// are rounded.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_ftds(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ftds(&bytes, split)
}

pub fn decode_ftds(bytes: &[u8], split: Split) -> Result<Dataset> {
    let fail = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail(0, "bad magic (expected \"FTDS1\")".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    let kind = match bytes[5] {
        0 => TaskKind::MultiClass,
        1 => TaskKind::MultiLabel,
        m => return Err(fail(5, format!("unknown label mode {m}"))),
    };
    let field = |i: usize| {
        let at = 6 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let (n, c, h, w, k) = (field(0), field(1), field(2), field(3), field(4));
    if n == 0 || c == 0 || h == 0 || w == 0 || k < 2 {
        return Err(fail(6, format!("invalid header dims N={n} C={c} H={h} W={w} K={k}")));
    }
    let pixels = n * c * h * w;
    let expected = HEADER_LEN + pixels * 4 + n * k;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!(
                "header (N={n}) implies {expected} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + pixels * 4];
    let data = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    let label_start = HEADER_LEN + pixels * 4;
    let label_bytes = &bytes[label_start..];
    if let Some(pos) = label_bytes.iter().position(|&b| b > 1) {
        return Err(fail(label_start + pos, format!("label byte {}", label_bytes[pos])));
    }
    let labels = LabelMatrix::new(n, k, label_bytes.to_vec())?;
    if kind == TaskKind::MultiClass {
        for i in 0..n {
            if labels.class_of(i).is_none() {
                return Err(fail(
                    label_start + i * k,
                    format!("label row {i} is not one-hot under label mode 0"),
                ));
            }
        }
    }
    Dataset::new(Tensor::new(vec![n, c, h, w], data)?, labels, kind, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cfg(resize: usize, crop: usize, c: usize) -> PreprocessConfig {
        PreprocessConfig {
            resize_shorter_side: resize,
            crop,
            channel_mean: vec![0.0; c],
            channel_std: vec![1.0; c],
        }
    }

    #[test]
    fn square_at_target_is_center_crop() {
        let img = Tensor::from_fn(&[2, 6, 6], |i| i as f64 / 72.0);
        let out = preprocess(&img, &identity_cfg(6, 4, 2)).unwrap();
        assert_eq!(out.shape(), &[2, 4, 4]);
        for ch in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let want = img.data()[ch * 36 + (i + 1) * 6 + (j + 1)];
                    assert_eq!(out.data()[ch * 16 + i * 4 + j], want);
                }
            }
        }
    }

    #[test]
    fn constant_image_normalizes_to_zero() {
        let img = Tensor::full(&[3, 10, 7], 0.3);
        let cfg = PreprocessConfig {
            resize_shorter_side: 5,
            crop: 5,
            channel_mean: vec![0.3; 3],
            channel_std: vec![0.2, 0.5, 2.0],
        };
        let out = preprocess(&img, &cfg).unwrap();
        assert!(out.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn aspect_ratio_is_preserved() {
        assert_eq!(resized_dims(8, 16, 4), (4, 8));
        assert_eq!(resized_dims(16, 8, 4), (8, 4));
        let img = Tensor::from_fn(&[1, 8, 16], |i| (i % 7) as f64);
        assert_eq!(resize_bilinear(&img, 4, 8).unwrap().shape(), &[1, 4, 8]);
    }

    #[test]
    fn crop_larger_than_resized_is_config_error() {
        let img = Tensor::zeros(&[1, 8, 8]);
        assert!(matches!(
            preprocess(&img, &identity_cfg(4, 6, 1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn family_resize_defaults() {
        assert_eq!(PreprocessConfig::for_family(Family::MiniResNet, 32).resize_shorter_side, 37);
        assert_eq!(PreprocessConfig::for_family(Family::MiniDense, 32).resize_shorter_side, 41);
        assert_eq!(PreprocessConfig::for_family(Family::MiniVgg, 32).resize_shorter_side, 41);
    }

    fn small_dataset() -> Dataset {
        let images = Tensor::from_fn(&[3, 1, 2, 2], |i| i as f64 * 0.125);
        let labels = LabelMatrix::from_class_indices(&[0, 1, 1], 2).unwrap();
        Dataset::new(images, labels, TaskKind::MultiClass, Split::Train).unwrap()
    }

    #[test]
    fn ftds_errors() {
        let bytes = encode_ftds(&small_dataset());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_ftds(&bad, Split::Train), Err(Error::Format { offset: 0, .. })));

        let mut mode = bytes.clone();
        mode[5] = 7;
        assert!(matches!(decode_ftds(&mode, Split::Train), Err(Error::Format { offset: 5, .. })));

        let mut two_hot = bytes.clone();
        let last = two_hot.len() - 1;
        two_hot[last - 1] = 1;
        two_hot[last] = 1;
        assert!(matches!(decode_ftds(&two_hot, Split::Train), Err(Error::Format { .. })));

        assert!(decode_ftds(&bytes[..10], Split::Train).is_err());
    }
}
