//! Image, heatmap and feature-map containers shared by every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImageError {
    #[error("zero dimension: {height}x{width}x{channels}")]
    ZeroDimension {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("invalid channel count {0} (expected 1 or 3)")]
    InvalidChannels(usize),
    #[error("data length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("intensity {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("negative heatmap value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("region {height}x{width}+{row}+{col} outside {parent_height}x{parent_width}")]
    RegionOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
        parent_height: usize,
        parent_width: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("cannot read image {path}: {message}")]
    Decode { path: String, message: String },
    #[error("cannot write image {path}: {message}")]
    Encode { path: String, message: String },
}

/// Binary class of the forensic classifier. Logit index 0 is `Real`, 1 is `Fake`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" | "0" => Ok(Label::Real),
            "fake" | "1" => Ok(Label::Fake),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<(), ImageError> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(ImageError::ZeroDimension {
            height,
            width,
            channels,
        });
    }
    Ok(())
}

/// Row-major `height x width x channels` image with intensities in `[0, 1]`.
///
/// The range invariant is enforced on every constructor, including
/// deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor<T>", bound(deserialize = "T: Scalar"))]
pub struct ImageTensor<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

#[derive(Deserialize)]
struct RawTensor<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> TryFrom<RawTensor<T>> for ImageTensor<T> {
    type Error = ImageError;

    fn try_from(raw: RawTensor<T>) -> Result<Self, Self::Error> {
        ImageTensor::new(raw.height, raw.width, raw.channels, raw.data)
    }
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<T>,
    ) -> Result<Self, ImageError> {
        check_dims(height, width, channels)?;
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidChannels(channels));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(ImageError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        for (index, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(ImageError::NonFinite(index));
            }
            if v < T::zero() || v > T::one() {
                return Err(ImageError::OutOfRange {
                    index,
                    value: v.as_f64(),
                });
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: T,
    ) -> Result<Self, ImageError> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Builds an image from raw values, clamping each into `[0, 1]`.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<T>,
    ) -> Result<Self, ImageError> {
        for v in data.iter_mut() {
            *v = v.max(T::zero()).min(T::one());
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[self.offset(row, col, channel)]
    }

    /// One channel as a row-major `height x width` plane.
    pub fn plane(&self, channel: usize) -> Vec<T> {
        self.data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn crop(
        &self,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(ImageError::RegionOutOfBounds {
                row,
                col,
                height,
                width,
                parent_height: self.height,
                parent_width: self.width,
            });
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in row..row + height {
            let start = self.offset(r, col, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Self {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    /// Mean over all pixels and channels.
    pub fn mean_intensity(&self) -> T {
        let sum: T = self.data.iter().copied().sum();
        sum / T::of_usize(self.data.len())
    }

    pub fn linf_distance(&self, other: &Self) -> Result<T, ImageError> {
        if self.shape() != other.shape() {
            return Err(ImageError::DimMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Decodes any supported raster file into an RGB tensor scaled to `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| ImageError::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let scale = T::of(255.0);
        let data = rgb
            .into_raw()
            .into_iter()
            .map(|b| T::of(f64::from(b)) / scale)
            .collect();
        Self::new(h as usize, w as usize, 3, data)
    }

    /// Quantizes to 8-bit and writes a PNG (grayscale images are expanded to RGB).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let path = path.as_ref();
        let buf = self.to_rgb8();
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| ImageError::Encode {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for r in 0..self.height {
            for c in 0..self.width {
                let px = std::array::from_fn(|k| {
                    let ch = if self.channels == 1 { 0 } else { k };
                    (self.get(r, c, ch).as_f64() * 255.0).round() as u8
                });
                out.put_pixel(c as u32, r as u32, image::Rgb(px));
            }
        }
        out
    }
}

/// Non-negative saliency grid aligned to an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHeatmap<T>", bound(deserialize = "T: Scalar"))]
pub struct Heatmap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

#[derive(Deserialize)]
struct RawHeatmap<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<RawHeatmap<T>> for Heatmap<T> {
    type Error = ImageError;

    fn try_from(raw: RawHeatmap<T>) -> Result<Self, Self::Error> {
        Heatmap::new(raw.height, raw.width, raw.values)
    }
}

impl<T: Scalar> Heatmap<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self, ImageError> {
        check_dims(height, width, 1)?;
        if values.len() != height * width {
            return Err(ImageError::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ImageError::NonFinite(index));
            }
            if v < T::zero() {
                return Err(ImageError::NegativeValue {
                    index,
                    value: v.as_f64(),
                });
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self, ImageError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self, ImageError> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::zero(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    /// Multiplies every value by `factor` (must be non-negative).
    pub fn scaled(&self, factor: T) -> Result<Self, ImageError> {
        Self::new(
            self.height,
            self.width,
            self.values.iter().map(|&v| v * factor).collect(),
        )
    }
}

/// `count` feature maps of `height x width`, stored map after map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps<T> {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMaps<T> {
    pub fn new(
        count: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self, ImageError> {
        check_dims(height, width, count)?;
        if data.len() != count * height * width {
            return Err(ImageError::LengthMismatch {
                expected: count * height * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            count,
            height,
            width,
            data,
        })
    }

    pub fn zeros(count: usize, height: usize, width: usize) -> Self {
        Self {
            count,
            height,
            width,
            data: vec![T::zero(); count * height * width],
        }
    }

    pub fn map(&self, k: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.count, self.height, self.width)
    }
}

/// Gradient of a scalar loss with respect to an image, in the image's layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputGradient<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> InputGradient<T> {
    pub fn zeros_like(img: &ImageTensor<T>) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            channels: img.channels(),
            data: vec![T::zero(); img.len()],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|v| v.abs()).fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_lengths() {
        assert!(matches!(
            ImageTensor::<f64>::new(1, 2, 1, vec![0.0, 1.5]),
            Err(ImageError::OutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            ImageTensor::<f64>::new(2, 2, 3, vec![0.0; 11]),
            Err(ImageError::LengthMismatch {
                expected: 12,
                actual: 11
            })
        ));
        assert!(matches!(
            ImageTensor::<f64>::new(2, 2, 2, vec![0.0; 8]),
            Err(ImageError::InvalidChannels(2))
        ));
        assert!(matches!(
            ImageTensor::<f64>::new(0, 2, 1, vec![]),
            Err(ImageError::ZeroDimension { .. })
        ));
    }

    #[test]
    fn deserialization_enforces_range() {
        let bad = r#"{"height":1,"width":1,"channels":1,"data":[2.0]}"#;
        assert!(serde_json::from_str::<ImageTensor<f64>>(bad).is_err());
        let good = r#"{"height":1,"width":1,"channels":1,"data":[0.5]}"#;
        assert_eq!(
            serde_json::from_str::<ImageTensor<f64>>(good)
                .unwrap()
                .get(0, 0, 0),
            0.5
        );
        assert!(
            serde_json::from_str::<Heatmap<f64>>(r#"{"height":1,"width":1,"values":[-1.0]}"#)
                .is_err()
        );
    }

    #[test]
    fn crop_and_plane_follow_layout() {
        let img =
            ImageTensor::<f64>::from_fn(4, 4, 3, |r, c, ch| (r * 16 + c * 4 + ch) as f64 / 64.0)
                .unwrap();
        let sub = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(sub.get(0, 0, 1), img.get(1, 2, 1));
        assert_eq!(sub.get(1, 1, 2), img.get(2, 3, 2));
        assert!(img.crop(3, 3, 2, 1).is_err());
        let green = img.plane(1);
        assert_eq!(green.len(), 16);
        assert_eq!(green[5], img.get(1, 1, 1));
    }

    #[test]
    fn heatmap_rejects_negative_values() {
        assert!(matches!(
            Heatmap::<f64>::new(1, 2, vec![0.0, -0.1]),
            Err(ImageError::NegativeValue { index: 1, .. })
        ));
    }

    #[test]
    fn png_round_trip_is_quantized_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = ImageTensor::<f64>::from_fn(3, 5, 3, |r, c, ch| {
            ((r * 15 + c * 3 + ch) * 5) as f64 / 255.0
        })
        .unwrap();
        img.save_png(&path).unwrap();
        let back = ImageTensor::<f64>::load(&path).unwrap();
        assert!(img.linf_distance(&back).unwrap() < 1e-12);
    }
}
