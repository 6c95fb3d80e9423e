//! Image batches, value ranges and domain labels.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array3, Array4, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared value range of an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTag {
    /// [-1, 1], the internal compute range.
    UnitSigned,
    /// [0, 1]
    Unit,
    /// [0, 255], used at I/O boundaries only.
    Byte,
}

impl RangeTag {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            RangeTag::UnitSigned => (-1.0, 1.0),
            RangeTag::Unit => (0.0, 1.0),
            RangeTag::Byte => (0.0, 255.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RangeTag::UnitSigned => "unit_signed",
            RangeTag::Unit => "unit",
            RangeTag::Byte => "byte",
        }
    }
}

impl fmt::Display for RangeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RangeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_signed" => Ok(RangeTag::UnitSigned),
            "unit" => Ok(RangeTag::Unit),
            "byte" => Ok(RangeTag::Byte),
            other => Err(Error::Config(format!("unknown range tag `{other}`"))),
        }
    }
}

/// Maps a value between ranges. Conversion into [`RangeTag::Byte`] rounds
/// half away from zero and clamps to [0, 255].
pub fn convert_value(v: f64, from: RangeTag, to: RangeTag) -> f64 {
    if from == to {
        return v;
    }
    let (lo, hi) = from.bounds();
    let t = (v - lo) / (hi - lo);
    let (lo2, hi2) = to.bounds();
    let out = lo2 + t * (hi2 - lo2);
    if to == RangeTag::Byte {
        out.round().clamp(0.0, 255.0)
    } else {
        out
    }
}

/// A batch of images laid out as (batch, channel, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array4<f64>,
    range: RangeTag,
}

/// Smallest spatial extent accepted by the networks.
pub const MIN_SPATIAL: usize = 16;

impl ImageTensor {
    /// Wraps `data`, validating channel count, spatial dims and range.
    pub fn new(data: Array4<f64>, range: RangeTag) -> Result<Self> {
        let img = Self { data, range };
        img.check_shape()?;
        img.check_range()?;
        Ok(img)
    }

    fn check_shape(&self) -> Result<()> {
        let (_, c, h, w) = self.data.dim();
        if c != 1 && c != 3 {
            return Err(Error::Input(format!("channel count must be 1 or 3, got {c}")));
        }
        for (name, d) in [("height", h), ("width", w)] {
            if d < MIN_SPATIAL || d % 4 != 0 {
                return Err(Error::Input(format!(
                    "{name} {d} must be >= {MIN_SPATIAL} and divisible by 4"
                )));
            }
        }
        Ok(())
    }

    /// Verifies every element lies within the declared range.
    pub fn check_range(&self) -> Result<()> {
        let (lo, hi) = self.range.bounds();
        if let Some(bad) = self.data.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::Input(format!(
                "value {bad} outside declared range {}",
                self.range
            )));
        }
        Ok(())
    }

    pub fn convert_range(&self, target: RangeTag) -> ImageTensor {
        let from = self.range;
        ImageTensor {
            data: self.data.mapv(|v| convert_value(v, from, target)),
            range: target,
        }
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f64> {
        self.data
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn sample(&self, i: usize) -> ArrayView3<'_, f64> {
        self.data.slice(s![i, .., .., ..])
    }

    /// Stacks (C, H, W) images into one batch.
    pub fn stack(images: &[ArrayView3<'_, f64>], range: RangeTag) -> Result<Self> {
        let views: Vec<_> = images.iter().map(|v| v.view().insert_axis(ndarray::Axis(0))).collect();
        let data = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::Input(format!("cannot stack images: {e}")))?;
        Self::new(data, range)
    }
}

/// Index of one of `num_domains` style domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainLabel {
    index: usize,
    num_domains: usize,
}

impl DomainLabel {
    pub fn new(index: usize, num_domains: usize) -> Result<Self> {
        if num_domains < 2 {
            return Err(Error::Config(format!(
                "at least two domains are required, got {num_domains}"
            )));
        }
        if index >= num_domains {
            return Err(Error::Input(format!(
                "domain index {index} out of range for {num_domains} domains"
            )));
        }
        Ok(Self { index, num_domains })
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn num_domains(self) -> usize {
        self.num_domains
    }

    pub fn onehot(self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_domains];
        v[self.index] = 1.0;
        v
    }
}

/// One-hot label broadcast over an `h` x `w` grid, shaped (K, h, w).
pub fn onehot_spatial(label: DomainLabel, h: usize, w: usize) -> Array3<f64> {
    let mut out = Array3::zeros((label.num_domains(), h, w));
    out.slice_mut(s![label.index(), .., ..]).fill(1.0);
    out
}

/// Label planes for a whole batch, shaped (N, K, h, w).
pub fn label_planes(labels: &[DomainLabel], h: usize, w: usize) -> Result<Array4<f64>> {
    let k = labels
        .first()
        .map(|l| l.num_domains())
        .ok_or_else(|| Error::Input("empty label batch".into()))?;
    let mut out = Array4::zeros((labels.len(), k, h, w));
    for (i, l) in labels.iter().enumerate() {
        if l.num_domains() != k {
            return Err(Error::Input("labels disagree on the number of domains".into()));
        }
        out.slice_mut(s![i, l.index(), .., ..]).fill(1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_endpoints_map_to_signed_endpoints() {
        assert_eq!(convert_value(0.0, RangeTag::Byte, RangeTag::UnitSigned), -1.0);
        assert_eq!(convert_value(255.0, RangeTag::Byte, RangeTag::UnitSigned), 1.0);
    }

    #[test]
    fn half_rounds_away_from_zero() {
        // 0.5 * 255 = 127.5 -> 128
        assert_eq!(convert_value(0.5, RangeTag::Unit, RangeTag::Byte), 128.0);
        assert_eq!(convert_value(1.5, RangeTag::Unit, RangeTag::Byte), 255.0);
    }

    #[test]
    fn unknown_tag_is_config_error() {
        assert!(matches!("percent".parse::<RangeTag>(), Err(Error::Config(_))));
        assert_eq!("unit_signed".parse::<RangeTag>().unwrap(), RangeTag::UnitSigned);
    }

    #[test]
    fn image_tensor_validates_shape_and_range() {
        assert!(ImageTensor::new(Array4::zeros((1, 3, 16, 16)), RangeTag::Unit).is_ok());
        assert!(ImageTensor::new(Array4::zeros((1, 2, 16, 16)), RangeTag::Unit).is_err());
        assert!(ImageTensor::new(Array4::zeros((1, 3, 18, 16)), RangeTag::Unit).is_err());
        assert!(ImageTensor::new(Array4::zeros((1, 3, 12, 12)), RangeTag::Unit).is_err());
        assert!(ImageTensor::new(Array4::from_elem((1, 1, 16, 16), 2.0), RangeTag::Unit).is_err());
    }

    #[test]
    fn onehot_planes() {
        let l = DomainLabel::new(0, 3).unwrap();
        let p = onehot_spatial(l, 4, 4);
        assert!(p.slice(s![0, .., ..]).iter().all(|&v| v == 1.0));
        assert!(p.slice(s![1..3, .., ..]).iter().all(|&v| v == 0.0));
        let l2 = DomainLabel::new(2, 3).unwrap();
        let big = onehot_spatial(l2, 256, 256);
        assert_eq!(big.slice(s![2, .., ..]).sum(), 65536.0);
        assert_eq!(l2.onehot().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn label_validation() {
        assert!(DomainLabel::new(3, 3).is_err());
        assert!(matches!(DomainLabel::new(0, 1), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn byte_signed_byte_round_trip(b in 0u8..=255) {
            let v = convert_value(b as f64, RangeTag::Byte, RangeTag::UnitSigned);
            prop_assert_eq!(convert_value(v, RangeTag::UnitSigned, RangeTag::Byte), b as f64);
        }

        #[test]
        fn conversions_are_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for to in [RangeTag::UnitSigned, RangeTag::Byte] {
                prop_assert!(convert_value(lo, RangeTag::Unit, to) <= convert_value(hi, RangeTag::Unit, to));
            }
        }

        #[test]
        fn onehot_sums_to_one_per_pixel(k in 2usize..6, idx in 0usize..6, h in 1usize..6, w in 1usize..6) {
            let idx = idx % k;
            let p = onehot_spatial(DomainLabel::new(idx, k).unwrap(), h, w);
            for v in p.sum_axis(ndarray::Axis(0)).iter() {
                prop_assert_eq!(*v, 1.0);
            }
        }
    }
}
