//! The convolution-operation record: shape parameters, derived output
//! shape and FLOP count, the canonical identifying key, and the operation
//! taxonomy (pointwise, grouped, dilated, rectangular, regular).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Input spatial bound observed across real-model operation sets.
pub const TYPICAL_MAX_INPUT_HW: usize = 1024;
/// Filter spatial bound observed across real-model operation sets.
pub const TYPICAL_MAX_KERNEL_HW: usize = 32;
/// Channel bound observed across real-model operation sets.
pub const TYPICAL_MAX_CHANNELS: usize = 12288;

/// Complete shape and parameter record of one 2D convolution.
///
/// Padding is symmetric: `pad_h` rows are added above and below the input,
/// `pad_w` columns left and right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvDescriptor {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub dil_h: usize,
    pub dil_w: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvDescriptor {
    /// Batch 1, unit stride, no padding, no dilation, one group, no bias.
    pub fn new(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        out_channels: usize,
        k_h: usize,
        k_w: usize,
    ) -> Self {
        ConvDescriptor {
            batch: 1,
            in_channels,
            in_h,
            in_w,
            out_channels,
            k_h,
            k_w,
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
            dil_h: 1,
            dil_w: 1,
            groups: 1,
            has_bias: false,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_stride(mut self, stride_h: usize, stride_w: usize) -> Self {
        self.stride_h = stride_h;
        self.stride_w = stride_w;
        self
    }

    pub fn with_pad(mut self, pad_h: usize, pad_w: usize) -> Self {
        self.pad_h = pad_h;
        self.pad_w = pad_w;
        self
    }

    pub fn with_dilation(mut self, dil_h: usize, dil_w: usize) -> Self {
        self.dil_h = dil_h;
        self.dil_w = dil_w;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    /// Checks field invariants and that the output is non-empty.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch", self.batch),
            ("in_channels", self.in_channels),
            ("in_h", self.in_h),
            ("in_w", self.in_w),
            ("out_channels", self.out_channels),
            ("k_h", self.k_h),
            ("k_w", self.k_w),
            ("stride_h", self.stride_h),
            ("stride_w", self.stride_w),
            ("dil_h", self.dil_h),
            ("dil_w", self.dil_w),
            ("groups", self.groups),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidDescriptor(format!("{name} must be >= 1")));
            }
        }
        if !self.in_channels.is_multiple_of(self.groups) {
            return Err(Error::InvalidDescriptor(format!(
                "in_channels {} not divisible by groups {}",
                self.in_channels, self.groups
            )));
        }
        if !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::InvalidDescriptor(format!(
                "out_channels {} not divisible by groups {}",
                self.out_channels, self.groups
            )));
        }
        output_extent(self.in_h, self.k_h, self.stride_h, self.pad_h, self.dil_h)
            .ok_or_else(|| Error::InvalidDescriptor(format!("empty output height for {self}")))?;
        output_extent(self.in_w, self.k_w, self.stride_w, self.pad_w, self.dil_w)
            .ok_or_else(|| Error::InvalidDescriptor(format!("empty output width for {self}")))?;
        Ok(())
    }

    /// Soft bounds check against the ranges seen in real-model operation
    /// sets. Violations are worth a warning, never an error.
    pub fn lint(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if self.in_h > TYPICAL_MAX_INPUT_HW || self.in_w > TYPICAL_MAX_INPUT_HW {
            warnings.push(format!("input {}x{} exceeds {TYPICAL_MAX_INPUT_HW}", self.in_h, self.in_w));
        }
        if self.k_h > TYPICAL_MAX_KERNEL_HW || self.k_w > TYPICAL_MAX_KERNEL_HW {
            warnings.push(format!("filter {}x{} exceeds {TYPICAL_MAX_KERNEL_HW}", self.k_h, self.k_w));
        }
        if self.in_channels > TYPICAL_MAX_CHANNELS || self.out_channels > TYPICAL_MAX_CHANNELS {
            warnings.push(format!(
                "channels {}->{} exceed {TYPICAL_MAX_CHANNELS}",
                self.in_channels, self.out_channels
            ));
        }
        warnings
    }

    /// Spatial dims of the output tensor.
    pub fn output_shape(&self) -> Result<(usize, usize)> {
        self.validate()?;
        Ok(self.output_shape_unchecked())
    }

    /// Like [`output_shape`](Self::output_shape) for a descriptor already
    /// known to be valid.
    pub(crate) fn output_shape_unchecked(&self) -> (usize, usize) {
        let oh = output_extent(self.in_h, self.k_h, self.stride_h, self.pad_h, self.dil_h).unwrap_or(0);
        let ow = output_extent(self.in_w, self.k_w, self.stride_w, self.pad_w, self.dil_w).unwrap_or(0);
        (oh, ow)
    }

    pub fn channels_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn filters_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Canonical identifying key. Two descriptors share a key iff every
    /// field matches.
    pub fn key(&self) -> String {
        format!(
            "n{}_c{}x{}x{}_f{}x{}x{}_s{}x{}_p{}x{}_d{}x{}_g{}_b{}",
            self.batch,
            self.in_channels,
            self.in_h,
            self.in_w,
            self.out_channels,
            self.k_h,
            self.k_w,
            self.stride_h,
            self.stride_w,
            self.pad_h,
            self.pad_w,
            self.dil_h,
            self.dil_w,
            self.groups,
            u8::from(self.has_bias)
        )
    }

    pub fn classify(&self) -> ConvFlags {
        let pointwise = self.k_h == 1 && self.k_w == 1;
        let grouped = self.groups > 1;
        let dilated = self.dil_h > 1 || self.dil_w > 1;
        let rectangular = self.k_h != self.k_w;
        ConvFlags {
            pointwise,
            grouped,
            dilated,
            rectangular,
            regular: !(pointwise || grouped || dilated || rectangular),
        }
    }

    /// Multiply-accumulates count as two FLOPs; a bias adds one per output.
    pub fn flop_count(&self) -> Result<u64> {
        let (oh, ow) = self.output_shape()?;
        let outputs = (self.batch * self.out_channels * oh * ow) as u64;
        let macs = outputs * (self.channels_per_group() * self.k_h * self.k_w) as u64;
        Ok(2 * macs + if self.has_bias { outputs } else { 0 })
    }
}

/// floor((extent + 2·pad − dil·(k−1) − 1) / stride) + 1, or `None` when the
/// dilated window does not fit.
fn output_extent(extent: usize, k: usize, stride: usize, pad: usize, dil: usize) -> Option<usize> {
    if k == 0 || stride == 0 || dil == 0 {
        return None;
    }
    let padded = extent + 2 * pad;
    let window = dil * (k - 1) + 1;
    if padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}

impl fmt::Display for ConvDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for ConvDescriptor {
    type Err = Error;

    /// Parses a canonical key back into the descriptor it identifies.
    fn from_str(key: &str) -> Result<Self> {
        let bad = || Error::InvalidDescriptor(format!("malformed key {key:?}"));
        let parts: Vec<&str> = key.split('_').collect();
        let [n, c, f, s, p, d, g, b] = parts.as_slice() else {
            return Err(bad());
        };
        let fields = |part: &str, prefix: char, count: usize| -> Result<Vec<usize>> {
            let body = part.strip_prefix(prefix).ok_or_else(bad)?;
            let values = body
                .split('x')
                .map(|v| v.parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != count {
                return Err(bad());
            }
            Ok(values)
        };
        let n = fields(n, 'n', 1)?;
        let c = fields(c, 'c', 3)?;
        let f = fields(f, 'f', 3)?;
        let s = fields(s, 's', 2)?;
        let p = fields(p, 'p', 2)?;
        let d = fields(d, 'd', 2)?;
        let g = fields(g, 'g', 1)?;
        let has_bias = match *b {
            "b0" => false,
            "b1" => true,
            _ => return Err(bad()),
        };
        let desc = ConvDescriptor {
            batch: n[0],
            in_channels: c[0],
            in_h: c[1],
            in_w: c[2],
            out_channels: f[0],
            k_h: f[1],
            k_w: f[2],
            stride_h: s[0],
            stride_w: s[1],
            pad_h: p[0],
            pad_w: p[1],
            dil_h: d[0],
            dil_w: d[1],
            groups: g[0],
            has_bias,
        };
        if desc.key() != key {
            return Err(bad());
        }
        Ok(desc)
    }
}

/// Operation classes. Every class except `Regular` may co-occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConvClass {
    Pointwise,
    Grouped,
    Dilated,
    Rectangular,
    Regular,
}

impl ConvClass {
    pub const ALL: [ConvClass; 5] = [
        ConvClass::Pointwise,
        ConvClass::Grouped,
        ConvClass::Dilated,
        ConvClass::Rectangular,
        ConvClass::Regular,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConvClass::Pointwise => "pointwise",
            ConvClass::Grouped => "grouped",
            ConvClass::Dilated => "dilated",
            ConvClass::Rectangular => "rectangular",
            ConvClass::Regular => "regular",
        }
    }
}

impl fmt::Display for ConvClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConvClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ConvClass::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| format!("unknown class {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConvFlags {
    pub pointwise: bool,
    pub grouped: bool,
    pub dilated: bool,
    pub rectangular: bool,
    pub regular: bool,
}

impl ConvFlags {
    pub fn has(&self, class: ConvClass) -> bool {
        match class {
            ConvClass::Pointwise => self.pointwise,
            ConvClass::Grouped => self.grouped,
            ConvClass::Dilated => self.dilated,
            ConvClass::Rectangular => self.rectangular,
            ConvClass::Regular => self.regular,
        }
    }

    pub fn any_irregular(&self) -> bool {
        self.pointwise || self.grouped || self.dilated || self.rectangular
    }
}
