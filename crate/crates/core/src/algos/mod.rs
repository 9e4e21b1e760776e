//! Convolution algorithms.
//!
//! * [`conv_baseline_im2col_gemm`]: im2col transform followed by a
//!   cache-blocked, packed GEMM. The default baseline.
//! * [`conv_main_blocked_direct`]: tiled direct convolution with per-tile
//!   input packing. The default main algorithm.
//! * [`conv_direct_naive`]: uninstrumented seven-loop reference used as the
//!   correctness oracle.
//!
//! All algorithms run on the calling thread.

mod blocked;
mod gemm;
mod im2col;
mod naive;

pub use blocked::{conv_main_blocked_direct, plan_direct, CacheParams, DirectPlan};
pub use gemm::gemm;
pub use im2col::{conv_baseline_im2col_gemm, im2col_transform};
pub use naive::{conv_direct_naive, conv_direct_naive_wide};

use crate::descriptor::ConvDescriptor;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor4D};
use crate::timing::PhaseLedger;

/// Input, weight and bias buffers of one convolution.
///
/// Weights are laid out `(F, C/groups, k_h, k_w)`.
#[derive(Debug, Clone)]
pub struct ConvInputs<T = f32> {
    pub desc: ConvDescriptor,
    pub input: Tensor4D<T>,
    pub weights: Tensor4D<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Element> ConvInputs<T> {
    pub fn new(
        desc: ConvDescriptor,
        input: Tensor4D<T>,
        weights: Tensor4D<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        desc.validate()?;
        let want_in = [desc.batch, desc.in_channels, desc.in_h, desc.in_w];
        if input.dims() != want_in {
            return Err(Error::DimMismatch(format!(
                "input {:?}, descriptor wants {want_in:?}",
                input.dims()
            )));
        }
        let want_w = [desc.out_channels, desc.channels_per_group(), desc.k_h, desc.k_w];
        if weights.dims() != want_w {
            return Err(Error::DimMismatch(format!(
                "weights {:?}, descriptor wants {want_w:?}",
                weights.dims()
            )));
        }
        match (&bias, desc.has_bias) {
            (Some(b), true) if b.len() == desc.out_channels => {}
            (None, false) => {}
            (b, _) => {
                return Err(Error::DimMismatch(format!(
                    "bias of length {:?} for has_bias={} with {} filters",
                    b.as_ref().map(Vec::len),
                    desc.has_bias,
                    desc.out_channels
                )))
            }
        }
        Ok(ConvInputs {
            desc,
            input,
            weights,
            bias,
        })
    }

    /// Zero-filled buffers of the right shapes.
    pub fn zeros(desc: ConvDescriptor) -> Result<Self> {
        desc.validate()?;
        let input = Tensor4D::zeros(desc.batch, desc.in_channels, desc.in_h, desc.in_w);
        let weights = Tensor4D::zeros(desc.out_channels, desc.channels_per_group(), desc.k_h, desc.k_w);
        let bias = desc.has_bias.then(|| vec![T::zero(); desc.out_channels]);
        Ok(ConvInputs {
            desc,
            input,
            weights,
            bias,
        })
    }

    /// Uniform `[-1, 1)` data; input, weights and bias draw from distinct
    /// streams derived from `seed`.
    pub fn random(desc: ConvDescriptor, seed: u64) -> Result<Self> {
        let mut inputs = Self::zeros(desc)?;
        inputs.input.fill_random(seed);
        inputs.weights.fill_random(seed ^ 0x9e37_79b9_7f4a_7c15);
        if let Some(b) = inputs.bias.as_mut() {
            crate::tensor::fill_uniform(b, seed ^ 0xc2b2_ae3d_27d4_eb4f);
        }
        Ok(inputs)
    }

    /// Every buffer filled with `v`.
    pub fn constant(desc: ConvDescriptor, v: T) -> Result<Self> {
        let mut inputs = Self::zeros(desc)?;
        inputs.input.fill_constant(v);
        inputs.weights.fill_constant(v);
        if let Some(b) = inputs.bias.as_mut() {
            b.fill(v);
        }
        Ok(inputs)
    }

    /// Output tensor initialized with the broadcast bias (or zeros).
    pub(crate) fn bias_initialized_output(&self) -> Tensor4D<T> {
        let d = &self.desc;
        let (oh, ow) = d.output_shape_unchecked();
        let mut out = Tensor4D::zeros(d.batch, d.out_channels, oh, ow);
        if let Some(bias) = &self.bias {
            let plane = oh * ow;
            for (i, chunk) in out.as_mut_slice().chunks_mut(plane).enumerate() {
                chunk.fill(bias[i % d.out_channels]);
            }
        }
        out
    }
}

/// Cache and register blocking of the packed GEMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GemmBlocking {
    pub mc: usize,
    pub kc: usize,
    pub nc: usize,
    pub mr: usize,
    pub nr: usize,
}

impl Default for GemmBlocking {
    fn default() -> Self {
        GemmBlocking {
            mc: 128,
            kc: 256,
            nc: 512,
            mr: 8,
            nr: 8,
        }
    }
}

impl GemmBlocking {
    pub fn new(mc: usize, kc: usize, nc: usize, mr: usize, nr: usize) -> Result<Self> {
        let b = GemmBlocking { mc, kc, nc, mr, nr };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.mc, self.kc, self.nc, self.mr, self.nr].contains(&0) {
            return Err(Error::InvalidDescriptor(format!("blocking sizes must be >= 1: {self:?}")));
        }
        if !self.mc.is_multiple_of(self.mr) || !self.nc.is_multiple_of(self.nr) {
            return Err(Error::InvalidDescriptor(format!(
                "cache blocks must be multiples of register tiles: {self:?}"
            )));
        }
        Ok(())
    }
}

/// A convolution implementation that can be benchmarked.
pub trait Convolution<T: Element = f32> {
    fn name(&self) -> &'static str;

    /// `Err(Error::Unsupported)` if the algorithm cannot handle `desc`.
    fn supports(&self, _desc: &ConvDescriptor) -> Result<()> {
        Ok(())
    }

    fn run(&self, inputs: &ConvInputs<T>, ledger: &mut PhaseLedger) -> Result<Tensor4D<T>>;
}

/// Im2col + packed GEMM.
#[derive(Debug, Clone, Copy, Default)]
pub struct Im2colGemm {
    pub blocking: GemmBlocking,
}

impl<T: Element> Convolution<T> for Im2colGemm {
    fn name(&self) -> &'static str {
        "im2col_gemm"
    }

    fn run(&self, inputs: &ConvInputs<T>, ledger: &mut PhaseLedger) -> Result<Tensor4D<T>> {
        conv_baseline_im2col_gemm(inputs, &self.blocking, ledger)
    }
}

/// Tiled direct convolution.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockedDirect {
    pub cache: CacheParams,
}

impl<T: Element> Convolution<T> for BlockedDirect {
    fn name(&self) -> &'static str {
        "blocked_direct"
    }

    fn supports(&self, desc: &ConvDescriptor) -> Result<()> {
        blocked::check_supported(desc)
    }

    fn run(&self, inputs: &ConvInputs<T>, ledger: &mut PhaseLedger) -> Result<Tensor4D<T>> {
        conv_main_blocked_direct(inputs, &self.cache, ledger)
    }
}

/// The uninstrumented reference; leaves the ledger untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveDirect;

impl<T: Element> Convolution<T> for NaiveDirect {
    fn name(&self) -> &'static str {
        "naive_direct"
    }

    fn run(&self, inputs: &ConvInputs<T>, _ledger: &mut PhaseLedger) -> Result<Tensor4D<T>> {
        conv_direct_naive(inputs)
    }
}
