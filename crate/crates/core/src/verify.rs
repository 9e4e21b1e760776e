//! Oracle-equivalence sweeps: every algorithm is checked against the naive
//! direct convolution over a corpus of descriptors.
//!
//! The sweep runs in double precision by default. In single precision the
//! reference itself rounds differently from any reassociated summation, and
//! long reductions that cancel to near zero can exceed the default
//! tolerance; [`sweep_with`] runs either element type.
//!
//! Cases are independent, so with the `parallel` feature (on by default)
//! [`sweep`] spreads them over the rayon thread pool. Nothing here is timed;
//! benchmark measurements go through [`crate::harness`] on one thread.

use crate::algos::{
    conv_baseline_im2col_gemm, conv_direct_naive, conv_main_blocked_direct, BlockedDirect, CacheParams,
    ConvInputs, Convolution, GemmBlocking,
};
use crate::descriptor::ConvDescriptor;
use crate::error::{Error, Result};
use crate::harness::operation_seed;
use crate::tensor::{allclose, Element, DEFAULT_ATOL, DEFAULT_RTOL};
use crate::timing::PhaseLedger;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub rtol: f64,
    pub atol: f64,
    pub seed: u64,
    pub blocking: GemmBlocking,
    pub cache: CacheParams,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            seed: 0,
            blocking: GemmBlocking::default(),
            cache: CacheParams::default(),
        }
    }
}

/// Comparison of one algorithm against the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub pass: bool,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub desc: ConvDescriptor,
    pub baseline: Agreement,
    /// `None` when the blocked direct algorithm does not support `desc`.
    pub main: Option<Agreement>,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.baseline.pass && self.main.is_none_or(|m| m.pass)
    }
}

/// Runs both instrumented algorithms and the oracle on random data for
/// `desc`, checking tolerance and that instrumentation stayed balanced.
pub fn check_case<T: Element>(desc: &ConvDescriptor, cfg: &OracleConfig) -> Result<OracleCheck> {
    let inputs = ConvInputs::<T>::random(*desc, operation_seed(cfg.seed, &desc.key()))?;
    let expected = conv_direct_naive(&inputs)?;

    let mut ledger = PhaseLedger::new();
    let base = conv_baseline_im2col_gemm(&inputs, &cfg.blocking, &mut ledger)?;
    ledger.snapshot()?;
    let (pass, max_rel_err) = allclose(&base, &expected, cfg.rtol, cfg.atol)?;
    let baseline = Agreement { pass, max_rel_err };

    let main = match Convolution::<T>::supports(&BlockedDirect { cache: cfg.cache }, desc) {
        Ok(()) => {
            ledger.reset();
            let out = conv_main_blocked_direct(&inputs, &cfg.cache, &mut ledger)?;
            ledger.snapshot()?;
            let (pass, max_rel_err) = allclose(&out, &expected, cfg.rtol, cfg.atol)?;
            Some(Agreement { pass, max_rel_err })
        }
        Err(Error::Unsupported { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(OracleCheck {
        desc: *desc,
        baseline,
        main,
    })
}

pub fn sweep_sequential<T: Element>(descs: &[ConvDescriptor], cfg: &OracleConfig) -> Vec<Result<OracleCheck>> {
    descs.iter().map(|d| check_case::<T>(d, cfg)).collect()
}

#[cfg(feature = "parallel")]
pub fn sweep_parallel<T: Element>(descs: &[ConvDescriptor], cfg: &OracleConfig) -> Vec<Result<OracleCheck>> {
    use rayon::prelude::*;
    descs.par_iter().map(|d| check_case::<T>(d, cfg)).collect()
}

/// Checks every descriptor in element type `T`, in parallel when the
/// `parallel` feature is on. Results keep the input order.
pub fn sweep_with<T: Element>(descs: &[ConvDescriptor], cfg: &OracleConfig) -> Vec<Result<OracleCheck>> {
    #[cfg(feature = "parallel")]
    {
        sweep_parallel::<T>(descs, cfg)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sweep_sequential::<T>(descs, cfg)
    }
}

/// [`sweep_with`] in double precision.
pub fn sweep(descs: &[ConvDescriptor], cfg: &OracleConfig) -> Vec<Result<OracleCheck>> {
    sweep_with::<f64>(descs, cfg)
}

/// Descriptor grid for equivalence testing: kernels 1×1, 3×3, 5×5, 7×7,
/// 3×1, 1×7; strides 1, 2; pads 0, 1, 3; dilation 1, 2; groups 1, 2, C;
/// channels 1, 3, 8, 16, 64; batch 1. Combinations with an invalid group
/// count or an empty output are left out, as are repeated descriptors.
pub fn oracle_corpus() -> Vec<ConvDescriptor> {
    const KERNELS: [(usize, usize); 6] = [(1, 1), (3, 3), (5, 5), (7, 7), (3, 1), (1, 7)];
    const CHANNELS: [usize; 5] = [1, 3, 8, 16, 64];
    let mut out: Vec<ConvDescriptor> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut i = 0usize;
    for &c in &CHANNELS {
        for groups in [1, 2, c] {
            if c % groups != 0 {
                continue;
            }
            for &(kh, kw) in &KERNELS {
                for stride in [1, 2] {
                    for pad in [0, 1, 3] {
                        for dil in [1, 2] {
                            i += 1;
                            // Vary spatial size, filter count and bias so the
                            // grid does not collapse onto one shape.
                            let in_h = 13 + i % 5;
                            let in_w = 12 + (i * 3) % 7;
                            let filters = groups * (1 + i % 3) + if groups == 1 { 4 } else { 0 };
                            let d = ConvDescriptor::new(c, in_h, in_w, filters, kh, kw)
                                .with_stride(stride, stride)
                                .with_pad(pad, pad)
                                .with_dilation(dil, dil)
                                .with_groups(groups)
                                .with_bias(i.is_multiple_of(2));
                            if d.validate().is_ok() && seen.insert(d.key()) {
                                out.push(d);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
