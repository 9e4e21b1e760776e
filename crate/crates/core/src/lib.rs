//! Phase-instrumented benchmarking of 2D convolution algorithms.
//!
//! * [`descriptor`]: the convolution-operation record and its taxonomy.
//! * [`convset`]: deduplicated operation sets with CSV persistence.
//! * [`timing`]: the per-phase timing ledger.
//! * [`tensor`]: NCHW tensors, matrices and data generation.
//! * [`algos`]: im2col + GEMM baseline, blocked direct main algorithm and
//!   the naive oracle.
//! * [`harness`]: the sweep engine behind `convbench run`.
//! * [`report`]: results files, speedups and breakdown datasets.
//! * [`verify`]: oracle-equivalence sweeps.

pub mod algos;
pub mod convset;
pub mod descriptor;
pub mod error;
pub mod harness;
pub mod report;
pub mod tensor;
pub mod timing;
pub mod verify;

pub use convset::{ConvSet, FilterSpec};
pub use descriptor::{ConvClass, ConvDescriptor, ConvFlags};
pub use error::{Error, Result};
pub use harness::{ConvBench, DataGen, Mode, Precision, RunConfig, RunOutcome, Status};
pub use tensor::{MatrixRM, Tensor4D};
pub use timing::{Phase, PhaseLedger, TimingReport};
