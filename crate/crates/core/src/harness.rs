//! Sweep engine: iterates a filtered convSet, generates per-operation data,
//! runs warm-ups and measured repetitions of the selected algorithm and
//! aggregates the phase timings.
//!
//! Everything here runs on the calling thread. Measured runs must not share
//! the machine with other work from this process.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;

use crate::algos::{BlockedDirect, CacheParams, ConvInputs, Convolution, GemmBlocking, Im2colGemm};
use crate::convset::{ConvSet, FilterSpec};
use crate::descriptor::ConvDescriptor;
use crate::error::{Error, Result};
use crate::tensor::{allclose, Element, Tensor4D, DEFAULT_ATOL, DEFAULT_RTOL};
use crate::timing::{aggregate, PhaseLedger, RunStatistics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Main,
    Baseline,
    Correctness,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Main => "main",
            Mode::Baseline => "baseline",
            Mode::Correctness => "correctness",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "main" => Ok(Mode::Main),
            "baseline" => Ok(Mode::Baseline),
            "correctness" => Ok(Mode::Correctness),
            _ => Err(format!("unknown mode {s:?}")),
        }
    }
}

/// Element type of correctness comparisons. Timed runs are always `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Single,
    Double,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::Single),
            "f64" => Ok(Precision::Double),
            _ => Err(format!("unknown precision {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataGen {
    Random,
    Constant,
}

impl FromStr for DataGen {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(DataGen::Random),
            "constant" => Ok(DataGen::Constant),
            _ => Err(format!("unknown data generator {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    SkippedUnsupported,
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::SkippedUnsupported => "skipped_unsupported",
            Status::Failed => "failed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ok" => Ok(Status::Ok),
            "skipped_unsupported" => Ok(Status::SkippedUnsupported),
            "failed" => Ok(Status::Failed),
            _ => Err(format!("unknown status {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub data_gen: DataGen,
    pub constant_value: f32,
    pub warmups: usize,
    pub runs: usize,
    pub seed: u64,
    pub filter: FilterSpec,
    pub blocking: GemmBlocking,
    pub cache: CacheParams,
    pub rtol: f64,
    pub atol: f64,
    pub precision: Precision,
    /// Operations whose buffers would exceed this many bytes are reported
    /// as failed instead of being allocated.
    pub memory_limit_bytes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Main,
            data_gen: DataGen::Random,
            constant_value: 1.0,
            warmups: 10,
            runs: 100,
            seed: 0,
            filter: FilterSpec::default(),
            blocking: GemmBlocking::default(),
            cache: CacheParams::default(),
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            precision: Precision::Single,
            memory_limit_bytes: 8 << 30,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidDescriptor("runs must be >= 1".into()));
        }
        self.blocking.validate()
    }
}

/// Result of benchmarking one operation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub key: String,
    pub mode: Mode,
    pub runs: usize,
    pub warmups: usize,
    /// Present for measured (main/baseline) runs that completed.
    pub stats: Option<RunStatistics>,
    /// Present iff a correctness comparison was carried out.
    pub correctness_max_rel_err: Option<f64>,
    pub status: Status,
    pub reason: Option<String>,
}

impl RunOutcome {
    fn new(desc: &ConvDescriptor, cfg: &RunConfig) -> Self {
        RunOutcome {
            key: desc.key(),
            mode: cfg.mode,
            runs: cfg.runs,
            warmups: cfg.warmups,
            stats: None,
            correctness_max_rel_err: None,
            status: Status::Ok,
            reason: None,
        }
    }

    fn fail(mut self, status: Status, reason: String) -> Self {
        self.status = status;
        self.reason = Some(reason);
        self
    }

    /// A correctness comparison that exceeded tolerance.
    pub fn is_correctness_failure(&self) -> bool {
        self.mode == Mode::Correctness && self.status == Status::Failed && self.correctness_max_rel_err.is_some()
    }
}

/// Per-operation seed: the sweep seed mixed with a hash of the key, so each
/// operation's data is independent of which others are in the set.
pub fn operation_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a
    let hash = key
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    seed ^ hash
}

/// Buffers for `desc` as the harness would generate them under `cfg`.
pub fn generate_inputs<T: Element>(desc: &ConvDescriptor, cfg: &RunConfig) -> Result<ConvInputs<T>> {
    match cfg.data_gen {
        DataGen::Random => ConvInputs::random(*desc, operation_seed(cfg.seed, &desc.key())),
        DataGen::Constant => {
            let v = T::from(cfg.constant_value).unwrap_or_else(T::nan);
            ConvInputs::constant(*desc, v)
        }
    }
}

/// Rough upper bound of bytes touched by one run of either algorithm.
fn estimated_bytes(desc: &ConvDescriptor) -> u128 {
    let (oh, ow) = desc.output_shape_unchecked();
    let n = desc.batch as u128;
    let input = n * (desc.in_channels * desc.in_h * desc.in_w) as u128;
    let weights = (desc.out_channels * desc.channels_per_group() * desc.k_h * desc.k_w) as u128;
    let output = n * (desc.out_channels * oh * ow) as u128;
    let patches = n * (desc.in_channels * desc.k_h * desc.k_w * oh * ow) as u128;
    (input + weights + output + patches) * std::mem::size_of::<f32>() as u128
}

/// An algorithm runnable in both element types.
pub trait Kernel: Convolution<f32> + Convolution<f64> + Send + Sync {}

impl<K: Convolution<f32> + Convolution<f64> + Send + Sync> Kernel for K {}

type Algorithm = Box<dyn Kernel>;

/// A main algorithm under evaluation and the baseline it is compared to.
pub struct ConvBench {
    main: Algorithm,
    baseline: Algorithm,
}

impl fmt::Debug for ConvBench {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvBench")
            .field("main", &self.main().name())
            .field("baseline", &self.baseline().name())
            .finish()
    }
}

impl ConvBench {
    /// `main` against the default im2col + GEMM baseline.
    pub fn new(main: impl Kernel + 'static) -> Self {
        ConvBench {
            main: Box::new(main),
            baseline: Box::new(Im2colGemm::default()),
        }
    }

    /// Blocked direct convolution against im2col + GEMM, both configured
    /// from `cfg`.
    pub fn from_config(cfg: &RunConfig) -> Self {
        ConvBench::new(BlockedDirect { cache: cfg.cache }).with_baseline(Im2colGemm {
            blocking: cfg.blocking,
        })
    }

    pub fn with_baseline(mut self, baseline: impl Kernel + 'static) -> Self {
        self.baseline = Box::new(baseline);
        self
    }

    pub fn main(&self) -> &dyn Convolution<f32> {
        self.main.as_ref()
    }

    pub fn baseline(&self) -> &dyn Convolution<f32> {
        self.baseline.as_ref()
    }

    /// Runs every operation of `set` that passes `cfg.filter`, in order.
    pub fn convset_exec(&self, set: &ConvSet, cfg: &RunConfig) -> Result<Vec<RunOutcome>> {
        self.convset_exec_with(set, cfg, |_, _, _| {})
    }

    /// As [`convset_exec`](Self::convset_exec), calling `progress(done,
    /// total, outcome)` after each operation, outside any timed region.
    pub fn convset_exec_with(
        &self,
        set: &ConvSet,
        cfg: &RunConfig,
        mut progress: impl FnMut(usize, usize, &RunOutcome),
    ) -> Result<Vec<RunOutcome>> {
        cfg.validate()?;
        let filtered = set.apply_filter(&cfg.filter);
        if filtered.is_empty() {
            log::warn!("no operations left after filtering {} entries", set.len());
        }
        let total = filtered.len();
        let mut outcomes = Vec::with_capacity(total);
        for (i, desc) in filtered.iter().enumerate() {
            let outcome = self.run_single(desc, cfg);
            progress(i + 1, total, &outcome);
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }

    /// Benchmarks one operation. Never fails: problems are reported through
    /// the outcome status.
    pub fn run_single(&self, desc: &ConvDescriptor, cfg: &RunConfig) -> RunOutcome {
        let outcome = RunOutcome::new(desc, cfg);
        if let Err(e) = cfg.validate().and_then(|_| desc.validate()) {
            return outcome.fail(Status::Failed, e.to_string());
        }
        let needed = estimated_bytes(desc);
        if needed > cfg.memory_limit_bytes as u128 {
            return outcome.fail(
                Status::Failed,
                format!("needs ~{needed} bytes, limit is {}", cfg.memory_limit_bytes),
            );
        }
        let result = catch_unwind(AssertUnwindSafe(|| match cfg.mode {
            Mode::Main => self.measure(self.main(), desc, cfg, outcome.clone()),
            Mode::Baseline => self.measure(self.baseline(), desc, cfg, outcome.clone()),
            Mode::Correctness => self.compare(desc, cfg, outcome.clone()),
        }));
        match result {
            Ok(done) => done,
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                outcome.fail(Status::Failed, msg)
            }
        }
    }

    fn measure(&self, algo: &dyn Convolution<f32>, desc: &ConvDescriptor, cfg: &RunConfig, outcome: RunOutcome) -> RunOutcome {
        if let Err(e) = algo.supports(desc) {
            return classify_error(outcome, e);
        }
        let inputs = match generate_inputs::<f32>(desc, cfg) {
            Ok(i) => i,
            Err(e) => return classify_error(outcome, e),
        };
        let mut ledger = PhaseLedger::new();
        let once = |ledger: &mut PhaseLedger| -> Result<_> {
            ledger.reset();
            let out = algo.run(&inputs, ledger)?;
            drop(out);
            ledger.snapshot()
        };
        for _ in 0..cfg.warmups {
            if let Err(e) = once(&mut ledger) {
                return classify_error(outcome, e);
            }
        }
        let mut reports = Vec::with_capacity(cfg.runs);
        for _ in 0..cfg.runs {
            match once(&mut ledger) {
                Ok(r) => reports.push(r),
                Err(e) => return classify_error(outcome, e),
            }
        }
        match aggregate(&reports) {
            Ok(stats) => RunOutcome {
                stats: Some(stats),
                ..outcome
            },
            Err(e) => classify_error(outcome, e),
        }
    }

    fn compare(&self, desc: &ConvDescriptor, cfg: &RunConfig, outcome: RunOutcome) -> RunOutcome {
        if let Err(e) = self.main().supports(desc) {
            return classify_error(outcome, e);
        }
        let main: &dyn Kernel = self.main.as_ref();
        let baseline: &dyn Kernel = self.baseline.as_ref();
        let compared = match cfg.precision {
            Precision::Single => compare_in::<f32>(main, baseline, desc, cfg),
            Precision::Double => compare_in::<f64>(main, baseline, desc, cfg),
        };
        match compared {
            Ok((pass, err)) => {
                let outcome = RunOutcome {
                    correctness_max_rel_err: Some(err),
                    ..outcome
                };
                if pass {
                    outcome
                } else {
                    outcome.fail(
                        Status::Failed,
                        format!("outputs differ beyond rtol {} / atol {}", cfg.rtol, cfg.atol),
                    )
                }
            }
            Err(e) => classify_error(outcome, e),
        }
    }
}

fn compare_in<T: Element>(
    main: &dyn Convolution<T>,
    baseline: &dyn Convolution<T>,
    desc: &ConvDescriptor,
    cfg: &RunConfig,
) -> Result<(bool, f64)> {
    let inputs = generate_inputs::<T>(desc, cfg)?;
    let run = |algo: &dyn Convolution<T>| -> Result<Tensor4D<T>> {
        let mut ledger = PhaseLedger::new();
        let out = algo.run(&inputs, &mut ledger)?;
        ledger.snapshot()?;
        Ok(out)
    };
    let main_out = run(main)?;
    let base_out = run(baseline)?;
    allclose(&main_out, &base_out, cfg.rtol, cfg.atol)
}

fn classify_error(outcome: RunOutcome, e: Error) -> RunOutcome {
    match e {
        Error::Unsupported { .. } => outcome.fail(Status::SkippedUnsupported, e.to_string()),
        e => outcome.fail(Status::Failed, e.to_string()),
    }
}

/// Sweeps `set` with the default algorithms configured from `cfg`.
pub fn convset_exec(set: &ConvSet, cfg: &RunConfig) -> Result<Vec<RunOutcome>> {
    ConvBench::from_config(cfg).convset_exec(set, cfg)
}

/// One operation with the default algorithms configured from `cfg`.
pub fn run_single(desc: &ConvDescriptor, cfg: &RunConfig) -> RunOutcome {
    ConvBench::from_config(cfg).run_single(desc, cfg)
}

/// Deliberately broken wrapper used to check that correctness mode catches
/// wrong kernels.
#[derive(Debug, Clone, Copy)]
pub struct SignFlipped<C>(pub C);

impl<T: Element, C: Convolution<T>> Convolution<T> for SignFlipped<C> {
    fn name(&self) -> &'static str {
        "sign_flipped"
    }

    fn supports(&self, desc: &ConvDescriptor) -> Result<()> {
        self.0.supports(desc)
    }

    fn run(&self, inputs: &ConvInputs<T>, ledger: &mut PhaseLedger) -> Result<Tensor4D<T>> {
        let mut out = self.0.run(inputs, ledger)?;
        out.map_inplace(|v| -v);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::NaiveDirect;
    use crate::descriptor::ConvClass;
    use crate::timing::Phase;

    fn small_set() -> ConvSet {
        let mut s = ConvSet::new();
        for d in [
            ConvDescriptor::new(3, 12, 12, 8, 3, 3).with_pad(1, 1),
            ConvDescriptor::new(8, 6, 6, 16, 1, 1).with_bias(true),
            ConvDescriptor::new(4, 9, 9, 4, 3, 3).with_stride(2, 2),
        ] {
            s.insert_unique(d).unwrap();
        }
        s
    }

    fn quick(mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            warmups: 1,
            runs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn baseline_sweep_reorders_once_per_run() {
        let outcomes = convset_exec(&small_set(), &quick(Mode::Baseline)).unwrap();
        assert_eq!(outcomes.len(), 3);
        for o in &outcomes {
            assert_eq!(o.status, Status::Ok);
            let s = o.stats.unwrap();
            assert_eq!(s.runs, 3);
            assert_eq!(s.calls(Phase::PreReorder), 1);
            assert!(o.correctness_max_rel_err.is_none());
        }
    }

    #[test]
    fn self_comparison_is_exact() {
        let bench = ConvBench::new(Im2colGemm::default());
        let outcomes = bench.convset_exec(&small_set(), &quick(Mode::Correctness)).unwrap();
        for o in outcomes {
            assert_eq!(o.status, Status::Ok);
            assert_eq!(o.correctness_max_rel_err, Some(0.0));
            assert!(o.stats.is_none());
        }
    }

    #[test]
    fn grouped_main_is_skipped_not_fatal() {
        let mut s = small_set();
        s.insert_unique(ConvDescriptor::new(4, 8, 8, 4, 3, 3).with_groups(4)).unwrap();
        let outcomes = convset_exec(&s, &quick(Mode::Main)).unwrap();
        assert_eq!(outcomes.len(), 4);
        assert_eq!(outcomes[3].status, Status::SkippedUnsupported);
        assert!(outcomes[..3].iter().all(|o| o.status == Status::Ok));
    }

    #[test]
    fn single_run_statistics() {
        let d = ConvDescriptor::new(3, 10, 10, 4, 3, 3);
        let cfg = RunConfig {
            warmups: 0,
            runs: 1,
            ..quick(Mode::Main)
        };
        let s = run_single(&d, &cfg).stats.unwrap();
        for p in Phase::ALL {
            assert_eq!(s.mean(p), s.min(p) as f64);
        }
        let cfg = RunConfig { runs: 5, ..cfg };
        let s = run_single(&d, &cfg).stats.unwrap();
        assert_eq!(s.runs, 5);
        for p in Phase::ALL {
            assert!(s.min(p) as f64 <= s.mean(p));
        }
    }

    #[test]
    fn constant_data_counts_taps() {
        let d = ConvDescriptor::new(1, 5, 5, 1, 3, 3);
        let cfg = RunConfig {
            data_gen: DataGen::Constant,
            constant_value: 1.0,
            ..quick(Mode::Correctness)
        };
        let inputs = generate_inputs::<f32>(&d, &cfg).unwrap();
        let out = BlockedDirect::default().run(&inputs, &mut PhaseLedger::new()).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 9.0));
        let o = run_single(&d, &cfg);
        assert_eq!(o.status, Status::Ok);
        assert_eq!(o.correctness_max_rel_err, Some(0.0));
    }

    #[test]
    fn generated_data_is_deterministic_and_distinct() {
        let cfg = quick(Mode::Main);
        let set = small_set();
        let a: Vec<_> = set.iter().map(|d| generate_inputs::<f32>(d, &cfg).unwrap().input).collect();
        let b: Vec<_> = set.iter().map(|d| generate_inputs::<f32>(d, &cfg).unwrap().input).collect();
        assert_eq!(a, b);
        assert_ne!(operation_seed(0, "a"), operation_seed(0, "b"));
        let other = RunConfig { seed: 1, ..cfg };
        assert_ne!(generate_inputs::<f32>(&set.entries()[0], &other).unwrap().input, a[0]);
    }

    #[test]
    fn warmups_do_not_change_call_counts() {
        let d = ConvDescriptor::new(3, 12, 12, 8, 3, 3).with_pad(1, 1);
        let cold = RunConfig {
            warmups: 0,
            runs: 2,
            ..quick(Mode::Main)
        };
        let warm = RunConfig { warmups: 50, ..cold.clone() };
        assert_eq!(run_single(&d, &cold).stats.unwrap().calls, run_single(&d, &warm).stats.unwrap().calls);
    }

    #[test]
    fn sign_flip_is_caught() {
        let bench = ConvBench::new(SignFlipped(BlockedDirect::default()));
        let d = ConvDescriptor::new(3, 8, 8, 4, 3, 3);
        let o = bench.run_single(&d, &quick(Mode::Correctness));
        assert_eq!(o.status, Status::Failed);
        assert!(o.is_correctness_failure());
        assert!(o.correctness_max_rel_err.unwrap() > 1e-4);
    }

    #[test]
    fn failures_keep_the_sweep_going() {
        let mut s = small_set();
        s.insert_unique(ConvDescriptor::new(64, 200, 200, 64, 3, 3)).unwrap();
        s.insert_unique(ConvDescriptor::new(2, 5, 5, 2, 1, 1)).unwrap();
        let cfg = RunConfig {
            memory_limit_bytes: 1 << 20,
            ..quick(Mode::Baseline)
        };
        let outcomes = convset_exec(&s, &cfg).unwrap();
        assert_eq!(outcomes.len(), 5);
        assert_eq!(outcomes[3].status, Status::Failed);
        assert!(!outcomes[3].is_correctness_failure());
        assert_eq!(outcomes[4].status, Status::Ok);
    }

    #[test]
    fn filter_is_applied_and_zero_runs_rejected() {
        let cfg = RunConfig {
            filter: FilterSpec::classes([ConvClass::Pointwise]),
            ..quick(Mode::Baseline)
        };
        assert_eq!(convset_exec(&small_set(), &cfg).unwrap().len(), 1);
        let bad = RunConfig { runs: 0, ..cfg };
        assert!(convset_exec(&small_set(), &bad).is_err());
    }

    #[test]
    fn naive_main_leaves_ledger_empty() {
        let bench = ConvBench::new(NaiveDirect);
        let o = bench.run_single(&ConvDescriptor::new(2, 6, 6, 2, 3, 3), &quick(Mode::Main));
        assert_eq!(o.stats.unwrap().operation_ns_mean(), 0.0);
    }
}
