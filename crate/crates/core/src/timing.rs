//! Phase-level timing: a ledger that accumulates elapsed nanoseconds and
//! call counts per standardized convolution phase.
//!
//! A convolution is split into pre-, in- and post-convolution steps:
//!
//! | step | phases |
//! |------|--------|
//! | pre  | [`Phase::PreAnalysis`], [`Phase::PreReorder`] |
//! | in   | [`Phase::InTiling`], [`Phase::InPacking`], [`Phase::InMicrokernel`], [`Phase::InUnpacking`] |
//! | post | [`Phase::PostReorder`] |
//!
//! *Operation time* sums every phase, *convolution time* sums the in-phases.
//! All accumulators are integer nanoseconds read from a monotonic clock.

use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    PreAnalysis,
    PreReorder,
    InTiling,
    InPacking,
    InMicrokernel,
    InUnpacking,
    PostReorder,
}

pub const PHASE_COUNT: usize = 7;

impl Phase {
    pub const ALL: [Phase; PHASE_COUNT] = [
        Phase::PreAnalysis,
        Phase::PreReorder,
        Phase::InTiling,
        Phase::InPacking,
        Phase::InMicrokernel,
        Phase::InUnpacking,
        Phase::PostReorder,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_in_convolution(self) -> bool {
        matches!(
            self,
            Phase::InTiling | Phase::InPacking | Phase::InMicrokernel | Phase::InUnpacking
        )
    }

    /// Column prefix used in result files.
    pub fn name(self) -> &'static str {
        match self {
            Phase::PreAnalysis => "pre_analysis",
            Phase::PreReorder => "pre_reorder",
            Phase::InTiling => "in_tiling",
            Phase::InPacking => "in_packing",
            Phase::InMicrokernel => "in_microkernel",
            Phase::InUnpacking => "in_unpacking",
            Phase::PostReorder => "post_reorder",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accumulated time and calls per phase for one convolution execution.
///
/// Not meant to be shared between threads while in use; each benchmark
/// thread owns its ledger.
#[derive(Debug, Clone, Default)]
pub struct PhaseLedger {
    elapsed: [u64; PHASE_COUNT],
    calls: [u64; PHASE_COUNT],
    pending: [Option<Instant>; PHASE_COUNT],
}

impl PhaseLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self, phase: Phase) -> Result<()> {
        let slot = &mut self.pending[phase.index()];
        if slot.is_some() {
            return Err(Error::DoubleStart(phase));
        }
        *slot = Some(Instant::now());
        Ok(())
    }

    pub fn update(&mut self, phase: Phase) -> Result<()> {
        let now = Instant::now();
        let started = self.pending[phase.index()]
            .take()
            .ok_or(Error::UpdateWithoutStart(phase))?;
        let ns = u64::try_from(now.duration_since(started).as_nanos()).unwrap_or(u64::MAX);
        self.record(phase, ns);
        Ok(())
    }

    /// Runs `f` enclosed in a start/update pair for `phase`.
    #[inline]
    pub fn time<R>(&mut self, phase: Phase, f: impl FnOnce() -> R) -> Result<R> {
        self.start(phase)?;
        let out = f();
        self.update(phase)?;
        Ok(out)
    }

    /// Accounts one completed call of `ns` nanoseconds without touching the
    /// clock.
    pub fn record(&mut self, phase: Phase, ns: u64) {
        let i = phase.index();
        self.elapsed[i] = self.elapsed[i].saturating_add(ns);
        self.calls[i] += 1;
    }

    pub fn is_pending(&self, phase: Phase) -> bool {
        self.pending[phase.index()].is_some()
    }

    pub fn elapsed(&self, phase: Phase) -> u64 {
        self.elapsed[phase.index()]
    }

    pub fn calls(&self, phase: Phase) -> u64 {
        self.calls[phase.index()]
    }

    pub fn snapshot(&self) -> Result<TimingReport> {
        let pending: Vec<Phase> = Phase::ALL
            .into_iter()
            .filter(|&p| self.is_pending(p))
            .collect();
        if !pending.is_empty() {
            return Err(Error::PendingStart(pending));
        }
        Ok(TimingReport::new(self.elapsed, self.calls))
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// Snapshot of a balanced ledger with derived operation and convolution
/// times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TimingReport {
    pub elapsed: [u64; PHASE_COUNT],
    pub calls: [u64; PHASE_COUNT],
    pub operation_ns: u64,
    pub convolution_ns: u64,
}

impl TimingReport {
    pub fn new(elapsed: [u64; PHASE_COUNT], calls: [u64; PHASE_COUNT]) -> Self {
        let operation_ns = elapsed.iter().sum();
        let convolution_ns = Phase::ALL
            .into_iter()
            .filter(|p| p.is_in_convolution())
            .map(|p| elapsed[p.index()])
            .sum();
        TimingReport {
            elapsed,
            calls,
            operation_ns,
            convolution_ns,
        }
    }

    pub fn elapsed(&self, phase: Phase) -> u64 {
        self.elapsed[phase.index()]
    }

    pub fn calls(&self, phase: Phase) -> u64 {
        self.calls[phase.index()]
    }
}

/// Per-phase statistics over repeated measured runs.
///
/// Operation and convolution figures are sums of the per-phase figures, so
/// `operation_ns_min` is the sum of phase minima, not the fastest run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunStatistics {
    pub runs: usize,
    pub mean_ns: [f64; PHASE_COUNT],
    pub min_ns: [u64; PHASE_COUNT],
    pub calls: [u64; PHASE_COUNT],
}

impl RunStatistics {
    pub fn mean(&self, phase: Phase) -> f64 {
        self.mean_ns[phase.index()]
    }

    pub fn min(&self, phase: Phase) -> u64 {
        self.min_ns[phase.index()]
    }

    pub fn calls(&self, phase: Phase) -> u64 {
        self.calls[phase.index()]
    }

    pub fn operation_ns_mean(&self) -> f64 {
        self.mean_ns.iter().sum()
    }

    pub fn operation_ns_min(&self) -> u64 {
        self.min_ns.iter().sum()
    }

    pub fn convolution_ns_mean(&self) -> f64 {
        in_phases().map(|p| self.mean(p)).sum()
    }

    pub fn convolution_ns_min(&self) -> u64 {
        in_phases().map(|p| self.min(p)).sum()
    }
}

fn in_phases() -> impl Iterator<Item = Phase> {
    Phase::ALL.into_iter().filter(|p| p.is_in_convolution())
}

/// Mean and minimum per phase. Call counts must agree across reports:
/// divergence means the measured algorithm is nondeterministic.
pub fn aggregate(reports: &[TimingReport]) -> Result<RunStatistics> {
    let first = reports.first().ok_or(Error::EmptyAggregate)?;
    for (index, report) in reports.iter().enumerate().skip(1) {
        for phase in Phase::ALL {
            if report.calls(phase) != first.calls(phase) {
                return Err(Error::CallCountMismatch {
                    phase,
                    index,
                    expected: first.calls(phase),
                    found: report.calls(phase),
                });
            }
        }
    }
    let mut stats = RunStatistics {
        runs: reports.len(),
        calls: first.calls,
        min_ns: [u64::MAX; PHASE_COUNT],
        ..Default::default()
    };
    for phase in Phase::ALL {
        let i = phase.index();
        let total: u128 = reports.iter().map(|r| u128::from(r.elapsed[i])).sum();
        stats.mean_ns[i] = total as f64 / reports.len() as f64;
        stats.min_ns[i] = reports.iter().map(|r| r.elapsed[i]).min().unwrap_or(0);
    }
    Ok(stats)
}
