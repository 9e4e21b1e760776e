//! Results CSV serialization and the main-vs-baseline comparison datasets:
//! per-operation speedups, their summary, and the stacked phase breakdown.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::descriptor::ConvDescriptor;
use crate::error::{Error, Result};
use crate::harness::{Mode, RunOutcome, Status};
use crate::timing::{Phase, PHASE_COUNT};

/// Timing columns of one results row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowTiming {
    pub mean_ns: [f64; PHASE_COUNT],
    pub min_ns: [u64; PHASE_COUNT],
    pub calls: [u64; PHASE_COUNT],
    pub operation_ns_mean: f64,
    pub operation_ns_min: u64,
    pub convolution_ns_mean: f64,
    pub convolution_ns_min: u64,
}

impl RowTiming {
    pub fn mean(&self, phase: Phase) -> f64 {
        self.mean_ns[phase.index()]
    }
}

/// One line of a results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub key: String,
    pub mode: Mode,
    pub status: Status,
    pub runs: usize,
    pub warmups: usize,
    pub timing: Option<RowTiming>,
    pub correctness_max_rel_err: Option<f64>,
}

impl From<&RunOutcome> for ResultRow {
    fn from(o: &RunOutcome) -> Self {
        ResultRow {
            key: o.key.clone(),
            mode: o.mode,
            status: o.status,
            runs: o.runs,
            warmups: o.warmups,
            timing: o.stats.map(|s| RowTiming {
                mean_ns: s.mean_ns,
                min_ns: s.min_ns,
                calls: s.calls,
                operation_ns_mean: s.operation_ns_mean(),
                operation_ns_min: s.operation_ns_min(),
                convolution_ns_mean: s.convolution_ns_mean(),
                convolution_ns_min: s.convolution_ns_min(),
            }),
            correctness_max_rel_err: o.correctness_max_rel_err,
        }
    }
}

/// Exact header of results CSV files.
pub fn results_header() -> Vec<String> {
    let mut h: Vec<String> = ["key", "mode", "status", "runs", "warmups"]
        .into_iter()
        .map(String::from)
        .collect();
    for p in Phase::ALL {
        h.push(format!("{p}_ns_mean"));
        h.push(format!("{p}_ns_min"));
        h.push(format!("{p}_calls"));
    }
    h.extend(
        [
            "operation_ns_mean",
            "operation_ns_min",
            "convolution_ns_mean",
            "convolution_ns_min",
            "correctness_max_rel_err",
        ]
        .map(String::from),
    );
    h
}

pub fn write_results_csv(outcomes: &[RunOutcome], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<ResultRow> = outcomes.iter().map(ResultRow::from).collect();
    write_result_rows(&rows, path)
}

pub fn write_result_rows(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_result_rows_to(rows, file).map_err(|e| Error::csv(path, e))
}

/// Writes a results CSV to any sink.
pub fn write_result_rows_to(rows: &[ResultRow], sink: impl std::io::Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(results_header())?;
    for row in rows {
        let mut rec = vec![
            row.key.clone(),
            row.mode.to_string(),
            row.status.to_string(),
            row.runs.to_string(),
            row.warmups.to_string(),
        ];
        match &row.timing {
            Some(t) => {
                for i in 0..PHASE_COUNT {
                    rec.push(t.mean_ns[i].to_string());
                    rec.push(t.min_ns[i].to_string());
                    rec.push(t.calls[i].to_string());
                }
                rec.push(t.operation_ns_mean.to_string());
                rec.push(t.operation_ns_min.to_string());
                rec.push(t.convolution_ns_mean.to_string());
                rec.push(t.convolution_ns_min.to_string());
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 3 * PHASE_COUNT + 4)),
        }
        rec.push(row.correctness_max_rel_err.map(|e| e.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected = results_header();
    let cols: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let missing: Vec<String> = expected
        .iter()
        .filter(|h| !cols.contains_key(h.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::SchemaMismatch {
            path: path.to_owned(),
            missing,
        });
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let row = parse_result_row(&record, &cols).map_err(|msg| Error::Parse {
            path: path.to_owned(),
            row: i + 1,
            msg,
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn parse_result_row(record: &csv::StringRecord, cols: &HashMap<&str, usize>) -> Result<ResultRow, String> {
    let cell = |name: &str| record.get(cols[name]).unwrap_or("").trim();
    fn num<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T, String> {
        raw.parse().map_err(|_| format!("{name}: cannot parse {raw:?}"))
    }
    let timing_names: Vec<String> = results_header()[5..5 + 3 * PHASE_COUNT + 4].to_vec();
    let filled = timing_names.iter().filter(|n| !cell(n).is_empty()).count();
    let timing = match filled {
        0 => None,
        n if n == timing_names.len() => {
            let mut t = RowTiming {
                mean_ns: [0.0; PHASE_COUNT],
                min_ns: [0; PHASE_COUNT],
                calls: [0; PHASE_COUNT],
                operation_ns_mean: num("operation_ns_mean", cell("operation_ns_mean"))?,
                operation_ns_min: num("operation_ns_min", cell("operation_ns_min"))?,
                convolution_ns_mean: num("convolution_ns_mean", cell("convolution_ns_mean"))?,
                convolution_ns_min: num("convolution_ns_min", cell("convolution_ns_min"))?,
            };
            for p in Phase::ALL {
                let i = p.index();
                let mean = format!("{p}_ns_mean");
                let min = format!("{p}_ns_min");
                let calls = format!("{p}_calls");
                t.mean_ns[i] = num(&mean, cell(&mean))?;
                t.min_ns[i] = num(&min, cell(&min))?;
                t.calls[i] = num(&calls, cell(&calls))?;
            }
            Some(t)
        }
        _ => return Err("timing cells are partially filled".into()),
    };
    let err = cell("correctness_max_rel_err");
    Ok(ResultRow {
        key: cell("key").to_string(),
        mode: cell("mode").parse()?,
        status: cell("status").parse()?,
        runs: num("runs", cell("runs"))?,
        warmups: num("warmups", cell("warmups"))?,
        timing,
        correctness_max_rel_err: if err.is_empty() { None } else { Some(num("correctness_max_rel_err", err)?) },
    })
}

/// Main-vs-baseline ratios for one operation. Every ratio is
/// `baseline / main`, so values above 1 mean the main algorithm is faster.
/// A ratio is `None` when either side spent no time in that scope.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupRow {
    pub key: String,
    pub flops: Option<u64>,
    pub convolution_speedup: Option<f64>,
    pub operation_speedup: Option<f64>,
    pub phase_ratio: [Option<f64>; PHASE_COUNT],
}

impl SpeedupRow {
    pub fn phase(&self, phase: Phase) -> Option<f64> {
        self.phase_ratio[phase.index()]
    }
}

/// A key that could not be compared, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unmatched {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupJoin {
    pub rows: Vec<SpeedupRow>,
    pub unmatched: Vec<Unmatched>,
}

fn ratio(baseline: f64, main: f64) -> Option<f64> {
    (baseline > 0.0 && main > 0.0).then(|| baseline / main)
}

fn comparable(row: &ResultRow) -> Option<&RowTiming> {
    if row.status == Status::Ok {
        row.timing.as_ref()
    } else {
        None
    }
}

/// Joins rows on key (main order) and yields one [`SpeedupRow`] per key
/// measured successfully on both sides. Everything else is listed in
/// [`SpeedupJoin::unmatched`].
pub fn compute_speedups(main: &[ResultRow], baseline: &[ResultRow]) -> Result<SpeedupJoin> {
    let base_by_key: HashMap<&str, &ResultRow> = baseline.iter().map(|r| (r.key.as_str(), r)).collect();
    let main_keys: HashMap<&str, ()> = main.iter().map(|r| (r.key.as_str(), ())).collect();
    let mut rows = Vec::new();
    let mut unmatched = Vec::new();
    for m in main {
        let Some(b) = base_by_key.get(m.key.as_str()) else {
            unmatched.push(Unmatched {
                key: m.key.clone(),
                reason: "missing from baseline".into(),
            });
            continue;
        };
        let (Some(mt), Some(bt)) = (comparable(m), comparable(b)) else {
            unmatched.push(Unmatched {
                key: m.key.clone(),
                reason: format!("main {} / baseline {}", m.status, b.status),
            });
            continue;
        };
        let mut phase_ratio = [None; PHASE_COUNT];
        for (i, r) in phase_ratio.iter_mut().enumerate() {
            *r = ratio(bt.mean_ns[i], mt.mean_ns[i]);
        }
        rows.push(SpeedupRow {
            key: m.key.clone(),
            flops: m.key.parse::<ConvDescriptor>().ok().and_then(|d| d.flop_count().ok()),
            convolution_speedup: ratio(bt.convolution_ns_mean, mt.convolution_ns_mean),
            operation_speedup: ratio(bt.operation_ns_mean, mt.operation_ns_mean),
            phase_ratio,
        });
    }
    for b in baseline {
        if !main_keys.contains_key(b.key.as_str()) {
            unmatched.push(Unmatched {
                key: b.key.clone(),
                reason: "missing from main".into(),
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyJoin);
    }
    Ok(SpeedupJoin { rows, unmatched })
}

pub fn speedup_header() -> Vec<String> {
    let mut h: Vec<String> = ["key", "flops", "convolution_speedup", "operation_speedup"]
        .map(String::from)
        .to_vec();
    h.extend(Phase::ALL.iter().map(|p| format!("{p}_ratio")));
    h
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_speedups_csv(rows: &[SpeedupRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(speedup_header()).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.key.clone(),
            opt(r.flops),
            opt(r.convolution_speedup),
            opt(r.operation_speedup),
        ];
        rec.extend(r.phase_ratio.iter().map(|v| opt(*v)));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_unmatched_csv(unmatched: &[Unmatched], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["key", "reason"]).map_err(|e| Error::csv(path, e))?;
    for u in unmatched {
        w.write_record([&u.key, &u.reason]).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Mean percentage gain or loss of one phase across operations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseSummary {
    /// Operations where the main algorithm's phase is faster (ratio > 1).
    pub faster: usize,
    /// Mean of `(ratio − 1)·100` over the faster operations.
    pub mean_speedup_pct: Option<f64>,
    /// Operations where it is slower (ratio < 1).
    pub slower: usize,
    /// Mean of `(1/ratio − 1)·100` over the slower operations: 79.5 means
    /// the main phase took 1.795× the baseline's time.
    pub mean_slowdown_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupSummary {
    pub operations: usize,
    /// Share of operations with convolution speedup > 1.
    pub faster_fraction: f64,
    /// Share of operations with operation speedup > 1.
    pub operation_faster_fraction: f64,
    pub convolution: PhaseSummary,
    pub operation: PhaseSummary,
    pub phases: [PhaseSummary; PHASE_COUNT],
}

impl SpeedupSummary {
    pub fn phase(&self, phase: Phase) -> &PhaseSummary {
        &self.phases[phase.index()]
    }
}

fn summarize_ratios(ratios: impl Iterator<Item = f64>) -> PhaseSummary {
    let (mut up, mut down) = (Vec::new(), Vec::new());
    for r in ratios {
        if r > 1.0 {
            up.push((r - 1.0) * 100.0);
        } else if r < 1.0 {
            down.push((1.0 / r - 1.0) * 100.0);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    PhaseSummary {
        faster: up.len(),
        mean_speedup_pct: mean(&up),
        slower: down.len(),
        mean_slowdown_pct: mean(&down),
    }
}

fn fraction_faster(values: impl Iterator<Item = Option<f64>>, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    values.filter(|r| r.is_some_and(|r| r > 1.0)).count() as f64 / total as f64
}

pub fn summarize(rows: &[SpeedupRow]) -> SpeedupSummary {
    let n = rows.len();
    let mut phases = [PhaseSummary::default(); PHASE_COUNT];
    for p in Phase::ALL {
        phases[p.index()] = summarize_ratios(rows.iter().filter_map(|r| r.phase(p)));
    }
    SpeedupSummary {
        operations: n,
        faster_fraction: fraction_faster(rows.iter().map(|r| r.convolution_speedup), n),
        operation_faster_fraction: fraction_faster(rows.iter().map(|r| r.operation_speedup), n),
        convolution: summarize_ratios(rows.iter().filter_map(|r| r.convolution_speedup)),
        operation: summarize_ratios(rows.iter().filter_map(|r| r.operation_speedup)),
        phases,
    }
}

impl fmt::Display for SpeedupSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}%"));
        writeln!(f, "operations compared: {}", self.operations)?;
        writeln!(
            f,
            "main faster (convolution time): {:.2}%",
            self.faster_fraction * 100.0
        )?;
        writeln!(
            f,
            "main faster (operation time):   {:.2}%",
            self.operation_faster_fraction * 100.0
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<16} {:>7} {:>12} {:>7} {:>12}",
            "scope", "faster", "avg speedup", "slower", "avg slowdown"
        )?;
        let mut line = |name: &str, s: &PhaseSummary| {
            writeln!(
                f,
                "{:<16} {:>7} {:>12} {:>7} {:>12}",
                name,
                s.faster,
                pct(s.mean_speedup_pct),
                s.slower,
                pct(s.mean_slowdown_pct)
            )
        };
        line("convolution", &self.convolution)?;
        line("operation", &self.operation)?;
        for p in Phase::ALL {
            line(p.name(), &self.phases[p.index()])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Main,
    Baseline,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Main => "main",
            Side::Baseline => "baseline",
        }
    }
}

/// One segment of the stacked breakdown chart.
#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    /// Position of the operation in the (filtered) convSet order.
    pub index: usize,
    pub key: String,
    pub side: Side,
    pub phase: Phase,
    pub ms: f64,
}

/// Per-phase mean milliseconds of both sides for every jointly measured
/// key, main first, in the main file's row order.
pub fn breakdown_dataset(main: &[ResultRow], baseline: &[ResultRow]) -> Vec<BreakdownRow> {
    let base_by_key: HashMap<&str, &ResultRow> = baseline.iter().map(|r| (r.key.as_str(), r)).collect();
    let mut out = Vec::new();
    for (index, m) in main.iter().enumerate() {
        let Some(b) = base_by_key.get(m.key.as_str()) else {
            continue;
        };
        let (Some(mt), Some(bt)) = (comparable(m), comparable(b)) else {
            continue;
        };
        for (side, t) in [(Side::Main, mt), (Side::Baseline, bt)] {
            for p in Phase::ALL {
                out.push(BreakdownRow {
                    index,
                    key: m.key.clone(),
                    side,
                    phase: p,
                    ms: t.mean(p) / 1e6,
                });
            }
        }
    }
    out
}

pub fn write_breakdown_csv(rows: &[BreakdownRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["index", "key", "side", "phase", "ms"])
        .map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.key.clone(),
            r.side.name().to_string(),
            r.phase.name().to_string(),
            r.ms.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_summary(summary: &SpeedupSummary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    let _ = write!(text, "{summary}");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
