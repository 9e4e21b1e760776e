//! Deduplicated, ordered store of convolution descriptors with CSV
//! persistence, class filtering and summary statistics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use crate::descriptor::{ConvClass, ConvDescriptor};
use crate::error::{Error, Result};

/// Exact header of convSet CSV files.
pub const CONVSET_HEADER: [&str; 19] = [
    "key",
    "batch",
    "in_channels",
    "in_h",
    "in_w",
    "out_channels",
    "k_h",
    "k_w",
    "stride_h",
    "stride_w",
    "pad_h",
    "pad_w",
    "dil_h",
    "dil_w",
    "groups",
    "has_bias",
    "out_h",
    "out_w",
    "flops",
];

/// Columns recomputed from the others; checked when present.
const DERIVED_COLUMNS: [&str; 4] = ["key", "out_h", "out_w", "flops"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvSet {
    entries: Vec<ConvDescriptor>,
    index: HashMap<String, usize>,
}

impl ConvSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `desc` unless an entry with the same key exists. Returns
    /// whether it was inserted.
    pub fn insert_unique(&mut self, desc: ConvDescriptor) -> Result<bool> {
        desc.validate()?;
        let key = desc.key();
        if self.index.contains_key(&key) {
            return Ok(false);
        }
        self.index.insert(key, self.entries.len());
        self.entries.push(desc);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ConvDescriptor] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ConvDescriptor> {
        self.entries.iter()
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn get(&self, key: &str) -> Option<&ConvDescriptor> {
        self.position(key).map(|i| &self.entries[i])
    }

    /// Order-preserving subset of entries accepted by `spec`.
    pub fn apply_filter(&self, spec: &FilterSpec) -> ConvSet {
        let mut out = ConvSet::new();
        for d in self.entries.iter().filter(|d| spec.accepts(d)) {
            out.index.insert(d.key(), out.entries.len());
            out.entries.push(*d);
        }
        out
    }

    pub fn stats(&self) -> ConvSetStats {
        let mut s = ConvSetStats::default();
        for d in &self.entries {
            let flags = d.classify();
            s.total += 1;
            s.pointwise += usize::from(flags.pointwise);
            s.grouped += usize::from(flags.grouped);
            s.dilated += usize::from(flags.dilated);
            s.rectangular += usize::from(flags.rectangular);
            s.regular += usize::from(flags.regular);
            s.irregular += usize::from(flags.any_irregular());
            s.padded += usize::from(d.pad_h > 0 || d.pad_w > 0);
            let (oh, ow) = d.output_shape_unchecked();
            widen(&mut s.input_hw, d.in_h.max(d.in_w) as u64);
            widen(&mut s.output_hw, oh.max(ow) as u64);
            widen(&mut s.kernel_hw, d.k_h.max(d.k_w) as u64);
            widen(&mut s.channels, d.in_channels.min(d.out_channels) as u64);
            widen(&mut s.channels, d.in_channels.max(d.out_channels) as u64);
            widen(&mut s.flops, d.flop_count().unwrap_or(0));
        }
        s
    }

    /// Loads a CSV file, deduplicating rows by key.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<ConvSet> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        let column = |name: &str| headers.iter().position(|h| h.trim() == name);
        let missing: Vec<String> = CONVSET_HEADER
            .iter()
            .filter(|name| !DERIVED_COLUMNS.contains(name) && column(name).is_none())
            .map(|s| s.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::SchemaMismatch {
                path: path.to_owned(),
                missing,
            });
        }
        let cols: Vec<Option<usize>> = CONVSET_HEADER.iter().map(|n| column(n)).collect();

        let mut set = ConvSet::new();
        let mut duplicates = 0usize;
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::csv(path, e))?;
            let desc = parse_row(&record, &cols).map_err(|msg| Error::Parse {
                path: path.to_owned(),
                row,
                msg,
            })?;
            for warning in desc.lint() {
                log::warn!("{}: row {row}: {warning}", path.display());
            }
            if !set.insert_unique(desc)? {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            log::info!("{}: dropped {duplicates} duplicate rows", path.display());
        }
        Ok(set)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(CONVSET_HEADER).map_err(|e| Error::csv(path, e))?;
        for d in &self.entries {
            let (oh, ow) = d.output_shape()?;
            let fields = [
                d.batch,
                d.in_channels,
                d.in_h,
                d.in_w,
                d.out_channels,
                d.k_h,
                d.k_w,
                d.stride_h,
                d.stride_w,
                d.pad_h,
                d.pad_w,
                d.dil_h,
                d.dil_w,
                d.groups,
                usize::from(d.has_bias),
                oh,
                ow,
            ];
            let mut record = vec![d.key()];
            record.extend(fields.iter().map(usize::to_string));
            record.push(d.flop_count()?.to_string());
            w.write_record(&record).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a ConvSet {
    type Item = &'a ConvDescriptor;
    type IntoIter = std::slice::Iter<'a, ConvDescriptor>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

fn widen(range: &mut Option<(u64, u64)>, v: u64) {
    *range = Some(match *range {
        None => (v, v),
        Some((lo, hi)) => (lo.min(v), hi.max(v)),
    });
}

fn parse_row(record: &csv::StringRecord, cols: &[Option<usize>]) -> Result<ConvDescriptor, String> {
    let field = |name_idx: usize| -> Option<&str> {
        cols[name_idx].and_then(|c| record.get(c)).map(str::trim)
    };
    let uint = |name_idx: usize| -> Result<usize, String> {
        let name = CONVSET_HEADER[name_idx];
        let raw = field(name_idx).ok_or_else(|| format!("missing {name}"))?;
        raw.parse::<usize>()
            .map_err(|_| format!("{name}: expected a non-negative integer, found {raw:?}"))
    };
    let has_bias = match field(15) {
        Some("0") => false,
        Some("1") => true,
        other => return Err(format!("has_bias must be 0 or 1, found {other:?}")),
    };
    let desc = ConvDescriptor {
        batch: uint(1)?,
        in_channels: uint(2)?,
        in_h: uint(3)?,
        in_w: uint(4)?,
        out_channels: uint(5)?,
        k_h: uint(6)?,
        k_w: uint(7)?,
        stride_h: uint(8)?,
        stride_w: uint(9)?,
        pad_h: uint(10)?,
        pad_w: uint(11)?,
        dil_h: uint(12)?,
        dil_w: uint(13)?,
        groups: uint(14)?,
        has_bias,
    };
    desc.validate().map_err(|e| e.to_string())?;

    if let Some(key) = field(0) {
        if key != desc.key() {
            return Err(format!("key {key:?} does not match fields ({})", desc.key()));
        }
    }
    let (oh, ow) = desc.output_shape_unchecked();
    let flops = desc.flop_count().map_err(|e| e.to_string())?;
    for (idx, expected) in [(16, oh as u64), (17, ow as u64), (18, flops)] {
        if cols[idx].is_some() {
            let found = uint(idx)? as u64;
            if found != expected {
                return Err(format!(
                    "{} is {found} but recomputes to {expected}",
                    CONVSET_HEADER[idx]
                ));
            }
        }
    }
    Ok(desc)
}

/// Selection criteria for [`ConvSet::apply_filter`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterSpec {
    /// Entry survives if any of its class flags is listed. Empty means all.
    pub classes: BTreeSet<ConvClass>,
    pub exclude_padded: bool,
    pub min_flops: Option<u64>,
    pub max_flops: Option<u64>,
    /// Keep only entries with this stride in both dimensions.
    pub stride: Option<usize>,
}

impl FilterSpec {
    pub fn classes(classes: impl IntoIterator<Item = ConvClass>) -> Self {
        FilterSpec {
            classes: classes.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn accepts(&self, d: &ConvDescriptor) -> bool {
        let flags = d.classify();
        if !self.classes.is_empty() && !self.classes.iter().any(|&c| flags.has(c)) {
            return false;
        }
        if self.exclude_padded && (d.pad_h != 0 || d.pad_w != 0) {
            return false;
        }
        if let Some(s) = self.stride {
            if d.stride_h != s || d.stride_w != s {
                return false;
            }
        }
        if self.min_flops.is_some() || self.max_flops.is_some() {
            let Ok(flops) = d.flop_count() else {
                return false;
            };
            if self.min_flops.is_some_and(|lo| flops < lo) || self.max_flops.is_some_and(|hi| flops > hi) {
                return false;
            }
        }
        true
    }
}

/// Class counts and min/max ranges over a convSet.
///
/// Class counts overlap: one entry may be both grouped and dilated.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConvSetStats {
    pub total: usize,
    pub pointwise: usize,
    pub grouped: usize,
    pub dilated: usize,
    pub rectangular: usize,
    pub regular: usize,
    /// Entries with at least one of pointwise, grouped, dilated, rectangular.
    pub irregular: usize,
    pub padded: usize,
    pub input_hw: Option<(u64, u64)>,
    pub output_hw: Option<(u64, u64)>,
    pub kernel_hw: Option<(u64, u64)>,
    pub channels: Option<(u64, u64)>,
    pub flops: Option<(u64, u64)>,
}

impl ConvSetStats {
    pub fn count(&self, class: ConvClass) -> usize {
        match class {
            ConvClass::Pointwise => self.pointwise,
            ConvClass::Grouped => self.grouped,
            ConvClass::Dilated => self.dilated,
            ConvClass::Rectangular => self.rectangular,
            ConvClass::Regular => self.regular,
        }
    }
}

impl fmt::Display for ConvSetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total        {}", self.total)?;
        for class in ConvClass::ALL {
            writeln!(f, "{:<12} {}", class.name(), self.count(class))?;
        }
        writeln!(f, "non-pointwise {}", self.total - self.pointwise)?;
        writeln!(f, "padded       {}", self.padded)?;
        let range = |r: Option<(u64, u64)>| match r {
            Some((lo, hi)) => format!("{lo}..={hi}"),
            None => "-".to_string(),
        };
        writeln!(f, "input hw     {}", range(self.input_hw))?;
        writeln!(f, "output hw    {}", range(self.output_hw))?;
        writeln!(f, "kernel hw    {}", range(self.kernel_hw))?;
        writeln!(f, "channels     {}", range(self.channels))?;
        write!(f, "flops        {}", range(self.flops))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn crafted() -> ConvSet {
        let mut s = ConvSet::new();
        for d in [
            ConvDescriptor::new(8, 14, 14, 16, 1, 1),
            ConvDescriptor::new(16, 7, 7, 32, 1, 1).with_stride(2, 2),
            ConvDescriptor::new(3, 28, 28, 8, 1, 1).with_bias(true),
            ConvDescriptor::new(8, 14, 14, 8, 3, 3).with_groups(8).with_pad(1, 1),
            ConvDescriptor::new(8, 14, 14, 8, 3, 3),
        ] {
            assert!(s.insert_unique(d).unwrap());
        }
        s
    }

    #[test]
    fn insert_dedups() {
        let d = ConvDescriptor::new(3, 8, 8, 4, 3, 3);
        let mut s = ConvSet::new();
        assert!(s.insert_unique(d).unwrap());
        assert!(!s.insert_unique(d).unwrap());
        assert_eq!(s.len(), 1);
        let d2 = d.with_pad(1, 1);
        assert!(s.insert_unique(d2).unwrap());
        assert_eq!(s.entries(), &[d, d2]);
        assert_eq!(s.position(&d2.key()), Some(1));
        assert!(s.insert_unique(ConvDescriptor::new(0, 8, 8, 4, 3, 3)).is_err());
    }

    #[test]
    fn filter_examples() {
        let s = crafted();
        assert_eq!(s.apply_filter(&FilterSpec::default()), s);
        assert_eq!(s.apply_filter(&FilterSpec::classes([ConvClass::Pointwise])).len(), 3);

        let mut two = ConvSet::new();
        let padded = ConvDescriptor::new(4, 9, 9, 4, 3, 3).with_pad(1, 1);
        let unpadded = ConvDescriptor::new(4, 9, 9, 4, 3, 3);
        two.insert_unique(padded).unwrap();
        two.insert_unique(unpadded).unwrap();
        let spec = FilterSpec {
            exclude_padded: true,
            ..FilterSpec::classes([ConvClass::Regular])
        };
        assert_eq!(two.apply_filter(&spec).entries(), &[unpadded]);
    }

    #[test]
    fn flop_and_stride_filters() {
        let s = crafted();
        let flops: Vec<u64> = s.iter().map(|d| d.flop_count().unwrap()).collect();
        let lo = flops[1];
        let spec = FilterSpec {
            min_flops: Some(lo),
            max_flops: Some(lo),
            ..Default::default()
        };
        assert!(s.apply_filter(&spec).iter().all(|d| d.flop_count().unwrap() == lo));
        let strided = FilterSpec {
            stride: Some(2),
            ..Default::default()
        };
        assert_eq!(s.apply_filter(&strided).len(), 1);
    }

    #[test]
    fn stats_examples() {
        let st = crafted().stats();
        assert_eq!((st.total, st.pointwise, st.grouped, st.regular), (5, 3, 1, 1));
        assert_eq!(st.regular + st.irregular, st.total);
        assert_eq!(st.kernel_hw, Some((1, 3)));
        assert_eq!(ConvSet::new().stats(), ConvSetStats::default());
    }

    #[test]
    fn disjoint_class_filters_compose_to_empty() {
        let s = crafted();
        let pw = s.apply_filter(&FilterSpec::classes([ConvClass::Pointwise]));
        assert!(pw.apply_filter(&FilterSpec::classes([ConvClass::Regular])).is_empty());
    }

    #[test]
    fn csv_round_trip_and_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csv");
        let s = crafted();
        s.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&CONVSET_HEADER.join(",")));
        assert_eq!(ConvSet::load_csv(&path).unwrap(), s);

        std::fs::write(&path, format!("{}\n", CONVSET_HEADER.join(","))).unwrap();
        assert!(ConvSet::load_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let header = CONVSET_HEADER.join(",");
        std::fs::write(
            &path,
            format!("{header}\nn1_c3x8x8_f4x3x3_s1x1_p0x0_d1x1_g1_b0,1,3,8,8,4,3,3,1,1,0,0,1,1,1,0,6,6,7776\nn1_c0x8x8_f4x3x3_s1x1_p0x0_d1x1_g1_b0,1,0,8,8,4,3,3,1,1,0,0,1,1,1,0,6,6,0\n"),
        )
        .unwrap();
        match ConvSet::load_csv(&path) {
            Err(Error::Parse { row, msg, .. }) => {
                assert_eq!(row, 2);
                assert!(msg.contains("in_channels"), "{msg}");
            }
            other => panic!("{other:?}"),
        }

        std::fs::write(&path, "batch,in_channels\n1,3\n").unwrap();
        match ConvSet::load_csv(&path) {
            Err(Error::SchemaMismatch { missing, .. }) => {
                assert!(missing.contains(&"in_h".to_string()));
                assert!(!missing.contains(&"batch".to_string()));
            }
            other => panic!("{other:?}"),
        }

        // Stale derived column.
        std::fs::write(
            &path,
            format!("{header}\nn1_c3x8x8_f4x3x3_s1x1_p0x0_d1x1_g1_b0,1,3,8,8,4,3,3,1,1,0,0,1,1,1,0,6,6,999\n"),
        )
        .unwrap();
        assert!(matches!(ConvSet::load_csv(&path), Err(Error::Parse { row: 1, .. })));

        // Key that disagrees with the fields.
        std::fs::write(
            &path,
            format!("{header}\nn1_c3x8x8_f4x3x3_s1x1_p1x1_d1x1_g1_b0,1,3,8,8,4,3,3,1,1,0,0,1,1,1,0,6,6,7776\n"),
        )
        .unwrap();
        assert!(matches!(ConvSet::load_csv(&path), Err(Error::Parse { row: 1, .. })));

        assert!(matches!(
            ConvSet::load_csv(dir.path().join("absent.csv")),
            Err(e) if e.is_io_or_schema()
        ));
    }

    #[test]
    fn derived_columns_are_optional() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("min.csv");
        let base: Vec<&str> = CONVSET_HEADER
            .iter()
            .copied()
            .filter(|c| !DERIVED_COLUMNS.contains(c))
            .collect();
        std::fs::write(&path, format!("{}\n1,3,8,8,4,3,3,1,1,0,0,1,1,1,0\n", base.join(","))).unwrap();
        let s = ConvSet::load_csv(&path).unwrap();
        assert_eq!(s.entries(), &[ConvDescriptor::new(3, 8, 8, 4, 3, 3)]);
    }

    fn arb_desc() -> impl Strategy<Value = ConvDescriptor> {
        (1usize..4, 1usize..12, 1usize..4, 1usize..4, 0usize..2, 1usize..3, 1usize..3, any::<bool>()).prop_map(
            |(c, hw, kh, kw, pad, stride, groups, bias)| {
                ConvDescriptor::new(c * groups, hw + 4, hw + 3, 2 * groups, kh, kw)
                    .with_pad(pad, pad)
                    .with_stride(stride, stride)
                    .with_groups(groups)
                    .with_bias(bias)
            },
        )
    }

    fn arb_spec() -> impl Strategy<Value = FilterSpec> {
        (
            proptest::collection::btree_set(proptest::sample::select(ConvClass::ALL.to_vec()), 0..3),
            any::<bool>(),
            proptest::option::of(0u64..20_000),
        )
            .prop_map(|(classes, exclude_padded, max_flops)| FilterSpec {
                classes,
                exclude_padded,
                max_flops,
                ..Default::default()
            })
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(ds in proptest::collection::vec(arb_desc(), 0..30), spec in arb_spec()) {
            let mut s = ConvSet::new();
            for d in ds {
                s.insert_unique(d).unwrap();
            }
            let once = s.apply_filter(&spec);
            prop_assert_eq!(once.apply_filter(&spec), once.clone());
            let st = s.stats();
            prop_assert_eq!(st.regular + st.irregular, st.total);
        }

        #[test]
        fn load_size_bounded_by_rows(ds in proptest::collection::vec(arb_desc(), 1..20), reps in 1usize..3) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rows.csv");
            let mut rows = Vec::new();
            for d in &ds {
                for _ in 0..reps {
                    rows.push(*d);
                }
            }
            let mut text = CONVSET_HEADER.join(",");
            text.push('\n');
            for d in &rows {
                let (oh, ow) = d.output_shape().unwrap();
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    d.key(), d.batch, d.in_channels, d.in_h, d.in_w, d.out_channels, d.k_h, d.k_w,
                    d.stride_h, d.stride_w, d.pad_h, d.pad_w, d.dil_h, d.dil_w, d.groups,
                    u8::from(d.has_bias), oh, ow, d.flop_count().unwrap()
                ));
            }
            std::fs::write(&path, text).unwrap();
            let loaded = ConvSet::load_csv(&path).unwrap();
            let distinct: BTreeSet<String> = rows.iter().map(ConvDescriptor::key).collect();
            prop_assert!(loaded.len() <= rows.len());
            prop_assert_eq!(loaded.len(), distinct.len());
            prop_assert_eq!(loaded.len() == rows.len(), distinct.len() == rows.len());
        }
    }
}
