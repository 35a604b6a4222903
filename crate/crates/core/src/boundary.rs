//! Turns per-window dysfluency decisions into labelled time segments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::WindowConfig;

/// Label carried by segments before a class has been attached.
pub const UNTYPED_LABEL: &str = "dysfluent";

/// Slack for comparing times built from `index * stride` arithmetic.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
}

impl Segment {
    pub fn new(start_s: f64, end_s: f64, label: impl Into<String>) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite() && 0.0 <= start_s && start_s < end_s) {
            return Err(Error::InvalidConfig(format!(
                "segment needs 0 <= start < end, got [{start_s}, {end_s}]"
            )));
        }
        Ok(Self {
            start_s,
            end_s,
            label: label.into(),
        })
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryOrder {
    #[default]
    MergeThenFilter,
    FilterThenMerge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryConfig {
    pub eta_s: f64,
    pub order: BoundaryOrder,
}

impl BoundaryConfig {
    pub fn new(eta_s: f64) -> Result<Self> {
        let cfg = Self {
            eta_s,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_s.is_finite() && self.eta_s >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eta must be a non-negative number of seconds, got {}",
                self.eta_s
            )));
        }
        Ok(())
    }
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            eta_s: 0.2,
            order: BoundaryOrder::MergeThenFilter,
        }
    }
}

/// Maximal runs of `true` as inclusive `(first, last)` window index pairs.
pub fn dysfluent_runs(window_labels: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &flag) in window_labels.iter().enumerate() {
        match (flag, open) {
            (true, None) => open = Some(i),
            (false, Some(first)) => {
                runs.push((first, i - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(first) = open {
        runs.push((first, window_labels.len() - 1));
    }
    runs
}

fn merge_gaps(segments: Vec<Segment>, eta_s: f64) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for seg in segments {
        match out.last_mut() {
            Some(prev) if seg.start_s - prev.end_s <= eta_s + TIME_EPS => {
                prev.end_s = prev.end_s.max(seg.end_s);
            }
            _ => out.push(seg),
        }
    }
    out
}

fn drop_short(segments: Vec<Segment>, eta_s: f64) -> Vec<Segment> {
    segments
        .into_iter()
        .filter(|s| s.duration() > eta_s + TIME_EPS)
        .collect()
}

/// Gap merging and short-segment removal on segments sorted by start.
pub fn merge_and_filter(mut segments: Vec<Segment>, cfg: &BoundaryConfig) -> Vec<Segment> {
    segments.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    match cfg.order {
        BoundaryOrder::MergeThenFilter => drop_short(merge_gaps(segments, cfg.eta_s), cfg.eta_s),
        BoundaryOrder::FilterThenMerge => merge_gaps(drop_short(segments, cfg.eta_s), cfg.eta_s),
    }
}

/// Untyped segments covering the dysfluent windows.
pub fn extract_segments(
    window_labels: &[bool],
    wcfg: &WindowConfig,
    bcfg: &BoundaryConfig,
) -> Vec<Segment> {
    let raw = dysfluent_runs(window_labels)
        .into_iter()
        .map(|(first, last)| Segment {
            start_s: wcfg.start_of(first),
            end_s: wcfg.end_of(last),
            label: UNTYPED_LABEL.to_string(),
        })
        .collect();
    merge_and_filter(raw, bcfg)
}

/// Indices of windows lying entirely inside `seg`.
pub fn windows_inside(seg: &Segment, window_count: usize, wcfg: &WindowConfig) -> Vec<usize> {
    (0..window_count)
        .filter(|&i| {
            wcfg.start_of(i) >= seg.start_s - TIME_EPS && wcfg.end_of(i) <= seg.end_s + TIME_EPS
        })
        .collect()
}

/// Labels each segment with the most frequent top class among its windows.
///
/// `top_class[i]` indexes `class_names`. Ties go to the lower class index.
pub fn attach_labels(
    segments: &mut [Segment],
    top_class: &[usize],
    class_names: &[String],
    wcfg: &WindowConfig,
) {
    for seg in segments.iter_mut() {
        let mut votes = vec![0usize; class_names.len()];
        for i in windows_inside(seg, top_class.len(), wcfg) {
            votes[top_class[i]] += 1;
        }
        let best = votes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .filter(|(_, &v)| v > 0)
            .map(|(k, _)| k);
        if let Some(k) = best {
            seg.label = class_names[k].clone();
        }
    }
}

/// One line of a segment file.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub clip_id: String,
    pub segment: Segment,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    clip_id: String,
    start_s: String,
    end_s: String,
    label: String,
}

pub fn write_segments(path: &Path, records: &[SegmentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(CsvRow {
            clip_id: r.clip_id.clone(),
            start_s: format!("{:.3}", r.segment.start_s),
            end_s: format!("{:.3}", r.segment.end_s),
            label: r.segment.label.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_segments(path: &Path) -> Result<Vec<SegmentRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (idx, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 2,
            reason,
        };
        let start: f64 = row.start_s.parse().map_err(|e| err(format!("start_s: {e}")))?;
        let end: f64 = row.end_s.parse().map_err(|e| err(format!("end_s: {e}")))?;
        let segment = Segment::new(start, end, row.label).map_err(|e| err(e.to_string()))?;
        out.push(SegmentRecord {
            clip_id: row.clip_id,
            segment,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(a: f64, b: f64) -> Segment {
        Segment::new(a, b, UNTYPED_LABEL).unwrap()
    }

    fn close(a: &[Segment], b: &[(f64, f64)]) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(s, &(x, y))| (s.start_s - x).abs() < 1e-9 && (s.end_s - y).abs() < 1e-9)
    }

    #[test]
    fn single_run() {
        let mut labels = vec![false; 20];
        labels[4..=7].iter_mut().for_each(|l| *l = true);
        let out = extract_segments(&labels, &WindowConfig::default(), &BoundaryConfig::default());
        assert!(close(&out, &[(0.40, 1.45)]), "{out:?}");
    }

    #[test]
    fn no_dysfluent_windows() {
        let out = extract_segments(&[false; 30], &WindowConfig::default(), &BoundaryConfig::default());
        assert!(out.is_empty());
    }

    #[test]
    fn merge_then_drop() {
        let cfg = BoundaryConfig::new(0.2).unwrap();
        let out = merge_and_filter(vec![seg(0.4, 1.45), seg(1.6, 2.3), seg(3.0, 3.15)], &cfg);
        assert!(close(&out, &[(0.40, 2.30)]), "{out:?}");
    }

    #[test]
    fn order_matters_for_short_pieces() {
        let pieces = vec![seg(1.0, 1.15), seg(1.3, 1.45)];
        let merge_first = merge_and_filter(pieces.clone(), &BoundaryConfig::new(0.2).unwrap());
        let filter_first = merge_and_filter(
            pieces,
            &BoundaryConfig {
                eta_s: 0.2,
                order: BoundaryOrder::FilterThenMerge,
            },
        );
        assert!(close(&merge_first, &[(1.0, 1.45)]));
        assert!(filter_first.is_empty());
    }

    #[test]
    fn overlapping_runs_are_merged() {
        let mut labels = vec![false; 30];
        labels[2] = true;
        labels[5] = true;
        let out = extract_segments(&labels, &WindowConfig::default(), &BoundaryConfig::default());
        assert!(close(&out, &[(0.2, 1.25)]), "{out:?}");
    }

    #[test]
    fn majority_label() {
        let names: Vec<String> = ["fluent", "a", "b"].map(String::from).to_vec();
        let wcfg = WindowConfig::default();
        let mut segs = vec![seg(0.0, 0.95), seg(1.0, 1.75)];
        let top = vec![1, 2, 2, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2];
        attach_labels(&mut segs, &top, &names, &wcfg);
        // First segment holds windows 0..=2, second holds window 10 only.
        assert_eq!(segs[0].label, "b");
        assert_eq!(segs[1].label, "b");
    }

    #[test]
    fn csv_round_trip_is_three_decimal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("segments.csv");
        let records = vec![
            SegmentRecord {
                clip_id: "c1".into(),
                segment: Segment::new(0.4, 1.4500000001, "block").unwrap(),
            },
            SegmentRecord {
                clip_id: "c2".into(),
                segment: Segment::new(2.0, 3.25, "repetition").unwrap(),
            },
        ];
        write_segments(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "clip_id,start_s,end_s,label\nc1,0.400,1.450,block\nc2,2.000,3.250,repetition\n"
        );
        let back = read_segments(&path).unwrap();
        assert_eq!(back[1], records[1]);
        assert_eq!(back[0].segment.end_s, 1.45);
    }

    #[test]
    fn invalid_segments() {
        assert!(Segment::new(1.0, 1.0, "x").is_err());
        assert!(Segment::new(-0.1, 1.0, "x").is_err());
        assert!(BoundaryConfig::new(-0.1).is_err());
    }

    proptest! {
        #[test]
        fn output_is_sorted_disjoint_and_long(
            labels in proptest::collection::vec(proptest::bool::weighted(0.2), 1..120),
            eta in 0.0f64..1.0,
            stride_frac in 0.1f64..1.0,
        ) {
            let wcfg = WindowConfig::new(0.75, 0.75 * stride_frac).unwrap();
            let bcfg = BoundaryConfig::new(eta).unwrap();
            let out = extract_segments(&labels, &wcfg, &bcfg);
            for s in &out {
                prop_assert!(s.duration() > eta);
            }
            for pair in out.windows(2) {
                prop_assert!(pair[1].start_s - pair[0].end_s > eta);
            }
        }

        #[test]
        fn extraction_is_idempotent(
            labels in proptest::collection::vec(proptest::bool::weighted(0.25), 1..120),
            eta in 0.0f64..0.5,
        ) {
            let wcfg = WindowConfig::default();
            let bcfg = BoundaryConfig::new(eta).unwrap();
            let out = extract_segments(&labels, &wcfg, &bcfg);
            let mut implied = vec![false; labels.len()];
            for s in &out {
                for i in windows_inside(s, labels.len(), &wcfg) {
                    implied[i] = true;
                }
            }
            let again = extract_segments(&implied, &wcfg, &bcfg);
            prop_assert_eq!(out, again);
        }

        #[test]
        fn adding_a_window_never_shrinks_coverage(
            labels in proptest::collection::vec(proptest::bool::weighted(0.3), 2..80),
            pick in any::<proptest::sample::Index>(),
        ) {
            let wcfg = WindowConfig::default();
            let bcfg = BoundaryConfig { eta_s: 0.2, order: BoundaryOrder::MergeThenFilter };
            let cover = |l: &[bool]| -> f64 {
                let raw = dysfluent_runs(l)
                    .into_iter()
                    .map(|(a, b)| seg(wcfg.start_of(a), wcfg.end_of(b)))
                    .collect();
                merge_gaps(raw, bcfg.eta_s).iter().map(Segment::duration).sum()
            };
            let mut more = labels.clone();
            more[pick.index(labels.len())] = true;
            prop_assert!(cover(&more) + 1e-9 >= cover(&labels));
        }
    }
}
