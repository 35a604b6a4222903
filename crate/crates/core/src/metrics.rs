//! Interval matching and the speaker-then-class macro-averaged scores.
//!
//! A prediction and a ground-truth segment of the same class match when
//! their IoU exceeds 0.5. Counts are summed per speaker and class, turned
//! into F1 and recall, averaged over speakers that have ground truth for the
//! class, and finally averaged over classes. Onset error is the mean
//! `|pred.start - gt.start|` over matched pairs, aggregated the same way.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::boundary::Segment;
use crate::error::{Error, Result};

pub const IOU_THRESHOLD: f64 = 0.5;

pub fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end_s.min(b.end_s) - a.start_s.max(b.start_s)).max(0.0);
    let union = a.duration() + b.duration() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClipScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub onset_errors: Vec<f64>,
    pub matches: Vec<Match>,
}

/// Greedy one-to-one matching in descending IoU order. Pairs at or below the
/// threshold never match. Equal IoUs are taken in (pred, gt) index order.
pub fn evaluate_clip(pred: &[Segment], gt: &[Segment]) -> ClipScore {
    let mut pairs: Vec<Match> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let v = iou(p, g);
            if v > IOU_THRESHOLD {
                pairs.push(Match { pred: i, gt: j, iou: v });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut score = ClipScore::default();
    for m in pairs {
        if pred_used[m.pred] || gt_used[m.gt] {
            continue;
        }
        pred_used[m.pred] = true;
        gt_used[m.gt] = true;
        score
            .onset_errors
            .push((pred[m.pred].start_s - gt[m.gt].start_s).abs());
        score.matches.push(m);
    }
    score.tp = score.matches.len();
    score.fp = pred.len() - score.tp;
    score.fn_ = gt.len() - score.tp;
    score
}

pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f1 = if tp == 0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// Predicted and reference segments of one clip.
#[derive(Debug, Clone)]
pub struct EvalClip {
    pub clip_id: String,
    pub speaker_id: String,
    pub pred: Vec<Segment>,
    pub gt: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeakerClassScore {
    pub speaker: String,
    pub class: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub onset_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore {
    pub class: String,
    pub speakers: usize,
    pub f1: f64,
    pub recall: f64,
    pub onset_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverallScore {
    pub f1: f64,
    pub recall: f64,
    pub onset_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchRecord {
    pub clip_id: String,
    pub class: String,
    pub pred_start_s: f64,
    pub pred_end_s: f64,
    pub gt_start_s: f64,
    pub gt_end_s: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_speaker: Vec<SpeakerClassScore>,
    pub per_class: Vec<ClassScore>,
    pub overall: OverallScore,
    pub matches: Vec<MatchRecord>,
    pub notes: Vec<String>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[derive(Default)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
    onsets: Vec<f64>,
}

/// Scores a corpus. `classes` lists the dysfluency classes to report, in
/// column order; segments with other labels are ignored.
pub fn macro_report(clips: &[EvalClip], classes: &[String]) -> Result<EvalReport> {
    let mut tallies: BTreeMap<(String, String), Tally> = BTreeMap::new();
    let mut matches = Vec::new();
    for clip in clips {
        for class in classes {
            let pred: Vec<Segment> = clip.pred.iter().filter(|s| &s.label == class).cloned().collect();
            let gt: Vec<Segment> = clip.gt.iter().filter(|s| &s.label == class).cloned().collect();
            if pred.is_empty() && gt.is_empty() {
                continue;
            }
            let score = evaluate_clip(&pred, &gt);
            for m in &score.matches {
                matches.push(MatchRecord {
                    clip_id: clip.clip_id.clone(),
                    class: class.clone(),
                    pred_start_s: pred[m.pred].start_s,
                    pred_end_s: pred[m.pred].end_s,
                    gt_start_s: gt[m.gt].start_s,
                    gt_end_s: gt[m.gt].end_s,
                    iou: m.iou,
                });
            }
            let t = tallies
                .entry((clip.speaker_id.clone(), class.clone()))
                .or_default();
            t.tp += score.tp;
            t.fp += score.fp;
            t.fn_ += score.fn_;
            t.onsets.extend(score.onset_errors);
        }
    }

    let mut per_speaker = Vec::new();
    for ((speaker, class), t) in &tallies {
        let (precision, recall, f1) = precision_recall_f1(t.tp, t.fp, t.fn_);
        per_speaker.push(SpeakerClassScore {
            speaker: speaker.clone(),
            class: class.clone(),
            tp: t.tp,
            fp: t.fp,
            fn_: t.fn_,
            precision,
            recall,
            f1,
            onset_error: mean(&t.onsets),
        });
    }

    let mut per_class = Vec::new();
    for class in classes {
        let rows: Vec<&SpeakerClassScore> = per_speaker
            .iter()
            .filter(|s| &s.class == class && s.tp + s.fn_ > 0)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let f1s: Vec<f64> = rows.iter().map(|s| s.f1).collect();
        let recalls: Vec<f64> = rows.iter().map(|s| s.recall).collect();
        let onsets: Vec<f64> = rows.iter().filter_map(|s| s.onset_error).collect();
        per_class.push(ClassScore {
            class: class.clone(),
            speakers: rows.len(),
            f1: mean(&f1s).unwrap(),
            recall: mean(&recalls).unwrap(),
            onset_error: mean(&onsets),
        });
    }
    if per_class.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let f1s: Vec<f64> = per_class.iter().map(|c| c.f1).collect();
    let recalls: Vec<f64> = per_class.iter().map(|c| c.recall).collect();
    let onsets: Vec<f64> = per_class.iter().filter_map(|c| c.onset_error).collect();
    Ok(EvalReport {
        per_speaker,
        per_class,
        overall: OverallScore {
            f1: mean(&f1s).unwrap(),
            recall: mean(&recalls).unwrap(),
            onset_error: mean(&onsets),
        },
        matches,
        notes: vec![
            "onset error averages matched pairs only; unmatched ground truth adds no onset sample"
                .into(),
        ],
    })
}

impl EvalReport {
    pub fn class_f1(&self, class: &str) -> Option<f64> {
        self.per_class.iter().find(|c| c.class == class).map(|c| c.f1)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{:.1}", 100.0 * x))
}

/// Table with one row per method: class-wise t-F1, then overall t-F1,
/// t-recall (percent) and onset error (seconds).
pub fn render_table(rows: &[(String, &EvalReport)], classes: &[String]) -> String {
    let mut header = vec!["Method".to_string()];
    header.extend(classes.iter().cloned());
    header.extend(["T-F1".into(), "T-recall".into(), "Onset E. (s)".into()]);
    let mut body: Vec<Vec<String>> = Vec::new();
    for (name, report) in rows {
        let mut cells = vec![name.clone()];
        cells.extend(classes.iter().map(|c| pct(report.class_f1(c))));
        cells.push(pct(Some(report.overall.f1)));
        cells.push(pct(Some(report.overall.recall)));
        cells.push(
            report
                .overall
                .onset_error
                .map_or_else(|| "n/a".into(), |v| format!("{v:.3}")),
        );
        body.push(cells);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|k| {
            body.iter()
                .map(|r| r[k].len())
                .chain([header[k].len()])
                .max()
                .unwrap()
        })
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (k, c) in cells.iter().enumerate() {
            if k == 0 {
                let _ = write!(s, "{:<w$}", c, w = widths[k]);
            } else {
                let _ = write!(s, "  {:>w$}", c, w = widths[k]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
    }
    out
}
