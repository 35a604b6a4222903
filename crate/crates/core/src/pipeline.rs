//! End-to-end segmentation of corpora: configuration, per-clip processing
//! for every variant, oracle training from a corpus, evaluation and the
//! ablation grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{fuzzy_cmeans2, kmeans2, DEFAULT_FUZZIFIER};
use crate::boundary::{
    attach_labels, extract_segments, BoundaryConfig, BoundaryOrder, Segment, SegmentRecord,
};
use crate::error::{Error, Result};
use crate::fusion::{apply_floor, fuse, FusionConfig};
use crate::metrics::{macro_report, render_table, EvalClip, EvalReport};
use crate::oracle::{
    build_w2, node_is_dysfluent, prob_mask, top_classes, train, weak_target, EpochLog,
    LabelledWindows, McPrediction, OracleModel, TrainConfig, FLUENT_LABEL,
};
use crate::similarity::{build_w1, SimilarityMatrix};
use crate::spectral::{fiedler, identify_dysfluent_cluster, partition, Partition, Side, ThresholdMode};
use crate::store::{manifest_path, read_embeddings, read_manifest, ClipManifest, EmbeddingMatrix, EMBEDDING_EXTENSION};
use crate::synth::{embedding_file, read_classes, read_index, Split, INDEX_FILE};
use crate::windowing::WindowConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Classifier guidance weighted by the entropy mask.
    #[default]
    Full,
    /// Guidance weighted by the largest class probability when it is >= 0.5.
    ProbMask,
    /// Guidance everywhere (`M = 1`).
    NoMask,
    /// Embedding graph only.
    PureNcut,
    Kmeans,
    FuzzyCmeans,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::ProbMask,
        Variant::NoMask,
        Variant::PureNcut,
        Variant::Kmeans,
        Variant::FuzzyCmeans,
    ];

    pub fn is_spectral(self) -> bool {
        !matches!(self, Variant::Kmeans | Variant::FuzzyCmeans)
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Full => "SCut",
            Variant::ProbMask => "SCut [M P>=0.5]",
            Variant::NoMask => "SCut [-M]",
            Variant::PureNcut => "SCut [-M -C]",
            Variant::Kmeans => "K-means",
            Variant::FuzzyCmeans => "Fuzzy C-means",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::ProbMask => "prob_mask",
            Variant::NoMask => "no_mask",
            Variant::PureNcut => "pure_ncut",
            Variant::Kmeans => "kmeans",
            Variant::FuzzyCmeans => "fuzzy_cmeans",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown variant {s:?}; expected one of full, prob_mask, no_mask, pure_ncut, kmeans, fuzzy_cmeans"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub window: WindowConfig,
    pub fusion: FusionConfig,
    pub boundary: BoundaryConfig,
    pub threshold: ThresholdMode,
    pub mc_passes: usize,
    pub variant: Variant,
    pub checkpoint: Option<PathBuf>,
    pub fuzzifier: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            fusion: FusionConfig::default(),
            boundary: BoundaryConfig::default(),
            threshold: ThresholdMode::Sign,
            mc_passes: 100,
            variant: Variant::Full,
            checkpoint: None,
            fuzzifier: DEFAULT_FUZZIFIER,
            seed: 0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key} = {value:?}: {e}")))
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 12] = [
        "window_length_s",
        "window_stride_s",
        "tau",
        "floor",
        "eta_s",
        "boundary_order",
        "threshold",
        "mc_passes",
        "variant",
        "checkpoint",
        "fuzzifier",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "window_length_s" => self.window.length_s = parse_num(key, value)?,
            "window_stride_s" => self.window.stride_s = parse_num(key, value)?,
            "tau" => self.fusion.tau = parse_num(key, value)?,
            "floor" => self.fusion.floor_value = parse_num(key, value)?,
            "eta_s" => self.boundary.eta_s = parse_num(key, value)?,
            "boundary_order" => {
                self.boundary.order = match value {
                    "merge_then_filter" => BoundaryOrder::MergeThenFilter,
                    "filter_then_merge" => BoundaryOrder::FilterThenMerge,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "boundary_order must be merge_then_filter or filter_then_merge, got {other:?}"
                        )))
                    }
                }
            }
            "threshold" => self.threshold = value.parse()?,
            "mc_passes" => self.mc_passes = parse_num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "fuzzifier" => self.fuzzifier = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown configuration key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                reason: "expected key = value".into(),
            })?;
            self.set(k.trim(), v).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.fusion.validate()?;
        self.boundary.validate()?;
        if self.mc_passes == 0 {
            return Err(Error::InvalidConfig("mc_passes must be positive".into()));
        }
        if !(self.fuzzifier.is_finite() && self.fuzzifier > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fuzzifier must exceed 1, got {}",
                self.fuzzifier
            )));
        }
        Ok(())
    }
}

/// Intermediate quantities of one clip, dumped with `--audit`.
#[derive(Debug, Clone, Serialize)]
pub struct ClipAudit {
    pub clip_id: String,
    pub variant: Variant,
    pub w1: Vec<Vec<f64>>,
    pub w2: Option<Vec<Vec<f64>>>,
    pub mask: Option<Vec<f64>>,
    pub w_tilde: Option<Vec<Vec<f64>>>,
    pub y1: Option<Vec<f64>>,
    pub eigenvalues: Option<Vec<f64>>,
    pub partition: Vec<Side>,
    pub dysfluent_side: Option<Side>,
    pub node_flags: Vec<bool>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

#[derive(Debug, Clone)]
pub struct ClipOutput {
    pub segments: Vec<Segment>,
    pub predictions: Vec<McPrediction>,
    pub audit: Option<ClipAudit>,
}

/// Runs one clip through the configured variant. `stream` selects the MC
/// dropout random stream so clips are independent of processing order.
pub fn segment_clip(
    embeddings: &EmbeddingMatrix,
    manifest: &ClipManifest,
    model: &OracleModel,
    cfg: &PipelineConfig,
    stream: u64,
    want_audit: bool,
) -> Result<ClipOutput> {
    if manifest.window != cfg.window {
        return Err(Error::InvalidConfig(format!(
            "clip {} was windowed with l={} r={}, pipeline expects l={} r={}",
            manifest.clip_id,
            manifest.window.length_s,
            manifest.window.stride_s,
            cfg.window.length_s,
            cfg.window.stride_s
        )));
    }
    let n = embeddings.rows();
    let windows = manifest.window_count()?;
    if n != windows {
        return Err(Error::RowCountMismatch { rows: n, windows });
    }
    let x = embeddings.to_array();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let preds = model.mc_predict_batch(x.view(), cfg.mc_passes, &mut rng)?;
    let flags: Vec<bool> = preds.iter().map(node_is_dysfluent).collect();
    let p_max: Vec<f64> = preds.iter().map(McPrediction::p_max).collect();

    let w1 = build_w1(embeddings)?;
    let mut audit = want_audit.then(|| ClipAudit {
        clip_id: manifest.clip_id.clone(),
        variant: cfg.variant,
        w1: rows(w1.weights()),
        w2: None,
        mask: None,
        w_tilde: None,
        y1: None,
        eigenvalues: None,
        partition: Vec::new(),
        dysfluent_side: None,
        node_flags: flags.clone(),
    });

    let node_labels = if n == 1 {
        // A single window cannot be cut; trust the classifier.
        flags.clone()
    } else {
        let part = if cfg.variant.is_spectral() {
            let w_tilde = spectral_graph(&w1, &preds, cfg, audit.as_mut())?;
            let sol = fiedler(&w_tilde)?;
            if let Some(a) = audit.as_mut() {
                a.w_tilde = Some(rows(w_tilde.weights()));
                a.y1 = Some(sol.y1.clone());
                a.eigenvalues = Some(sol.eigenvalues.clone());
            }
            partition(&sol, cfg.threshold)?
        } else {
            let assignment = if cfg.variant == Variant::Kmeans {
                kmeans2(x.view(), cfg.seed)?
            } else {
                fuzzy_cmeans2(x.view(), cfg.fuzzifier, cfg.seed)?
            };
            Partition::from_labels(
                assignment
                    .labels
                    .iter()
                    .map(|&l| if l == 0 { Side::S1 } else { Side::S2 })
                    .collect(),
            )
        };
        let part = identify_dysfluent_cluster(&part, &flags, &p_max)?;
        if let Some(a) = audit.as_mut() {
            a.partition = part.labels.clone();
            a.dysfluent_side = part.dysfluent_side;
        }
        part.dysfluent_nodes()
    };

    let mut segments = extract_segments(&node_labels, &cfg.window, &cfg.boundary);
    attach_labels(&mut segments, &top_classes(&preds), model.class_names(), &cfg.window);
    Ok(ClipOutput {
        segments,
        predictions: preds,
        audit,
    })
}

fn spectral_graph(
    w1: &SimilarityMatrix,
    preds: &[McPrediction],
    cfg: &PipelineConfig,
    audit: Option<&mut ClipAudit>,
) -> Result<SimilarityMatrix> {
    let mask: Vec<f64> = match cfg.variant {
        Variant::Full => preds.iter().map(|p| p.mask).collect(),
        Variant::ProbMask => prob_mask(preds),
        Variant::NoMask => vec![1.0; preds.len()],
        Variant::PureNcut => return Ok(apply_floor(w1, &cfg.fusion)),
        Variant::Kmeans | Variant::FuzzyCmeans => unreachable!("not a spectral variant"),
    };
    let w2 = build_w2(preds)?;
    let fused = fuse(w1, &w2, &mask)?;
    if let Some(a) = audit {
        a.w2 = Some(rows(w2.weights()));
        a.mask = Some(mask);
    }
    Ok(apply_floor(&fused, &cfg.fusion))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusClip {
    pub clip_id: String,
    pub speaker_id: String,
    pub split: Option<Split>,
    pub path: PathBuf,
}

/// A directory of embedding files with optional `corpus.tsv` and
/// `classes.txt`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub classes: Vec<String>,
    pub clips: Vec<CorpusClip>,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::InvalidConfig(format!(
                "corpus directory {} does not exist",
                dir.display()
            )));
        }
        let mut manifests = Vec::new();
        let clips: Vec<CorpusClip> = if dir.join(INDEX_FILE).exists() {
            read_index(dir)?
                .into_iter()
                .map(|e| CorpusClip {
                    path: embedding_file(dir, &e.clip_id),
                    clip_id: e.clip_id,
                    speaker_id: e.speaker_id,
                    split: Some(e.split),
                })
                .collect()
        } else {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            paths.retain(|p| p.extension().is_some_and(|x| x == EMBEDDING_EXTENSION));
            paths.sort();
            paths
                .into_iter()
                .map(|path| {
                    let m = read_manifest(&manifest_path(&path))?;
                    let clip = CorpusClip {
                        clip_id: m.clip_id.clone(),
                        speaker_id: m.speaker_id.clone(),
                        split: None,
                        path,
                    };
                    manifests.push(m);
                    Ok(clip)
                })
                .collect::<Result<_>>()?
        };
        let mut seen = BTreeSet::new();
        if let Some(dup) = clips.iter().find(|c| !seen.insert(c.clip_id.as_str())) {
            return Err(Error::InvalidConfig(format!(
                "clip id {} appears twice in {}",
                dup.clip_id,
                dir.display()
            )));
        }
        let classes = match read_classes(dir)? {
            Some(c) => c,
            None => {
                if manifests.is_empty() {
                    for c in &clips {
                        manifests.push(read_manifest(&manifest_path(&c.path))?);
                    }
                }
                let mut found = BTreeSet::new();
                for m in &manifests {
                    found.extend(m.weak_labels.iter().cloned());
                    found.extend(m.gt_segments.iter().flatten().map(|s| s.label.clone()));
                }
                std::iter::once(FLUENT_LABEL.to_string()).chain(found).collect()
            }
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            classes,
            clips,
        })
    }

    /// Dysfluency classes, without `fluent`.
    pub fn dysfluency_classes(&self) -> &[String] {
        &self.classes[1..]
    }

    /// Clips in `split`, or every clip when `split` is `None` or the corpus
    /// has no split information.
    pub fn select(&self, split: Option<Split>) -> Vec<&CorpusClip> {
        self.clips
            .iter()
            .filter(|c| split.is_none() || c.split.is_none() || c.split == split)
            .collect()
    }

    pub fn get(&self, clip_id: &str) -> Option<&CorpusClip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusRun {
    pub records: Vec<SegmentRecord>,
    /// Clips that failed, with the error message.
    pub failures: Vec<(String, String)>,
    pub audits: Vec<ClipAudit>,
}

/// Segments the clips in `split`. A failing clip is logged and skipped; the
/// others still run. Clips are processed in parallel and collected in corpus
/// order.
pub fn run_corpus(
    corpus: &Corpus,
    split: Option<Split>,
    model: &OracleModel,
    cfg: &PipelineConfig,
    audit: bool,
) -> Result<CorpusRun> {
    cfg.validate()?;
    let clips = corpus.select(split);
    let outputs: Vec<(String, Result<ClipOutput>)> = clips
        .par_iter()
        .map(|c| {
            let stream = corpus.clips.iter().position(|x| x.clip_id == c.clip_id).unwrap() as u64;
            let out = read_embeddings(&c.path)
                .and_then(|(m, man)| segment_clip(&m, &man, model, cfg, stream, audit));
            (c.clip_id.clone(), out)
        })
        .collect();
    let mut run = CorpusRun::default();
    for (clip_id, out) in outputs {
        match out {
            Ok(o) => {
                run.records.extend(o.segments.into_iter().map(|segment| SegmentRecord {
                    clip_id: clip_id.clone(),
                    segment,
                }));
                run.audits.extend(o.audit);
            }
            Err(e) => {
                log::error!("clip {clip_id}: {e}");
                run.failures.push((clip_id, e.to_string()));
            }
        }
    }
    Ok(run)
}

/// Scores predicted segments against the ground truth of the clips in
/// `split`. Every predicted clip id must exist in the corpus.
pub fn evaluate_corpus(
    corpus: &Corpus,
    split: Option<Split>,
    records: &[SegmentRecord],
) -> Result<EvalReport> {
    let mut pred: BTreeMap<&str, Vec<Segment>> = BTreeMap::new();
    for r in records {
        if corpus.get(&r.clip_id).is_none() {
            return Err(Error::UnknownClip(r.clip_id.clone()));
        }
        pred.entry(r.clip_id.as_str()).or_default().push(r.segment.clone());
    }
    let selected = corpus.select(split);
    let mut clips = Vec::with_capacity(selected.len());
    for c in selected {
        let m = read_manifest(&manifest_path(&c.path))?;
        let gt = m
            .gt_segments
            .ok_or_else(|| Error::MissingGroundTruth(c.clip_id.clone()))?;
        clips.push(EvalClip {
            clip_id: c.clip_id.clone(),
            speaker_id: m.speaker_id,
            pred: pred.remove(c.clip_id.as_str()).unwrap_or_default(),
            gt,
        });
    }
    let mut report = macro_report(&clips, corpus.dysfluency_classes())?;
    if !pred.is_empty() {
        report.notes.push(format!(
            "{} clip(s) with predictions lie outside the evaluated split",
            pred.len()
        ));
    }
    Ok(report)
}

/// Window-level training data for the train and validation splits.
pub fn training_sets(corpus: &Corpus) -> Result<(LabelledWindows, LabelledWindows)> {
    if corpus.clips.iter().any(|c| c.split.is_none()) {
        return Err(Error::InvalidConfig(format!(
            "{} has no split assignment; training needs {INDEX_FILE}",
            corpus.dir.display()
        )));
    }
    let mut train_set = LabelledWindows::default();
    let mut val = LabelledWindows::default();
    for c in &corpus.clips {
        let target_set = match c.split {
            Some(Split::Train) => &mut train_set,
            Some(Split::Val) => &mut val,
            _ => continue,
        };
        let (m, man) = read_embeddings(&c.path)?;
        man.validate_labels(&corpus.classes)?;
        if man.speaker_id != c.speaker_id {
            log::warn!(
                "clip {}: index says speaker {}, manifest says {}; using the index",
                c.clip_id,
                c.speaker_id,
                man.speaker_id
            );
        }
        let rows = (0..m.rows()).map(|i| m.row_f64(i)).collect();
        target_set.push_clip(&c.speaker_id, rows, weak_target(&corpus.classes, &man.weak_labels));
    }
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("corpus has no training clips".into()));
    }
    Ok((train_set, val))
}

/// Trains a freshly initialized oracle on the corpus splits.
pub fn train_oracle(
    corpus: &Corpus,
    cfg: &TrainConfig,
    hidden_dim: usize,
    dropout: f64,
) -> Result<(OracleModel, Vec<EpochLog>)> {
    let (train_set, val) = training_sets(corpus)?;
    let dim = train_set.embeddings[0].len();
    let init = OracleModel::new(dim, hidden_dim, corpus.classes.clone(), dropout, cfg.seed)?;
    train(&init, &train_set, &val, cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub method: String,
    pub variant: Variant,
    pub threshold: Option<ThresholdMode>,
    pub failed_clips: usize,
    pub report: EvalReport,
}

/// The default grid: every spectral variant under both thresholds, then the
/// two clustering baselines.
pub fn default_grid() -> Vec<(Variant, Option<ThresholdMode>)> {
    let mut grid = Vec::new();
    for v in Variant::ALL {
        if v.is_spectral() {
            grid.push((v, Some(ThresholdMode::Sign)));
            grid.push((v, Some(ThresholdMode::Mean)));
        } else {
            grid.push((v, None));
        }
    }
    grid
}

fn method_name(v: Variant, t: Option<ThresholdMode>) -> String {
    match t {
        Some(ThresholdMode::Mean) => format!("{} (phi=mean)", v.display_name()),
        _ => v.display_name().to_string(),
    }
}

/// Runs each grid entry on `split` and returns rows ranked by overall t-F1
/// (stable for ties).
pub fn ablate(
    corpus: &Corpus,
    split: Option<Split>,
    model: &OracleModel,
    base: &PipelineConfig,
    grid: &[(Variant, Option<ThresholdMode>)],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &(variant, threshold) in grid {
        let cfg = PipelineConfig {
            variant,
            threshold: threshold.unwrap_or(base.threshold),
            ..base.clone()
        };
        let run = run_corpus(corpus, split, model, &cfg, false)?;
        let mut report = evaluate_corpus(corpus, split, &run.records)?;
        if !run.failures.is_empty() {
            report
                .notes
                .push(format!("{} clip(s) failed and were scored as empty", run.failures.len()));
        }
        rows.push(AblationRow {
            method: method_name(variant, threshold.filter(|_| variant.is_spectral())),
            variant,
            threshold: threshold.filter(|_| variant.is_spectral()),
            failed_clips: run.failures.len(),
            report,
        });
    }
    rows.sort_by(|a, b| b.report.overall.f1.total_cmp(&a.report.overall.f1));
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow], classes: &[String]) -> String {
    let refs: Vec<(String, &EvalReport)> =
        rows.iter().map(|r| (r.method.clone(), &r.report)).collect();
    render_table(&refs, classes)
}
