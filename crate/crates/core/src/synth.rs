//! Synthetic corpora: Gaussian window embeddings around per-class means with
//! planted dysfluent segments, weak labels, and speaker-disjoint splits.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::Segment;
use crate::error::{Error, Result};
use crate::oracle::FLUENT_LABEL;
use crate::store::{write_embeddings, ClipManifest, EmbeddingMatrix, EMBEDDING_EXTENSION};
use crate::windowing::WindowConfig;

pub const INDEX_FILE: &str = "corpus.tsv";
pub const CLASSES_FILE: &str = "classes.txt";

/// Dysfluency classes with their (min, max) segment durations in seconds.
pub const DYSFLUENCY_CLASSES: [(&str, f64, f64); 4] = [
    ("prolongation", 0.41, 3.95),
    ("repetition", 0.20, 4.99),
    ("interjection", 0.12, 1.88),
    ("block", 0.23, 4.20),
];

const MAX_SEGMENTS: u64 = 3;
const PLACEMENT_TRIES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "eval" => Ok(Split::Eval),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub clip_count: usize,
    pub clip_duration_s: f64,
    pub embedding_dim: usize,
    /// Number of dysfluency classes, at most four.
    pub class_count: usize,
    /// Distance between the fluent mean and each class mean, in units of
    /// `noise_sigma`.
    pub cluster_separation: f64,
    pub noise_sigma: f64,
    /// Each of up to three segment slots is filled with this probability.
    pub dysfluency_rate: f64,
    pub speakers: usize,
    /// Probability that a training or validation clip has one weak label
    /// toggled.
    pub label_noise: f64,
    pub eval_fraction: f64,
    pub val_fraction: f64,
    pub window: WindowConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clip_count: 200,
            clip_duration_s: 6.0,
            embedding_dim: 16,
            class_count: 4,
            cluster_separation: 6.0,
            noise_sigma: 1.0,
            dysfluency_rate: 0.3,
            speakers: 10,
            label_noise: 0.0,
            eval_fraction: 0.5,
            val_fraction: 0.1,
            window: WindowConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.clip_count == 0 {
            return bad("clip count must be positive".into());
        }
        if !(self.class_count >= 1 && self.class_count <= DYSFLUENCY_CLASSES.len()) {
            return bad(format!(
                "class count must lie in 1..={}, got {}",
                DYSFLUENCY_CLASSES.len(),
                self.class_count
            ));
        }
        if self.embedding_dim < self.class_count + 1 {
            return bad(format!(
                "embedding dim {} cannot hold {} orthogonal means",
                self.embedding_dim,
                self.class_count + 1
            ));
        }
        if !(self.cluster_separation.is_finite() && self.cluster_separation >= 0.0) {
            return bad(format!("separation must be >= 0, got {}", self.cluster_separation));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return bad(format!("noise sigma must be positive, got {}", self.noise_sigma));
        }
        if !(self.dysfluency_rate > 0.0 && self.dysfluency_rate < 1.0) {
            return bad(format!("dysfluency rate must lie in (0, 1), got {}", self.dysfluency_rate));
        }
        if self.speakers < 2 {
            return bad(format!("need at least two speakers, got {}", self.speakers));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!("label noise must lie in [0, 1], got {}", self.label_noise));
        }
        let (e, v) = (self.eval_fraction, self.val_fraction);
        if !((0.0..1.0).contains(&e) && (0.0..1.0).contains(&v) && e + v < 1.0) {
            return bad(format!("split fractions eval={e} val={v} leave no training speakers"));
        }
        if self.clip_duration_s < self.window.length_s {
            return Err(Error::TooShort {
                duration_s: self.clip_duration_s,
                window_s: self.window.length_s,
            });
        }
        Ok(())
    }

    /// `fluent` followed by the configured dysfluency classes.
    pub fn class_names(&self) -> Vec<String> {
        std::iter::once(FLUENT_LABEL)
            .chain(DYSFLUENCY_CLASSES[..self.class_count].iter().map(|c| c.0))
            .map(String::from)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub embeddings: EmbeddingMatrix,
    pub manifest: ClipManifest,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub clip_id: String,
    pub speaker_id: String,
    pub split: Split,
}

fn speaker_name(s: usize) -> String {
    format!("spk{s:03}")
}

/// Speaker to split, shuffled by the seed. Every split that has a positive
/// fraction gets at least one speaker, and training always keeps one.
pub fn assign_splits(cfg: &SynthConfig) -> Vec<Split> {
    let s = cfg.speakers;
    let mut order: Vec<usize> = (0..s).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let count = |f: f64| if f > 0.0 { ((f * s as f64).round() as usize).max(1) } else { 0 };
    let n_eval = count(cfg.eval_fraction).min(s - 1);
    let n_val = count(cfg.val_fraction).min(s - 1 - n_eval);
    let mut out = vec![Split::Train; s];
    for (rank, &spk) in order.iter().enumerate() {
        if rank < n_eval {
            out[spk] = Split::Eval;
        } else if rank < n_eval + n_val {
            out[spk] = Split::Val;
        }
    }
    out
}

fn draw_segments(
    cfg: &SynthConfig,
    need_one: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, f64, f64)>> {
    let count_dist = Binomial::new(MAX_SEGMENTS, cfg.dysfluency_rate)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let gap = cfg.window.length_s;
    let d = cfg.clip_duration_s;
    loop {
        let mut count = count_dist.sample(rng) as usize;
        if need_one {
            while count == 0 {
                count = count_dist.sample(rng) as usize;
            }
        }
        let mut placed: Vec<(usize, f64, f64)> = Vec::with_capacity(count);
        'segments: for _ in 0..count {
            let class = rng.random_range(0..cfg.class_count);
            let (_, lo, hi) = DYSFLUENCY_CLASSES[class];
            let dur = rng.random_range(lo..=hi);
            for _ in 0..PLACEMENT_TRIES {
                if dur > d {
                    break;
                }
                let start = rng.random_range(0.0..=d - dur);
                let end = start + dur;
                if placed.iter().all(|&(_, s, e)| end + gap <= s || e + gap <= start) {
                    placed.push((class, start, end));
                    continue 'segments;
                }
            }
            // Placement failed: redraw the whole clip layout.
            placed.clear();
            break;
        }
        if placed.len() == count {
            placed.sort_by(|a, b| a.1.total_cmp(&b.1));
            return Ok(placed);
        }
    }
}

fn gen_clip(cfg: &SynthConfig, index: usize, splits: &[Split]) -> Result<SynthClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let speaker = index % cfg.speakers;
    let split = splits[speaker];
    let names = cfg.class_names();

    let segments = draw_segments(cfg, split == Split::Eval, &mut rng)?;
    let n = cfg.window.count_for(cfg.clip_duration_s);
    let dim = cfg.embedding_dim;
    // Mean k sits on axis k; pairwise distances are separation * sigma.
    let scale = cfg.cluster_separation * cfg.noise_sigma / std::f64::consts::SQRT_2;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut values = Vec::with_capacity(n * dim);
    for w in 0..n {
        let (ws, we) = (cfg.window.start_of(w), cfg.window.end_of(w));
        let mut mix = vec![0.0; cfg.class_count + 1];
        for &(class, s, e) in &segments {
            mix[class + 1] += (we.min(e) - ws.max(s)).max(0.0) / cfg.window.length_s;
        }
        mix[0] = 1.0 - mix[1..].iter().sum::<f64>();
        for j in 0..dim {
            let mean = if j < mix.len() { scale * mix[j] } else { 0.0 };
            values.push((mean + noise.sample(&mut rng)) as f32);
        }
    }

    let mut weak: BTreeSet<String> = segments.iter().map(|s| names[s.0 + 1].clone()).collect();
    if split != Split::Eval && rng.random::<f64>() < cfg.label_noise {
        let flip = &names[1 + rng.random_range(0..cfg.class_count)];
        if !weak.remove(flip) {
            weak.insert(flip.clone());
        }
    }
    let gt = segments
        .iter()
        .map(|&(c, s, e)| Segment::new(s, e, names[c + 1].clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthClip {
        embeddings: EmbeddingMatrix::new(n, dim, values)?,
        manifest: ClipManifest {
            clip_id: format!("clip{index:05}"),
            speaker_id: speaker_name(speaker),
            duration_s: cfg.clip_duration_s,
            window: cfg.window,
            weak_labels: weak,
            gt_segments: Some(gt),
        },
        split,
    })
}

/// Generates every clip. Clip `i` draws from its own stream of the seed, so
/// output does not depend on thread scheduling.
pub fn gen_corpus(cfg: &SynthConfig) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    let splits = assign_splits(cfg);
    (0..cfg.clip_count)
        .into_par_iter()
        .map(|i| gen_clip(cfg, i, &splits))
        .collect()
}

pub fn embedding_file(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(clip_id).with_extension(EMBEDDING_EXTENSION)
}

/// Writes clip files, the class vocabulary and the `corpus.tsv` index.
pub fn write_corpus(dir: &Path, clips: &[SynthClip], class_names: &[String]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for c in clips {
        write_embeddings(&c.embeddings, &c.manifest, &embedding_file(dir, &c.manifest.clip_id))?;
    }
    write_classes(dir, class_names)?;
    let entries: Vec<IndexEntry> = clips
        .iter()
        .map(|c| IndexEntry {
            clip_id: c.manifest.clip_id.clone(),
            speaker_id: c.manifest.speaker_id.clone(),
            split: c.split,
        })
        .collect();
    write_index(dir, &entries)
}

pub fn write_classes(dir: &Path, class_names: &[String]) -> Result<()> {
    fs::write(dir.join(CLASSES_FILE), class_names.join("\n") + "\n")?;
    Ok(())
}

pub fn read_classes(dir: &Path) -> Result<Option<Vec<String>>> {
    let path = dir.join(CLASSES_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let names: Vec<String> = fs::read_to_string(&path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.len() < 2 || names[0] != FLUENT_LABEL {
        return Err(Error::Format {
            path,
            reason: format!("expected {FLUENT_LABEL:?} then at least one dysfluency class"),
        });
    }
    Ok(Some(names))
}

pub fn write_index(dir: &Path, entries: &[IndexEntry]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(dir.join(INDEX_FILE))?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(dir.join(INDEX_FILE))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
