//! On-disk interchange format for window embeddings.
//!
//! An embedding file holds the 8-byte magic `SCUTEMB1`, the row count and the
//! dimensionality as little-endian `u32`, then `rows * dim` little-endian
//! IEEE-754 `f32` values in row-major order. Every embedding file has a
//! UTF-8 sidecar with the same basename and a `.manifest` extension carrying
//! the clip metadata as `key = value` lines.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::boundary::Segment;
use crate::error::{Error, Result};
use crate::windowing::{make_windows, WindowConfig};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"SCUTEMB1";
pub const EMBEDDING_EXTENSION: &str = "emb";
pub const MANIFEST_EXTENSION: &str = "manifest";
const HEADER_LEN: usize = 16;

/// One embedding row per analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "embedding matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if values.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.dim), |(i, j)| {
            f64::from(self.values[i * self.dim + j])
        })
    }
}

/// Per-clip metadata. Strong labels (`gt_segments`) are for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipManifest {
    pub clip_id: String,
    pub speaker_id: String,
    pub duration_s: f64,
    pub window: WindowConfig,
    pub weak_labels: BTreeSet<String>,
    pub gt_segments: Option<Vec<Segment>>,
}

impl ClipManifest {
    pub fn window_count(&self) -> Result<usize> {
        Ok(make_windows(self.duration_s, &self.window)?.count())
    }

    /// Checks that every weak and strong label belongs to `vocabulary`.
    pub fn validate_labels(&self, vocabulary: &[String]) -> Result<()> {
        let known = |l: &String| vocabulary.iter().any(|v| v == l);
        let strong = self.gt_segments.iter().flatten().map(|s| &s.label);
        if let Some(bad) = self.weak_labels.iter().chain(strong).find(|l| !known(l)) {
            return Err(Error::InvalidConfig(format!(
                "clip {}: label {bad:?} is not in the class vocabulary {vocabulary:?}",
                self.clip_id
            )));
        }
        Ok(())
    }

    fn to_text(&self) -> String {
        let mut out = String::from("# segcut clip manifest\n");
        out.push_str(&format!("clip_id = {}\n", self.clip_id));
        out.push_str(&format!("speaker_id = {}\n", self.speaker_id));
        out.push_str(&format!("duration_s = {}\n", self.duration_s));
        out.push_str(&format!("window_length_s = {}\n", self.window.length_s));
        out.push_str(&format!("window_stride_s = {}\n", self.window.stride_s));
        let labels: Vec<&str> = self.weak_labels.iter().map(String::as_str).collect();
        out.push_str(&format!("weak_labels = {}\n", labels.join(",")));
        if let Some(segments) = &self.gt_segments {
            out.push_str(&format!("gt_segments = {}\n", segments.len()));
            for s in segments {
                out.push_str(&format!("segment = {},{},{}\n", s.start_s, s.end_s, s.label));
            }
        }
        out
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut clip_id = None;
        let mut speaker_id = None;
        let mut duration_s = None;
        let mut length_s = None;
        let mut stride_s = None;
        let mut weak_labels = BTreeSet::new();
        let mut declared_segments: Option<usize> = None;
        let mut segments = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(lineno, format!("expected `key = value`, got {line:?}")))?;
            let float = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| err(lineno, format!("{key}: {e}")))
            };
            match key {
                "clip_id" => clip_id = Some(value.to_string()),
                "speaker_id" => speaker_id = Some(value.to_string()),
                "duration_s" => duration_s = Some(float(value)?),
                "window_length_s" => length_s = Some(float(value)?),
                "window_stride_s" => stride_s = Some(float(value)?),
                "weak_labels" => {
                    weak_labels = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                "gt_segments" => {
                    declared_segments = Some(
                        value
                            .parse()
                            .map_err(|e| err(lineno, format!("gt_segments: {e}")))?,
                    )
                }
                "segment" => {
                    let parts: Vec<&str> = value.splitn(3, ',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(err(lineno, "segment needs start,end,label".into()));
                    }
                    let seg = Segment::new(float(parts[0])?, float(parts[1])?, parts[2])
                        .map_err(|e| err(lineno, e.to_string()))?;
                    segments.push(seg);
                }
                other => return Err(err(lineno, format!("unknown key {other:?}"))),
            }
        }

        let missing = |name: &str| err(0, format!("missing required key {name}"));
        let window = WindowConfig::new(
            length_s.ok_or_else(|| missing("window_length_s"))?,
            stride_s.ok_or_else(|| missing("window_stride_s"))?,
        )?;
        let gt_segments = match declared_segments {
            Some(n) if n != segments.len() => {
                return Err(err(
                    0,
                    format!("gt_segments declares {n} segments, found {}", segments.len()),
                ))
            }
            Some(_) => Some(segments),
            None if !segments.is_empty() => {
                return Err(err(0, "segment lines without a gt_segments count".into()))
            }
            None => None,
        };
        Ok(Self {
            clip_id: clip_id.ok_or_else(|| missing("clip_id"))?,
            speaker_id: speaker_id.ok_or_else(|| missing("speaker_id"))?,
            duration_s: duration_s.ok_or_else(|| missing("duration_s"))?,
            window,
            weak_labels,
            gt_segments,
        })
    }
}

pub fn manifest_path(embedding_path: &Path) -> PathBuf {
    embedding_path.with_extension(MANIFEST_EXTENSION)
}

pub fn write_embeddings(
    matrix: &EmbeddingMatrix,
    manifest: &ClipManifest,
    path: &Path,
) -> Result<()> {
    let windows = manifest.window_count()?;
    if matrix.rows() != windows {
        return Err(Error::RowCountMismatch {
            rows: matrix.rows(),
            windows,
        });
    }
    let rows = u32::try_from(matrix.rows())
        .map_err(|_| Error::InvalidConfig("too many rows for the format".into()))?;
    let dim = u32::try_from(matrix.dim())
        .map_err(|_| Error::InvalidConfig("dimension too large for the format".into()))?;

    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    for v in matrix.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    fs::write(manifest_path(path), manifest.to_text())?;
    Ok(())
}

pub fn read_embedding_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < EMBEDDING_MAGIC.len() || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "missing SCUTEMB1 magic".into(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, dim) = (u32_at(8), u32_at(12));
    if rows == 0 || dim == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("empty matrix {rows}x{dim}"),
        });
    }
    let expected = HEADER_LEN + 4 * rows * dim;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(rows, dim, values)
}

pub fn read_manifest(path: &Path) -> Result<ClipManifest> {
    let text = fs::read_to_string(path)?;
    ClipManifest::parse(&text, path)
}

/// Reads an embedding file and its sidecar manifest, checking that the row
/// count matches the manifest's window arithmetic.
pub fn read_embeddings(path: &Path) -> Result<(EmbeddingMatrix, ClipManifest)> {
    let matrix = read_embedding_matrix(path)?;
    let manifest = read_manifest(&manifest_path(path))?;
    let windows = manifest.window_count()?;
    if matrix.rows() != windows {
        return Err(Error::RowCountMismatch {
            rows: matrix.rows(),
            windows,
        });
    }
    Ok((matrix, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(duration_s: f64) -> ClipManifest {
        ClipManifest {
            clip_id: "clip_0007".into(),
            speaker_id: "spk_02".into(),
            duration_s,
            window: WindowConfig::default(),
            weak_labels: ["block".to_string(), "repetition".to_string()].into(),
            gt_segments: Some(vec![
                Segment::new(0.4, 1.45, "block").unwrap(),
                Segment::new(2.123456789, 3.5, "repetition").unwrap(),
            ]),
        }
    }

    fn matrix(rows: usize, dim: usize) -> EmbeddingMatrix {
        let values = (0..rows * dim).map(|i| (i as f32 * 0.37).sin()).collect();
        EmbeddingMatrix::new(rows, dim, values).unwrap()
    }

    #[test]
    fn file_size_matches_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.emb");
        write_embeddings(&matrix(43, 1280), &manifest(5.0), &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 + 4 * 43 * 1280);
        assert!(manifest_path(&path).exists());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.emb");
        let (m, man) = (matrix(43, 8), manifest(5.0));
        write_embeddings(&m, &man, &path).unwrap();
        let (m2, man2) = read_embeddings(&path).unwrap();
        assert_eq!(m, m2);
        assert_eq!(man, man2);
    }

    #[test]
    fn manifest_without_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.emb");
        let mut man = manifest(5.0);
        man.gt_segments = None;
        man.weak_labels.clear();
        write_embeddings(&matrix(43, 2), &man, &path).unwrap();
        assert_eq!(read_embeddings(&path).unwrap().1, man);
    }

    #[test]
    fn row_count_mismatch_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_embeddings(&matrix(10, 4), &manifest(5.0), &dir.path().join("c.emb"))
            .unwrap_err();
        assert!(matches!(err, Error::RowCountMismatch { rows: 10, windows: 43 }));
    }

    #[test]
    fn wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.emb");
        write_embeddings(&matrix(43, 4), &manifest(5.0), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[7] = b'2';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_embeddings(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_by_one_byte() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.emb");
        write_embeddings(&matrix(43, 4), &manifest(5.0), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(Error::Truncated { found, expected, .. }) if expected == found + 1
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.emb");
        write_embeddings(&matrix(43, 4), &manifest(5.0), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[16 + 4 * 5..16 + 4 * 6].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_embeddings(&path), Err(Error::NonFinite(5))));
        assert!(EmbeddingMatrix::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn label_vocabulary() {
        let vocab: Vec<String> = ["block", "repetition"].map(String::from).to_vec();
        assert!(manifest(5.0).validate_labels(&vocab).is_ok());
        assert!(manifest(5.0).validate_labels(&vocab[..1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn arbitrary_values_round_trip_bit_exactly(
            dim in 1usize..6,
            seed_vals in proptest::collection::vec(proptest::num::f32::NORMAL, 43 * 6),
            duration_jitter in 0.0f64..0.049,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.emb");
            let m = EmbeddingMatrix::new(43, dim, seed_vals[..43 * dim].to_vec()).unwrap();
            let man = manifest(5.0 + duration_jitter);
            write_embeddings(&m, &man, &path).unwrap();
            let (m2, man2) = read_embeddings(&path).unwrap();
            prop_assert_eq!(
                m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                m2.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(man, man2);
        }
    }
}
