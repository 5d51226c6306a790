use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Leading bytes of an embedding file.
pub const MAGIC: &[u8; 4] = b"NVEB";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Exact header line of a manifest file.
pub const MANIFEST_HEADER: [&str; 4] = ["sample_id", "label", "speaker", "dataset"];

/// Pooled embeddings of one foundation model over one corpus, with the
/// per-row manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub fm_name: String,
    pub dim: usize,
    /// `[count, dim]`
    pub vectors: Tensor<f32>,
    pub sample_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub speakers: Option<Vec<String>>,
    /// Corpus name of each row (manifest `dataset` column).
    pub corpus: Vec<String>,
}

impl EmbeddingDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Checks that every parallel list agrees with the vector count.
    pub fn validate(&self) -> Result<()> {
        let count = self.vectors.shape()[0];
        if self.vectors.shape() != [count, self.dim] {
            return Err(Error::Dimension {
                op: "dataset",
                lhs: self.vectors.shape().to_vec(),
                rhs: vec![count, self.dim],
            });
        }
        let mut lists = vec![
            ("sample_ids", self.sample_ids.len()),
            ("labels", self.labels.len()),
            ("corpus", self.corpus.len()),
        ];
        if let Some(s) = &self.speakers {
            lists.push(("speakers", s.len()));
        }
        for (what, n) in lists {
            if n != count {
                return Err(Error::Alignment {
                    what: what.into(),
                    left: n,
                    other: "vectors".into(),
                    right: count,
                });
            }
        }
        if let Some((row, &label)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.label_names.len())
        {
            return Err(Error::Label {
                row,
                label,
                num_classes: self.label_names.len(),
            });
        }
        Ok(())
    }

    /// Rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> EmbeddingDataset {
        let pick = |v: &[String]| rows.iter().map(|&r| v[r].clone()).collect::<Vec<_>>();
        EmbeddingDataset {
            fm_name: self.fm_name.clone(),
            dim: self.dim,
            vectors: self.vectors.select_rows(rows),
            sample_ids: pick(&self.sample_ids),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            label_names: self.label_names.clone(),
            speakers: self.speakers.as_deref().map(pick),
            corpus: pick(&self.corpus),
        }
    }

    pub fn manifest_rows(&self) -> Vec<ManifestRow> {
        (0..self.len())
            .map(|i| ManifestRow {
                sample_id: self.sample_ids[i].clone(),
                label: self.label_names[self.labels[i]].clone(),
                speaker: self
                    .speakers
                    .as_ref()
                    .map(|s| s[i].clone())
                    .unwrap_or_default(),
                dataset: self.corpus[i].clone(),
            })
            .collect()
    }

    /// Writes the embedding file, the manifest and, if given, the label
    /// vocabulary.
    pub fn save(
        &self,
        embeddings_path: &Path,
        manifest_path: &Path,
        labels_path: Option<&Path>,
    ) -> Result<()> {
        self.validate()?;
        write_embeddings(embeddings_path, &self.vectors)?;
        write_manifest(manifest_path, &self.manifest_rows())?;
        if let Some(p) = labels_path {
            write_label_vocab(p, &self.label_names)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub label: String,
    pub speaker: String,
    pub dataset: String,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `vectors` (`[count, dim]`) as a little-endian embedding file.
pub fn write_embeddings(path: &Path, vectors: &Tensor<f32>) -> Result<()> {
    let shape = vectors.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension {
            op: "write_embeddings",
            lhs: shape.to_vec(),
            rhs: vec![2],
        });
    }
    let to_u32 = |n: usize| {
        u32::try_from(n).map_err(|_| format_err(path, format!("{n} does not fit in u32")))
    };
    let (count, dim) = (to_u32(shape[0])?, to_u32(shape[1])?);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&dim.to_le_bytes()).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    for v in vectors.data() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads and validates an embedding file into a `[count, dim]` tensor.
pub fn read_embeddings(path: &Path) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            path,
            format!("{} bytes is shorter than the {HEADER_LEN}-byte header", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(path, format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (version, dim, count) = (word(4), word(8) as usize, word(12) as usize);
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    if dim == 0 || count == 0 {
        return Err(format_err(path, format!("empty matrix: dim {dim}, count {count}")));
    }
    let expected = HEADER_LEN + 4 * dim * count;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} bytes for {count}x{dim}, found {}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData {
            path: path.to_path_buf(),
            row: i / dim,
            col: i % dim,
        });
    }
    Tensor::new(vec![count, dim], data)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(format_err(
            path,
            format!(
                "manifest header must be `{}`, found `{}`",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => format_err(path, format!("{other:?}")),
    }
}

/// One label name per line; line index is the class id.
pub fn read_label_vocab(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut names = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let name = line.trim();
        if !name.is_empty() {
            names.push(name.to_string());
        }
    }
    let distinct: BTreeSet<&String> = names.iter().collect();
    if names.is_empty() || distinct.len() != names.len() {
        return Err(format_err(path, "label vocabulary is empty or has duplicates"));
    }
    Ok(names)
}

pub fn write_label_vocab(path: &Path, names: &[String]) -> Result<()> {
    let mut text = names.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads embeddings and manifest; the label vocabulary is the sorted set of
/// labels found in the manifest.
pub fn load_dataset(embeddings_path: &Path, manifest_path: &Path) -> Result<EmbeddingDataset> {
    load_dataset_with_labels(embeddings_path, manifest_path, None)
}

pub fn load_dataset_with_labels(
    embeddings_path: &Path,
    manifest_path: &Path,
    labels_path: Option<&Path>,
) -> Result<EmbeddingDataset> {
    let vectors = read_embeddings(embeddings_path)?;
    let rows = read_manifest(manifest_path)?;
    let count = vectors.shape()[0];
    if rows.len() != count {
        return Err(Error::Alignment {
            what: manifest_path.display().to_string(),
            left: rows.len(),
            other: embeddings_path.display().to_string(),
            right: count,
        });
    }
    let label_names = match labels_path {
        Some(p) => read_label_vocab(p)?,
        None => rows
            .iter()
            .map(|r| r.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let labels = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            label_names.iter().position(|n| *n == r.label).ok_or_else(|| {
                Error::Data(format!(
                    "row {i} of {} has label `{}` outside the vocabulary",
                    manifest_path.display(),
                    r.label
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let speakers = rows
        .iter()
        .any(|r| !r.speaker.is_empty())
        .then(|| rows.iter().map(|r| r.speaker.clone()).collect());
    let fm_name = embeddings_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ds = EmbeddingDataset {
        fm_name,
        dim: vectors.shape()[1],
        vectors,
        sample_ids: rows.iter().map(|r| r.sample_id.clone()).collect(),
        labels,
        label_names,
        speakers,
        corpus: rows.into_iter().map(|r| r.dataset).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(count: usize, dim: usize) -> EmbeddingDataset {
        let data = (0..count * dim).map(|i| i as f32 * 0.5 - 3.0).collect();
        EmbeddingDataset {
            fm_name: "toy".into(),
            dim,
            vectors: Tensor::new(vec![count, dim], data).unwrap(),
            sample_ids: (0..count).map(|i| format!("clip{i}")).collect(),
            labels: (0..count).map(|i| i % 3).collect(),
            label_names: vec!["anger".into(), "fear".into(), "joy".into()],
            speakers: Some((0..count).map(|i| format!("spk{}", i % 2)).collect()),
            corpus: vec!["JNV".into(); count],
        }
    }

    #[test]
    fn header_layout_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.nveb");
        write_embeddings(&p, &Tensor::new(vec![1, 2], vec![1.0f32, -2.0]).unwrap()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"NVEB");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn loads_420_rows() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(420, 768);
        let (e, m) = (dir.path().join("wavlm.nveb"), dir.path().join("m.csv"));
        ds.save(&e, &m, None).unwrap();
        let back = load_dataset(&e, &m).unwrap();
        assert_eq!(back.len(), 420);
        assert_eq!(back.dim, 768);
        assert_eq!(back.fm_name, "wavlm");
        assert_eq!(back, EmbeddingDataset { fm_name: "wavlm".into(), ..ds });
    }

    #[test]
    fn manifest_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(420, 4);
        let (e, m) = (dir.path().join("a.nveb"), dir.path().join("m.csv"));
        write_embeddings(&e, &ds.vectors).unwrap();
        write_manifest(&m, &ds.manifest_rows()[..419]).unwrap();
        match load_dataset(&e, &m) {
            Err(Error::Alignment { left: 419, right: 420, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_and_corrupt_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.nveb");
        std::fs::write(&p, b"").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"NVEX\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format { .. })));
        std::fs::write(&p, b"NVEB\x01\0\0\0\x02\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn non_finite_value_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.nveb");
        let t = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, f32::NAN, 5.0]).unwrap();
        write_embeddings(&p, &t).unwrap();
        assert!(matches!(
            read_embeddings(&p),
            Err(Error::NonFiniteData { row: 2, col: 0, .. })
        ));
    }

    #[test]
    fn header_must_match_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "id,label,speaker,dataset\na,b,,c\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn vocabulary_file_fixes_class_ids() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(6, 2);
        ds.label_names = vec!["zeta".into(), "alpha".into(), "mid".into()];
        let (e, m, l) = (
            dir.path().join("v.nveb"),
            dir.path().join("m.csv"),
            dir.path().join("labels.txt"),
        );
        ds.save(&e, &m, Some(&l)).unwrap();
        let back = load_dataset_with_labels(&e, &m, Some(&l)).unwrap();
        assert_eq!(back.labels, ds.labels);
        let inferred = load_dataset(&e, &m).unwrap();
        assert_eq!(inferred.label_names, vec!["alpha", "mid", "zeta"]);
        assert_eq!(inferred.labels[0], 2);
    }
}
