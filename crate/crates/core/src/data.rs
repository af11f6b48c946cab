//! Dataset loading and spike encoding.
//!
//! Images use latency coding `t = tau_in (1 - x)` so bright pixels spike first.
//! Iris features map directly to `t = tau_in x` after min-max normalization,
//! followed by a bias spike at `t = 0`.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::neuron::SpikeTrain;
use crate::training::SpikeDataset;

/// Features in `[0, 1]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    /// Row-major `n_samples x n_features`.
    pub features: Vec<f64>,
    pub n_features: usize,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Samples `[start, start + count)`, clamped to the dataset size.
    pub fn slice(&self, start: usize, count: usize) -> RawDataset {
        let end = (start + count).min(self.len());
        let start = start.min(end);
        RawDataset {
            features: self.features[start * self.n_features..end * self.n_features].to_vec(),
            n_features: self.n_features,
            labels: self.labels[start..end].to_vec(),
            n_classes: self.n_classes,
        }
    }

    /// Samples at the given indices.
    pub fn select(&self, idx: &[usize]) -> RawDataset {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        RawDataset {
            features,
            n_features: self.n_features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut head = [0u8; 2];
    let n = reader.read(&mut head)?;
    let mut bytes = head[..n].to_vec();
    reader.read_to_end(&mut bytes)?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Data(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(b: &[u8], at: usize) -> Result<usize> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]) as usize)
        .ok_or_else(|| Error::Data("truncated IDX header".into()))
}

/// Parses IDX image bytes (magic `0x00000803`) into `[0, 1]` pixels.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<f64>, usize, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != 0x803 {
        return Err(Error::Data(format!("image file has magic {magic:#x}, expected 0x803")));
    }
    let (n, rows, cols) = (be_u32(bytes, 4)?, be_u32(bytes, 8)?, be_u32(bytes, 12)?);
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Data(format!("image payload has {} bytes, header promises {n}x{rows}x{cols}", body.len())));
    }
    Ok((body.iter().map(|&p| p as f64 / 255.0).collect(), n, rows * cols))
}

/// Parses IDX label bytes (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != 0x801 {
        return Err(Error::Data(format!("label file has magic {magic:#x}, expected 0x801")));
    }
    let n = be_u32(bytes, 4)?;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Data(format!("label payload has {} bytes, header promises {n}", body.len())));
    }
    Ok(body.iter().map(|&l| l as usize).collect())
}

/// Loads an IDX image/label pair, gzip-compressed or not.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawDataset> {
    let (features, n, n_features) = parse_idx_images(&read_maybe_gz(images)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels)?)?;
    if labels.len() != n {
        return Err(Error::Data(format!("{n} images but {} labels", labels.len())));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(RawDataset { features, n_features, labels, n_classes })
}

/// Finds `<prefix>-images-idx3-ubyte[.gz]` and the matching label file in `dir`.
pub fn load_idx_dir(dir: &Path, prefix: &str) -> Result<RawDataset> {
    let pick = |stem: String| -> Result<std::path::PathBuf> {
        for name in [format!("{stem}.gz"), stem.clone()] {
            let p = dir.join(&name);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::Data(format!("{} not found in {}", stem, dir.display())))
    };
    load_idx(&pick(format!("{prefix}-images-idx3-ubyte"))?, &pick(format!("{prefix}-labels-idx1-ubyte"))?)
}

/// Parses Iris-style CSV text: four numeric features then a class label per row.
///
/// Labels may be integers or names; names are numbered in order of first
/// appearance. Features are min-max normalized per column to `[0, 1]`.
pub fn parse_iris_csv(text: &str, has_header: bool) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != 5 {
            return Err(Error::Data(format!("row {row}: expected 4 features and a label, got {} fields", rec.len())));
        }
        for f in rec.iter().take(4) {
            features
                .push(f.parse::<f64>().map_err(|_| Error::Data(format!("row {row}: feature {f:?} is not a number")))?);
        }
        let lab = &rec[4];
        let id = if let Ok(n) = lab.parse::<usize>() {
            n
        } else if lab.parse::<f64>().is_ok() {
            return Err(Error::Data(format!("row {row}: label {lab:?} is numeric but not an integer")));
        } else {
            match names.iter().position(|n| n == lab) {
                Some(i) => i,
                None => {
                    names.push(lab.to_string());
                    names.len() - 1
                }
            }
        };
        labels.push(id);
    }
    if labels.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    for c in 0..4 {
        let col = features.iter().skip(c).step_by(4);
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for i in 0..labels.len() {
            features[i * 4 + c] = (features[i * 4 + c] - lo) / span;
        }
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(RawDataset { features, n_features: 4, labels, n_classes })
}

pub fn load_iris_csv(path: &Path, has_header: bool) -> Result<RawDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_iris_csv(&text, has_header)
}

/// Latency code `t = tau_in (1 - x)` for every sample.
pub fn encode_images(raw: &RawDataset, tau_in: f64) -> SpikeDataset {
    let inputs =
        (0..raw.len()).map(|i| SpikeTrain::new(raw.row(i).iter().map(|&x| tau_in * (1.0 - x)).collect())).collect();
    SpikeDataset { inputs, labels: raw.labels.clone() }
}

/// `t = tau_in x` per feature plus a bias spike at `t = 0`.
pub fn encode_iris(raw: &RawDataset, tau_in: f64) -> SpikeDataset {
    let inputs = (0..raw.len())
        .map(|i| {
            let mut t: Vec<f64> = raw.row(i).iter().map(|&x| tau_in * x).collect();
            t.push(0.0);
            SpikeTrain::new(t)
        })
        .collect();
    SpikeDataset { inputs, labels: raw.labels.clone() }
}
