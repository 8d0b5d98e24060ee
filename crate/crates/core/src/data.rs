//! Dataset loading, synthetic blobs, and seeded batching.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Per-column min-max scaling, kept so raw values can be recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaling {
    pub min: Vec<f64>,
    /// `max − min`; zero for constant columns, which scale to 0.
    pub range: Vec<f64>,
}

impl ColumnScaling {
    pub fn fit(x: &Matrix) -> Self {
        let mut min = vec![f64::INFINITY; x.cols()];
        let mut max = vec![f64::NEG_INFINITY; x.cols()];
        for row in x.iter_rows() {
            for (c, &v) in row.iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        let range = min.iter().zip(&max).map(|(lo, hi)| hi - lo).collect();
        ColumnScaling { min, range }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = if self.range[c] > 0.0 {
                    (*v - self.min[c]) / self.range[c]
                } else {
                    0.0
                };
            }
        }
        out
    }

    pub fn inverse(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = self.min[c] + *v * self.range[c];
            }
        }
        out
    }
}

/// `n × p` features in `[0, 1]` with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub k_hint: Option<usize>,
    pub scaling: Option<ColumnScaling>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Attaches labels, checking length and deriving the cluster-count hint.
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::CountMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                self.len()
            )));
        }
        self.k_hint = labels.iter().max().map(|m| m + 1);
        self.labels = Some(labels);
        Ok(self)
    }

    /// The first `n` rows.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(&idx),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            k_hint: self.k_hint,
            scaling: self.scaling.clone(),
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn read_u32(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    cur.read_u32::<BigEndian>()
        .map_err(|_| Error::Truncated(format!("header ends before {what}")))
}

/// Parses an IDX image file (`u8` pixels) into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "magic number")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n = read_u32(&mut cur, "image count")? as usize;
    let rows = read_u32(&mut cur, "row count")? as usize;
    let cols = read_u32(&mut cur, "column count")? as usize;
    let want = n * rows * cols;
    let body = &bytes[cur.position() as usize..];
    if body.len() < want {
        return Err(Error::Truncated(format!(
            "image payload has {} of {want} bytes",
            body.len()
        )));
    }
    if body.len() > want {
        return Err(Error::CountMismatch(format!(
            "image payload has {} trailing bytes",
            body.len() - want
        )));
    }
    Ok((n, rows, cols, body.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "magic number")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n = read_u32(&mut cur, "label count")? as usize;
    let body = &bytes[cur.position() as usize..];
    if body.len() < n {
        return Err(Error::Truncated(format!(
            "label payload has {} of {n} bytes",
            body.len()
        )));
    }
    if body.len() > n {
        return Err(Error::CountMismatch(format!(
            "label payload has {} trailing bytes",
            body.len() - n
        )));
    }
    Ok(body.to_vec())
}

/// Loads an IDX image/label pair; pixels are divided by 255.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_all(images.as_ref())?)?;
    let raw_labels = parse_idx_labels(&read_all(labels.as_ref())?)?;
    if raw_labels.len() != n {
        return Err(Error::CountMismatch(format!(
            "{} labels for {n} images",
            raw_labels.len()
        )));
    }
    let features = Matrix::from_vec(
        n,
        rows * cols,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    Dataset {
        name: images
            .as_ref()
            .file_stem()
            .map_or_else(|| "idx".into(), |s| s.to_string_lossy().into_owned()),
        features,
        labels: None,
        k_hint: None,
        scaling: None,
    }
    .with_labels(raw_labels.into_iter().map(usize::from).collect())
}

pub fn write_idx_images(
    path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
) -> Result<()> {
    let mut out = Vec::new();
    out.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    for v in [images.len(), rows, cols] {
        out.write_u32::<BigEndian>(v as u32)?;
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::CountMismatch(format!(
                "image of {} bytes for {rows}x{cols}",
                img.len()
            )));
        }
        out.extend_from_slice(img);
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = Vec::new();
    out.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    out.write_u32::<BigEndian>(labels.len() as u32)?;
    out.extend_from_slice(labels);
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Which column of a delimited file holds labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

struct Table {
    header: Option<Vec<String>>,
    rows: Vec<Vec<f64>>,
}

fn parse_table(text: &str) -> Result<Table> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let Some(&(_, first)) = lines.first() else {
        return Ok(Table {
            header: None,
            rows: Vec::new(),
        });
    };
    let delim = if first.contains('\t') { '\t' } else { ',' };
    fn split(l: &str, delim: char) -> Vec<&str> {
        l.split(delim).map(str::trim).collect()
    }
    let first_cells = split(first, delim);
    let is_header = first_cells.iter().any(|c| c.parse::<f64>().is_err());
    let header = is_header.then(|| first_cells.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let width = first_cells.len();
    let mut rows = Vec::with_capacity(lines.len());
    for &(line, l) in &lines[usize::from(is_header)..] {
        let cells = split(l, delim);
        if cells.len() != width {
            return Err(Error::Parse {
                line,
                detail: format!("{} cells, expected {width}", cells.len()),
            });
        }
        let row = cells
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        detail: format!("non-numeric cell {c:?}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn as_label(v: f64, line: usize) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Parse {
            line,
            detail: format!("label {v} is not a non-negative integer"),
        })
    }
}

/// Loads a comma- or tab-separated numeric table, min-max scaling each
/// feature column. A first row containing any non-numeric cell is a header.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&LabelColumn>) -> Result<Dataset> {
    let text = fs::read_to_string(path.as_ref())?;
    let table = parse_table(&text)?;
    let width = table.rows.first().map_or(0, Vec::len);
    let label_idx = match label_column {
        None => None,
        Some(LabelColumn::Index(i)) => {
            if *i >= width {
                return Err(Error::Config(format!("label column {i} out of {width}")));
            }
            Some(*i)
        }
        Some(LabelColumn::Name(name)) => {
            let header = table
                .header
                .as_ref()
                .ok_or_else(|| Error::Config(format!("no header to find column {name:?}")))?;
            Some(
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Config(format!("no column named {name:?}")))?,
            )
        }
    };
    let offset = usize::from(table.header.is_some()) + 1;
    let mut labels = label_idx.map(|_| Vec::with_capacity(table.rows.len()));
    let mut feats = Vec::with_capacity(table.rows.len() * width);
    for (r, row) in table.rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if Some(c) == label_idx {
                labels.as_mut().unwrap().push(as_label(v, r + offset)?);
            } else {
                feats.push(v);
            }
        }
    }
    let p = width - usize::from(label_idx.is_some());
    let raw = Matrix::from_vec(table.rows.len(), p, feats)?;
    let scaling = ColumnScaling::fit(&raw);
    let ds = Dataset {
        name: path
            .as_ref()
            .file_stem()
            .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        features: scaling.apply(&raw),
        labels: None,
        k_hint: None,
        scaling: Some(scaling),
    };
    match labels {
        Some(l) => ds.with_labels(l),
        None => Ok(ds),
    }
}

/// Reads a one-column label file (optional header).
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let table = parse_table(&text)?;
    let offset = usize::from(table.header.is_some()) + 1;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            if row.len() != 1 {
                return Err(Error::Parse {
                    line: r + offset,
                    detail: format!("expected one label, found {} cells", row.len()),
                });
            }
            as_label(row[0], r + offset)
        })
        .collect()
}

/// Gaussian clusters around mutually orthogonal centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub k: usize,
    pub per_cluster: usize,
    pub dim: usize,
    /// Pairwise center distance in units of `sigma`.
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Samples `k · per_cluster` points, cluster by cluster.
///
/// Centers sit at `separation·σ/√2` along `k` random orthonormal directions, so
/// every pair of centers is exactly `separation·σ` apart. When `dim > k` those
/// directions are also orthogonal to the all-ones vector. The whole sample is
/// then mapped affinely onto `[0, 1]` (one shift and one scale for all
/// features), which keeps the geometry intact.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    let BlobSpec {
        k,
        per_cluster,
        dim,
        separation,
        sigma,
        seed,
    } = *spec;
    if k == 0 || per_cluster == 0 || dim == 0 {
        return Err(Error::Config("blob counts must be at least 1".into()));
    }
    if !(separation > 0.0 && sigma > 0.0) {
        return Err(Error::Config("blob separation and sigma must be positive".into()));
    }
    if dim < k {
        return Err(Error::Config(format!(
            "{k} orthogonal centers need at least {k} dimensions, got {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // With room to spare the frame avoids the all-ones direction, so the
    // global shift onto [0, 1] cannot hide center differences from cosine.
    let skip = usize::from(dim > k);
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k + skip);
    if skip == 1 {
        frame.push(vec![1.0 / (dim as f64).sqrt(); dim]);
    }
    while frame.len() < k + skip {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for u in &frame {
            let p = dot(&v, u);
            for (a, b) in v.iter_mut().zip(u) {
                *a -= p * b;
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|a| *a /= n);
            frame.push(v);
        }
    }
    let radius = separation * sigma / std::f64::consts::SQRT_2;
    let mut data = Vec::with_capacity(k * per_cluster * dim);
    let mut labels = Vec::with_capacity(k * per_cluster);
    for (c, dir) in frame[skip..].iter().enumerate() {
        for _ in 0..per_cluster {
            for &u in dir {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(radius * u + sigma * noise);
            }
            labels.push(c);
        }
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in &mut data {
        *v = (*v - lo) / span;
    }
    Dataset {
        name: format!("blobs-k{k}-s{seed}"),
        features: Matrix::from_vec(k * per_cluster, dim, data)?,
        labels: None,
        k_hint: Some(k),
        scaling: None,
    }
    .with_labels(labels)
}

/// Smallest batch that keeps the k-NN graph and the cluster terms well posed:
/// `max(2·knn_k + 2, clusters + 1)`.
pub fn min_batch_len(knn_k: usize, clusters: usize) -> usize {
    (2 * knn_k + 2).max(clusters + 1)
}

/// Row indices of each batch for one epoch.
///
/// The permutation depends on `(seed, epoch)` only. A trailing batch shorter
/// than `min_len` is dropped.
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    min_len: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if batch_size > n {
        return Err(Error::Config(format!(
            "batch size {batch_size} exceeds dataset size {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() == batch_size || c.len() >= min_len)
        .map(<[usize]>::to_vec)
        .collect())
}
