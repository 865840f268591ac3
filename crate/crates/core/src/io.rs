//! Dataset, sketch, centroid and report files.
//!
//! - Dataset (binary, little-endian): magic `SKCLDATA`, `u32` version 1,
//!   `u64` N, `u64` T, then `N*T` `f64` values, sample by sample.
//! - Dataset (CSV): one sample per row, no header.
//! - Sketch (JSON): `{"magic":"SKCL-SK","version":1,"m","n","t","seed",
//!   "radius_law","scale","y_re","y_im"}`.
//! - Centroids (JSON): `{"n","k","matrix"}` with `matrix` `N x K` by rows,
//!   plus the learned hyperparameters when available.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::sketch::{RadiusLaw, Sketch};
use crate::types::{Centroids, DataMatrix, GmmHyperparams};

pub const DATA_MAGIC: &[u8; 8] = b"SKCLDATA";
pub const DATA_VERSION: u32 = 1;
pub const SKETCH_MAGIC: &str = "SKCL-SK";
pub const SKETCH_VERSION: u32 = 1;

pub fn write_dataset<W: Write>(data: &DataMatrix, mut out: W) -> Result<()> {
    out.write_all(DATA_MAGIC)?;
    out.write_all(&DATA_VERSION.to_le_bytes())?;
    out.write_all(&(data.dim() as u64).to_le_bytes())?;
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    for v in data.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or_eof<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::UnexpectedEof,
        _ => Error::Io(e),
    })
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<DataMatrix> {
    let mut magic = [0u8; 8];
    read_exact_or_eof(&mut input, &mut magic)?;
    if &magic != DATA_MAGIC {
        return Err(Error::BadMagic {
            expected: "SKCLDATA",
        });
    }
    let mut b4 = [0u8; 4];
    read_exact_or_eof(&mut input, &mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != DATA_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut b8 = [0u8; 8];
    read_exact_or_eof(&mut input, &mut b8)?;
    let dim = u64::from_le_bytes(b8) as usize;
    read_exact_or_eof(&mut input, &mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let count = dim
        .checked_mul(len)
        .filter(|c| c.checked_mul(8).is_some())
        .ok_or_else(|| Error::Malformed(format!("dataset header N={dim}, T={len} overflows")))?;
    let mut values = Vec::with_capacity(count.min(1 << 24));
    let mut chunk = vec![0u8; 8 * 4096];
    let mut remaining = count;
    while remaining > 0 {
        let take = remaining.min(4096);
        let buf = &mut chunk[..8 * take];
        read_exact_or_eof(&mut input, buf)?;
        values.extend(
            buf.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))),
        );
        remaining -= take;
    }
    DataMatrix::new(dim, len, values)
}

/// CSV with one sample per row and no header.
pub fn read_csv_dataset<R: Read>(input: R) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Malformed(format!("CSV value {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(row);
    }
    DataMatrix::from_samples(&samples)
}

/// CSV with one sample per row and no header. Values are written in their
/// shortest round-tripping form.
pub fn write_csv_dataset<W: Write>(data: &DataMatrix, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for x in data.samples() {
        w.write_record(x.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a dataset file, as CSV when the extension is `.csv`.
pub fn load_dataset(path: &Path) -> Result<DataMatrix> {
    let file = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_csv_dataset(file)
    } else {
        read_dataset(file)
    }
}

/// Writes a dataset file, as CSV when the extension is `.csv`.
pub fn save_dataset(path: &Path, data: &DataMatrix) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_csv_dataset(data, file)
    } else {
        write_dataset(data, file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SketchFile {
    magic: String,
    version: u32,
    m: usize,
    n: usize,
    t: u64,
    seed: u64,
    radius_law: RadiusLaw,
    scale: f64,
    y_re: Vec<f64>,
    y_im: Vec<f64>,
}

pub fn write_sketch<W: Write>(sketch: &Sketch, out: W) -> Result<()> {
    let file = SketchFile {
        magic: SKETCH_MAGIC.into(),
        version: SKETCH_VERSION,
        m: sketch.len(),
        n: sketch.dimension,
        t: sketch.sample_count,
        seed: sketch.seed,
        radius_law: sketch.radius_law,
        scale: sketch.scale,
        y_re: sketch.values.iter().map(|v| v.re).collect(),
        y_im: sketch.values.iter().map(|v| v.im).collect(),
    };
    serde_json::to_writer(out, &file)?;
    Ok(())
}

pub fn read_sketch<R: Read>(input: R) -> Result<Sketch> {
    let value: serde_json::Value = serde_json::from_reader(input).map_err(|e| {
        if e.is_eof() {
            Error::UnexpectedEof
        } else {
            Error::Json(e)
        }
    })?;
    if value.get("magic").and_then(|m| m.as_str()) != Some(SKETCH_MAGIC) {
        return Err(Error::BadMagic {
            expected: SKETCH_MAGIC,
        });
    }
    if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
        if v != u64::from(SKETCH_VERSION) {
            return Err(Error::UnsupportedVersion(v as u32));
        }
    }
    let file: SketchFile = serde_json::from_value(value)?;
    if file.y_re.len() != file.m || file.y_im.len() != file.m {
        return Err(Error::Malformed(format!(
            "sketch declares m={} but has {} real and {} imaginary parts",
            file.m,
            file.y_re.len(),
            file.y_im.len()
        )));
    }
    if file.m == 0 || file.n == 0 {
        return Err(Error::Malformed("sketch with m=0 or n=0".into()));
    }
    Ok(Sketch {
        values: file
            .y_re
            .iter()
            .zip(&file.y_im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect(),
        seed: file.seed,
        radius_law: file.radius_law,
        scale: file.scale,
        sample_count: file.t,
        dimension: file.n,
    })
}

pub fn save_sketch(path: &Path, sketch: &Sketch) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_sketch(sketch, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_sketch(path: &Path) -> Result<Sketch> {
    read_sketch(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidFile {
    pub n: usize,
    pub k: usize,
    /// `N x K`, by rows.
    pub matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<GmmHyperparams>,
}

impl CentroidFile {
    pub fn new(centroids: &Centroids, hyper: Option<GmmHyperparams>) -> Self {
        Self {
            n: centroids.dim(),
            k: centroids.count(),
            matrix: centroids.to_rows(),
            hyper,
        }
    }

    pub fn centroids(&self) -> Result<Centroids> {
        let c = Centroids::from_rows(&self.matrix)?;
        if c.dim() != self.n || c.count() != self.k {
            return Err(Error::Malformed(format!(
                "centroid file declares {}x{} but holds {}x{}",
                self.n,
                self.k,
                c.dim(),
                c.count()
            )));
        }
        Ok(c)
    }
}

pub fn save_centroids(path: &Path, file: &CentroidFile) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, file)?;
    out.flush()?;
    Ok(())
}

pub fn load_centroids(path: &Path) -> Result<CentroidFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Ground truth written next to synthetic datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    /// `N x K`, by rows.
    pub means: Vec<Vec<f64>>,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
}

pub fn save_truth(path: &Path, truth: &TruthFile) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, truth)?;
    out.flush()?;
    Ok(())
}

pub fn load_truth(path: &Path) -> Result<TruthFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes reports as CSV with the standard header.
pub fn write_reports<W: Write>(reports: &[EvalReport], out: W, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(header)
        .from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports<R: Read>(input: R) -> Result<Vec<EvalReport>> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
