//! File formats: JSON-Lines fiber sets, binary Gram files, JSON fit results
//! and label lists.
//!
//! The Gram file layout is: magic `GRM1`, one model tag byte, `lambda_w`,
//! `lambda_m`, `gamma` as little-endian f64, `n` as little-endian u64, then
//! the `n(n+1)/2` upper-triangle values row-major as little-endian f64.

use crate::dictionary::{FitConfig, FitResult};
use crate::gram::GramMatrix;
use crate::kernels::{KernelModel, KernelParams};
use crate::model::{Fiber, ModelError};
use nalgebra::{DMatrix, Point3};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const GRAM_MAGIC: &[u8; 4] = b"GRM1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed fiber record: {source}")]
    MalformedRecord {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    InvalidFiber {
        line: usize,
        source: ModelError,
    },
    #[error("line {line}: duplicate fiber id {id}")]
    DuplicateId { id: u64, line: usize },
    #[error("not a Gram file (bad magic)")]
    BadMagic,
    #[error("unknown kernel model tag {0}")]
    UnknownModelTag(u8),
    #[error("Gram payload holds {got} values but the header implies {expected}")]
    PayloadMismatch { expected: usize, got: usize },
    #[error("malformed result file: {0}")]
    MalformedResult(serde_json::Error),
    #[error("inconsistent result file: {0}")]
    InconsistentResult(String),
    #[error("malformed labels file: {0}")]
    MalformedLabels(serde_json::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct FiberRecord {
    id: u64,
    points: Vec<[f64; 3]>,
    signal: Vec<f64>,
}

/// Writes one JSON record per line, in order.
pub fn write_fibers<W: Write>(mut out: W, fibers: &[Fiber]) -> Result<(), IoError> {
    for f in fibers {
        let record = FiberRecord {
            id: f.id(),
            points: f.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
            signal: f.signal().to_vec(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| IoError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-Lines fiber file, reporting the offending line number on any
/// malformed or invalid record. Ids must be unique within the file.
pub fn read_fibers<R: BufRead>(input: R) -> Result<Vec<Fiber>, IoError> {
    let mut fibers = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: FiberRecord = serde_json::from_str(&text)
            .map_err(|source| IoError::MalformedRecord { line: line_no, source })?;
        if !seen.insert(record.id) {
            return Err(IoError::DuplicateId {
                id: record.id,
                line: line_no,
            });
        }
        let points = record
            .points
            .iter()
            .map(|p| Point3::new(p[0], p[1], p[2]))
            .collect();
        let fiber = Fiber::new(record.id, points, record.signal)
            .map_err(|source| IoError::InvalidFiber { line: line_no, source })?;
        fibers.push(fiber);
    }
    Ok(fibers)
}

pub fn save_fibers<P: AsRef<Path>>(path: P, fibers: &[Fiber]) -> Result<(), IoError> {
    write_fibers(BufWriter::new(File::create(path)?), fibers)
}

pub fn load_fibers<P: AsRef<Path>>(path: P) -> Result<Vec<Fiber>, IoError> {
    read_fibers(BufReader::new(File::open(path)?))
}

fn model_tag(model: KernelModel) -> u8 {
    match model {
        KernelModel::FunctionalVarifold => 0,
        KernelModel::Varifold => 1,
        KernelModel::SignalOnly => 2,
        KernelModel::McpRbf => 3,
    }
}

fn model_from_tag(tag: u8) -> Result<KernelModel, IoError> {
    Ok(match tag {
        0 => KernelModel::FunctionalVarifold,
        1 => KernelModel::Varifold,
        2 => KernelModel::SignalOnly,
        3 => KernelModel::McpRbf,
        other => return Err(IoError::UnknownModelTag(other)),
    })
}

/// Writes the binary Gram format (upper triangle only).
pub fn write_gram<W: Write>(mut out: W, gram: &GramMatrix) -> Result<(), IoError> {
    out.write_all(GRAM_MAGIC)?;
    out.write_all(&[model_tag(gram.model())])?;
    for v in [
        gram.params().lambda_w,
        gram.params().lambda_m,
        gram.params().gamma,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&(gram.n() as u64).to_le_bytes())?;
    for i in 0..gram.n() {
        for j in i..gram.n() {
            out.write_all(&gram.get(i, j).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the binary Gram format, restoring symmetry from the stored upper
/// triangle.
pub fn read_gram<R: Read>(mut input: R) -> Result<GramMatrix, IoError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != GRAM_MAGIC {
        return Err(IoError::BadMagic);
    }
    let mut tag = [0u8; 1];
    input.read_exact(&mut tag)?;
    let model = model_from_tag(tag[0])?;
    let mut f64_buf = [0u8; 8];
    let mut next_f64 = |input: &mut R| -> Result<f64, IoError> {
        input.read_exact(&mut f64_buf)?;
        Ok(f64::from_le_bytes(f64_buf))
    };
    let lambda_w = next_f64(&mut input)?;
    let lambda_m = next_f64(&mut input)?;
    let gamma = next_f64(&mut input)?;
    let mut n_buf = [0u8; 8];
    input.read_exact(&mut n_buf)?;
    let n = u64::from_le_bytes(n_buf) as usize;

    let expected = n * (n + 1) / 2;
    let mut payload = Vec::with_capacity(expected);
    let mut buf = [0u8; 8];
    loop {
        match input.read_exact(&mut buf) {
            Ok(()) => payload.push(f64::from_le_bytes(buf)),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
    }
    if payload.len() != expected {
        return Err(IoError::PayloadMismatch {
            expected,
            got: payload.len(),
        });
    }

    let mut values = DMatrix::zeros(n, n);
    let mut it = payload.into_iter();
    for i in 0..n {
        for j in i..n {
            values[(i, j)] = it.next().unwrap();
        }
    }
    let params = KernelParams {
        lambda_w,
        lambda_m,
        gamma,
    };
    Ok(GramMatrix::from_dense(values, model, params))
}

pub fn save_gram<P: AsRef<Path>>(path: P, gram: &GramMatrix) -> Result<(), IoError> {
    write_gram(BufWriter::new(File::create(path)?), gram)
}

pub fn load_gram<P: AsRef<Path>>(path: P) -> Result<GramMatrix, IoError> {
    read_gram(BufReader::new(File::open(path)?))
}

/// JSON fit-result file: labels (null = unassigned), sparse `(atom, fiber,
/// weight)` code triples, sparse `(fiber, atom, weight)` atom triples, the
/// objective trace, and the config echo.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultFile {
    pub n: usize,
    pub m: usize,
    pub labels: Vec<Option<usize>>,
    pub w: Vec<(usize, usize, f64)>,
    pub a: Vec<(usize, usize, f64)>,
    pub objective_trace: Vec<f64>,
    pub config: FitConfig,
    pub seed: u64,
}

impl ResultFile {
    pub fn from_fit(fit: &FitResult, labels: Vec<Option<usize>>, config: &FitConfig) -> Self {
        let codes = fit.codes.codes();
        let mut w = Vec::new();
        for j in 0..codes.nrows() {
            for i in 0..codes.ncols() {
                if codes[(j, i)] != 0.0 {
                    w.push((j, i, codes[(j, i)]));
                }
            }
        }
        let atoms = fit.dictionary.atoms();
        let mut a = Vec::new();
        for i in 0..atoms.nrows() {
            for j in 0..atoms.ncols() {
                if atoms[(i, j)] != 0.0 {
                    a.push((i, j, atoms[(i, j)]));
                }
            }
        }
        ResultFile {
            n: codes.ncols(),
            m: codes.nrows(),
            labels,
            w,
            a,
            objective_trace: fit.objective_trace.clone(),
            config: *config,
            seed: config.seed,
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.labels.len() != self.n {
            return Err(IoError::InconsistentResult(format!(
                "{} labels for n = {}",
                self.labels.len(),
                self.n
            )));
        }
        if self.m != self.config.m {
            return Err(IoError::InconsistentResult(format!(
                "m = {} but config.m = {}",
                self.m, self.config.m
            )));
        }
        for &(atom, fiber, weight) in &self.w {
            if atom >= self.m || fiber >= self.n || !weight.is_finite() {
                return Err(IoError::InconsistentResult(format!(
                    "bad W triple ({atom}, {fiber}, {weight})"
                )));
            }
        }
        for &(fiber, atom, weight) in &self.a {
            if atom >= self.m || fiber >= self.n || !weight.is_finite() {
                return Err(IoError::InconsistentResult(format!(
                    "bad A triple ({fiber}, {atom}, {weight})"
                )));
            }
        }
        if let Some(bad) = self.labels.iter().flatten().find(|&&l| l >= self.m) {
            return Err(IoError::InconsistentResult(format!(
                "label {bad} out of range 0..{}",
                self.m
            )));
        }
        Ok(())
    }
}

pub fn save_result<P: AsRef<Path>>(path: P, result: &ResultFile) -> Result<(), IoError> {
    result.validate()?;
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, result).map_err(|e| IoError::Io(e.into()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn load_result<P: AsRef<Path>>(path: P) -> Result<ResultFile, IoError> {
    let text = std::fs::read_to_string(path)?;
    let result: ResultFile = serde_json::from_str(&text).map_err(IoError::MalformedResult)?;
    result.validate()?;
    Ok(result)
}

/// Planted-label file: a plain JSON array of bundle indices.
pub fn save_labels<P: AsRef<Path>>(path: P, labels: &[usize]) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, labels).map_err(|e| IoError::Io(e.into()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn load_labels<P: AsRef<Path>>(path: P) -> Result<Vec<usize>, IoError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(IoError::MalformedLabels)
}
