//! Data sources: the synthetic binary stream, score datasets loaded from
//! disk, the bundled multiclass generator, and held-out risk estimation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::BetaGrid;
use crate::risk::{LabeledPoint, RiskFunction, ScoreVector};

/// Leading bytes of the compact binary score format.
pub const SCORE_BINARY_MAGIC: &[u8; 8] = b"SCOREB01";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("row {row}: probabilities sum to {sum}, beyond simplex tolerance")]
    Simplex { row: usize, sum: f64 },
    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: u32,
        classes: usize,
    },
    #[error("row {row}: expected {expected} classes, got {got}")]
    InconsistentClasses {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("not a score file (bad magic bytes)")]
    BadMagic,
    #[error("file truncated")]
    Truncated,
    #[error("dataset is empty")]
    Empty,
    #[error("invalid synthetic parameters: {0}")]
    Synthetic(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A stream of labeled points consumed one per calibration step.
pub trait DataStream: Send {
    /// Writes the next element into `out`; returns false when exhausted.
    fn next_into(&mut self, out: &mut LabeledPoint) -> bool;
}

/// The simulation stream: X ~ Uniform[0,1], Y | X ~ Bern(X), emitted as the
/// binary score vector [1 − x, x] so the same pipeline serves both tasks.
pub struct SimulationStream {
    rng: ChaCha12Rng,
}

impl SimulationStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }
}

impl DataStream for SimulationStream {
    fn next_into(&mut self, out: &mut LabeledPoint) -> bool {
        let x: f64 = self.rng.random();
        let y: f64 = self.rng.random();
        let probs = out.scores.probs_mut();
        probs.clear();
        probs.push(1.0 - x);
        probs.push(x);
        out.label = u32::from(y < x);
        true
    }
}

/// An in-memory score dataset with a fixed class count.
#[derive(Debug, Clone)]
pub struct ScoreDataset {
    classes: usize,
    points: Vec<LabeledPoint>,
}

impl ScoreDataset {
    pub fn from_points(points: Vec<LabeledPoint>) -> Result<Self, DataError> {
        let classes = points.first().ok_or(DataError::Empty)?.scores.classes();
        for (i, p) in points.iter().enumerate() {
            if p.scores.classes() != classes {
                return Err(DataError::InconsistentClasses {
                    row: i + 1,
                    expected: classes,
                    got: p.scores.classes(),
                });
            }
        }
        Ok(Self { classes, points })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    /// Splits off the last `holdout` rows for risk estimation; the front part
    /// feeds the calibration trials. Deterministic by construction.
    pub fn split_holdout(mut self, holdout: usize) -> (ScoreDataset, ScoreDataset) {
        let cut = self.points.len().saturating_sub(holdout).max(1);
        let tail = self.points.split_off(cut.min(self.points.len()));
        let classes = self.classes;
        (
            self,
            ScoreDataset {
                classes,
                points: tail,
            },
        )
    }

    /// A freshly shuffled replay of the dataset.
    pub fn replay(&self, seed: u64) -> ReplayStream<'_> {
        let mut order: Vec<u32> = (0..self.points.len() as u32).collect();
        order.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
        ReplayStream {
            points: &self.points,
            order,
            pos: 0,
        }
    }

    /// Dense CSV with header `id,label,p0,…`.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        let mut header = String::from("id,label");
        for c in 0..self.classes {
            header.push_str(&format!(",p{c}"));
        }
        writeln!(out, "{header}").map_err(io_err(path))?;
        for (i, p) in self.points.iter().enumerate() {
            write!(out, "r{i},{}", p.label).map_err(io_err(path))?;
            for &v in p.scores.probs() {
                write!(out, ",{v}").map_err(io_err(path))?;
            }
            writeln!(out).map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }

    /// Compact binary format: magic `SCOREB01`, little-endian u32 class
    /// count, u64 row count, then per row a u32 label followed by
    /// `class_count` little-endian f32 probabilities. Rounding to f32 can
    /// bend a row off the simplex, so the writer folds the rounding debt
    /// into the largest probability.
    pub fn write_binary(&self, path: &Path) -> Result<(), DataError> {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        out.write_all(SCORE_BINARY_MAGIC).map_err(io_err(path))?;
        out.write_all(&(self.classes as u32).to_le_bytes())
            .map_err(io_err(path))?;
        out.write_all(&(self.points.len() as u64).to_le_bytes())
            .map_err(io_err(path))?;
        let mut row: Vec<f32> = vec![0.0; self.classes];
        for p in &self.points {
            out.write_all(&p.label.to_le_bytes()).map_err(io_err(path))?;
            for (r, &v) in row.iter_mut().zip(p.scores.probs()) {
                *r = v as f32;
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            let top = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            row[top] = (row[top] as f64 + (1.0 - sum)) as f32;
            for &r in &row {
                out.write_all(&r.to_le_bytes()).map_err(io_err(path))?;
            }
        }
        out.flush().map_err(io_err(path))
    }

    pub fn load_csv(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(BufReader::new(file));
        let headers = reader
            .headers()
            .map_err(|e| DataError::Header(e.to_string()))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
            return Err(DataError::Header(format!(
                "expected `id,label,p0,…`, got `{}`",
                cols.join(",")
            )));
        }
        for (c, name) in cols[2..].iter().enumerate() {
            if *name != format!("p{c}") {
                return Err(DataError::Header(format!(
                    "probability column {c} named `{name}`, expected `p{c}`"
                )));
            }
        }
        let classes = cols.len() - 2;
        let mut points = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| DataError::Parse {
                row,
                msg: e.to_string(),
            })?;
            if record.len() != classes + 2 {
                return Err(DataError::InconsistentClasses {
                    row,
                    expected: classes,
                    got: record.len().saturating_sub(2),
                });
            }
            let label: u32 = record[1].parse().map_err(|_| DataError::Parse {
                row,
                msg: format!("bad label `{}`", &record[1]),
            })?;
            let mut probs = Vec::with_capacity(classes);
            for c in 0..classes {
                let v: f64 = record[c + 2].parse().map_err(|_| DataError::Parse {
                    row,
                    msg: format!("bad probability `{}` in column p{c}", &record[c + 2]),
                })?;
                probs.push(v);
            }
            points.push(validated_point(row, label, probs)?);
        }
        Self::from_points(points)
    }

    pub fn load_binary(path: &Path) -> Result<Self, DataError> {
        let mut reader = BufReader::new(File::open(path).map_err(io_err(path))?);
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic).map_err(|_| DataError::BadMagic)?;
        if &magic != SCORE_BINARY_MAGIC {
            return Err(DataError::BadMagic);
        }
        let mut buf4 = [0u8; 4];
        let mut buf8 = [0u8; 8];
        reader.read_exact(&mut buf4).map_err(|_| DataError::Truncated)?;
        let classes = u32::from_le_bytes(buf4) as usize;
        reader.read_exact(&mut buf8).map_err(|_| DataError::Truncated)?;
        let rows = u64::from_le_bytes(buf8) as usize;
        if classes == 0 || rows == 0 {
            return Err(DataError::Empty);
        }
        let mut points = Vec::with_capacity(rows);
        let mut raw = vec![0u8; 4 + 4 * classes];
        for idx in 0..rows {
            let row = idx + 1;
            reader.read_exact(&mut raw).map_err(|_| DataError::Truncated)?;
            let label = u32::from_le_bytes(raw[0..4].try_into().unwrap());
            let probs: Vec<f64> = raw[4..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            points.push(validated_point(row, label, probs)?);
        }
        Self::from_points(points)
    }
}

fn validated_point(row: usize, label: u32, probs: Vec<f64>) -> Result<LabeledPoint, DataError> {
    let classes = probs.len();
    let sum: f64 = probs.iter().sum();
    let scores = ScoreVector::new(probs).map_err(|e| match e {
        crate::risk::RiskError::NotASimplex(_) => DataError::Simplex { row, sum },
        other => DataError::Parse {
            row,
            msg: other.to_string(),
        },
    })?;
    LabeledPoint::new(scores, label).map_err(|_| DataError::LabelOutOfRange {
        row,
        label,
        classes,
    })
}

/// Shuffled pass over a dataset.
pub struct ReplayStream<'a> {
    points: &'a [LabeledPoint],
    order: Vec<u32>,
    pos: usize,
}

impl DataStream for ReplayStream<'_> {
    fn next_into(&mut self, out: &mut LabeledPoint) -> bool {
        if self.pos >= self.order.len() {
            return false;
        }
        out.clone_from(&self.points[self.order[self.pos] as usize]);
        self.pos += 1;
        true
    }
}

/// Generates a multiclass dataset shaped like a large classification task:
/// score vectors drawn from a symmetric Dirichlet and labels drawn from the
/// scores themselves, so the scores are perfectly calibrated.
pub fn synthetic_multiclass(
    classes: usize,
    rows: usize,
    concentration: f64,
    seed: u64,
) -> Result<ScoreDataset, DataError> {
    if classes < 2 || rows == 0 || !(concentration > 0.0) {
        return Err(DataError::Synthetic(format!(
            "classes {classes}, rows {rows}, concentration {concentration}"
        )));
    }
    // symmetric Dirichlet via normalized Gamma draws (runtime class count)
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| DataError::Synthetic(e.to_string()))?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut probs: Vec<f64> = (0..classes).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            // all-zero draw is measure zero but guard anyway
            probs.fill(1.0 / classes as f64);
        } else {
            for p in probs.iter_mut() {
                *p /= sum;
            }
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut label = classes as u32 - 1;
        for (c, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                label = c as u32;
                break;
            }
        }
        let scores = ScoreVector::new(probs)
            .map_err(|e| DataError::Synthetic(format!("generated row invalid: {e}")))?;
        points.push(LabeledPoint { scores, label });
    }
    ScoreDataset::from_points(points)
}

/// Mean realized risk over a set of points, per grid threshold. This is the
/// held-out risk estimate used to judge score-file runs.
pub fn empirical_risk_curve(
    points: &[LabeledPoint],
    risk: &dyn RiskFunction,
    grid: &BetaGrid,
) -> Vec<f64> {
    let n = grid.len();
    let total = points
        .par_iter()
        .fold(
            || vec![0.0f64; n],
            |mut acc, p| {
                let mut curve = vec![0.0; n];
                risk.risk_curve(p, grid, &mut curve);
                for i in 0..n {
                    acc[i] += curve[i];
                }
                acc
            },
        )
        .reduce(
            || vec![0.0f64; n],
            |mut a, b| {
                for i in 0..n {
                    a[i] += b[i];
                }
                a
            },
        );
    let count = points.len().max(1) as f64;
    total.into_iter().map(|v| v / count).collect()
}

/// Smallest grid threshold whose estimated risk is at or below `theta`.
pub fn beta_star_from_curve(grid: &BetaGrid, curve: &[f64], theta: f64) -> f64 {
    for (i, &rho) in curve.iter().enumerate() {
        if rho <= theta {
            return grid.get(i);
        }
    }
    1.0
}

/// Risk oracle backed by a per-grid-point curve; queries snap to the nearest
/// grid point (estimates are grid points, so lookups are exact in practice).
pub fn curve_oracle(grid: BetaGrid, curve: Vec<f64>) -> impl Fn(f64) -> f64 + Send + Sync {
    assert_eq!(curve.len(), grid.len());
    move |beta: f64| curve[grid.nearest_index(beta)]
}
