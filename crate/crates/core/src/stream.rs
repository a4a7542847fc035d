//! Matrix frames, the event binner, and the one-season sliding queue.
//!
//! A stream is a sequence of sparse nonnegative `(m x n)` count matrices, one
//! per time bin. Absent cells are true zeros. Frames are immutable once
//! emitted by the binner.

use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped event after id assignment and time binning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub row: u32,
    pub col: u32,
    pub time: u64,
    pub count: f64,
}

/// A sparse `(m x n)` count matrix observed at time bin `t`.
///
/// Entries are stored sorted by `(row, col)` with no duplicates and no
/// explicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFrame {
    t: u64,
    shape: (usize, usize),
    entries: Vec<(u32, u32, f64)>,
}

impl MatrixFrame {
    /// An all-zero frame.
    pub fn empty(t: u64, shape: (usize, usize)) -> Self {
        Self {
            t,
            shape,
            entries: Vec::new(),
        }
    }

    /// Builds a frame from `(row, col, value)` triples. Duplicate cells are
    /// summed; zero-valued cells are dropped.
    pub fn from_entries<I>(t: u64, shape: (usize, usize), entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32, f64)>,
    {
        let mut cells: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (r, c, v) in entries {
            if r as usize >= shape.0 || c as usize >= shape.1 {
                return Err(Error::ShapeMismatch(format!(
                    "cell ({r}, {c}) outside frame shape {}x{}",
                    shape.0, shape.1
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidValue(format!(
                    "cell ({r}, {c}) has value {v}; counts must be finite and >= 0"
                )));
            }
            *cells.entry((r, c)).or_insert(0.0) += v;
        }
        Ok(Self::from_cells(t, shape, cells))
    }

    fn from_cells(t: u64, shape: (usize, usize), cells: BTreeMap<(u32, u32), f64>) -> Self {
        let entries = cells
            .into_iter()
            .filter(|&(_, v)| v != 0.0)
            .map(|((r, c), v)| (r, c, v))
            .collect();
        Self { t, shape, entries }
    }

    /// Sparsifies a dense nonnegative matrix.
    pub fn from_dense(t: u64, dense: &Array2<f64>) -> Result<Self> {
        let shape = dense.dim();
        let entries = dense
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((r, c), &v)| (r as u32, c as u32, v));
        Self::from_entries(t, shape, entries)
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries
            .binary_search_by(|&(r, c, _)| (r as usize, c as usize).cmp(&(row, col)))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.shape);
        for &(r, c, v) in &self.entries {
            out[[r as usize, c as usize]] = v;
        }
        out
    }

    /// Overwrites `out` with `self - predicted`.
    pub fn residual_into(&self, predicted: &Array2<f64>, out: &mut Array2<f64>) {
        debug_assert_eq!(predicted.dim(), self.shape);
        out.zip_mut_with(predicted, |o, &p| *o = -p);
        for &(r, c, v) in &self.entries {
            out[[r as usize, c as usize]] += v;
        }
    }

    /// Returns `self - predicted` as a dense matrix.
    pub fn residual(&self, predicted: &Array2<f64>) -> Result<Array2<f64>> {
        if predicted.dim() != self.shape {
            return Err(Error::ShapeMismatch(format!(
                "prediction is {:?}, frame is {:?}",
                predicted.dim(),
                self.shape
            )));
        }
        let mut out = Array2::zeros(self.shape);
        self.residual_into(predicted, &mut out);
        Ok(out)
    }
}

/// Dimensions and coding parameters shared by the whole pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// Rows of every frame.
    pub m: usize,
    /// Columns of every frame.
    pub n: usize,
    /// Season length in time bins.
    pub s: usize,
    /// Number of latent components.
    pub k: usize,
    /// Gradient step size.
    pub eta: f64,
    /// Bits charged per stored float.
    pub c_f: f64,
    /// Lower bound on the residual coder's standard deviation.
    pub sigma_floor: f64,
    /// Residual quantization width used by the data encoding cost.
    pub bin_width: f64,
}

impl StreamConfig {
    pub const DEFAULT_K: usize = 15;
    pub const DEFAULT_C_F: f64 = 32.0;
    pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;
    pub const DEFAULT_BIN_WIDTH: f64 = 1.0;

    /// Configuration with the default coding parameters.
    pub fn new(m: usize, n: usize, s: usize, k: usize, eta: f64) -> Self {
        Self {
            m,
            n,
            s,
            k,
            eta,
            c_f: Self::DEFAULT_C_F,
            sigma_floor: Self::DEFAULT_SIGMA_FLOOR,
            bin_width: Self::DEFAULT_BIN_WIDTH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [("m", self.m), ("n", self.n), ("s", self.s), ("k", self.k)];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        let positive = [
            ("eta", self.eta),
            ("c_f", self.c_f),
            ("sigma_floor", self.sigma_floor),
            ("bin_width", self.bin_width),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }
}

/// Sliding window over the most recent `s` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonQueue {
    season: usize,
    frames: VecDeque<MatrixFrame>,
}

impl SeasonQueue {
    pub fn new(season: usize) -> Self {
        assert!(season >= 1, "season length must be >= 1");
        Self {
            season,
            frames: VecDeque::with_capacity(season),
        }
    }

    /// Appends `frame`, evicting the oldest frame once the queue holds a full
    /// season. The frame must directly follow the current frontier.
    pub fn push(&mut self, frame: MatrixFrame) -> Result<()> {
        if let Some(last) = self.frames.back() {
            let expected = last.t() + 1;
            if frame.t() != expected {
                return Err(Error::NonConsecutive {
                    expected,
                    got: frame.t(),
                });
            }
            if frame.shape() != last.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "frame t={} is {:?}, queue holds {:?}",
                    frame.t(),
                    frame.shape(),
                    last.shape()
                )));
            }
        }
        if self.frames.len() == self.season {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
        Ok(())
    }

    pub fn season(&self) -> usize {
        self.season
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Time index of the newest frame.
    pub fn frontier(&self) -> Option<u64> {
        self.frames.back().map(MatrixFrame::t)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &MatrixFrame> + Clone {
        self.frames.iter()
    }

    /// Number of stored (nonzero) cells across all queued frames.
    pub fn stored_entries(&self) -> usize {
        self.frames.iter().map(MatrixFrame::nnz).sum()
    }
}

/// Accumulates events into per-bin frames, tolerating out-of-order arrival
/// within `reorder_window` bins of the newest event seen.
#[derive(Debug)]
pub struct FrameBinner {
    shape: (usize, usize),
    reorder_window: u64,
    next_t: u64,
    max_seen: Option<u64>,
    pending: BTreeMap<u64, BTreeMap<(u32, u32), f64>>,
}

impl FrameBinner {
    pub fn new(shape: (usize, usize), reorder_window: u64) -> Self {
        Self {
            shape,
            reorder_window,
            next_t: 0,
            max_seen: None,
            pending: BTreeMap::new(),
        }
    }

    /// Adds one event; returns any frames that can no longer receive events.
    pub fn push(&mut self, ev: EventRecord) -> Result<Vec<MatrixFrame>> {
        if ev.row as usize >= self.shape.0 || ev.col as usize >= self.shape.1 {
            return Err(Error::ShapeMismatch(format!(
                "event ({}, {}) outside frame shape {}x{}",
                ev.row, ev.col, self.shape.0, self.shape.1
            )));
        }
        if !ev.count.is_finite() || ev.count < 0.0 {
            return Err(Error::InvalidValue(format!("event count {}", ev.count)));
        }
        if ev.time < self.next_t {
            return Err(Error::LateArrival {
                t: ev.time,
                frontier: self.next_t - 1,
            });
        }
        *self
            .pending
            .entry(ev.time)
            .or_default()
            .entry((ev.row, ev.col))
            .or_insert(0.0) += ev.count;
        let newest = self.max_seen.map_or(ev.time, |m| m.max(ev.time));
        self.max_seen = Some(newest);

        // bins older than newest - window are closed
        let mut out = Vec::new();
        while self.next_t + self.reorder_window < newest {
            out.push(self.emit_next());
        }
        Ok(out)
    }

    fn emit_next(&mut self) -> MatrixFrame {
        let t = self.next_t;
        self.next_t += 1;
        let cells = self.pending.remove(&t).unwrap_or_default();
        MatrixFrame::from_cells(t, self.shape, cells)
    }

    /// Emits every remaining frame up to the newest event seen.
    pub fn finish(mut self) -> Vec<MatrixFrame> {
        let mut out = Vec::new();
        if let Some(newest) = self.max_seen {
            while self.next_t <= newest {
                out.push(self.emit_next());
            }
        }
        out
    }
}

/// Frames produced by [`bin_to_frames`] along with the events it refused.
#[derive(Debug, Default)]
pub struct Binned {
    pub frames: Vec<MatrixFrame>,
    pub rejected: Vec<(EventRecord, Error)>,
}

/// Bins a stream of events into consecutive frames starting at `t = 0`,
/// filling gaps with empty frames.
pub fn bin_to_frames<I>(events: I, shape: (usize, usize), reorder_window: u64) -> Binned
where
    I: IntoIterator<Item = EventRecord>,
{
    let mut binner = FrameBinner::new(shape, reorder_window);
    let mut out = Binned::default();
    for ev in events {
        match binner.push(ev) {
            Ok(frames) => out.frames.extend(frames),
            Err(e) => out.rejected.push((ev, e)),
        }
    }
    out.frames.extend(binner.finish());
    out
}
