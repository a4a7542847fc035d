//! The online regime engine.
//!
//! Every step pushes the new frame into the season queue, picks the existing
//! regime that describes the queue most cheaply, fits a candidate regime to the
//! queue starting from that pick, and keeps whichever of the two has the lower
//! description cost. The chosen regime's phase weights and the community
//! factors then take one gradient step on the new frame.

use log::debug;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{gradient_step, weight_update, FactorState, RegimeId, SeasonalTensor};
use crate::init::{init_factors, InitOptions};
use crate::mdl::{nonzeros, total_cost, CostBreakdown};
use crate::stream::{MatrixFrame, SeasonQueue, StreamConfig};

/// How often regime selection and extraction run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionCadence {
    EveryStep,
    /// Only at phase 0; other steps reuse the last chosen regime.
    EverySeason,
}

impl std::str::FromStr for SelectionCadence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "every_step" => Ok(Self::EveryStep),
            "every_season" => Ok(Self::EverySeason),
            other => Err(Error::Config(format!(
                "selection cadence must be every_step or every_season, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for SelectionCadence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EveryStep => "every_step",
            Self::EverySeason => "every_season",
        })
    }
}

/// Everything the engine needs besides the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub stream: StreamConfig,
    /// Passes over the queue when fitting a candidate regime.
    pub extraction_epochs: usize,
    pub selection_cadence: SelectionCadence,
    /// Upper bound on `g`; `Some(1)` pins the single-regime baseline.
    pub max_regimes: Option<usize>,
    pub init: InitOptions,
    pub index_cost: IndexCost,
}

/// How the keep-or-create comparison prices the regime index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexCost {
    /// Both sides also pay `log2 g` bits per nonzero entry of the whole bank,
    /// with `g` counted after the candidate is added. This is the index term
    /// of the exact tensor cost.
    Bank,
    /// Compare the per-slice costs alone.
    Ignore,
}

impl std::str::FromStr for IndexCost {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bank" => Ok(Self::Bank),
            "ignore" => Ok(Self::Ignore),
            other => Err(Error::Config(format!(
                "index cost must be bank or ignore, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for IndexCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bank => "bank",
            Self::Ignore => "ignore",
        })
    }
}

impl EngineConfig {
    pub const DEFAULT_EXTRACTION_EPOCHS: usize = 5;

    pub fn new(stream: StreamConfig) -> Self {
        Self {
            stream,
            extraction_epochs: Self::DEFAULT_EXTRACTION_EPOCHS,
            selection_cadence: SelectionCadence::EveryStep,
            max_regimes: None,
            init: InitOptions::default(),
            index_cost: IndexCost::Bank,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        if self.extraction_epochs == 0 {
            return Err(Error::Config("extraction_epochs must be >= 1".into()));
        }
        if self.max_regimes == Some(0) {
            return Err(Error::Config("max_regimes must be >= 1".into()));
        }
        Ok(())
    }

    /// Frames consumed by initialization.
    pub fn init_frames(&self) -> usize {
        3 * self.stream.s
    }
}

/// Outcome of one online step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeRecord {
    pub t: u64,
    /// Regime used for this step's update.
    pub z: usize,
    /// Regime count after the step.
    pub g: usize,
    /// Decision cost of the best existing regime.
    pub c_rs_bits: f64,
    /// Decision cost of the extracted candidate; `None` when no candidate was
    /// evaluated (regime cap reached, or off-cadence step).
    pub c_re_bits: Option<f64>,
    pub created: bool,
}

/// Per-step records of an online run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegimeTrace {
    pub records: Vec<RegimeRecord>,
}

impl RegimeTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: std::io::BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { records })
    }

    /// Time steps at which a regime was created.
    pub fn creations(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().filter(|r| r.created).map(|r| r.t)
    }
}

/// Result of regime selection.
#[derive(Debug, Clone)]
pub struct Selection {
    pub z: RegimeId,
    pub cost: CostBreakdown,
}

/// Result of regime extraction.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub slice: Array2<f64>,
    pub cost: CostBreakdown,
}

/// Sizes of the state the engine retains between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelFootprint {
    /// Floats held by `U` and `V`.
    pub factor_floats: usize,
    /// Floats held by the seasonal tensor.
    pub seasonal_floats: usize,
    pub queue_frames: usize,
    /// Stored (nonzero) cells across queued frames.
    pub queue_entries: usize,
}

impl ModelFootprint {
    pub fn model_floats(&self) -> usize {
        self.factor_floats + self.seasonal_floats
    }
}

/// Online engine state.
#[derive(Debug, Clone, PartialEq)]
pub struct Engine {
    pub(crate) cfg: EngineConfig,
    pub(crate) factors: FactorState,
    pub(crate) regimes: SeasonalTensor,
    pub(crate) queue: SeasonQueue,
    pub(crate) current: RegimeId,
}

impl Engine {
    /// Initializes on `history` and seeds the queue with its last season.
    pub fn initialize(history: &[MatrixFrame], cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let (factors, regimes) = init_factors(history, &cfg.stream, &cfg.init)?;
        let mut queue = SeasonQueue::new(cfg.stream.s);
        let start = history.len().saturating_sub(cfg.stream.s);
        for f in &history[start..] {
            queue.push(f.clone())?;
        }
        Ok(Self {
            cfg,
            factors,
            regimes,
            queue,
            current: RegimeId::FIRST,
        })
    }

    /// Assembles an engine from explicit state, checking that the parts agree.
    pub fn from_parts(
        cfg: EngineConfig,
        factors: FactorState,
        regimes: SeasonalTensor,
        queue: SeasonQueue,
        current: RegimeId,
    ) -> Result<Self> {
        cfg.validate()?;
        regimes.check(current)?;
        if factors.m() != cfg.stream.m || factors.n() != cfg.stream.n || factors.k() != cfg.stream.k {
            return Err(Error::ShapeMismatch("factors do not match configuration".into()));
        }
        if regimes.season() != cfg.stream.s || regimes.k() != cfg.stream.k {
            return Err(Error::ShapeMismatch(
                "seasonal tensor does not match configuration".into(),
            ));
        }
        if queue.season() != cfg.stream.s || queue.iter().any(|x| x.shape() != cfg.stream.shape()) {
            return Err(Error::ShapeMismatch("season queue does not match configuration".into()));
        }
        Ok(Self {
            cfg,
            factors,
            regimes,
            queue,
            current,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn factors(&self) -> &FactorState {
        &self.factors
    }

    pub fn regimes(&self) -> &SeasonalTensor {
        &self.regimes
    }

    pub fn queue(&self) -> &SeasonQueue {
        &self.queue
    }

    pub fn g(&self) -> usize {
        self.regimes.g()
    }

    /// Regime used by the most recent update.
    pub fn current_regime(&self) -> RegimeId {
        self.current
    }

    /// Time index of the last observed frame.
    pub fn last_t(&self) -> u64 {
        self.factors.t
    }

    pub fn footprint(&self) -> ModelFootprint {
        ModelFootprint {
            factor_floats: self.factors.u.len() + self.factors.v.len(),
            seasonal_floats: self.regimes.len(),
            queue_frames: self.queue.len(),
            queue_entries: self.queue.stored_entries(),
        }
    }

    /// Existing regime with the lowest total cost over the queue; ties go to
    /// the lowest index.
    pub fn regime_selection(&self) -> Result<Selection> {
        let mut best: Option<Selection> = None;
        for z in self.regimes.regimes() {
            let cost = total_cost(&self.queue, &self.factors, self.regimes.slice(z)?, &self.cfg.stream)?;
            if best.as_ref().is_none_or(|b| cost.total < b.cost.total) {
                best = Some(Selection { z, cost });
            }
        }
        best.ok_or_else(|| Error::Empty("no regimes".into()))
    }

    /// Fits a candidate slice to the queue starting from `start`, with `U`,
    /// `V` held fixed.
    pub fn regime_extraction(&self, start: &Array2<f64>) -> Result<Extraction> {
        let s = self.cfg.stream.s as u64;
        let mut slice = start.clone();
        for _ in 0..self.cfg.extraction_epochs {
            for x in self.queue.iter() {
                let phase = (x.t() % s) as usize;
                weight_update(
                    self.factors.u.view(),
                    self.factors.v.view(),
                    slice.row_mut(phase),
                    x,
                    self.cfg.stream.eta,
                );
            }
        }
        let cost = total_cost(&self.queue, &self.factors, slice.view(), &self.cfg.stream)?;
        Ok(Extraction { slice, cost })
    }

    fn can_grow(&self) -> bool {
        self.cfg.max_regimes.is_none_or(|cap| self.g() < cap)
    }

    /// Description cost used for the keep-or-create decision. `regimes` is
    /// the bank size under this outcome: `g` when keeping, `g + 1` when the
    /// candidate `slice` is added.
    fn decision_cost(&self, cost: &CostBreakdown, slice: &Array2<f64>, regimes: usize) -> f64 {
        match self.cfg.index_cost {
            IndexCost::Ignore => cost.total,
            IndexCost::Bank => {
                let mut entries: usize = self.regimes.slices().map(nonzeros).sum();
                if regimes > self.g() {
                    entries += nonzeros(slice.view());
                }
                cost.total + entries as f64 * (regimes as f64).log2()
            }
        }
    }

    /// Processes one frame.
    pub fn step(&mut self, x: MatrixFrame) -> Result<RegimeRecord> {
        let stream = self.cfg.stream;
        if x.shape() != stream.shape() {
            return Err(Error::ShapeMismatch(format!(
                "frame t={} is {:?}, engine expects {:?}",
                x.t(),
                x.shape(),
                stream.shape()
            )));
        }
        let expected = self.factors.t + 1;
        if x.t() != expected {
            return Err(Error::NonConsecutive { expected, got: x.t() });
        }
        let t = x.t();
        let phase = (t % stream.s as u64) as usize;
        self.queue.push(x)?;

        let on_cadence = match self.cfg.selection_cadence {
            SelectionCadence::EveryStep => true,
            SelectionCadence::EverySeason => phase == 0,
        };

        let (z, c_rs, c_re, created) = if on_cadence {
            let sel = self.regime_selection()?;
            let g = self.g();
            let rs_slice = self.regimes.clone_regime(sel.z)?;
            let c_rs = self.decision_cost(&sel.cost, &rs_slice, g);
            if self.can_grow() {
                let ext = self.regime_extraction(&rs_slice)?;
                let c_re = self.decision_cost(&ext.cost, &ext.slice, g + 1);
                if c_re < c_rs {
                    let z = self.regimes.push(ext.slice)?;
                    debug!("t={t}: new regime {z} ({c_re:.1} < {c_rs:.1} bits)");
                    (z, c_rs, Some(c_re), true)
                } else {
                    (sel.z, c_rs, Some(c_re), false)
                }
            } else {
                (sel.z, c_rs, None, false)
            }
        } else {
            let cost = total_cost(&self.queue, &self.factors, self.regimes.slice(self.current)?, &stream)?;
            let slice = self.regimes.clone_regime(self.current)?;
            (self.current, self.decision_cost(&cost, &slice, self.g()), None, false)
        };

        let frame = self.queue.iter().last().expect("queue holds the pushed frame");
        let weights = self.regimes.weights_mut(z, phase)?;
        gradient_step(&mut self.factors, weights, frame, stream.eta);
        self.current = z;

        Ok(RegimeRecord {
            t,
            z: z.get(),
            g: self.g(),
            c_rs_bits: c_rs,
            c_re_bits: c_re,
            created,
        })
    }
}

/// Initializes on the first three seasons of `frames` and steps through the
/// rest.
pub fn run_stream(frames: &[MatrixFrame], cfg: EngineConfig) -> Result<(Engine, RegimeTrace)> {
    cfg.validate()?;
    let init_len = cfg.init_frames();
    if frames.len() < init_len {
        return Err(Error::InsufficientFrames(format!(
            "need at least {init_len} frames (three seasons of {}), got {}",
            cfg.stream.s,
            frames.len()
        )));
    }
    let mut engine = Engine::initialize(&frames[..init_len], cfg)?;
    let mut trace = RegimeTrace::default();
    for x in &frames[init_len..] {
        trace.records.push(engine.step(x.clone())?);
    }
    Ok((engine, trace))
}
