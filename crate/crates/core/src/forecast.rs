//! Forecasting and the rolling-origin evaluation protocol.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig};
use crate::error::{Error, Result};
use crate::factors::{reconstruct, RegimeId};
use crate::stream::MatrixFrame;

/// The time `t_s ≡ t (mod s)` of the most recent season observed up to `r`,
/// i.e. the unique value with `r - s < t_s <= r`. Negative when `r < s - 1`.
pub fn season_index(r: i64, t: i64, s: i64) -> i64 {
    assert!(s >= 1, "season length must be >= 1");
    r - (r - t).rem_euclid(s)
}

/// Which regime a forecast uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimePolicy {
    /// The regime with the lowest total cost over the current season queue.
    PaperRule,
    Fixed(RegimeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForecastRequest {
    pub targets: Vec<u64>,
    pub policy: RegimePolicy,
}

impl ForecastRequest {
    /// Targets `r+1 ..= r+horizon`.
    pub fn horizon(r: u64, horizon: usize, policy: RegimePolicy) -> Self {
        Self {
            targets: (1..=horizon as u64).map(|h| r + h).collect(),
            policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// Last observed time.
    pub r: u64,
    pub z: RegimeId,
    /// `(target, predicted matrix)` in request order.
    pub frames: Vec<(u64, Array2<f64>)>,
}

impl Forecast {
    pub fn matrices(&self) -> Vec<Array2<f64>> {
        self.frames.iter().map(|(_, x)| x.clone()).collect()
    }

    /// CSV `t,row_id,col_id,value`, one line per cell. With `omit_zeros`,
    /// cells predicted as exactly 0 are skipped.
    pub fn write_csv<W: Write>(&self, out: W, omit_zeros: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "row_id", "col_id", "value"])?;
        for (t, x) in &self.frames {
            for ((i, j), &v) in x.indexed_iter() {
                if omit_zeros && v == 0.0 {
                    continue;
                }
                w.write_record([t.to_string(), i.to_string(), j.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Forecasts `req.targets` from the engine's current state. The regime is
/// fixed once for the whole request.
pub fn forecast(engine: &Engine, req: &ForecastRequest) -> Result<Forecast> {
    let r = engine.last_t();
    if let Some(&bad) = req.targets.iter().find(|&&t| t <= r) {
        return Err(Error::Config(format!(
            "forecast target {bad} is not after the last observed time {r}"
        )));
    }
    let z = match req.policy {
        RegimePolicy::PaperRule => engine.regime_selection()?.z,
        RegimePolicy::Fixed(z) => {
            engine.regimes().check(z)?;
            z
        }
    };
    let s = engine.config().stream.s as i64;
    let slice = engine.regimes().slice(z)?;
    let f = engine.factors();
    let frames = req
        .targets
        .iter()
        .map(|&t| {
            let phase = season_index(r as i64, t as i64, s).rem_euclid(s) as usize;
            let mut x = reconstruct(f.u.view(), f.v.view(), slice.row(phase));
            x.mapv_inplace(|v| v.max(0.0));
            (t, x)
        })
        .collect();
    Ok(Forecast { r, z, frames })
}

/// Which cells enter the RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseCells {
    /// Every cell; absent sparse cells count as 0.
    #[default]
    All,
    /// Only cells stored in the actual frames.
    NonzeroOnly,
}

fn check_pairs(pred: &[Array2<f64>], actual: &[MatrixFrame]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions but {} actual frames",
            pred.len(),
            actual.len()
        )));
    }
    for (p, x) in pred.iter().zip(actual) {
        if p.dim() != x.shape() {
            return Err(Error::ShapeMismatch(format!(
                "prediction is {:?}, frame t={} is {:?}",
                p.dim(),
                x.t(),
                x.shape()
            )));
        }
    }
    Ok(())
}

/// Root mean squared error over all cells of all steps.
pub fn rmse(pred: &[Array2<f64>], actual: &[MatrixFrame]) -> Result<f64> {
    rmse_with(pred, actual, RmseCells::All)
}

pub fn rmse_with(pred: &[Array2<f64>], actual: &[MatrixFrame], cells: RmseCells) -> Result<f64> {
    check_pairs(pred, actual)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, x) in pred.iter().zip(actual) {
        match cells {
            RmseCells::All => {
                let mut d = p.clone();
                for &(i, j, v) in x.entries() {
                    d[(i as usize, j as usize)] -= v;
                }
                sum += d.iter().map(|e| e * e).sum::<f64>();
                count += p.len();
            }
            RmseCells::NonzeroOnly => {
                for &(i, j, v) in x.entries() {
                    let e = p[(i as usize, j as usize)] - v;
                    sum += e * e;
                }
                count += x.nnz();
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("no cells to score".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// Rolling-origin plan: window `i` trains on the first `r_train + i·r_test`
/// frames and forecasts the following `r_test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub r_train: usize,
    pub r_test: usize,
    pub repeats: usize,
}

impl EvalPlan {
    pub fn validate(&self, s: usize) -> Result<()> {
        if self.r_train < 3 * s {
            return Err(Error::Config(format!(
                "r_train must be at least 3 seasons ({}), got {}",
                3 * s,
                self.r_train
            )));
        }
        if self.r_test == 0 {
            return Err(Error::Config("r_test must be >= 1".into()));
        }
        Ok(())
    }

    pub fn frames_needed(&self) -> usize {
        self.r_train + self.repeats * self.r_test
    }

    pub fn origin(&self, window: usize) -> usize {
        self.r_train + window * self.r_test
    }

    /// Checks that `available` frames cover the plan, naming the largest
    /// feasible plan otherwise.
    pub fn check_length(&self, available: usize) -> Result<()> {
        if self.frames_needed() <= available {
            return Ok(());
        }
        let msg = if available > self.r_train {
            let repeats = (available - self.r_train) / self.r_test;
            format!(
                "plan needs {} frames but the stream has {available}; largest feasible plan is r_train={}, r_test={}, repeats={repeats}",
                self.frames_needed(),
                self.r_train,
                self.r_test
            )
        } else if available > self.r_test {
            format!(
                "plan needs {} frames but the stream has {available}; largest feasible plan is r_train={}, r_test={}, repeats=1",
                self.frames_needed(),
                available - self.r_test,
                self.r_test
            )
        } else {
            format!(
                "plan needs {} frames but the stream has only {available}, fewer than one test block",
                self.frames_needed()
            )
        };
        Err(Error::InsufficientFrames(msg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ssmf,
    /// The same engine with regime creation disabled.
    SmfSingleRegime,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ssmf => "ssmf",
            Self::SmfSingleRegime => "smf",
        }
    }

    pub fn configure(&self, mut cfg: EngineConfig) -> EngineConfig {
        if *self == Self::SmfSingleRegime {
            cfg.max_regimes = Some(1);
        }
        cfg
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssmf" => Ok(Self::Ssmf),
            "smf" | "smf_single_regime" => Ok(Self::SmfSingleRegime),
            other => Err(Error::Config(format!("method must be ssmf or smf, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub window: usize,
    pub r_train: usize,
    pub method: Method,
    pub rmse: f64,
    /// Time to fit the first `r_train` frames and forecast, in milliseconds.
    pub wall_clock_ms: f64,
}

/// Runs the plan for each method. One engine per method is stepped forward
/// through the windows; since the engine is deterministic this gives the same
/// state as refitting each window from scratch, and `wall_clock_ms` counts
/// all fitting up to that window's origin.
pub fn rolling_eval(
    frames: &[MatrixFrame],
    plan: &EvalPlan,
    methods: &[Method],
    cfg: &EngineConfig,
    cells: RmseCells,
) -> Result<Vec<EvalRow>> {
    plan.validate(cfg.stream.s)?;
    plan.check_length(frames.len())?;
    let mut rows = Vec::with_capacity(plan.repeats * methods.len());
    if plan.repeats == 0 {
        return Ok(rows);
    }
    for &method in methods {
        let cfg = method.configure(*cfg);
        let init_len = cfg.init_frames();
        let started = Instant::now();
        let mut engine = Engine::initialize(&frames[..init_len], cfg)?;
        let mut fit_time = started.elapsed();
        let mut next = init_len;
        for window in 0..plan.repeats {
            let origin = plan.origin(window);
            let clock = Instant::now();
            while next < origin {
                engine.step(frames[next].clone())?;
                next += 1;
            }
            fit_time += clock.elapsed();
            let clock = Instant::now();
            let req = ForecastRequest::horizon(engine.last_t(), plan.r_test, RegimePolicy::PaperRule);
            let fc = forecast(&engine, &req)?;
            let score = rmse_with(&fc.matrices(), &frames[origin..origin + plan.r_test], cells)?;
            let elapsed = fit_time + clock.elapsed();
            rows.push(EvalRow {
                window,
                r_train: origin,
                method,
                rmse: score,
                wall_clock_ms: elapsed.as_secs_f64() * 1e3,
            });
        }
    }
    rows.sort_by_key(|r| (r.window, r.method));
    Ok(rows)
}

/// CSV `window,r_train,method,rmse,wall_clock_ms`.
pub fn write_eval_csv<W: Write>(rows: &[EvalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window", "r_train", "method", "rmse", "wall_clock_ms"])?;
    for r in rows {
        w.write_record([
            r.window.to_string(),
            r.r_train.to_string(),
            r.method.to_string(),
            r.rmse.to_string(),
            format!("{:.3}", r.wall_clock_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub windows: usize,
    pub mean_rmse: f64,
    pub median_rmse: f64,
    pub total_wall_clock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub plan: EvalPlan,
    pub rmse_cells: RmseCells,
    pub methods: BTreeMap<String, MethodSummary>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

pub fn summarize(rows: &[EvalRow], plan: EvalPlan, cells: RmseCells) -> EvalSummary {
    let mut by_method: BTreeMap<String, Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(r.method.to_string()).or_default().push(r);
    }
    let methods = by_method
        .into_iter()
        .map(|(name, rs)| {
            let mut scores: Vec<f64> = rs.iter().map(|r| r.rmse).collect();
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            let summary = MethodSummary {
                windows: rs.len(),
                mean_rmse: mean,
                median_rmse: median(&mut scores).unwrap_or(f64::NAN),
                total_wall_clock_ms: rs.iter().map(|r| r.wall_clock_ms).sum(),
            };
            (name, summary)
        })
        .collect();
    EvalSummary {
        plan,
        rmse_cells: cells,
        methods,
    }
}

/// Learning rates tried by [`select_eta`].
pub const ETA_GRID: [f64; 4] = [0.1, 0.2, 0.3, 0.4];

/// Picks the learning rate whose engine, fit on all but the last season of
/// `frames`, best forecasts that season. Ties keep the earlier grid value.
pub fn select_eta(frames: &[MatrixFrame], cfg: &EngineConfig, grid: &[f64]) -> Result<f64> {
    let s = cfg.stream.s;
    if frames.len() < cfg.init_frames() + s {
        return Err(Error::InsufficientFrames(format!(
            "eta selection needs at least {} frames, got {}",
            cfg.init_frames() + s,
            frames.len()
        )));
    }
    let split = frames.len() - s;
    let mut best: Option<(f64, f64)> = None;
    for &eta in grid {
        let mut c = *cfg;
        c.stream.eta = eta;
        let (engine, _) = crate::engine::run_stream(&frames[..split], c)?;
        let req = ForecastRequest::horizon(engine.last_t(), s, RegimePolicy::PaperRule);
        let fc = forecast(&engine, &req)?;
        let score = rmse(&fc.matrices(), &frames[split..])?;
        log::debug!("eta {eta}: validation rmse {score}");
        if score.is_finite() && best.is_none_or(|(_, b)| score < b) {
            best = Some((eta, score));
        }
    }
    best.map(|(eta, _)| eta)
        .ok_or_else(|| Error::Config("no learning rate produced a finite validation error".into()))
}
