use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use ssmf::cache::{read_frame_cache, write_frame_cache, CacheHeader};
use ssmf::checkpoint::{load_engine, save_engine};
use ssmf::engine::IndexCost;
use ssmf::forecast::{
    forecast, rolling_eval, select_eta, summarize, write_eval_csv, EvalPlan, ForecastRequest, Method, RegimePolicy,
    RmseCells, ETA_GRID,
};
use ssmf::ingest::{ingest_events, parse_timestamp, Frequency, IngestSchema};
use ssmf::stream::bin_to_frames;
use ssmf::synth::{generate, SynthSpec};
use ssmf::{run_stream, EngineConfig, MatrixFrame, RegimeId, SelectionCadence, StreamConfig};

use crate::config::Settings;
use crate::{Cli, CliError, Command, EngineArgs, EvalArgs, ForecastArgs, IngestArgs, RunArgs, SynthArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Fixed learning rate or grid selection.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Eta {
    Auto,
    Fixed(f64),
}

impl FromStr for Eta {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Eta::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(Eta::Fixed(v)),
            _ => Err(format!("expected auto or a positive number, got {s:?}")),
        }
    }
}

impl fmt::Display for Eta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Eta::Auto => f.write_str("auto"),
            Eta::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// `r_train,r_test,repeats`.
#[derive(Debug, Clone, Copy)]
struct PlanArg(EvalPlan);

impl FromStr for PlanArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("plan must be r_train,r_test,repeats: {e}"))?;
        match nums[..] {
            [r_train, r_test, repeats] => Ok(PlanArg(EvalPlan {
                r_train,
                r_test,
                repeats,
            })),
            _ => Err(format!("plan must be r_train,r_test,repeats, got {s:?}")),
        }
    }
}

impl fmt::Display for PlanArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0.r_train, self.0.r_test, self.0.repeats)
    }
}

/// Display adapter so paths can go through [`Settings`].
#[derive(Debug, Clone)]
struct PathArg(PathBuf);

impl FromStr for PathArg {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(PathArg(PathBuf::from(s)))
    }
}

impl fmt::Display for PathArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

fn path_flag(p: Option<PathBuf>) -> Option<PathArg> {
    p.map(PathArg)
}

fn parse_core<T: FromStr<Err = ssmf::Error>>(key: &str, raw: Option<String>) -> Result<Option<T>> {
    raw.map(|r| r.parse::<T>().map_err(|e| CliError::Usage(format!("--{key}: {e}"))))
        .transpose()
}

struct Context {
    settings: Settings,
    seed: Option<u64>,
    out_dir: PathBuf,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut settings = Settings::load(cli.config.as_deref())?;
        let out_dir = settings
            .or_default("out-dir", path_flag(cli.out_dir.clone()), PathArg(".".into()))?
            .0;
        Ok(Self {
            settings,
            seed: cli.seed,
            out_dir,
        })
    }

    fn output(&mut self, flag: Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let name = self
            .settings
            .or_default("out", path_flag(flag), PathArg(default.into()))?
            .0;
        Ok(self.out_dir.join(name))
    }

    fn finish(self, command: &str) -> Result<()> {
        for key in self.settings.unused_keys() {
            warn!("config key {key:?} is not used by {command}");
        }
        let path = self.out_dir.join(format!("{command}.config"));
        fs::write(&path, self.settings.manifest(command))?;
        info!("wrote {}", path.display());
        Ok(())
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut ctx = Context::new(&cli)?;
    fs::create_dir_all(&ctx.out_dir)?;
    let name = match cli.command {
        Command::Ingest(a) => {
            ingest(&mut ctx, a)?;
            "ingest"
        }
        Command::Run(a) => {
            run(&mut ctx, a)?;
            "run"
        }
        Command::Forecast(a) => {
            forecast_cmd(&mut ctx, a)?;
            "forecast"
        }
        Command::Eval(a) => {
            eval(&mut ctx, a)?;
            "eval"
        }
        Command::Synth(a) => {
            synth(&mut ctx, a)?;
            "synth"
        }
    };
    ctx.finish(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_frames(path: &Path) -> Result<(CacheHeader, Vec<MatrixFrame>)> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_frame_cache(BufReader::new(file))?)
}

fn ingest(ctx: &mut Context, a: IngestArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let input = s.required("input", path_flag(a.input))?.0;
    let row_col: String = s.required("row-col", a.row_col)?;
    let col_col: String = s.required("col-col", a.col_col)?;
    let time_col: String = s.required("time-col", a.time_col)?;
    let count_col: Option<String> = s.value("count-col", a.count_col, None)?;
    let frequency: Frequency = s.required("frequency", parse_core("frequency", a.frequency)?)?;
    let default_delim = if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv")) {
        '\t'
    } else {
        ','
    };
    let delimiter: char = s.or_default("delimiter", a.delimiter, default_delim)?;
    if !delimiter.is_ascii() {
        return Err(CliError::Usage(format!(
            "delimiter must be a single ASCII character, got {delimiter:?}"
        )));
    }
    let default_season = match frequency {
        Frequency::Hourly => Some(24),
        Frequency::Daily => Some(7),
        Frequency::Weekly => Some(52),
        Frequency::Seconds(_) => None,
    };
    let season: usize = s
        .value("season", a.season, default_season)?
        .ok_or_else(|| CliError::Usage("--season is required when --frequency is given in seconds".into()))?;
    if season == 0 {
        return Err(CliError::Usage("--season must be >= 1".into()));
    }
    let epoch_flag = s.value::<String>("epoch", a.epoch, None)?;
    let explicit_epoch = epoch_flag
        .map(|raw| {
            parse_timestamp(&raw).ok_or_else(|| CliError::Usage(format!("--epoch: unparseable timestamp {raw:?}")))
        })
        .transpose()?;
    let out = ctx.output(a.out, "frames.bin")?;

    let unix = chrono::DateTime::from_timestamp(0, 0).expect("unix epoch").naive_utc();
    let schema = IngestSchema {
        row_col,
        col_col,
        time_col,
        count_col,
        frequency,
        epoch: explicit_epoch.unwrap_or(unix),
        delimiter: delimiter as u8,
    };
    let mut ing = ingest_events(&input, &schema)?;
    if ing.events.is_empty() {
        return Err(ssmf::Error::Empty(format!("no usable events in {}", input.display())).into());
    }
    if explicit_epoch.is_none() {
        let first = ing.events.iter().map(|e| e.time).min().expect("nonempty");
        for e in &mut ing.events {
            e.time -= first;
        }
        let secs = i64::try_from(first * frequency.seconds())
            .map_err(|_| CliError::Usage("timestamps out of range".into()))?;
        let epoch = chrono::DateTime::from_timestamp(secs, 0).expect("in range").naive_utc();
        ctx.settings.note(format!(
            "epoch resolved from the earliest event: {}",
            epoch.format("%Y-%m-%dT%H:%M:%S")
        ));
        ctx.settings
            .value("epoch", Some(epoch.format("%Y-%m-%dT%H:%M:%S").to_string()), None)?;
    }
    for m in &ing.malformed {
        warn!("line {}: {}", m.line, m.reason);
    }
    // The whole file is one batch, so order events by time before binning.
    ing.events.sort_by_key(|e| e.time);
    let shape = ing.shape();
    let binned = bin_to_frames(ing.events.iter().copied(), shape, 0);
    debug_assert!(binned.rejected.is_empty());
    let header = CacheHeader {
        m: shape.0 as u32,
        n: shape.1 as u32,
        s: season as u32,
    };
    write_frame_cache(create(&out)?, header, &binned.frames)?;
    ing.rows.write_csv(create(&ctx.out_dir.join("rows.csv"))?)?;
    ing.cols.write_csv(create(&ctx.out_dir.join("cols.csv"))?)?;
    let mut bad = csv::Writer::from_writer(create(&ctx.out_dir.join("malformed.csv"))?);
    bad.write_record(["line", "reason"]).map_err(ssmf::Error::from)?;
    for m in &ing.malformed {
        bad.write_record([m.line.to_string(), m.reason.clone()])
            .map_err(ssmf::Error::from)?;
    }
    bad.flush()?;
    info!(
        "{} events, {} malformed rows, {}x{} frames, {} steps -> {}",
        ing.events.len(),
        ing.malformed.len(),
        shape.0,
        shape.1,
        binned.frames.len(),
        out.display()
    );
    Ok(())
}

/// Resolves the engine settings; `eta_frames` are the frames used when the
/// learning rate is selected automatically.
fn engine_config(
    ctx: &mut Context,
    a: EngineArgs,
    header: CacheHeader,
    eta_frames: &[MatrixFrame],
) -> Result<EngineConfig> {
    let seed = ctx.seed;
    let s = &mut ctx.settings;
    let k: usize = s.or_default("k", a.k, 15)?;
    let eta: Eta = s.or_default(
        "eta",
        a.eta
            .map(|r| r.parse::<Eta>().map_err(|e| CliError::Usage(format!("--eta: {e}"))))
            .transpose()?,
        Eta::Auto,
    )?;
    let epochs: usize = s.or_default(
        "extraction-epochs",
        a.extraction_epochs,
        EngineConfig::DEFAULT_EXTRACTION_EPOCHS,
    )?;
    let cadence: SelectionCadence = s.or_default(
        "cadence",
        parse_core("cadence", a.cadence)?,
        SelectionCadence::EveryStep,
    )?;
    let max_regimes: Option<usize> = s.value("max-regimes", a.max_regimes, None)?;
    let index_cost: IndexCost = s.or_default("index-cost", parse_core("index-cost", a.index_cost)?, IndexCost::Bank)?;
    let mut stream = StreamConfig::new(header.m as usize, header.n as usize, header.s as usize, k, 0.1);
    stream.bin_width = s.or_default("bin-width", a.bin_width, stream.bin_width)?;
    stream.c_f = s.or_default("c-f", a.c_f, stream.c_f)?;
    stream.sigma_floor = s.or_default("sigma-floor", a.sigma_floor, stream.sigma_floor)?;
    let mut cfg = EngineConfig::new(stream);
    cfg.init.seed = s.or_default("seed", seed, cfg.init.seed)?;
    cfg.extraction_epochs = epochs;
    cfg.selection_cadence = cadence;
    cfg.max_regimes = max_regimes;
    cfg.index_cost = index_cost;
    cfg.validate()?;
    cfg.stream.eta = match eta {
        Eta::Fixed(v) => v,
        Eta::Auto => {
            let chosen = select_eta(eta_frames, &cfg, &ETA_GRID)?;
            info!("selected eta {chosen}");
            s.note(format!("eta selected by validation: {chosen}"));
            chosen
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(ctx: &mut Context, a: RunArgs) -> Result<()> {
    let frames_path = ctx.settings.required("frames", path_flag(a.frames))?.0;
    let (header, frames) = load_frames(&frames_path)?;
    let cfg = engine_config(ctx, a.engine, header, &frames)?;
    let (engine, trace) = run_stream(&frames, cfg)?;
    let checkpoint = ctx.out_dir.join("checkpoint.bin");
    save_engine(&checkpoint, &engine)?;
    trace.write_jsonl(create(&ctx.out_dir.join("trace.jsonl"))?)?;
    let created: Vec<u64> = trace.creations().collect();
    info!(
        "{} steps, g = {}, regimes created at t = {:?} -> {}",
        frames.len(),
        engine.g(),
        created,
        checkpoint.display()
    );
    Ok(())
}

fn forecast_cmd(ctx: &mut Context, a: ForecastArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let checkpoint = s.required("checkpoint", path_flag(a.checkpoint))?.0;
    let horizon: usize = s.required("horizon", a.horizon)?;
    if horizon == 0 {
        return Err(CliError::Usage("--horizon must be >= 1".into()));
    }
    let regime: Option<usize> = s.value("regime", a.regime, None)?;
    let omit_zeros = s.switch("omit-zeros", a.omit_zeros)?;
    let out = ctx.output(a.out, "forecast.csv")?;
    let engine = load_engine(&checkpoint)?;
    let policy = match regime {
        None => RegimePolicy::PaperRule,
        Some(z) => RegimePolicy::Fixed(RegimeId::new(z).ok_or(ssmf::Error::RegimeOutOfRange { z, g: engine.g() })?),
    };
    let fc = forecast(&engine, &ForecastRequest::horizon(engine.last_t(), horizon, policy))?;
    fc.write_csv(create(&out)?, omit_zeros)?;
    info!(
        "{horizon} steps from t = {} with regime {} -> {}",
        fc.r,
        fc.z.get(),
        out.display()
    );
    Ok(())
}

fn eval(ctx: &mut Context, a: EvalArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let frames_path = s.required("frames", path_flag(a.frames))?.0;
    let methods: Vec<Method> = s.list(
        "method",
        a.methods
            .iter()
            .map(|m| {
                m.parse::<Method>()
                    .map_err(|e| CliError::Usage(format!("--method: {e}")))
            })
            .collect::<Result<Vec<_>>>()?,
        vec![Method::Ssmf, Method::SmfSingleRegime],
    )?;
    let plan_flag = a
        .plan
        .map(|p| {
            p.parse::<PlanArg>()
                .map_err(|e| CliError::Usage(format!("--plan: {e}")))
        })
        .transpose()?;
    let cells = if s.switch("rmse-nonzero-only", a.rmse_nonzero_only)? {
        RmseCells::NonzeroOnly
    } else {
        RmseCells::All
    };
    let (header, frames) = load_frames(&frames_path)?;
    let season = header.s as usize;
    let plan = match s.value::<PlanArg>("plan", plan_flag, None)? {
        Some(p) => p.0,
        None => {
            let r_train = s.or_default("r-train", a.r_train, (3 * season).max(frames.len() / 2))?;
            let r_test = s.or_default("r-test", a.r_test, season)?;
            let fit = frames.len().saturating_sub(r_train).checked_div(r_test).unwrap_or(0);
            let repeats = s.or_default("repeats", a.repeats, fit.max(1))?;
            EvalPlan {
                r_train,
                r_test,
                repeats,
            }
        }
    };
    plan.validate(season)?;
    plan.check_length(frames.len())?;
    let out = ctx.output(a.out, "eval.csv")?;
    let cfg = engine_config(ctx, a.engine, header, &frames[..plan.r_train])?;
    let rows = rolling_eval(&frames, &plan, &methods, &cfg, cells)?;
    write_eval_csv(&rows, create(&out)?)?;
    let summary = summarize(&rows, plan, cells);
    let json_path = out.with_extension("json");
    serde_json::to_writer_pretty(create(&json_path)?, &summary).map_err(ssmf::Error::from)?;
    for (name, m) in &summary.methods {
        info!("{name}: {} windows, mean rmse {:.6}", m.windows, m.mean_rmse);
    }
    Ok(())
}

fn synth(ctx: &mut Context, a: SynthArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let spec_path = s.value("spec", path_flag(a.spec), None)?;
    let preset: Option<String> = s.value("preset", a.preset, None)?;
    let mut spec = match (spec_path, preset) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --spec or --preset, not both".into())),
        (None, None) => return Err(CliError::Usage("missing required setting --spec (or --preset)".into())),
        (Some(p), None) => {
            let file = File::open(&p.0).map_err(|e| CliError::Usage(format!("cannot open {p}: {e}")))?;
            serde_json::from_reader::<_, SynthSpec>(BufReader::new(file))
                .map_err(|e| CliError::Usage(format!("invalid synth spec {p}: {e}")))?
        }
        (None, Some(name)) => SynthSpec::preset(&name, 0)?,
    };
    spec.seed = s.or_default("seed", ctx.seed, spec.seed)?;
    spec.noise_sigma = s.or_default("noise", a.noise, spec.noise_sigma)?;
    spec.sparsity = s.or_default("sparsity", a.sparsity, spec.sparsity)?;
    let out = ctx.output(a.out, "frames.bin")?;
    let stream = generate(&spec)?;
    let header = CacheHeader {
        m: spec.m as u32,
        n: spec.n as u32,
        s: spec.s as u32,
    };
    write_frame_cache(create(&out)?, header, &stream.frames)?;
    stream.write_labels(create(&ctx.out_dir.join("labels.csv"))?)?;
    info!(
        "{} steps, {} regimes -> {}",
        stream.frames.len(),
        spec.regimes.len(),
        out.display()
    );
    Ok(())
}
