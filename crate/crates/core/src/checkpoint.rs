//! Binary checkpoints of factor and engine state.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! factors section
//!   magic "SSMC", version u32
//!   m u32, n u32, k u32, s u32, g u32, t u64
//!   U: m*k f64, row-major
//!   V: n*k f64, row-major
//!   W: g*s*k f64, regime-major, each slice row-major (phase, component)
//! engine section
//!   eta f64, c_f f64, sigma_floor f64, bin_width f64
//!   extraction_epochs u32
//!   selection_cadence u8 (0 every_step, 1 every_season)
//!   max_regimes u32 (0 = unbounded)
//!   index_cost u8 (0 bank, 1 ignore)
//!   init: seed u64, nmf_iters u32, refine_iters u32, tol f64
//!   current regime u32 (1-based)
//!   queue: frame count u32, then frame-cache records (t u64, nnz u64,
//!          [row u32, col u32, val f64] * nnz)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::cache::{
    read_f64, read_frame_record, read_u32, read_u64, write_f64, write_frame_record, write_u32, write_u64,
};
use crate::engine::{Engine, EngineConfig, IndexCost, SelectionCadence};
use crate::error::{Error, Result};
use crate::factors::{FactorState, RegimeId, SeasonalTensor};
use crate::init::InitOptions;
use crate::stream::{SeasonQueue, StreamConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SSMC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")))
}

fn eof(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

/// Logical (row-major) order, whatever the memory layout.
fn write_matrix<W: Write>(w: &mut W, a: ArrayView2<f64>) -> io::Result<()> {
    for &x in a.iter() {
        write_f64(w, x)?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r).map_err(eof)?);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_factors<W: Write>(w: &mut W, f: &FactorState, regimes: &SeasonalTensor) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    write_u32(w, to_u32(f.m(), "m")?)?;
    write_u32(w, to_u32(f.n(), "n")?)?;
    write_u32(w, to_u32(f.k(), "k")?)?;
    write_u32(w, to_u32(regimes.season(), "s")?)?;
    write_u32(w, to_u32(regimes.g(), "g")?)?;
    write_u64(w, f.t)?;
    write_matrix(w, f.u.view())?;
    write_matrix(w, f.v.view())?;
    for slice in regimes.slices() {
        write_matrix(w, slice)?;
    }
    Ok(())
}

pub fn read_factors<R: Read>(r: &mut R) -> Result<(FactorState, SeasonalTensor)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(r).map_err(eof)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = read_u32(r).map_err(eof)? as usize;
    }
    let [m, n, k, s, g] = dims;
    if m == 0 || n == 0 || k == 0 || s == 0 || g == 0 {
        return Err(Error::Format(format!("invalid checkpoint dimensions {dims:?}")));
    }
    let t = read_u64(r).map_err(eof)?;
    let u = read_matrix(r, m, k)?;
    let v = read_matrix(r, n, k)?;
    let mut regimes = SeasonalTensor::new(read_matrix(r, s, k)?)?;
    for _ in 1..g {
        regimes.push(read_matrix(r, s, k)?)?;
    }
    Ok((FactorState::new(u, v, t)?, regimes))
}

fn write_engine_section<W: Write>(w: &mut W, engine: &Engine) -> Result<()> {
    let cfg = engine.config();
    write_f64(w, cfg.stream.eta)?;
    write_f64(w, cfg.stream.c_f)?;
    write_f64(w, cfg.stream.sigma_floor)?;
    write_f64(w, cfg.stream.bin_width)?;
    write_u32(w, to_u32(cfg.extraction_epochs, "extraction_epochs")?)?;
    w.write_all(&[match cfg.selection_cadence {
        SelectionCadence::EveryStep => 0,
        SelectionCadence::EverySeason => 1,
    }])?;
    write_u32(w, to_u32(cfg.max_regimes.unwrap_or(0), "max_regimes")?)?;
    w.write_all(&[match cfg.index_cost {
        IndexCost::Bank => 0,
        IndexCost::Ignore => 1,
    }])?;
    write_u64(w, cfg.init.seed)?;
    write_u32(w, to_u32(cfg.init.nmf_iters, "nmf_iters")?)?;
    write_u32(w, to_u32(cfg.init.refine_iters, "refine_iters")?)?;
    write_f64(w, cfg.init.tol)?;
    write_u32(w, to_u32(engine.current_regime().get(), "current regime")?)?;
    write_u32(w, to_u32(engine.queue().len(), "queue length")?)?;
    for frame in engine.queue().iter() {
        write_frame_record(w, frame)?;
    }
    Ok(())
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b).map_err(eof)?;
    Ok(b[0])
}

pub fn write_engine<W: Write>(mut w: W, engine: &Engine) -> Result<()> {
    write_factors(&mut w, engine.factors(), engine.regimes())?;
    write_engine_section(&mut w, engine)?;
    w.flush()?;
    Ok(())
}

pub fn read_engine<R: Read>(mut r: R) -> Result<Engine> {
    let (factors, regimes) = read_factors(&mut r)?;
    let r = &mut r;
    let mut stream = StreamConfig::new(
        factors.m(),
        factors.n(),
        regimes.season(),
        factors.k(),
        read_f64(r).map_err(eof)?,
    );
    stream.c_f = read_f64(r).map_err(eof)?;
    stream.sigma_floor = read_f64(r).map_err(eof)?;
    stream.bin_width = read_f64(r).map_err(eof)?;
    let mut cfg = EngineConfig::new(stream);
    cfg.extraction_epochs = read_u32(r).map_err(eof)? as usize;
    cfg.selection_cadence = match read_u8(r)? {
        0 => SelectionCadence::EveryStep,
        1 => SelectionCadence::EverySeason,
        other => return Err(Error::Format(format!("unknown selection cadence tag {other}"))),
    };
    cfg.max_regimes = match read_u32(r).map_err(eof)? {
        0 => None,
        cap => Some(cap as usize),
    };
    cfg.index_cost = match read_u8(r)? {
        0 => IndexCost::Bank,
        1 => IndexCost::Ignore,
        other => return Err(Error::Format(format!("unknown index cost tag {other}"))),
    };
    cfg.init = InitOptions {
        seed: read_u64(r).map_err(eof)?,
        nmf_iters: read_u32(r).map_err(eof)? as usize,
        refine_iters: read_u32(r).map_err(eof)? as usize,
        tol: read_f64(r).map_err(eof)?,
    };
    let current = RegimeId::new(read_u32(r).map_err(eof)? as usize)
        .ok_or_else(|| Error::Format("current regime must be >= 1".into()))?;
    let frames = read_u32(r).map_err(eof)?;
    let mut queue = SeasonQueue::new(stream.s);
    for _ in 0..frames {
        let frame =
            read_frame_record(r, stream.shape())?.ok_or_else(|| Error::Format("truncated checkpoint queue".into()))?;
        queue.push(frame)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Engine::from_parts(cfg, factors, regimes, queue, current)
}

pub fn save_engine(path: &Path, engine: &Engine) -> Result<()> {
    write_engine(BufWriter::new(File::create(path)?), engine)
}

pub fn load_engine(path: &Path) -> Result<Engine> {
    read_engine(BufReader::new(File::open(path)?))
}
