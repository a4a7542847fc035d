//! Synthetic streams with planted seasonal regimes.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::reconstruct;
use crate::stream::MatrixFrame;

/// Seasonal weight profile of one planted regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeProfile {
    /// Explicit `s x k` weights, one inner list per phase.
    Weights(Vec<Vec<f64>>),
    /// Component `c` peaks at phase `offset + c·s/k` with a circular Gaussian
    /// bump of the given width on top of a constant base.
    Bumps {
        offset: f64,
        base: f64,
        amplitude: f64,
        width: f64,
    },
}

impl RegimeProfile {
    pub fn weights(&self, s: usize, k: usize) -> Result<Array2<f64>> {
        let w = match self {
            RegimeProfile::Weights(rows) => {
                if rows.len() != s || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::ShapeMismatch(format!("explicit regime weights must be {s}x{k}")));
                }
                Array2::from_shape_fn((s, k), |(i, c)| rows[i][c])
            }
            &RegimeProfile::Bumps {
                offset,
                base,
                amplitude,
                width,
            } => {
                if width <= 0.0 {
                    return Err(Error::Config("bump width must be > 0".into()));
                }
                let period = s as f64;
                Array2::from_shape_fn((s, k), |(i, c)| {
                    let centre = (offset + c as f64 * period / k as f64).rem_euclid(period);
                    let d = (i as f64 - centre).abs();
                    let d = d.min(period - d);
                    base + amplitude * (-d * d / (2.0 * width * width)).exp()
                })
            }
        };
        if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(Error::InvalidValue("regime weights must be finite and >= 0".into()));
        }
        Ok(w)
    }
}

/// One planted regime and how long it stays active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRegime {
    pub profile: RegimeProfile,
    pub duration: usize,
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub s: usize,
    pub regimes: Vec<PlantedRegime>,
    pub noise_sigma: f64,
    /// Probability that a cell is zeroed.
    pub sparsity: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 || self.s == 0 {
            return Err(Error::Config("m, n, k, s must be >= 1".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("at least one regime is required".into()));
        }
        if let Some(r) = self.regimes.iter().find(|r| r.duration < self.s) {
            return Err(Error::Config(format!(
                "regime duration {} is shorter than a season ({})",
                r.duration, self.s
            )));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!(
                "sparsity must be in [0, 1), got {}",
                self.sparsity
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.regimes.iter().map(|r| r.duration).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SynthSpec {
    /// Names accepted by [`SynthSpec::preset`].
    pub const PRESETS: [&'static str; 2] = ["shift", "single"];

    /// Built-in streams: 20x20 frames, `k = 3`, season `s = 24`,
    /// 2400 steps, noise 0.05 and sparsity 0.5. `shift` switches to a
    /// half-season phase shift of every component at `t = 1200`; `single`
    /// keeps the first regime throughout.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let bumps = |offset: f64, duration: usize| PlantedRegime {
            profile: RegimeProfile::Bumps {
                offset,
                base: 0.2,
                amplitude: 2.1,
                width: 3.0,
            },
            duration,
        };
        let regimes = match name {
            "shift" => vec![bumps(0.0, 1200), bumps(12.0, 1200)],
            "single" => vec![bumps(0.0, 2400)],
            other => {
                return Err(Error::Config(format!(
                    "unknown synth preset {other:?}; expected one of {:?}",
                    Self::PRESETS
                )))
            }
        };
        Ok(Self {
            m: 20,
            n: 20,
            k: 3,
            s: 24,
            regimes,
            noise_sigma: 0.05,
            sparsity: 0.5,
            seed,
        })
    }
}

/// Generated stream with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthStream {
    pub frames: Vec<MatrixFrame>,
    /// 1-based active regime per time step.
    pub labels: Vec<usize>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub weights: Vec<Array2<f64>>,
}

impl SynthStream {
    /// Writes the labels CSV `t,regime`.
    pub fn write_labels<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "regime"])?;
        for (t, z) in self.labels.iter().enumerate() {
            w.write_record([t.to_string(), z.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn unit_factor(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((rows, k), |_| rng.random::<f64>());
    for mut col in a.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
    a
}

pub fn generate(spec: &SynthSpec) -> Result<SynthStream> {
    spec.validate()?;
    let weights = spec
        .regimes
        .iter()
        .map(|r| r.profile.weights(spec.s, spec.k))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let u = unit_factor(&mut rng, spec.m, spec.k);
    let v = unit_factor(&mut rng, spec.n, spec.k);

    let mut frames = Vec::with_capacity(spec.len());
    let mut labels = Vec::with_capacity(spec.len());
    let mut t = 0u64;
    for (idx, (regime, w)) in spec.regimes.iter().zip(&weights).enumerate() {
        for _ in 0..regime.duration {
            let phase = (t % spec.s as u64) as usize;
            let mut x = reconstruct(u.view(), v.view(), w.row(phase));
            x.mapv_inplace(|clean| {
                let noise: f64 = rng.sample(StandardNormal);
                (clean + spec.noise_sigma * noise).max(0.0)
            });
            if spec.sparsity > 0.0 {
                x.mapv_inplace(|val| if rng.random::<f64>() < spec.sparsity { 0.0 } else { val });
            }
            frames.push(MatrixFrame::from_dense(t, &x)?);
            labels.push(idx + 1);
            t += 1;
        }
    }
    Ok(SynthStream {
        frames,
        labels,
        u,
        v,
        weights,
    })
}
