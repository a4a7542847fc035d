//! Minimum description length costs, in bits.
//!
//! The total cost of a stream segment under a model is the cost of describing
//! the model (nonzero factor entries, each priced at its index bits plus a
//! float) plus the cost of encoding the residuals with a Gaussian coder.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::factors::{reconstruct, FactorState, SeasonalTensor};
use crate::stream::{MatrixFrame, SeasonQueue, StreamConfig};

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Number of nonzero entries.
pub fn nonzeros(mat: ArrayView2<f64>) -> usize {
    mat.iter().filter(|x| x.abs() > 0.0).count()
}

/// `|mat| · (log2 dim_a + log2 dim_b + c_F)` where `|mat|` counts nonzeros.
pub fn model_cost_matrix(mat: ArrayView2<f64>, dim_a: usize, dim_b: usize, c_f: f64) -> f64 {
    nonzeros(mat) as f64 * ((dim_a as f64).log2() + (dim_b as f64).log2() + c_f)
}

/// Cost of one regime slice, without the regime-index term.
pub fn model_cost_regime(slice: ArrayView2<f64>, s: usize, k: usize, c_f: f64) -> f64 {
    model_cost_matrix(slice, s, k, c_f)
}

/// Cost of one regime slice when each entry also carries the index of one of
/// `g` regimes: `|W| · (log2 g + log2 s + log2 k + c_F)`.
pub fn model_cost_regime_indexed(slice: ArrayView2<f64>, g: usize, s: usize, k: usize, c_f: f64) -> f64 {
    nonzeros(slice) as f64 * ((g as f64).log2() + (s as f64).log2() + (k as f64).log2() + c_f)
}

/// Exact cost of the whole seasonal tensor, including the regime-index term.
pub fn model_cost_tensor(w: &SeasonalTensor, c_f: f64) -> f64 {
    w.slices()
        .map(|slice| model_cost_regime_indexed(slice, w.g(), w.season(), w.k(), c_f))
        .sum()
}

/// Gaussian residual coder with quantization width `bin_width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianCoder {
    pub mu: f64,
    pub sigma: f64,
    pub bin_width: f64,
}

impl GaussianCoder {
    /// Fits mean and population standard deviation, flooring sigma.
    pub fn fit<I>(residuals: I, sigma_floor: f64, bin_width: f64) -> Result<Self>
    where
        I: IntoIterator<Item = f64>,
        I::IntoIter: Clone,
    {
        let iter = residuals.into_iter();
        let (count, sum) = iter.clone().fold((0usize, 0.0), |(n, s), r| (n + 1, s + r));
        if count == 0 {
            return Err(Error::Empty("no residuals to fit the coder on".into()));
        }
        let mu = sum / count as f64;
        let var = iter.map(|r| (r - mu) * (r - mu)).sum::<f64>() / count as f64;
        Ok(Self {
            mu,
            sigma: var.sqrt().max(sigma_floor),
            bin_width,
        })
    }

    /// Code length of one residual: `-log2 P` with
    /// `P = min(1, bin_width · N(r; mu, sigma²))`, evaluated in the log domain
    /// so it stays finite for far outliers.
    pub fn cell_bits(&self, r: f64) -> f64 {
        let z = (r - self.mu) / self.sigma;
        let log2_p = self.bin_width.log2()
            - 0.5 * (2.0 * std::f64::consts::PI * self.sigma * self.sigma).log2()
            - 0.5 * z * z * LOG2_E;
        (-log2_p).max(0.0)
    }

    pub fn bits<I: IntoIterator<Item = f64>>(&self, residuals: I) -> f64 {
        residuals.into_iter().map(|r| self.cell_bits(r)).sum()
    }
}

/// Encoding cost of `frames` against matching dense reconstructions.
pub fn encoding_cost(frames: &[MatrixFrame], reconstructions: &[Array2<f64>], coder: &GaussianCoder) -> Result<f64> {
    if frames.len() != reconstructions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames but {} reconstructions",
            frames.len(),
            reconstructions.len()
        )));
    }
    let mut total = 0.0;
    for (x, x_hat) in frames.iter().zip(reconstructions) {
        total += coder.bits(x.residual(x_hat)?.iter().copied());
    }
    Ok(total)
}

/// Per-component bit counts of a total MDL cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub cost_u: f64,
    pub cost_v: f64,
    pub cost_w: f64,
    pub cost_data: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(cost_u: f64, cost_v: f64, cost_w: f64, cost_data: f64) -> Self {
        Self {
            cost_u,
            cost_v,
            cost_w,
            cost_data,
            total: cost_u + cost_v + cost_w + cost_data,
        }
    }
}

/// Residuals of every queued frame against `slice`, phase-matched by `t mod s`.
pub fn queue_residuals(queue: &SeasonQueue, factors: &FactorState, slice: ArrayView2<f64>) -> Result<Vec<f64>> {
    let s = slice.nrows();
    let mut out = Vec::with_capacity(queue.len() * factors.m() * factors.n());
    for x in queue.iter() {
        if x.shape() != (factors.m(), factors.n()) {
            return Err(Error::ShapeMismatch(format!(
                "frame t={} is {:?}, factors are {}x{}",
                x.t(),
                x.shape(),
                factors.m(),
                factors.n()
            )));
        }
        let phase = (x.t() % s as u64) as usize;
        let x_hat = reconstruct(factors.u.view(), factors.v.view(), slice.row(phase));
        out.extend(x.residual(&x_hat)?.iter().copied());
    }
    Ok(out)
}

/// Total cost of explaining the queued season with the factors and a
/// candidate regime slice. The coder is refit on this candidate's residuals.
pub fn total_cost(
    queue: &SeasonQueue,
    factors: &FactorState,
    slice: ArrayView2<f64>,
    cfg: &StreamConfig,
) -> Result<CostBreakdown> {
    if queue.is_empty() {
        return Err(Error::Empty("season queue is empty".into()));
    }
    let (s, k) = slice.dim();
    if k != factors.k() {
        return Err(Error::ShapeMismatch(format!(
            "slice has {k} components, factors have {}",
            factors.k()
        )));
    }
    let residuals = queue_residuals(queue, factors, slice)?;
    let coder = GaussianCoder::fit(residuals.iter().copied(), cfg.sigma_floor, cfg.bin_width)?;
    Ok(CostBreakdown::new(
        model_cost_matrix(factors.u.view(), factors.m(), k, cfg.c_f),
        model_cost_matrix(factors.v.view(), factors.n(), k, cfg.c_f),
        model_cost_regime(slice, s, k, cfg.c_f),
        coder.bits(residuals),
    ))
}
