//! Batch initialization of the factors on the first seasons of a stream.
//!
//! Three stages, all deterministic given the seed:
//! 1. multiplicative-update NMF on the mean matrix of the history gives `U`, `V`;
//! 2. per-phase nonnegative least squares on the diagonal gives each `w_i`;
//! 3. hierarchical ALS refines `(U, V, W)` jointly on the phase-averaged
//!    tensor, which pins down the per-component split that stage 1 alone
//!    leaves ambiguous.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::factors::{column_norms, FactorState, SeasonalTensor};
use crate::stream::{MatrixFrame, StreamConfig};

const EPS: f64 = 1e-12;

/// Iteration budget and seed for [`init_factors`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    pub seed: u64,
    pub nmf_iters: usize,
    pub refine_iters: usize,
    /// Relative change in fit error below which refinement stops.
    pub tol: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            nmf_iters: 200,
            refine_iters: 500,
            tol: 1e-10,
        }
    }
}

/// Fits `U`, `V` and a single seasonal regime to `history`.
///
/// Three full seasons are expected; anything from one season up is accepted
/// with a warning.
pub fn init_factors(
    history: &[MatrixFrame],
    cfg: &StreamConfig,
    opts: &InitOptions,
) -> Result<(FactorState, SeasonalTensor)> {
    cfg.validate()?;
    let s = cfg.s;
    if history.len() < s {
        return Err(Error::InsufficientFrames(format!(
            "initialization needs at least one season ({s} frames), got {}",
            history.len()
        )));
    }
    if history.len() < 3 * s {
        warn!(
            "initializing on {} frames, fewer than three seasons ({})",
            history.len(),
            3 * s
        );
    }
    if let Some(bad) = history.iter().find(|f| f.shape() != cfg.shape()) {
        return Err(Error::ShapeMismatch(format!(
            "frame t={} is {:?}, expected {:?}",
            bad.t(),
            bad.shape(),
            cfg.shape()
        )));
    }
    if history.iter().all(|f| f.sum() == 0.0) {
        return Err(Error::DegenerateInput("initialization history is all zeros".into()));
    }

    let phases = phase_means(history, cfg);
    let mean = phases.iter().fold(Array2::zeros(cfg.shape()), |acc, p| acc + p) / s as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut u, mut v) = mu_nmf(mean.view(), cfg.k, opts.nmf_iters, &mut rng);
    normalize_columns(&mut u);
    normalize_columns(&mut v);

    let mut w = Array2::zeros((s, cfg.k));
    let gram = (&u.t().dot(&u)) * &v.t().dot(&v);
    for (i, y) in phases.iter().enumerate() {
        let rhs = diag_projection(y.view(), u.view(), v.view());
        w.row_mut(i).assign(&nnls_coordinate(gram.view(), rhs.view()));
    }

    hals_refine(&phases, &mut u, &mut v, &mut w, opts);

    let nu = column_norms(u.view());
    let nv = column_norms(v.view());
    for c in 0..cfg.k {
        let scale = nu[c] * nv[c];
        if scale > 0.0 {
            u.column_mut(c).mapv_inplace(|x| x / nu[c]);
            v.column_mut(c).mapv_inplace(|x| x / nv[c]);
            w.column_mut(c).mapv_inplace(|x| x * scale);
        } else {
            w.column_mut(c).fill(0.0);
        }
    }

    let last_t = history.last().map_or(0, MatrixFrame::t);
    Ok((FactorState::new(u, v, last_t)?, SeasonalTensor::new(w)?))
}

/// Mean dense matrix for every phase `t mod s`.
fn phase_means(history: &[MatrixFrame], cfg: &StreamConfig) -> Vec<Array2<f64>> {
    let mut sums = vec![Array2::zeros(cfg.shape()); cfg.s];
    let mut counts = vec![0usize; cfg.s];
    for f in history {
        let i = (f.t() % cfg.s as u64) as usize;
        for &(r, c, val) in f.entries() {
            sums[i][[r as usize, c as usize]] += val;
        }
        counts[i] += 1;
    }
    for (sum, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            *sum /= n as f64;
        }
    }
    sums
}

fn mu_nmf(target: ArrayView2<f64>, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<f64>) {
    let (m, n) = target.dim();
    let scale = (target.mean().unwrap_or(0.0) / k as f64).sqrt().max(EPS);
    let mut u = Array2::from_shape_fn((m, k), |_| scale * (0.1 + rng.random::<f64>()));
    let mut v = Array2::from_shape_fn((n, k), |_| scale * (0.1 + rng.random::<f64>()));
    for _ in 0..iters {
        let num = target.dot(&v);
        let den = u.dot(&v.t().dot(&v));
        u.zip_mut_with(&(num / (den + EPS)), |x, r| *x *= r);
        let num = target.t().dot(&u);
        let den = v.dot(&u.t().dot(&u));
        v.zip_mut_with(&(num / (den + EPS)), |x, r| *x *= r);
    }
    (u, v)
}

fn normalize_columns(a: &mut Array2<f64>) {
    for mut col in a.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

/// `b_c = u_cᵀ Y v_c` for every component.
fn diag_projection(y: ArrayView2<f64>, u: ArrayView2<f64>, v: ArrayView2<f64>) -> Array1<f64> {
    let yv = y.dot(&v);
    (&u * &yv).sum_axis(Axis(0))
}

/// Minimizes `½ wᵀ G w − bᵀ w` over `w ≥ 0` by cyclic coordinate descent.
fn nnls_coordinate(gram: ArrayView2<f64>, rhs: ArrayView1<f64>) -> Array1<f64> {
    let k = rhs.len();
    let mut w = Array1::<f64>::zeros(k);
    for _ in 0..1000 {
        let mut moved = 0.0f64;
        for c in 0..k {
            let g = gram[[c, c]];
            if g <= EPS {
                w[c] = 0.0;
                continue;
            }
            let grad = gram.row(c).dot(&w) - rhs[c];
            let next = (w[c] - grad / g).max(0.0);
            moved = moved.max((next - w[c]).abs());
            w[c] = next;
        }
        if moved <= 1e-14 * (1.0 + w.iter().fold(0.0f64, |a, &b| a.max(b))) {
            break;
        }
    }
    w
}

fn fit_error(phases: &[Array2<f64>], u: &Array2<f64>, v: &Array2<f64>, w: &Array2<f64>) -> f64 {
    phases
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let model = (u * &w.row(i).insert_axis(Axis(0))).dot(&v.t());
            (y - &model).iter().map(|e| e * e).sum::<f64>()
        })
        .sum()
}

/// Hierarchical ALS for the phase-tied nonnegative CP model
/// `Y_i ≈ U diag(w_i) Vᵀ`.
fn hals_refine(
    phases: &[Array2<f64>],
    u: &mut Array2<f64>,
    v: &mut Array2<f64>,
    w: &mut Array2<f64>,
    opts: &InitOptions,
) {
    let k = u.ncols();
    let mut last_err = fit_error(phases, u, v, w);
    for iter in 0..opts.refine_iters {
        // U
        let mut mttkrp = Array2::zeros(u.dim());
        for (i, y) in phases.iter().enumerate() {
            mttkrp += &y.dot(&(&*v * &w.row(i).insert_axis(Axis(0))));
        }
        let gram = &v.t().dot(&*v) * &w.t().dot(&*w);
        hals_block(u, mttkrp.view(), gram.view());

        // V
        let mut mttkrp = Array2::zeros(v.dim());
        for (i, y) in phases.iter().enumerate() {
            mttkrp += &y.t().dot(&(&*u * &w.row(i).insert_axis(Axis(0))));
        }
        let gram = &u.t().dot(&*u) * &w.t().dot(&*w);
        hals_block(v, mttkrp.view(), gram.view());

        // W
        let mut mttkrp = Array2::zeros(w.dim());
        for (i, y) in phases.iter().enumerate() {
            mttkrp.row_mut(i).assign(&diag_projection(y.view(), u.view(), v.view()));
        }
        let gram = &u.t().dot(&*u) * &v.t().dot(&*v);
        hals_block(w, mttkrp.view(), gram.view());

        // keep U, V at unit scale so the three blocks stay balanced
        let nu = column_norms(u.view());
        let nv = column_norms(v.view());
        for c in 0..k {
            if nu[c] > 0.0 && nv[c] > 0.0 {
                u.column_mut(c).mapv_inplace(|x| x / nu[c]);
                v.column_mut(c).mapv_inplace(|x| x / nv[c]);
                w.column_mut(c).mapv_inplace(|x| x * nu[c] * nv[c]);
            }
        }

        if iter % 10 == 9 {
            let err = fit_error(phases, u, v, w);
            if (last_err - err).abs() <= opts.tol * last_err.max(EPS) {
                break;
            }
            last_err = err;
        }
    }
}

/// One HALS sweep over the columns of `factor` given the matricized-tensor
/// product `mttkrp` and the Hadamard Gram of the other two factors.
fn hals_block(factor: &mut Array2<f64>, mttkrp: ArrayView2<f64>, gram: ArrayView2<f64>) {
    for c in 0..factor.ncols() {
        let g = gram[[c, c]];
        if g <= EPS {
            continue;
        }
        let update = (&mttkrp.column(c) - &factor.dot(&gram.column(c))) / g;
        let mut col = factor.column_mut(c);
        col += &update;
        col.mapv_inplace(|x| x.max(EPS));
    }
}
