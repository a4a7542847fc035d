//! Community factors, the seasonal regime bank, and the regime-aware
//! gradient update.
//!
//! A frame at phase `i` of regime `z` is modelled as
//! `U · diag(w_i^(z)) · Vᵀ`, where `U` is `m x k`, `V` is `n x k` and
//! `w_i^(z)` is row `i` of the `s x k` slice for regime `z`. Columns of `U`
//! and `V` are kept nonnegative with unit Euclidean norm; their scale lives in
//! the seasonal weights.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis, Zip};

use crate::error::{Error, Result};
use crate::stream::MatrixFrame;

/// 1-based regime index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegimeId(usize);

impl RegimeId {
    pub const FIRST: RegimeId = RegimeId(1);

    /// Returns `None` for zero.
    pub fn new(z: usize) -> Option<Self> {
        (z >= 1).then_some(Self(z))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub(crate) fn index(self) -> usize {
        self.0 - 1
    }

    pub(crate) fn from_index(idx: usize) -> Self {
        Self(idx + 1)
    }
}

impl fmt::Display for RegimeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Nonnegative community factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    /// `m x k` row factors.
    pub u: Array2<f64>,
    /// `n x k` column factors.
    pub v: Array2<f64>,
    /// Time index of the last update.
    pub t: u64,
}

impl FactorState {
    pub fn new(u: Array2<f64>, v: Array2<f64>, t: u64) -> Result<Self> {
        if u.ncols() != v.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "U has {} components, V has {}",
                u.ncols(),
                v.ncols()
            )));
        }
        Ok(Self { u, v, t })
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn k(&self) -> usize {
        self.u.ncols()
    }

    /// `U · diag(weights) · Vᵀ`.
    pub fn reconstruct(&self, weights: ArrayView1<f64>) -> Array2<f64> {
        reconstruct(self.u.view(), self.v.view(), weights)
    }

    /// Reconstruction for `phase` of regime `z`.
    pub fn reconstruct_phase(&self, w: &SeasonalTensor, z: RegimeId, phase: usize) -> Result<Array2<f64>> {
        Ok(self.reconstruct(w.weights(z, phase)?))
    }
}

/// `U · diag(weights) · Vᵀ`.
pub fn reconstruct(u: ArrayView2<f64>, v: ArrayView2<f64>, weights: ArrayView1<f64>) -> Array2<f64> {
    let scaled = &u * &weights.insert_axis(Axis(0));
    scaled.dot(&v.t())
}

/// The bank of seasonal slices, one `s x k` slice per regime.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalTensor {
    s: usize,
    k: usize,
    slices: Vec<Array2<f64>>,
}

impl SeasonalTensor {
    /// A bank holding a single regime.
    pub fn new(first: Array2<f64>) -> Result<Self> {
        let (s, k) = first.dim();
        if s == 0 || k == 0 {
            return Err(Error::ShapeMismatch("seasonal slice must be non-empty".into()));
        }
        check_nonnegative(first.view())?;
        Ok(Self {
            s,
            k,
            slices: vec![first],
        })
    }

    pub fn season(&self) -> usize {
        self.s
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of regimes.
    pub fn g(&self) -> usize {
        self.slices.len()
    }

    pub fn regimes(&self) -> impl Iterator<Item = RegimeId> {
        (0..self.slices.len()).map(RegimeId::from_index)
    }

    pub fn check(&self, z: RegimeId) -> Result<()> {
        if z.get() > self.g() {
            Err(Error::RegimeOutOfRange {
                z: z.get(),
                g: self.g(),
            })
        } else {
            Ok(())
        }
    }

    pub fn slice(&self, z: RegimeId) -> Result<ArrayView2<'_, f64>> {
        self.check(z)?;
        Ok(self.slices[z.index()].view())
    }

    pub fn slices(&self) -> impl Iterator<Item = ArrayView2<'_, f64>> {
        self.slices.iter().map(|s| s.view())
    }

    pub fn weights(&self, z: RegimeId, phase: usize) -> Result<ArrayView1<'_, f64>> {
        self.check(z)?;
        self.check_phase(phase)?;
        Ok(self.slices[z.index()].row(phase))
    }

    pub fn weights_mut(&mut self, z: RegimeId, phase: usize) -> Result<ArrayViewMut1<'_, f64>> {
        self.check(z)?;
        self.check_phase(phase)?;
        Ok(self.slices[z.index()].row_mut(phase))
    }

    fn check_phase(&self, phase: usize) -> Result<()> {
        if phase >= self.s {
            return Err(Error::InvalidValue(format!(
                "phase {phase} outside season of length {}",
                self.s
            )));
        }
        Ok(())
    }

    /// Deep copy of one regime's slice.
    pub fn clone_regime(&self, z: RegimeId) -> Result<Array2<f64>> {
        Ok(self.slice(z)?.to_owned())
    }

    /// Appends a regime and returns its id. `g` never decreases.
    pub fn push(&mut self, slice: Array2<f64>) -> Result<RegimeId> {
        if slice.dim() != (self.s, self.k) {
            return Err(Error::ShapeMismatch(format!(
                "slice is {:?}, expected ({}, {})",
                slice.dim(),
                self.s,
                self.k
            )));
        }
        check_nonnegative(slice.view())?;
        self.slices.push(slice);
        Ok(RegimeId::from_index(self.slices.len() - 1))
    }

    /// Number of stored weights, `g * s * k`.
    pub fn len(&self) -> usize {
        self.slices.iter().map(Array2::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}

fn check_nonnegative(a: ArrayView2<f64>) -> Result<()> {
    if a.iter().all(|&x| x >= 0.0 && x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidValue("seasonal weights must be finite and >= 0".into()))
    }
}

/// Applies the additive gradient update with the residual of `x` against the
/// current reconstruction, followed by projection onto the nonnegative
/// orthant. Returns the projected `(U', V')`; both use the previous `U`, `V`
/// on the right-hand side.
pub fn projected_update(
    u: ArrayView2<f64>,
    v: ArrayView2<f64>,
    weights: ArrayView1<f64>,
    x: &MatrixFrame,
    eta: f64,
) -> (Array2<f64>, Array2<f64>) {
    let predicted = reconstruct(u, v, weights);
    let mut residual = Array2::zeros(predicted.dim());
    x.residual_into(&predicted, &mut residual);

    let scale = (&weights * eta).insert_axis(Axis(0));
    let mut u_next = residual.dot(&v) * &scale;
    u_next += &u;
    let mut v_next = residual.t().dot(&u) * &scale;
    v_next += &v;
    u_next.mapv_inplace(|x| x.max(0.0));
    v_next.mapv_inplace(|x| x.max(0.0));
    (u_next, v_next)
}

/// Column norms of `a`.
pub fn column_norms(a: ArrayView2<f64>) -> Array1<f64> {
    a.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).collect()
}

/// Moves column scale into the weights: `w_i <- w_i·‖u_i‖·‖v_i‖`, then
/// divides each column by its norm. A column with zero norm is left as is and
/// its weight is set to zero.
pub fn renormalize(u: &mut Array2<f64>, v: &mut Array2<f64>, mut weights: ArrayViewMut1<f64>) {
    let nu = column_norms(u.view());
    let nv = column_norms(v.view());
    Zip::from(&mut weights)
        .and(&nu)
        .and(&nv)
        .for_each(|w, &a, &b| *w *= a * b);
    for (mut col, &norm) in u.axis_iter_mut(Axis(1)).zip(nu.iter()) {
        if norm > 0.0 {
            col /= norm;
        }
    }
    for (mut col, &norm) in v.axis_iter_mut(Axis(1)).zip(nv.iter()) {
        if norm > 0.0 {
            col /= norm;
        }
    }
}

/// Weight-only variant used by regime extraction: computes the projected
/// update for `U`, `V` but keeps only the norm bookkeeping on `weights`.
pub fn weight_update(
    u: ArrayView2<f64>,
    v: ArrayView2<f64>,
    mut weights: ArrayViewMut1<f64>,
    x: &MatrixFrame,
    eta: f64,
) {
    let (u_next, v_next) = projected_update(u, v, weights.view(), x, eta);
    let nu = column_norms(u_next.view());
    let nv = column_norms(v_next.view());
    Zip::from(&mut weights)
        .and(&nu)
        .and(&nv)
        .for_each(|w, &a, &b| *w *= a * b);
}

/// One regime-aware gradient step on frame `x` with the given phase weights,
/// updating `f` and `weights` in place.
pub fn gradient_step(f: &mut FactorState, mut weights: ArrayViewMut1<f64>, x: &MatrixFrame, eta: f64) {
    let (mut u, mut v) = projected_update(f.u.view(), f.v.view(), weights.view(), x, eta);
    renormalize(&mut u, &mut v, weights.view_mut());
    f.u = u;
    f.v = v;
    f.t = x.t();
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
    }

    fn unit_columns(mut a: Array2<f64>) -> Array2<f64> {
        for mut c in a.axis_iter_mut(Axis(1)) {
            let n = c.dot(&c).sqrt();
            c /= n;
        }
        a
    }

    #[test]
    fn scalar_reconstruct() {
        let f = FactorState::new(array![[1.0]], array![[1.0]], 0).unwrap();
        assert_eq!(f.reconstruct(array![2.0].view()), array![[2.0]]);
    }

    #[test]
    fn zero_weights_annihilate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FactorState::new(random_matrix(&mut rng, 3, 2), random_matrix(&mut rng, 4, 2), 0).unwrap();
        assert!(f.reconstruct(Array1::zeros(2).view()).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reconstruct_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (m, n, k) = (
                rng.random_range(1..=10),
                rng.random_range(1..=10),
                rng.random_range(1..=5),
            );
            let u = random_matrix(&mut rng, m, k);
            let v = random_matrix(&mut rng, n, k);
            let w: Array1<f64> = (0..k).map(|_| rng.random::<f64>() * 3.0).collect();
            let got = reconstruct(u.view(), v.view(), w.view());
            for a in 0..m {
                for b in 0..n {
                    let mut naive = 0.0;
                    for c in 0..k {
                        naive += u[[a, c]] * w[c] * v[[b, c]];
                    }
                    assert!((got[[a, b]] - naive).abs() <= 1e-12);
                    assert!(got[[a, b]] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn scalar_gradient_step() {
        let mut f = FactorState::new(array![[1.0]], array![[1.0]], 0).unwrap();
        let mut w = array![1.0];
        let x = MatrixFrame::from_entries(1, (1, 1), [(0, 0, 2.0)]).unwrap();
        let (u_raw, v_raw) = projected_update(f.u.view(), f.v.view(), w.view(), &x, 0.1);
        assert!((u_raw[[0, 0]] - 1.1).abs() < 1e-15);
        assert!((v_raw[[0, 0]] - 1.1).abs() < 1e-15);
        gradient_step(&mut f, w.view_mut(), &x, 0.1);
        assert!((w[0] - 1.21).abs() < 1e-12);
        assert_eq!(f.u, array![[1.0]]);
        assert_eq!(f.v, array![[1.0]]);
        assert_eq!(f.t, 1);
    }

    #[test]
    fn exact_fit_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = unit_columns(random_matrix(&mut rng, 4, 2));
        let v = unit_columns(random_matrix(&mut rng, 5, 2));
        let mut w = array![1.5, 0.7];
        let x = MatrixFrame::from_dense(0, &reconstruct(u.view(), v.view(), w.view())).unwrap();
        let mut f = FactorState::new(u.clone(), v.clone(), 0).unwrap();
        gradient_step(&mut f, w.view_mut(), &x, 0.3);
        assert!(f.u.iter().zip(u.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(f.v.iter().zip(v.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!((w[0] - 1.5).abs() < 1e-12 && (w[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn small_step_descends() {
        // Finite-difference oracle: the update direction is the negative
        // gradient of 0.5·‖X − U diag(w) Vᵀ‖², so a tiny step cannot increase it.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_matrix(&mut rng, 5, 2);
        let v = random_matrix(&mut rng, 5, 2);
        let w = array![0.8, 1.3];
        let x = MatrixFrame::from_dense(0, &random_matrix(&mut rng, 5, 5)).unwrap();
        let loss = |u: &Array2<f64>, v: &Array2<f64>| {
            let r = x.residual(&reconstruct(u.view(), v.view(), w.view())).unwrap();
            r.iter().map(|e| e * e).sum::<f64>()
        };
        let before = loss(&u, &v);
        let predicted = reconstruct(u.view(), v.view(), w.view());
        let residual = x.residual(&predicted).unwrap();
        let eta = 1e-4;
        let scale = (&w * eta).insert_axis(Axis(0));
        let u2 = &u + &(residual.dot(&v) * &scale);
        let v2 = &v + &(residual.t().dot(&u) * &scale);
        assert!(loss(&u2, &v2) <= before);
    }

    #[test]
    fn zero_column_zeroes_weight() {
        let mut u = array![[0.0, 0.5], [0.0, 0.5]];
        let mut v = array![[1.0, 2.0]];
        let mut w = array![3.0, 1.0];
        renormalize(&mut u, &mut v, w.view_mut());
        assert_eq!(w[0], 0.0);
        assert_eq!(u.column(0), array![0.0, 0.0]);
        assert!((v[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((w[1] - 0.5f64.sqrt() * 2.0).abs() < 1e-12);
    }

    #[test]
    fn clone_regime_is_deep() {
        let mut bank = SeasonalTensor::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut copy = bank.clone_regime(RegimeId::FIRST).unwrap();
        copy.fill(0.0);
        assert_eq!(bank.slice(RegimeId::FIRST).unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);

        let again = bank.clone_regime(RegimeId::FIRST).unwrap();
        let twice = again.clone();
        assert_eq!(again, twice);
        let z = bank.push(again).unwrap();
        assert_eq!(z.get(), 2);
        assert_eq!(bank.g(), 2);
        assert_eq!(bank.slice(z).unwrap(), bank.slice(RegimeId::FIRST).unwrap());
    }

    #[test]
    fn out_of_range_regime() {
        let bank = SeasonalTensor::new(array![[1.0]]).unwrap();
        assert!(matches!(
            bank.slice(RegimeId::new(2).unwrap()),
            Err(Error::RegimeOutOfRange { z: 2, g: 1 })
        ));
        assert!(bank.weights(RegimeId::FIRST, 1).is_err());
        assert!(RegimeId::new(0).is_none());
    }
}
