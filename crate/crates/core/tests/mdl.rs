use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ssmf::mdl::total_cost;
use ssmf::{FactorState, MatrixFrame, SeasonQueue, StreamConfig};

/// Straight-line code length over all queued cells, in bits.
fn oracle(
    u: &Array2<f64>,
    v: &Array2<f64>,
    w: &Array2<f64>,
    frames: &[Array2<f64>],
    t0: usize,
    cfg: &StreamConfig,
) -> f64 {
    let (m, k) = u.dim();
    let n = v.nrows();
    let s = w.nrows();
    let count = |a: &Array2<f64>| a.iter().filter(|&&x| x != 0.0).count() as f64;
    let model = count(u) * ((m as f64).log2() + (k as f64).log2() + cfg.c_f)
        + count(v) * ((n as f64).log2() + (k as f64).log2() + cfg.c_f)
        + count(w) * ((s as f64).log2() + (k as f64).log2() + cfg.c_f);
    let mut res = Vec::new();
    for (idx, x) in frames.iter().enumerate() {
        let phase = (t0 + idx) % s;
        for i in 0..m {
            for j in 0..n {
                let mut xhat = 0.0;
                for c in 0..k {
                    xhat += u[(i, c)] * w[(phase, c)] * v[(j, c)];
                }
                res.push(x[(i, j)] - xhat);
            }
        }
    }
    let mu = res.iter().sum::<f64>() / res.len() as f64;
    let var = res.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / res.len() as f64;
    let sigma = var.sqrt().max(cfg.sigma_floor);
    let data: f64 = res
        .iter()
        .map(|r| {
            let density =
                (-(r - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let p = (cfg.bin_width * density).min(1.0);
            -p.log2()
        })
        .sum();
    model + data
}

#[test]
fn total_cost_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let m = rng.random_range(1..=8);
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=3);
        let s = rng.random_range(1..=6);
        let mut cfg = StreamConfig::new(m, n, s, k, 0.1);
        cfg.bin_width = [1.0, 0.1, 0.01][rng.random_range(0..3)];
        let sparse = |rng: &mut ChaCha8Rng, r, c| {
            Array2::from_shape_fn((r, c), |_| {
                if rng.random::<f64>() < 0.3 {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
        };
        let u = sparse(&mut rng, m, k);
        let v = sparse(&mut rng, n, k);
        let w = sparse(&mut rng, s, k) * 3.0;
        let t0 = rng.random_range(0..20usize);
        let frames: Vec<Array2<f64>> = (0..s).map(|_| sparse(&mut rng, m, n) * 2.0).collect();
        let mut queue = SeasonQueue::new(s);
        for (i, x) in frames.iter().enumerate() {
            queue
                .push(MatrixFrame::from_dense((t0 + i) as u64, x).unwrap())
                .unwrap();
        }
        let f = FactorState::new(u.clone(), v.clone(), (t0 + s - 1) as u64).unwrap();
        let got = total_cost(&queue, &f, w.view(), &cfg).unwrap().total;
        let want = oracle(&u, &v, &w, &frames, t0, &cfg);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        let again = total_cost(&queue, &f, w.view(), &cfg).unwrap().total;
        assert_eq!(got.to_bits(), again.to_bits());
    }
}

#[test]
fn noisy_slices_do_not_encode_better() {
    let (m, n, k, s) = (6, 5, 2, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = Array2::from_shape_fn((m, k), |_| rng.random::<f64>());
    let v = Array2::from_shape_fn((n, k), |_| rng.random::<f64>());
    let w = Array2::from_shape_fn((s, k), |_| 1.0 + rng.random::<f64>());
    let f = FactorState::new(u.clone(), v.clone(), (s - 1) as u64).unwrap();
    let mut queue = SeasonQueue::new(s);
    for t in 0..s {
        let mut x = ssmf::factors::reconstruct(u.view(), v.view(), w.row(t));
        x.mapv_inplace(|c| (c + 0.05 * rng.sample::<f64, _>(StandardNormal)).max(0.0));
        queue.push(MatrixFrame::from_dense(t as u64, &x).unwrap()).unwrap();
    }
    let mut cfg = StreamConfig::new(m, n, s, k, 0.1);
    cfg.bin_width = 1e-3;
    let base = total_cost(&queue, &f, w.view(), &cfg).unwrap().cost_data;
    let trials = 30;
    let diffs: Vec<f64> = (0..trials)
        .map(|_| {
            let noisy = w.mapv(|x| (x + 0.1 * rng.sample::<f64, _>(StandardNormal)).max(0.0));
            total_cost(&queue, &f, noisy.view(), &cfg).unwrap().cost_data - base
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / trials as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
    // one-sided t test at 0.01 with 29 degrees of freedom
    let t_stat = mean / (sd / (trials as f64).sqrt());
    assert!(t_stat > -2.462, "mean {mean}, t {t_stat}");
}
