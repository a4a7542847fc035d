use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use ssmf::cache::{read_frame_cache, write_frame_cache, CacheHeader};
use ssmf::factors::{column_norms, gradient_step, reconstruct, renormalize};
use ssmf::forecast::{rmse, season_index};
use ssmf::ingest::{ingest_reader, Frequency, IngestSchema};
use ssmf::stream::{bin_to_frames, EventRecord};
use ssmf::{FactorState, MatrixFrame, SeasonQueue};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.0f64..1.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn unit_columns(mut a: Array2<f64>) -> Array2<f64> {
    for mut c in a.axis_iter_mut(Axis(1)) {
        let n = c.dot(&c).sqrt();
        if n > 0.0 {
            c /= n;
        }
    }
    a
}

fn sparse_frame(t: u64, m: usize, n: usize) -> impl Strategy<Value = MatrixFrame> {
    prop::collection::vec((0..m as u32, 0..n as u32, 0.0f64..10.0), 0..12)
        .prop_map(move |e| MatrixFrame::from_entries(t, (m, n), e).unwrap())
}

proptest! {
    #[test]
    fn season_index_congruent_and_in_window(r in 0i64..1_000_000, h in 1i64..10_000, s in 1i64..500) {
        let t = r + h;
        let ts = season_index(r, t, s);
        prop_assert_eq!((t - ts).rem_euclid(s), 0);
        prop_assert!(r - s < ts && ts <= r);
    }

    #[test]
    fn queue_holds_at_most_one_season(s in 1usize..10, pushes in 0usize..40) {
        let mut q = SeasonQueue::new(s);
        for t in 0..pushes {
            q.push(MatrixFrame::empty(t as u64, (2, 2))).unwrap();
            prop_assert!(q.len() <= s);
        }
        prop_assert_eq!(q.len(), pushes.min(s));
        if pushes > 0 {
            prop_assert_eq!(q.frontier(), Some(pushes as u64 - 1));
            let first = q.iter().next().unwrap().t();
            prop_assert_eq!(first, (pushes - pushes.min(s)) as u64);
        }
    }

    #[test]
    fn binning_conserves_counts(
        events in prop::collection::vec((0u32..4, 0u32..3, 0u64..30, 0.0f64..5.0), 0..60),
        window in 0u64..4,
    ) {
        let evs: Vec<EventRecord> = events
            .iter()
            .map(|&(row, col, time, count)| EventRecord { row, col, time, count })
            .collect();
        let binned = bin_to_frames(evs.iter().copied(), (4, 3), window);
        let rejected: f64 = binned.rejected.iter().map(|(e, _)| e.count).sum();
        let total: f64 = evs.iter().map(|e| e.count).sum();
        let framed: f64 = binned.frames.iter().map(|f| f.sum()).sum();
        prop_assert!((framed - (total - rejected)).abs() <= 1e-9 * total.max(1.0));
        for (i, f) in binned.frames.iter().enumerate() {
            prop_assert_eq!(f.t(), i as u64);
        }
    }

    #[test]
    fn ingested_file_conserves_counts(rows in prop::collection::vec((0u8..5, 0u8..4, 0u32..200_000, 0u32..50), 1..40)) {
        let mut csv = String::from("src,dst,ts,n\n");
        for (a, b, secs, n) in &rows {
            csv.push_str(&format!("r{a},c{b},{secs},{n}\n"));
        }
        let schema = IngestSchema {
            row_col: "src".into(),
            col_col: "dst".into(),
            time_col: "ts".into(),
            count_col: Some("n".into()),
            frequency: Frequency::Hourly,
            epoch: chrono::DateTime::from_timestamp(0, 0).unwrap().naive_utc(),
            delimiter: b',',
        };
        let ing = ingest_reader(csv.as_bytes(), &schema).unwrap();
        prop_assert!(ing.malformed.is_empty());
        let accepted: f64 = ing.events.iter().map(|e| e.count).sum();
        let mut evs = ing.events.clone();
        evs.sort_by_key(|e| e.time);
        let binned = bin_to_frames(evs, ing.shape(), 0);
        prop_assert!(binned.rejected.is_empty());
        let framed: f64 = binned.frames.iter().map(|f| f.sum()).sum();
        prop_assert!((framed - accepted).abs() < 1e-9);
        let expected: u32 = rows.iter().map(|r| r.3).sum();
        prop_assert_eq!(accepted, f64::from(expected));
    }

    #[test]
    fn renormalization_preserves_reconstruction(
        u in matrix(5, 3),
        v in matrix(4, 3),
        w in prop::collection::vec(0.0f64..3.0, 3),
    ) {
        let w = Array1::from(w);
        let before = reconstruct(u.view(), v.view(), w.view());
        let (mut u2, mut v2, mut w2) = (u.clone(), v.clone(), w.clone());
        renormalize(&mut u2, &mut v2, w2.view_mut());
        let after = reconstruct(u2.view(), v2.view(), w2.view());
        for (a, b) in before.iter().zip(after.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_step_keeps_invariants(
        u in matrix(4, 2),
        v in matrix(3, 2),
        w in prop::collection::vec(0.0f64..2.0, 2),
        x in sparse_frame(1, 4, 3),
        eta in 0.01f64..0.4,
    ) {
        let mut f = FactorState::new(unit_columns(u), unit_columns(v), 0).unwrap();
        let mut w = Array1::from(w);
        gradient_step(&mut f, w.view_mut(), &x, eta);
        prop_assert!(f.u.iter().chain(f.v.iter()).all(|&a| a >= 0.0));
        prop_assert!(w.iter().all(|&a| a >= 0.0 && a.is_finite()));
        for (nu, nv) in column_norms(f.u.view()).iter().zip(column_norms(f.v.view()).iter()) {
            prop_assert!(*nu == 0.0 || (nu - 1.0).abs() < 1e-9);
            prop_assert!(*nv == 0.0 || (nv - 1.0).abs() < 1e-9);
        }
        prop_assert_eq!(f.t, 1);
    }

    #[test]
    fn frame_cache_round_trips(frames in prop::collection::vec(sparse_frame(0, 3, 4), 0..6)) {
        let frames: Vec<MatrixFrame> = frames
            .into_iter()
            .enumerate()
            .map(|(t, f)| MatrixFrame::from_entries(t as u64, (3, 4), f.entries().to_vec()).unwrap())
            .collect();
        let header = CacheHeader { m: 3, n: 4, s: 7 };
        let mut buf = Vec::new();
        write_frame_cache(&mut buf, header, &frames).unwrap();
        let (h, back) = read_frame_cache(buf.as_slice()).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn block_rmse_is_pooled_step_rmse(steps in prop::collection::vec((matrix(2, 3), sparse_frame(0, 2, 3)), 1..6)) {
        let preds: Vec<Array2<f64>> = steps.iter().map(|(p, _)| p.clone()).collect();
        let actual: Vec<MatrixFrame> = steps.iter().map(|(_, x)| x.clone()).collect();
        let block = rmse(&preds, &actual).unwrap();
        let pooled = steps
            .iter()
            .map(|(p, x)| rmse(std::slice::from_ref(p), std::slice::from_ref(x)).unwrap().powi(2))
            .sum::<f64>()
            / steps.len() as f64;
        prop_assert!((block - pooled.sqrt()).abs() < 1e-12);
    }
}
