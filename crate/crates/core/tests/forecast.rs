use ssmf::forecast::{
    forecast, rolling_eval, select_eta, summarize, write_eval_csv, EvalPlan, ForecastRequest, Method, RegimePolicy,
    RmseCells, ETA_GRID,
};
use ssmf::synth::{generate, PlantedRegime, RegimeProfile, SynthSpec, SynthStream};
use ssmf::{run_stream, EngineConfig, Error, RegimeId, StreamConfig};

const S: usize = 6;

fn periodic(len: usize, noise: f64) -> SynthStream {
    generate(&SynthSpec {
        m: 6,
        n: 5,
        k: 2,
        s: S,
        regimes: vec![PlantedRegime {
            profile: RegimeProfile::Bumps {
                offset: 0.0,
                base: 0.5,
                amplitude: 1.5,
                width: 1.0,
            },
            duration: len,
        }],
        noise_sigma: noise,
        sparsity: 0.0,
        seed: 9,
    })
    .unwrap()
}

fn config() -> EngineConfig {
    let mut sc = StreamConfig::new(6, 5, S, 2, 0.1);
    sc.bin_width = 1e-3;
    EngineConfig::new(sc)
}

#[test]
fn single_regime_forecast_is_the_phase_reconstruction() {
    let st = periodic(40, 0.05);
    let (engine, _) = run_stream(&st.frames, config()).unwrap();
    let r = engine.last_t();
    let fc = forecast(&engine, &ForecastRequest::horizon(r, 8, RegimePolicy::PaperRule)).unwrap();
    assert_eq!(fc.z, RegimeId::FIRST);
    assert_eq!(fc.frames.len(), 8);
    for (t, x) in &fc.frames {
        let phase = (*t % S as u64) as usize;
        let expected = engine
            .factors()
            .reconstruct(engine.regimes().weights(RegimeId::FIRST, phase).unwrap());
        assert_eq!(x, &expected);
        assert!(x.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn one_season_apart_targets_match() {
    let st = periodic(40, 0.05);
    let (engine, _) = run_stream(&st.frames, config()).unwrap();
    let r = engine.last_t();
    let req = ForecastRequest {
        targets: vec![r + 2, r + 2 + S as u64, r + 2 + 5 * S as u64],
        policy: RegimePolicy::PaperRule,
    };
    let fc = forecast(&engine, &req).unwrap();
    assert_eq!(fc.frames[0].1, fc.frames[1].1);
    assert_eq!(fc.frames[0].1, fc.frames[2].1);
}

#[test]
fn noiseless_periodic_one_step_is_accurate() {
    let st = periodic(20 * S + 1, 0.0);
    let (engine, _) = run_stream(&st.frames[..20 * S], config()).unwrap();
    let fc = forecast(
        &engine,
        &ForecastRequest::horizon(engine.last_t(), 1, RegimePolicy::PaperRule),
    )
    .unwrap();
    let score = ssmf::forecast::rmse(&fc.matrices(), &st.frames[20 * S..]).unwrap();
    assert!(score < 1e-3, "rmse {score}");
}

#[test]
fn bad_requests_are_rejected() {
    let st = periodic(30, 0.05);
    let (engine, _) = run_stream(&st.frames, config()).unwrap();
    let r = engine.last_t();
    let fixed = ForecastRequest {
        targets: vec![r + 1],
        policy: RegimePolicy::Fixed(RegimeId::new(3).unwrap()),
    };
    assert!(matches!(
        forecast(&engine, &fixed),
        Err(Error::RegimeOutOfRange { z: 3, g: 1 })
    ));
    let past = ForecastRequest {
        targets: vec![r],
        policy: RegimePolicy::PaperRule,
    };
    assert!(forecast(&engine, &past).is_err());
}

#[test]
fn forecast_csv_has_one_line_per_cell() {
    let st = periodic(30, 0.05);
    let (engine, _) = run_stream(&st.frames, config()).unwrap();
    let fc = forecast(
        &engine,
        &ForecastRequest::horizon(engine.last_t(), 3, RegimePolicy::PaperRule),
    )
    .unwrap();
    let mut out = Vec::new();
    fc.write_csv(&mut out, false).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,row_id,col_id,value"));
    assert_eq!(lines.count(), 3 * 6 * 5);
}

#[test]
fn noiseless_periodic_methods_coincide() {
    let st = periodic(20 * S, 0.0);
    let plan = EvalPlan {
        r_train: 15 * S,
        r_test: 2 * S,
        repeats: 1,
    };
    let rows = rolling_eval(
        &st.frames,
        &plan,
        &[Method::Ssmf, Method::SmfSingleRegime],
        &config(),
        RmseCells::All,
    )
    .unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r.rmse < 1e-3, "{r:?}");
        assert_eq!(r.r_train, 15 * S);
    }
    assert_eq!(rows[0].rmse, rows[1].rmse);
}

#[test]
fn rolling_eval_plumbing() {
    let st = periodic(10 * S, 0.05);
    let plan = EvalPlan {
        r_train: 3 * S,
        r_test: S,
        repeats: 0,
    };
    assert!(
        rolling_eval(&st.frames, &plan, &[Method::Ssmf], &config(), RmseCells::All)
            .unwrap()
            .is_empty()
    );

    let plan = EvalPlan { repeats: 3, ..plan };
    let rows = rolling_eval(
        &st.frames,
        &plan,
        &[Method::Ssmf, Method::SmfSingleRegime],
        &config(),
        RmseCells::All,
    )
    .unwrap();
    assert_eq!(rows.len(), 6);
    let origins: Vec<usize> = rows.iter().map(|r| r.r_train).collect();
    assert_eq!(origins, vec![18, 18, 24, 24, 30, 30]);
    let mut csv = Vec::new();
    write_eval_csv(&rows, &mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .starts_with("window,r_train,method,rmse,wall_clock_ms\n0,18,ssmf,"));
    let summary = summarize(&rows, plan, RmseCells::All);
    assert_eq!(summary.methods["smf"].windows, 3);

    let too_long = EvalPlan { repeats: 100, ..plan };
    let err = rolling_eval(&st.frames, &too_long, &[Method::Ssmf], &config(), RmseCells::All).unwrap_err();
    assert!(err.to_string().contains("repeats=7"), "{err}");
}

#[test]
fn eta_selection_is_from_the_grid() {
    let st = periodic(6 * S, 0.05);
    let eta = select_eta(&st.frames, &config(), &ETA_GRID).unwrap();
    assert!(ETA_GRID.contains(&eta));
    assert!(select_eta(&st.frames[..3 * S], &config(), &ETA_GRID).is_err());
}
