mod common;

use proptest::prelude::*;
use stdn_core::data::{
    decode_flow, encode_flow, ha_baseline, load_flow_binary, make_windows, split_622, synth_generate, write_flow_binary,
    Calendar, FlowSeries, SynthParams, FLOW_HEADER_LEN, TRAIN_FRACTION,
};
use stdn_core::train::{evaluate_ha, metrics};

#[test]
fn synthetic_week_file_size() {
    let (series, graph) = synth_generate(&SynthParams { nodes: 8, days: 7, seed: 1, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flow.stdn");
    write_flow_binary(&path, &series).unwrap();
    assert_eq!(FLOW_HEADER_LEN, 32);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 32 + 2016 * 8 * 4);
    let back = load_flow_binary(&path).unwrap();
    assert_eq!(back.values(), series.values());
    assert_eq!(graph.nodes, 8);
    assert!(load_flow_binary(dir.path().join("missing.stdn")).is_err());
}

#[test]
fn historical_average_beats_nothing_but_is_finite() {
    let (mut series, _) = synth_generate(&SynthParams { nodes: 4, days: 2, seed: 2, ..Default::default() }).unwrap();
    series.fit_normalizer(TRAIN_FRACTION).unwrap();
    let norm = series.normalizer().unwrap().clone();
    let windows = make_windows(&series, 12, 12).unwrap();
    let m = evaluate_ha(&windows, &norm).unwrap();
    assert!(m.mae.is_finite() && m.mae > 0.0);
    assert!(m.rmse >= m.mae);
    // a flat window's average is its own value
    let mut flat = windows[0].clone();
    flat.x.iter_mut().for_each(|v| *v = 0.5);
    let ha = ha_baseline(&flat, &norm);
    for (i, v) in ha.iter().enumerate() {
        assert!((v - norm.denormalize(i % flat.channels, 0.5)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_encoding_round_trips(t in 1usize..20, n in 1usize..5, c in 1usize..3, dow in 0usize..7, seed in 0u64..1000) {
        let mut r = common::rng(seed);
        let values: Vec<f32> = common::random_vec(&mut r, t * n * c, 1e4).into_iter().map(|v| v as f32).collect();
        let cal = Calendar::new(24, dow, (seed % 24) as usize).unwrap();
        let series = FlowSeries::new(values, t, n, c, cal).unwrap();
        let back = decode_flow(&encode_flow(&series)).unwrap();
        prop_assert_eq!(back.shape(), series.shape());
        prop_assert_eq!(back.calendar(), series.calendar());
        let bits = |s: &FlowSeries| s.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&series));
    }

    #[test]
    fn windows_have_consecutive_calendars_and_splits_partition(days in 1usize..3, t in 1usize..13, tp in 1usize..13, seed in 0u64..100) {
        let (mut series, _) = synth_generate(&SynthParams { nodes: 2, days, seed, ..Default::default() }).unwrap();
        series.fit_normalizer(TRAIN_FRACTION).unwrap();
        let windows = make_windows(&series, t, tp).unwrap();
        prop_assert_eq!(windows.len(), series.t_total() - t - tp + 1);
        let spd = series.calendar().steps_per_day;
        for w in windows.iter().step_by(37) {
            let tod: Vec<usize> = w.tod_in.iter().chain(&w.tod_out).copied().collect();
            let dow: Vec<usize> = w.dow_in.iter().chain(&w.dow_out).copied().collect();
            for k in 1..tod.len() {
                prop_assert_eq!(tod[k], (tod[k - 1] + 1) % spd);
                let expect = if tod[k] == 0 { (dow[k - 1] + 1) % 7 } else { dow[k - 1] };
                prop_assert_eq!(dow[k], expect);
            }
        }
        let total = windows.len();
        let starts: Vec<usize> = windows.iter().map(|w| w.start).collect();
        let splits = split_622(windows).unwrap();
        let joined: Vec<usize> = splits.train.iter().chain(&splits.val).chain(&splits.test).map(|w| w.start).collect();
        prop_assert_eq!(joined, starts);
        prop_assert_eq!(splits.train.len() + splits.val.len() + splits.test.len(), total);
    }

    #[test]
    fn rmse_never_below_mae(pred in prop::collection::vec(-1e3f64..1e3, 1..50), shift in -10.0f64..10.0) {
        let target: Vec<f64> = pred.iter().enumerate().map(|(i, p)| p + shift * (i as f64).sin()).collect();
        let m = metrics(&pred, &target);
        prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
    }
}
