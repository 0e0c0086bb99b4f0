"""Unit tests for drift tracking, forecasting, and evaluation."""

import numpy as np
import pytest

from blehop import (
    AmbiguousAlignmentError,
    ChannelMap,
    ConfigError,
    ConnectionParams,
    ConnectionScenario,
    CounterAlignment,
    CsaClassification,
    CsaVersion,
    EstimationError,
    EventTimeline,
    Forecast,
    ForecastEntry,
    ImpairmentModel,
    InsufficientDataError,
    IntervalEstimate,
    Observation,
    ScenarioConfig,
    SniffTrace,
    Verdict,
    channel_identifier,
    csa2_channels_bulk,
    evaluate,
    init_sync,
    kalman_update,
    predict_csa1,
    predict_csa2,
    predict_event_time,
    reconstruct_connection,
    run_prediction,
    simulate,
)

MAP_27 = ChannelMap.from_hex("0x1FFFFFFC00")
MAP_10 = ChannelMap.from_hex("0x1E00E00700")


def track(times_ns, hops, interval_ns, **kwargs):
    sync = init_sync(times_ns[0], interval_ns, **kwargs)
    for t, h in zip(times_ns[1:], hops):
        sync = kalman_update(sync, t, h)
    return sync


def simulate_one(params, duration_ns, sniff=22, seed=3, jitter=0.0, drift=0.0,
                 miss=0.0, initial_counter=0):
    config = ScenarioConfig(
        (ConnectionScenario(params, ImpairmentModel(duration_ns, jitter, drift, miss),
                            initial_counter=initial_counter),),
        sniff, seed,
    )
    return simulate(config)


# ---------------------------------------------------------------------------
# the tracker


def test_noiseless_tracking_is_exact():
    interval = 12_500_000
    times = np.arange(50) * interval
    sync = track(times, [1] * 49, interval)
    assert sync.anchor_offset == 49
    assert sync.interval_ns == pytest.approx(interval, abs=1e-6)
    pred, std = predict_event_time(sync, 60)
    assert pred == pytest.approx(60 * interval, abs=1e-3)
    assert std > 0


def test_tracker_converges_onto_clock_drift():
    ppm = 20.0
    true_step = 12_500_000 * (1 + ppm * 1e-6)
    times = np.rint(np.arange(200) * true_step)
    sync = track(times, [1] * 199, 12_500_000)
    # the filter's interval absorbs the drift-scaled period
    assert sync.interval_ns == pytest.approx(true_step, abs=5.0)
    pred, _ = predict_event_time(sync, 240)
    assert pred == pytest.approx(240 * true_step, abs=2_000)


def test_tracker_handles_multi_event_gaps():
    interval = 7_500_000
    rng = np.random.default_rng(2)
    hops = rng.integers(1, 45, size=150)
    offsets = np.concatenate([[0], np.cumsum(hops)])
    times = offsets * interval + np.rint(rng.normal(0, 50_000, offsets.size))
    sync = track(times, hops, interval)
    assert sync.interval_ns == pytest.approx(interval, abs=50)
    pred, std = predict_event_time(sync, int(offsets[-1]) + 10)
    assert abs(pred - (offsets[-1] + 10) * interval) < 5 * std + 150_000


def test_outlier_is_gated_out():
    interval = 12_500_000
    times = list(np.arange(30) * interval)
    sync = track(times, [1] * 29, interval)
    before = sync.interval_ns
    # a wildly early measurement (5 ms off) must not drag the state
    gated = kalman_update(sync, 30 * interval - 5_000_000, 1)
    assert gated.interval_ns == before
    assert gated.anchor_offset == 30
    pred, _ = predict_event_time(gated, 31)
    assert pred == pytest.approx(31 * interval, abs=100)


def test_divergence_guard_trips():
    interval = 12_500_000
    sync = init_sync(0, interval)
    # measurements implying an interval 1 % long: way past the 0.1 % guard
    with pytest.raises(EstimationError, match="diverged"):
        t = 0
        for k in range(1, 200):
            t = k * interval * 1.01
            sync = kalman_update(sync, t, 1, gate_sigma=1e9)


def test_prediction_uncertainty_grows_with_horizon():
    interval = 12_500_000
    times = np.arange(20) * interval
    sync = track(times, [1] * 19, interval)
    stds = [predict_event_time(sync, h)[1] for h in (20, 50, 200, 1000)]
    assert stds == sorted(stds)


def test_update_validation():
    sync = init_sync(0, 12_500_000)
    with pytest.raises(ConfigError):
        kalman_update(sync, 1000.0, 0)
    with pytest.raises(ConfigError):
        init_sync(0, 0)


# ---------------------------------------------------------------------------
# forecasts


def make_sync(interval=12_500_000, anchor_offset=0):
    sync = init_sync(0, interval)
    return sync if anchor_offset == 0 else kalman_update(sync, anchor_offset * interval,
                                                         anchor_offset)


def test_predict_csa2_channels_match_selection():
    align = CounterAlignment(k_init=60000, correlation_peak=10, second_peak=1,
                             ambiguous=False, candidates=(60000,))
    ci = channel_identifier(0xB0A1CD9D)
    sync = make_sync()
    fc = predict_csa2(align, ci, MAP_10, sync, 200)
    assert len(fc) == 200
    assert fc.counters_are_wire
    counters = np.array([e.counter for e in fc.entries])
    assert counters[0] == 60001
    expected = csa2_channels_bulk(counters, ci, MAP_10)
    assert [e.channel for e in fc.entries] == expected.tolist()
    times = np.array([e.time_ns for e in fc.entries])
    assert np.allclose(times, np.arange(1, 201) * 12_500_000)


def test_predict_csa2_wraps_counter():
    align = CounterAlignment(65530, 10, 1, False, (65530,))
    fc = predict_csa2(align, 0x7D3C, MAP_27, make_sync(), 10)
    assert [e.counter for e in fc.entries] == [65531, 65532, 65533, 65534, 65535,
                                               0, 1, 2, 3, 4]


def test_predict_csa2_channel_filter():
    align = CounterAlignment(0, 10, 1, False, (0,))
    fc = predict_csa2(align, 0x7D3C, MAP_27, make_sync(), 500, channel=22)
    assert 0 < len(fc) < 500
    assert all(e.channel == 22 for e in fc.entries)


def test_predict_csa2_refuses_ambiguous_alignment():
    align = CounterAlignment(5, 2, 2, True, (5, 1000))
    with pytest.raises(AmbiguousAlignmentError):
        predict_csa2(align, 0x7D3C, MAP_27, make_sync(), 10)


def test_predict_csa1_phase_profile():
    est = IntervalEstimate(12_500_000, 12_500_000.0, ())
    cls = CsaClassification(Verdict.CSA1_REPEATING, (0, 25), est, 10)
    fc = predict_csa1(cls, make_sync(), 74)
    assert not fc.counters_are_wire
    assert [e.counter for e in fc.entries] == [25, 37, 62, 74]
    assert all(e.channel == 10 for e in fc.entries)
    with pytest.raises(ConfigError):
        predict_csa1(CsaClassification(Verdict.CSA2, (), est, 10), make_sync(), 5)


# ---------------------------------------------------------------------------
# evaluation


def timeline_for(params, count, initial_counter=0):
    counters = initial_counter + np.arange(count, dtype=np.int64)
    channels = csa2_channels_bulk(counters % 65536,
                                  channel_identifier(params.access_address),
                                  params.channel_map)
    times = counters * params.interval_ns
    return EventTimeline(params, counters, channels, times)


CSA2_PARAMS = ConnectionParams(CsaVersion.CSA2, 12500, MAP_27, 0xB0A1CD9D)


def test_evaluate_by_counter_scores_errors():
    timeline = timeline_for(CSA2_PARAMS, 100)
    entries = [
        ForecastEntry(int(timeline.counters[i]), int(timeline.channels[i]),
                      float(timeline.times_ns[i]) + err, 1000.0)
        for i, err in ((10, 3000.0), (11, -4000.0), (12, 0.0))
    ]
    report = evaluate(Forecast(entries), timeline, CSA2_PARAMS.interval_ns)
    assert report.matched == 3
    assert report.rmse_ns == pytest.approx(np.sqrt((3000**2 + 4000**2) / 3))
    assert report.channel_mismatches == 0
    assert report.missed_predictions == 0
    assert report.unmatched_references == 97


def test_evaluate_by_counter_detects_channel_mismatch():
    timeline = timeline_for(CSA2_PARAMS, 50)
    wrong = (int(timeline.channels[5]) + 1) % 37
    entries = [ForecastEntry(5, wrong, float(timeline.times_ns[5]), 1.0)]
    report = evaluate(Forecast(entries), timeline, CSA2_PARAMS.interval_ns)
    assert report.channel_mismatches == 1


def test_evaluate_by_counter_disambiguates_wraps():
    # two events share wire counter 5 (one counter period apart); the
    # prediction must be scored against the nearer one
    counters = np.array([5, 5 + 65536], dtype=np.int64)
    times = counters * CSA2_PARAMS.interval_ns
    channels = csa2_channels_bulk(counters % 65536, 0x7D3C, MAP_27)
    timeline = EventTimeline(CSA2_PARAMS, counters, channels, times)
    near_second = float(times[1]) + 2000.0
    report = evaluate(
        Forecast([ForecastEntry(5, int(channels[1]), near_second, 1.0)]),
        timeline, CSA2_PARAMS.interval_ns,
    )
    assert report.rmse_ns == pytest.approx(2000.0)


def test_evaluate_counts_missed_predictions():
    timeline = timeline_for(CSA2_PARAMS, 10)
    entries = [ForecastEntry(9999, 0, 1e12, 1.0)]  # counter never occurs
    with pytest.raises(EstimationError):
        evaluate(Forecast(entries), timeline, CSA2_PARAMS.interval_ns)
    entries.append(ForecastEntry(3, int(timeline.channels[3]),
                                 float(timeline.times_ns[3]), 1.0))
    report = evaluate(Forecast(entries), timeline, CSA2_PARAMS.interval_ns)
    assert report.missed_predictions == 1
    assert report.matched == 1


def test_evaluate_against_trace_by_time():
    interval = 12_500_000
    obs_times = [0, 2 * interval, 5 * interval]
    trace = SniffTrace(22, [Observation(t, 0xB0A1CD9D, 22, True) for t in obs_times])
    entries = [
        ForecastEntry(0, 22, 0.0 + 1000, 1.0),
        ForecastEntry(2, 22, 2.0 * interval - 500, 1.0),
        ForecastEntry(3, 22, 3.0 * interval, 1.0),       # no matching observation
        ForecastEntry(5, 22, 5.0 * interval + 9_000_000, 1.0),  # beyond half interval
    ]
    report = evaluate(Forecast(entries, counters_are_wire=False), trace, interval)
    assert report.matched == 2
    assert sorted(np.round(report.abs_errors_ns).tolist()) == [500, 1000]
    assert report.missed_predictions == 2
    assert report.unmatched_references == 1


def test_evaluate_rejects_empty_inputs():
    timeline = timeline_for(CSA2_PARAMS, 5)
    with pytest.raises(EstimationError):
        evaluate(Forecast([]), timeline, CSA2_PARAMS.interval_ns)
    with pytest.raises(ConfigError):
        evaluate(Forecast([ForecastEntry(0, 0, 0.0, 1.0)]), "nope",
                 CSA2_PARAMS.interval_ns)


def test_eccdf_is_a_survival_curve():
    timeline = timeline_for(CSA2_PARAMS, 30)
    entries = [
        ForecastEntry(int(timeline.counters[i]), int(timeline.channels[i]),
                      float(timeline.times_ns[i]) + 1000.0 * i, 1.0)
        for i in range(10)
    ]
    report = evaluate(Forecast(entries), timeline, CSA2_PARAMS.interval_ns)
    errs = [e for e, _ in report.eccdf]
    probs = [p for _, p in report.eccdf]
    assert errs == sorted(errs)
    assert probs == sorted(probs, reverse=True)
    assert probs[-1] == 0.0
    assert report.p50_ns <= report.p95_ns


def test_forecast_dict_round_trip():
    fc = Forecast([ForecastEntry(5, 22, 123.0, 4.0)], counters_are_wire=False)
    rebuilt = Forecast.from_dict(fc.to_dict())
    assert rebuilt.entries == fc.entries
    assert rebuilt.counters_are_wire is False


# ---------------------------------------------------------------------------
# end-to-end pipeline


def test_run_prediction_noiseless_is_error_free():
    params = ConnectionParams(CsaVersion.CSA2, 12500, MAP_10, 0xB0A1CD9D)
    timelines, trace = simulate_one(params, 120 * 10**9)
    recon = reconstruct_connection(trace)
    run = run_prediction(trace, recon, train_ns=30 * 10**9)
    assert run.report.rmse_ns == 0.0
    assert run.report.channel_mismatches == 0
    # the long forecast nails ground truth too
    ref_report = evaluate(run.forecast, timelines[0], params.interval_ns)
    assert ref_report.rmse_ns == 0.0
    assert ref_report.channel_mismatches == 0


def test_run_prediction_with_impairments_stays_on_noise_floor():
    params = ConnectionParams(CsaVersion.CSA2, 12500, MAP_27, 0xB0A1CD9D)
    _, trace = simulate_one(params, 200 * 10**9, jitter=50_000.0, drift=20.0,
                            miss=0.1, seed=17)
    recon = reconstruct_connection(trace)
    run = run_prediction(trace, recon, train_ns=100 * 10**9)
    assert run.report.rmse_ns < 100_000  # ~= jitter, far below the interval
    assert run.report.matched > 100
    assert run.report.channel_mismatches == 0


def test_run_prediction_csa1_predicts_visits():
    params = ConnectionParams(CsaVersion.CSA1, 18750, MAP_27, 0x53D39A21,
                              hop_increment=7, initial_channel=3)
    timelines, trace = simulate_one(params, 200 * 10**9, jitter=50_000.0, drift=20.0)
    recon = reconstruct_connection(trace)
    run = run_prediction(trace, recon, train_ns=100 * 10**9)
    assert run.report.rmse_ns < 100_000
    assert not run.forecast.counters_are_wire
    # every forecast visit corresponds to a real sniffed-channel event
    ref_report = evaluate(run.forecast, timelines[0], params.interval_ns)
    assert ref_report.missed_predictions == 0
    assert ref_report.channel_mismatches == 0


def test_run_prediction_horizon_and_channel_filter():
    params = ConnectionParams(CsaVersion.CSA2, 12500, MAP_10, 0xB0A1CD9D)
    _, trace = simulate_one(params, 60 * 10**9)
    recon = reconstruct_connection(trace)
    run = run_prediction(trace, recon, train_ns=20 * 10**9, horizon=300, channel=22)
    assert all(e.channel == 22 for e in run.forecast.entries)
    assert len(run.forecast) < 300
    full = run_prediction(trace, recon, train_ns=20 * 10**9, horizon=300)
    assert len(full.forecast) == 300


def test_run_prediction_needs_a_test_tail():
    params = ConnectionParams(CsaVersion.CSA2, 12500, MAP_10, 0xB0A1CD9D)
    _, trace = simulate_one(params, 50 * 10**9)
    recon = reconstruct_connection(trace)
    with pytest.raises(InsufficientDataError):
        run_prediction(trace, recon, train_ns=500 * 10**9)


def test_run_prediction_propagates_reconstruction_failure():
    bad = SniffTrace(22, [Observation(0, 0xA, 22, True),
                          Observation(12_500_000, 0xA, 22, True)])
    recon = reconstruct_connection(bad)
    assert recon.error
    with pytest.raises(EstimationError, match="reconstruction failed"):
        run_prediction(bad, recon)
