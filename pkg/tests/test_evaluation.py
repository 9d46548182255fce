import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from osaas_guard.errors import NoPositiveScenarios
from osaas_guard.evaluation import (MAX_ELAPSED_BIN, METRICS_COLUMNS, MITIGATION_COLUMNS,
                                    SERIES_COLUMNS, Counts, EvaluationReport,
                                    clean_suite, evaluate, format_table, interference_intervals,
                                    power_suite, prf1, read_csvs, repack_suite, report,
                                    score_interval, write_csvs)
from osaas_guard.scenario import AddOok, RemoveOok, Scenario

OOK_SET = [Scenario(seed=s, duration=30, events=(AddOok(12, uid, c, 0.0),))
           for s, (uid, c) in enumerate([("user-1", 100.0), ("user-2", 400.0), ("user-3", 650.0)])]


def test_prf1_examples():
    assert prf1(0, 0, 0) == (0.0, 0.0, 0.0)
    p, r, f = prf1(8, 2, 2)
    assert (p, r) == (0.8, 0.8) and f == pytest.approx(0.8)
    assert prf1(0, 5, 0) == (0.0, 0.0, 0.0)


@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_f1_is_harmonic_mean(tp, fp, fn):
    p, r, f = prf1(tp, fp, fn)
    assert 0 <= f <= 1
    if tp:
        assert f == pytest.approx(2 * tp / (2 * tp + fp + fn))
        assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12
    else:
        assert f == 0.0


def test_score_interval_perfect_and_silent():
    labels = np.zeros((20, 6), dtype=bool)
    labels[5:, 2:5] = True
    perfect = score_interval(labels, labels.astype(float), 5, 20)
    assert perfect.counts.f1 == 1.0 and perfect.detection_times == [0]
    silent = score_interval(labels, np.zeros((20, 6)), 5, 20)
    c = silent.counts
    assert (c.precision, c.recall, c.f1) == (0.0, 0.0, 0.0)
    assert silent.missed == 1 and silent.mean_detection_time is None


def test_score_interval_binning_and_delay():
    labels = np.zeros((40, 4), dtype=bool)
    labels[10:, 1] = True
    probs = np.full((40, 4), np.nan)
    probs[13:, 1] = 0.8
    u = score_interval(labels, probs, 10, 40, sustain=2)
    assert u.detection_times == [4]
    assert sorted(u.by_elapsed) == list(range(MAX_ELAPSED_BIN + 1))
    assert u.by_elapsed[MAX_ELAPSED_BIN].total == (40 - 10 - MAX_ELAPSED_BIN) * 4
    assert u.by_elapsed[0].fn == 1 and u.by_elapsed[5].tp == 1
    assert u.counts.total == 30 * 4


def test_intervals_from_events():
    sc = Scenario(duration=50, events=(AddOok(10, "user-1", 100.0, 0.0), RemoveOok(25, "user-1"),
                                       AddOok(30, "user-1", 60.0, 0.0)))
    assert interference_intervals(sc) == {"user-1": [(10, 25), (30, 50)]}


def test_oracle_evaluation_is_perfect():
    rep = evaluate(None, OOK_SET, oracle=True)
    for uid, u in rep.users.items():
        assert (u.counts.precision, u.counts.recall, u.counts.f1) == (1.0, 1.0, 1.0)
        assert u.detection_times == [0] and u.missed == 0
    assert sorted(rep.users) == ["user-1", "user-2", "user-3"]
    assert not rep.degenerate


def test_no_detector_means_nothing_detected():
    rep = evaluate(None, OOK_SET)
    agg = rep.aggregate()
    assert agg.tp == 0 and agg.fp == 0 and agg.recall == 0.0
    assert all(u.missed == 1 for u in rep.users.values())


def test_power_and_repack_suites_restore():
    scenarios = power_suite(offsets=[3, 9, 15]) + repack_suite(counts=[1, 4, 10]) + clean_suite(2)
    assert len(scenarios) == 20
    with pytest.warns(NoPositiveScenarios):
        rep = evaluate(None, scenarios)
    assert rep.degenerate
    assert rep.mitigation == {"power": [9, 9], "repack": [9, 9], "clean": [2, 2]}
    assert rep.mitigation_rate("power") == 1.0


def fake_report():
    rep = EvaluationReport(threshold=0.5, mitigation={"power": [44, 45], "repack": [30, 30],
                                                      "clean": [0, 0]})
    rng = np.random.default_rng(0)
    for uid in ("user-1", "user-2", "user-3"):
        u = rep.user(uid)
        for b in range(MAX_ELAPSED_BIN + 1):
            c = Counts(*map(int, rng.integers(0, 200, 4)))
            u.by_elapsed[b] = c
            u.counts = u.counts.merge(c)
        u.detection_times = [0, 1, 3]
        u.missed = 1
    return rep


def test_csv_round_trip(tmp_path):
    rep = fake_report()
    paths = write_csvs(rep, tmp_path)
    back = read_csvs(tmp_path)
    assert back.threshold == rep.threshold and back.mitigation == rep.mitigation
    for uid, u in rep.users.items():
        b = back.users[uid]
        assert b.counts == u.counts and b.by_elapsed == u.by_elapsed
        assert b.detection_times == u.detection_times and b.missed == u.missed
        assert abs(b.counts.f1 - u.counts.f1) <= 1e-12
    header = paths["metrics"].read_text().splitlines()[0]
    assert header == ",".join(METRICS_COLUMNS)
    assert paths["f1_vs_time"].read_text().splitlines()[0] == ",".join(SERIES_COLUMNS)
    assert paths["mitigation"].read_text().splitlines()[0] == ",".join(MITIGATION_COLUMNS)
    # written rates reproduce the counts exactly
    row = paths["metrics"].read_text().splitlines()[1].split(",")
    assert float(row[METRICS_COLUMNS.index("f1")]) == rep.users["user-1"].counts.f1


def test_empty_report_writes_headers_only(tmp_path):
    paths = write_csvs(EvaluationReport(mitigation={}), tmp_path)
    for p in paths.values():
        assert len(p.read_text().splitlines()) == 1
    assert read_csvs(tmp_path).degenerate


def test_read_rejects_wrong_columns(tmp_path):
    write_csvs(fake_report(), tmp_path)
    (tmp_path / "metrics.csv").write_text("user,score\nuser-1,1\n")
    with pytest.raises(ValueError):
        read_csvs(tmp_path)


def test_table_layout():
    rep = fake_report()
    lines = format_table(rep).splitlines()
    assert len(lines) == 4
    assert lines[0].split()[:4] == ["user", "precision", "recall", "F1"]
    buf = io.StringIO()
    report(rep, stream=buf)
    text = buf.getvalue()
    assert "aggregate" in text and "power 44/45" in text and "clean" not in text
