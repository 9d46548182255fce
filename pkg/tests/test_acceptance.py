"""Acceptance criteria 1-7.

Each test records one PASS/FAIL line (printed live and repeated in the
terminal summary).  Criteria 2 and 3 share a session-scoped run of the
default generate -> train -> evaluate pipeline, which takes a few minutes.
"""

import contextlib
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from osaas_guard import dataset, wire
from osaas_guard.closed_loop import run_closed_loop
from osaas_guard.control import APPLIED, REJECTED, SET_VOA, VERBS, ControlAck, ControlCommand
from osaas_guard.detector import checkpoint, grad_check
from osaas_guard.detector.model import DetectorConfig, DetectorModel, TrainState
from osaas_guard.detector.nn import PARAM_ORDER, Dims, init_params
from osaas_guard.detector.optim import AdamState
from osaas_guard.evaluation import (MAX_ELAPSED_BIN, clean_suite, evaluate, power_suite,
                                    repack_suite)
from osaas_guard.impairments import ImpairmentConstants, cpm_amplitude, cpm_ber_jitter, xpm_ber_multiplier
from osaas_guard.pipeline import RunConfig, train_users
from osaas_guard.policy import (ACTION_KINDS, BLOCK_SLICE, PSD_HIGH, PSD_LOW, RAISE_ALARM, TOTAL_HIGH,
                                TOTAL_LOW, MitigationAction, Violation)
from osaas_guard.scenario import AddOok, PowerOffset, Scenario, default_users
from osaas_guard.spectrum import POWER_FLOOR_DBM, Signal, SpectralWindow, occupancy_mask, psd_dbm_per_ghz, sum_power_dbm
from osaas_guard.telemetry import OcmSnapshot, TelemetryRecord

E2E_BUDGET_S = 30 * 60


@contextlib.contextmanager
def criterion(results, n, name):
    """Record and print PASS/FAIL for criterion ``n``; the body fills ``detail`` and ``checks``."""
    state = {"detail": "", "checks": []}
    ok = False
    try:
        yield state
        ok = all(state["checks"])
    finally:
        results[n] = (ok, name, state["detail"] or "error")
        print(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {name} ({results[n][2]})")
    assert ok, state["detail"]


# 1 ----------------------------------------------------------------------------

def test_criterion_1_gradient_check(acceptance_results):
    with criterion(acceptance_results, 1, "gradient correctness") as c:
        dims = Dims(n_slices=6, n_telemetry=7, conv_filters=2, kernel=5, hidden=4)
        t0 = time.perf_counter()
        errs = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            params = init_params(dims, rng)
            X = rng.standard_normal((4, 3, dims.n_inputs))
            Y = (rng.random((4, dims.n_slices)) < 0.4).astype(float)
            errs.append(grad_check(params, dims, X, Y))
        elapsed = time.perf_counter() - t0
        c["detail"] = f"max rel. error {max(errs):.2e} over 10 seeds in {elapsed:.2f} s"
        c["checks"] = [max(errs) < 1e-4, elapsed < 10.0]


# 2 and 3: default pipeline ------------------------------------------------------

@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = RunConfig()
    t0 = time.perf_counter()
    ds = dataset.generate(cfg.dataset, root / "data")
    models = train_users(ds, cfg.detector, root / "models")
    rep = evaluate(models, [sc for _, sc in ds.test_scenarios()], cfg.policy_config())
    return {"config": cfg, "models": models, "report": rep, "elapsed": time.perf_counter() - t0}


@pytest.mark.slow
def test_criterion_2_detection(acceptance_results, default_run):
    with criterion(acceptance_results, 2, "held-out detection") as c:
        rep = default_run["report"]
        f1 = {uid: rep.users[uid].by_elapsed[MAX_ELAPSED_BIN].f1 for uid in sorted(rep.users)}
        recall = rep.aggregate().recall
        c["detail"] = (", ".join(f"{u} F1@{MAX_ELAPSED_BIN}s {v:.3f}" for u, v in f1.items())
                       + f"; aggregate recall {recall:.3f}; end-to-end {default_run['elapsed']:.0f} s")
        c["checks"] = [len(f1) == 3, all(v >= 0.80 for v in f1.values()), recall >= 0.85,
                       default_run["elapsed"] <= E2E_BUDGET_S, not rep.degenerate]


@pytest.mark.slow
@pytest.mark.filterwarnings("ignore::osaas_guard.errors.NoPositiveScenarios")
def test_criterion_3_mitigation(acceptance_results, default_run):
    with criterion(acceptance_results, 3, "mitigation completeness") as c:
        scenarios = power_suite() + repack_suite() + clean_suite(20)
        rep = evaluate(default_run["models"], scenarios, default_run["config"].policy_config())
        m = rep.mitigation
        c["detail"] = ", ".join(f"{k} {ok}/{n}" for k, (ok, n) in m.items())
        c["checks"] = [m["power"] == [45, 45], m["repack"] == [30, 30], m["clean"] == [20, 20]]


# 4 ----------------------------------------------------------------------------

def test_criterion_4_spectral_locality(acceptance_results):
    with criterion(acceptance_results, 4, "spectral locality") as c:
        k = ImpairmentConstants()
        sweep = np.arange(0.0, 1501.0, 1.0)
        rng = np.random.default_rng(0)
        xpm_far, xpm_near, cpm_far, cpm_near = [], [], [], []
        for df in sweep:
            for p in (-10.0, 0.0, 10.0):
                m = xpm_ber_multiplier(p, df, k)
                (xpm_far if df >= k.xpm_cutoff else xpm_near).append(m)
            jitter, _ = cpm_ber_jitter(df, rng, k, float(rng.uniform(0, 2 * math.pi)))
            (cpm_far if df >= k.cpm_cutoff else cpm_near).append(cpm_amplitude(df, k) if df < k.cpm_cutoff
                                                                 else jitter)
        c["detail"] = (f"{len(xpm_far)} XPM points at >= {k.xpm_cutoff:g} GHz, "
                       f"{len(cpm_far)} CPM points at >= {k.cpm_cutoff:g} GHz")
        c["checks"] = [k.xpm_cutoff == 500.0, k.cpm_cutoff == 1000.0,
                       all(m == 1.0 for m in xpm_far), all(j == 0.0 for j in cpm_far),
                       all(m > 1.0 for m in xpm_near), all(a > 0.0 for a in cpm_near)]


# 5 ----------------------------------------------------------------------------

def test_criterion_5_db_oracles(acceptance_results):
    with criterion(acceptance_results, 5, "dB/PSD oracle equivalence") as c:
        rng = np.random.default_rng(5)
        worst_sum = worst_psd = 0.0
        for _ in range(100_000):
            levels = rng.uniform(-40.0, 25.0, int(rng.integers(1, 9)))
            oracle = 10.0 * math.log10(math.fsum(10.0 ** (x / 10.0) for x in levels))
            worst_sum = max(worst_sum, abs(sum_power_dbm(levels) - oracle))
            p, w = float(rng.uniform(-40.0, 25.0)), float(rng.uniform(0.1, 500.0))
            worst_psd = max(worst_psd, abs(psd_dbm_per_ghz(p, w) - 10.0 * math.log10(10.0 ** (p / 10.0) / w)))

        window = SpectralWindow(0.0, 300.0)
        mismatches = 0
        quarter = Fraction(25, 4)
        for _ in range(10_000):
            center = Fraction(int(rng.integers(-800, 5600)), 16)
            width = Fraction(int(rng.integers(1, 1200)), 16)
            got = occupancy_mask(Signal.ook(float(center), 0.0, float(width)), window)
            lo_s, hi_s = center - width / 2, center + width / 2
            for i, g in enumerate(got):
                lo = i * quarter
                want = max(Fraction(0), min(hi_s, lo + quarter) - max(lo_s, lo)) / quarter
                mismatches += g != float(want)
        c["detail"] = (f"max |err| sum {worst_sum:.1e} dB, psd {worst_psd:.1e} dB over 1e5 cases; "
                       f"{mismatches} occupancy mismatches over 1e4 signals")
        c["checks"] = [worst_sum <= 1e-9, worst_psd <= 1e-9, mismatches == 0]


# 6 ----------------------------------------------------------------------------

def _ocm(log, uid):
    return np.array([s.slice_powers for s in log.traces[uid].snapshots])


def test_criterion_6_oracle_policy(acceptance_results):
    with criterion(acceptance_results, 6, "oracle-driven blocking") as c:
        rng = np.random.default_rng(6)
        wrong_targets, worst_drift, cases = 0, 0.0, 0
        for u in default_users():
            w = u.window
            for _ in range(4):
                center = float(rng.uniform(w.start_offset + 10, w.end_offset - 10))
                onset = int(rng.integers(8, 20))
                sc = Scenario(seed=int(rng.integers(1 << 30)), duration=40,
                              events=(AddOok(onset, u.user_id, center, float(rng.uniform(-4, 4))),))
                live = run_closed_loop(sc, oracle=True)
                passive = run_closed_loop(sc, mitigate=False)
                occupied = set(np.flatnonzero(passive.traces[u.user_id].occupancy[onset] > 0).tolist())
                blocked = {a.slice for a in live.actions if a.kind == BLOCK_SLICE}
                wrong_targets += blocked != occupied
                wrong_targets += any(a.user_id != u.user_id for a in live.actions)
                for other in default_users():
                    diff = np.abs(_ocm(live, other.user_id) - _ocm(passive, other.user_id))
                    if other.user_id == u.user_id:
                        diff = diff[:, sorted(set(range(diff.shape[1])) - occupied)]
                    worst_drift = max(worst_drift, float(diff.max()))
                cases += 1
        c["detail"] = (f"{cases} scenarios, {wrong_targets} with wrong block targets, "
                       f"max non-target OCM change {worst_drift:.1e} dB")
        c["checks"] = [wrong_targets == 0, worst_drift <= 1e-9]


# 7 ----------------------------------------------------------------------------

def _fuzz_float(rng) -> float:
    kind = rng.integers(6)
    if kind == 0:
        return float(rng.choice([0.0, -0.0, 5e-324, -2.2250738585072014e-308, 1.7976931348623157e308]))
    if kind == 1:
        bits = rng.integers(0, 2 ** 63, dtype=np.uint64) | (rng.integers(2, dtype=np.uint64) << np.uint64(63))
        x = float(np.array([bits], dtype=np.uint64).view(np.float64)[0])
        return x if math.isfinite(x) else 1.0
    return float(rng.normal(0, 10.0 ** rng.integers(-8, 9)))


def _fuzz_record(rng):
    kind = int(rng.integers(6))
    t = int(rng.integers(0, 2 ** 53))
    uid = "".join(rng.choice(list("abcxyz-_0129é☃"), int(rng.integers(1, 12))))
    f = lambda: _fuzz_float(rng)  # noqa: E731
    maybe_slice = lambda: None if rng.random() < 0.3 else int(rng.integers(0, 64))  # noqa: E731
    if kind == 0:
        return TelemetryRecord(t, f(), f(), f(), f(), f(), float(rng.uniform(0, 0.5)), f())
    if kind == 1:
        return OcmSnapshot(t, uid, f(), tuple(POWER_FLOOR_DBM + abs(f()) for _ in range(int(rng.integers(1, 49)))))
    if kind == 2:
        verb = str(rng.choice(VERBS))
        return ControlCommand(int(rng.integers(1, 2 ** 40)), uid, verb, t, maybe_slice(),
                              f() if verb == SET_VOA or rng.random() < 0.5 else None)
    if kind == 3:
        return ControlAck(int(rng.integers(1, 2 ** 40)), str(rng.choice([APPLIED, REJECTED])), t,
                          None if rng.random() < 0.5 else uid)
    if kind == 4:
        return Violation(str(rng.choice([TOTAL_HIGH, TOTAL_LOW, PSD_HIGH, PSD_LOW])), uid, f(), f(), t,
                         maybe_slice())
    action = str(rng.choice(ACTION_KINDS))
    if action == RAISE_ALARM:
        n = int(rng.integers(1, 6))
        return MitigationAction(action, uid, t, slices=tuple(int(i) for i in rng.integers(0, 64, n)),
                                probs=tuple(float(p) for p in rng.random(n)))
    if action == BLOCK_SLICE:
        return MitigationAction(action, uid, t, slice=int(rng.integers(0, 64)))
    return MitigationAction(action, uid, t, slice=maybe_slice(), db=abs(f()) or 1.0)


def _fuzz_model(rng) -> DetectorModel:
    cfg = DetectorConfig(n_slices=int(rng.integers(1, 9)), conv_filters=int(rng.integers(1, 4)),
                         lstm_hidden=int(rng.integers(1, 6)), window_len=int(rng.integers(1, 5)),
                         lr=float(rng.uniform(1e-5, 1e-1)), epochs=int(rng.integers(0, 5000)),
                         seed=int(rng.integers(0, 2 ** 31)))
    dims = cfg.dims()
    params = {k: np.array([_fuzz_float(rng) for _ in range(v.size)]).reshape(v.shape)
              for k, v in init_params(dims, rng).items()}
    mean = np.array([_fuzz_float(rng) for _ in range(dims.n_inputs)])
    std = np.abs(np.array([_fuzz_float(rng) for _ in range(dims.n_inputs)])) + 1e-3
    state = None
    if rng.random() < 0.5:
        adam = AdamState({k: rng.standard_normal(v.shape) for k, v in params.items()},
                         {k: rng.random(v.shape) for k, v in params.items()}, int(rng.integers(0, 10 ** 6)))
        curve = [float(x) for x in rng.random(int(rng.integers(0, 20)))]
        state = TrainState(epoch=len(curve), adam=adam,
                           rng_state=np.random.default_rng(int(rng.integers(1 << 30))).bit_generator.state,
                           best_loss=min(curve, default=float("inf")), wait=int(rng.integers(0, 5)),
                           loss_curve=curve, stopped_early=bool(rng.random() < 0.5))
    return DetectorModel(cfg, params, mean, std, train_state=state)


def _same_model(a: DetectorModel, b: DetectorModel) -> bool:
    if a.config != b.config or a.mean.tobytes() != b.mean.tobytes() or a.std.tobytes() != b.std.tobytes():
        return False
    if any(a.params[k].tobytes() != b.params[k].tobytes() for k in PARAM_ORDER):
        return False
    if (a.train_state is None) != (b.train_state is None):
        return False
    if a.train_state is not None:
        sa, sb = a.train_state, b.train_state
        if (sa.epoch, sa.adam.t, sa.rng_state, sa.loss_curve, sa.wait, sa.stopped_early) != \
                (sb.epoch, sb.adam.t, sb.rng_state, sb.loss_curve, sb.wait, sb.stopped_early):
            return False
        if any(sa.adam.m[k].tobytes() != sb.adam.m[k].tobytes() or
               sa.adam.v[k].tobytes() != sb.adam.v[k].tobytes() for k in PARAM_ORDER):
            return False
    return True


def test_criterion_7_determinism_and_codecs(acceptance_results, tmp_path):
    with criterion(acceptance_results, 7, "determinism and codecs") as c:
        rng = np.random.default_rng(7)
        wire_bad = 0
        n_wire = 20_000
        for _ in range(n_wire):
            r = _fuzz_record(rng)
            line = wire.encode(r)
            back = wire.decode(line)
            wire_bad += back != r or wire.encode(back) != line

        ckpt_bad = 0
        n_ckpt = 10_000
        for _ in range(n_ckpt):
            m = _fuzz_model(rng)
            blob = checkpoint.dumps(m)
            back = checkpoint.loads(blob)
            ckpt_bad += not _same_model(m, back) or checkpoint.dumps(back) != blob

        sc = Scenario(seed=11, duration=45, events=(AddOok(12, "user-2", 380.0, 1.0),
                                                     PowerOffset(25, "user-1", 9.0)))
        runs = [run_closed_loop(sc, oracle=True).lines() for _ in range(2)]
        spec = dataset.DatasetSpec(seed=3, n_ook=3, n_clean=1, n_power=1, n_repack=1, duration=30,
                                   onset_range=(12, 16), window_len=4)
        blobs = []
        for i in range(2):
            ds = dataset.generate(spec, tmp_path / f"d{i}")
            models = train_users(ds, {"epochs": 5, "batch_size": 16, "conv_filters": 2, "lstm_hidden": 6},
                                 users=["user-2"])
            blobs.append((sorted((p.relative_to(tmp_path / f"d{i}").as_posix(), p.read_bytes())
                                 for p in (tmp_path / f"d{i}").rglob("*") if p.is_file()),
                          checkpoint.dumps(models["user-2"])))
        c["detail"] = (f"{wire_bad}/{n_wire} wire and {ckpt_bad}/{n_ckpt} checkpoint round-trip failures; "
                       f"{len(runs[0])}-entry event logs equal: {runs[0] == runs[1]}, dataset+checkpoint bytes equal: "
                       f"{blobs[0] == blobs[1]}")
        c["checks"] = [wire_bad == 0, ckpt_bad == 0, runs[0] == runs[1], len(runs[0]) > 20,
                       blobs[0] == blobs[1]]
