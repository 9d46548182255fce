"""Detection and mitigation metrics over held-out scenarios, plus report emission.

Detection is scored per (tick, slice) cell inside each OOK interference
interval.  Closed loops used for scoring run with power/PSD control active
but OOK blocking off, so the interferer stays on the line for the whole
interval and later ticks are not trivially empty.

CSV files written by :func:`report` (column orders are frozen)::

    metrics.csv      user_id,threshold,tp,fp,fn,tn,precision,recall,f1,
                     mean_detection_time,detected,missed,detection_times
    f1_vs_time.csv   user_id,elapsed_s,tp,fp,fn,tn,precision,recall,f1
    mitigation.csv   case,successes,total,rate

``elapsed_s`` is whole seconds since onset; the last bin (``MAX_ELAPSED_BIN``)
collects every later tick.  ``detection_times`` is a space-separated list
of integer seconds.  Empty ``mean_detection_time`` means nothing was detected.
"""

from __future__ import annotations

import csv
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np

from .closed_loop import EventLog, default_policy, run_closed_loop
from .detector.model import DetectorModel
from .errors import NoPositiveScenarios
from .policy import BLOCK_SLICE, HIGH_KINDS, RAISE_ALARM, PolicyConfig
from .scenario import AddOok, PowerOffset, RemoveOok, Repack, Scenario

MAX_ELAPSED_BIN = 10

METRICS_COLUMNS = ("user_id", "threshold", "tp", "fp", "fn", "tn", "precision", "recall", "f1",
                   "mean_detection_time", "detected", "missed", "detection_times")
SERIES_COLUMNS = ("user_id", "elapsed_s", "tp", "fp", "fn", "tn", "precision", "recall", "f1")
MITIGATION_COLUMNS = ("case", "successes", "total", "rate")
MITIGATION_CASES = ("power", "repack", "clean")


def prf1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall, F1; each is 0 when its denominator is 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, pred: np.ndarray, truth: np.ndarray) -> None:
        pred = np.asarray(pred, dtype=bool)
        truth = np.asarray(truth, dtype=bool)
        self.tp += int(np.sum(pred & truth))
        self.fp += int(np.sum(pred & ~truth))
        self.fn += int(np.sum(~pred & truth))
        self.tn += int(np.sum(~pred & ~truth))

    def merge(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        return prf1(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return prf1(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return prf1(self.tp, self.fp, self.fn)[2]


@dataclass
class UserReport:
    user_id: str
    counts: Counts = field(default_factory=Counts)
    by_elapsed: dict[int, Counts] = field(default_factory=dict)
    detection_times: list[int] = field(default_factory=list)
    missed: int = 0

    @property
    def mean_detection_time(self) -> float | None:
        if not self.detection_times:
            return None
        return float(np.mean(self.detection_times))

    def f1_series(self) -> list[tuple[int, float]]:
        return [(b, self.by_elapsed[b].f1) for b in sorted(self.by_elapsed)]


@dataclass
class EvaluationReport:
    threshold: float = 0.5
    users: dict[str, UserReport] = field(default_factory=dict)
    mitigation: dict[str, list[int]] = field(default_factory=dict)   # case -> [successes, total]
    degenerate: bool = False

    def aggregate(self) -> Counts:
        out = Counts()
        for u in self.users.values():
            out = out.merge(u.counts)
        return out

    def mitigation_rate(self, case: str) -> float | None:
        ok, total = self.mitigation.get(case, (0, 0))
        return ok / total if total else None

    def user(self, user_id: str) -> UserReport:
        if user_id not in self.users:
            self.users[user_id] = UserReport(user_id)
        return self.users[user_id]


# scoring -----------------------------------------------------------------

def score_interval(labels: np.ndarray, probs: np.ndarray, onset: int, end: int,
                   threshold: float = 0.5, sustain: int = 1,
                   user: UserReport | None = None) -> UserReport:
    """Score ticks ``[onset, end)`` of one interference interval.

    ``labels`` and ``probs`` are ``[n_ticks, n_slices]`` indexed by tick;
    NaN probabilities (no full window yet) count as negatives.
    """
    user = user if user is not None else UserReport("")
    labels = np.asarray(labels, dtype=bool)
    hits = np.nan_to_num(np.asarray(probs, dtype=float), nan=0.0) >= threshold
    detected = None
    for t in range(onset, end):
        user.counts.add(hits[t], labels[t])
        b = min(t - onset, MAX_ELAPSED_BIN)
        user.by_elapsed.setdefault(b, Counts()).add(hits[t], labels[t])
        if detected is None and t - sustain + 1 >= 0:
            held = np.all(hits[t - sustain + 1:t + 1], axis=0)
            if np.any(held & labels[t]):
                detected = t - onset
    if end > onset:
        if detected is None:
            user.missed += 1
        else:
            user.detection_times.append(detected)
    return user


def interference_intervals(scenario: Scenario) -> dict[str, list[tuple[int, int]]]:
    """Per user, ``[onset, end)`` tick intervals with an OOK signal present."""
    out: dict[str, list[tuple[int, int]]] = {}
    open_at: dict[str, int] = {}
    for ev in scenario.events:
        if isinstance(ev, AddOok) and ev.user not in open_at:
            open_at[ev.user] = ev.t
        elif isinstance(ev, RemoveOok) and ev.user in open_at:
            out.setdefault(ev.user, []).append((open_at.pop(ev.user), min(ev.t, scenario.duration)))
    for uid, t in open_at.items():
        out.setdefault(uid, []).append((t, scenario.duration))
    return {u: [(a, b) for a, b in iv if b > a] for u, iv in out.items()}


def trace_arrays(log: EventLog, user_id: str, n_ticks: int) -> tuple[np.ndarray, np.ndarray]:
    tr = log.traces[user_id]
    labels = np.stack(tr.labels).astype(bool)
    probs = np.full(labels.shape, np.nan)
    for t, p in tr.probs.items():
        if t < n_ticks:
            probs[t] = p
    return labels, probs


def scenario_class(scenario: Scenario) -> str:
    kinds = {type(ev) for ev in scenario.events}
    if AddOok in kinds:
        return "ook"
    if PowerOffset in kinds:
        return "power"
    if Repack in kinds:
        return "repack"
    return "clean"


def high_violation_times(log: EventLog, user_id: str) -> dict[int, float]:
    """Tick -> largest high-side excess for ``user_id`` (only ticks with a violation)."""
    out: dict[int, float] = {}
    for v in log.violations:
        if v.user_id == user_id and v.kind in HIGH_KINDS:
            out[v.timestamp] = max(out.get(v.timestamp, 0.0), v.excess)
    return out


def mitigation_restored(log: EventLog, scenario: Scenario, step: float) -> bool:
    """Every high-side breach is gone within ``ceil(excess/step) + 1`` ticks and stays gone."""
    for ev in scenario.events:
        if not isinstance(ev, (PowerOffset, Repack)):
            continue
        bad = high_violation_times(log, ev.user)
        if not bad:
            continue
        first = min(bad)
        bound = math.ceil(bad[first] / step - 1e-9) + 1
        if max(bad) >= first + bound:
            return False
    return True


def ook_actions(log: EventLog) -> list:
    return [a for a in log.actions if a.kind in (RAISE_ALARM, BLOCK_SLICE)]


def evaluate(models: Mapping[str, DetectorModel] | None, scenarios: Iterable[Scenario],
             policy: PolicyConfig | None = None, threshold: float | None = None,
             oracle: bool = False) -> EvaluationReport:
    """Run every scenario through the closed loop and reduce, in input order, to a report.

    ``oracle=True`` scores the ground-truth labels themselves as
    probabilities (the upper bound).  Clean scenarios count as mitigation
    successes when no OOK action at all is taken.
    """
    scenarios = list(scenarios)
    policy = policy or (default_policy(scenarios[0]) if scenarios else PolicyConfig())
    threshold = policy.p_alarm if threshold is None else threshold
    rep = EvaluationReport(threshold=threshold,
                           mitigation={c: [0, 0] for c in MITIGATION_CASES})
    for sc in scenarios:
        cls = scenario_class(sc)
        if cls == "ook":
            log = run_closed_loop(sc, None if oracle else models, policy, act_on_ook=False)
            for uid, intervals in interference_intervals(sc).items():
                labels, probs = trace_arrays(log, uid, sc.duration)
                if oracle:
                    probs = labels.astype(float)
                for onset, end in intervals:
                    score_interval(labels, probs, onset, end, threshold, policy.sustain, rep.user(uid))
        else:
            log = run_closed_loop(sc, models, policy)
            ok = not ook_actions(log) if cls == "clean" else mitigation_restored(
                log, sc, policy.attenuation_step)
            rep.mitigation[cls][0] += int(ok)
            rep.mitigation[cls][1] += 1
    if not rep.users:
        rep.degenerate = True
        warnings.warn("no OOK scenarios among the evaluated set; detection metrics are empty",
                      NoPositiveScenarios, stacklevel=2)
    return rep


# fixed scenario suites ----------------------------------------------------

def power_suite(offsets=range(1, 16), t: int = 30, duration: int = 40, seed: int = 0) -> list[Scenario]:
    base = Scenario(duration=duration)
    return [base.with_events([PowerOffset(t, uid, float(db))], name=f"power-{uid}-{db}",
                             seed=seed + 100 * i + int(db))
            for i, uid in enumerate(base.user_ids) for db in offsets]


def repack_suite(counts=range(1, 11), t: int = 30, duration: int = 40, seed: int = 0) -> list[Scenario]:
    base = Scenario(duration=duration)
    return [base.with_events([Repack(t, uid, n)], name=f"repack-{uid}-{n}", seed=seed + 100 * i + n)
            for i, uid in enumerate(base.user_ids) for n in counts]


def clean_suite(n: int = 20, duration: int = 60, seed: int = 0) -> list[Scenario]:
    return [Scenario(name=f"clean-{k}", seed=seed + k, duration=duration) for k in range(n)]


# report emission -----------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def _counts_fields(c: Counts) -> list:
    return [c.tp, c.fp, c.fn, c.tn, c.precision, c.recall, c.f1]


def metrics_rows(rep: EvaluationReport) -> list[list]:
    rows = []
    for uid in sorted(rep.users):
        u = rep.users[uid]
        rows.append([uid, rep.threshold, *_counts_fields(u.counts), u.mean_detection_time,
                     len(u.detection_times), u.missed, " ".join(map(str, u.detection_times))])
    return rows


def series_rows(rep: EvaluationReport) -> list[list]:
    return [[uid, b, *_counts_fields(rep.users[uid].by_elapsed[b])]
            for uid in sorted(rep.users) for b in sorted(rep.users[uid].by_elapsed)]


def mitigation_rows(rep: EvaluationReport) -> list[list]:
    return [[case, ok, total, ok / total if total else None]
            for case, (ok, total) in rep.mitigation.items()]


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_csvs(rep: EvaluationReport, out_dir: str | os.PathLike) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.csv", "f1_vs_time": out / "f1_vs_time.csv",
             "mitigation": out / "mitigation.csv"}
    _write_csv(paths["metrics"], METRICS_COLUMNS, metrics_rows(rep))
    _write_csv(paths["f1_vs_time"], SERIES_COLUMNS, series_rows(rep))
    _write_csv(paths["mitigation"], MITIGATION_COLUMNS, mitigation_rows(rep))
    return paths


def _read_csv(path: Path, columns) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(columns):
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return list(reader)


def read_csvs(out_dir: str | os.PathLike) -> EvaluationReport:
    """Rebuild a report from the files written by :func:`write_csvs`."""
    out = Path(out_dir)
    rep = EvaluationReport(mitigation={})
    for row in _read_csv(out / "metrics.csv", METRICS_COLUMNS):
        u = rep.user(row["user_id"])
        rep.threshold = float(row["threshold"])
        u.counts = Counts(*(int(row[k]) for k in ("tp", "fp", "fn", "tn")))
        u.detection_times = [int(x) for x in row["detection_times"].split()]
        u.missed = int(row["missed"])
    for row in _read_csv(out / "f1_vs_time.csv", SERIES_COLUMNS):
        rep.user(row["user_id"]).by_elapsed[int(row["elapsed_s"])] = Counts(
            *(int(row[k]) for k in ("tp", "fp", "fn", "tn")))
    for row in _read_csv(out / "mitigation.csv", MITIGATION_COLUMNS):
        rep.mitigation[row["case"]] = [int(row["successes"]), int(row["total"])]
    rep.degenerate = not rep.users
    return rep


def format_table(rep: EvaluationReport) -> str:
    header = f"{'user':<10}{'precision':>10}{'recall':>8}{'F1':>8}{'F1@10s':>8}{'det. time':>11}{'missed':>8}"
    lines = [header]
    for uid in sorted(rep.users):
        u = rep.users[uid]
        f10 = u.by_elapsed.get(MAX_ELAPSED_BIN)
        mdt = u.mean_detection_time
        lines.append(f"{uid:<10}{u.counts.precision:>10.3f}{u.counts.recall:>8.3f}{u.counts.f1:>8.3f}"
                     f"{(f10.f1 if f10 else float('nan')):>8.3f}"
                     f"{(f'{mdt:.2f} s' if mdt is not None else '-'):>11}{u.missed:>8}")
    return "\n".join(lines)


def format_mitigation(rep: EvaluationReport) -> str:
    parts = []
    for case, (ok, total) in rep.mitigation.items():
        if total:
            parts.append(f"{case} {ok}/{total}")
    return "mitigation: " + (", ".join(parts) if parts else "none evaluated")


def report(rep: EvaluationReport, out_dir: str | os.PathLike | None = None,
           stream: TextIO | None = None) -> dict[str, Path]:
    """Print the metrics table and, when ``out_dir`` is given, write the CSV files."""
    stream = stream or sys.stdout
    print(format_table(rep), file=stream)
    agg = rep.aggregate()
    print(f"aggregate  precision {agg.precision:.3f}  recall {agg.recall:.3f}  F1 {agg.f1:.3f}"
          f"  (threshold {rep.threshold})", file=stream)
    print(format_mitigation(rep), file=stream)
    if rep.degenerate:
        print("warning: no positive scenarios were evaluated", file=stream)
    return write_csvs(rep, out_dir) if out_dir is not None else {}
