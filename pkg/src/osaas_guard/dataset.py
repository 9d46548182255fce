"""Synthetic training/test corpus generation.

Scenarios are run through the closed loop with power/PSD mitigation active,
so windows carry the attenuation states the deployed detector will see.
A share of the training OOK scenarios also runs with a ground-truth blocker
that cuts slices above a varying occupancy level, so post-block spectra
(floored slices, leftover edge spill) appear in training too.  Each
scenario contributes windows to every user's dataset; OOK onsets are
sampled densely, the rest on a stride.

On-disk layout::

    <out>/manifest.json              spec, per-scenario summary, file index
    <out>/<user>/{train,test}_X.npy  [N, window_len, n_slices + 7] raw features
    <out>/<user>/{train,test}_y.npy  [N, n_slices] int8 labels
    <out>/<user>/{train,test}_meta.npy  [N, 3] int64: scenario index, tick, elapsed (-1 if no OOK)
    <out>/scenarios/<name>.json      every scenario file
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .closed_loop import run_closed_loop
from .errors import InvalidSpec
from .scenario import AddOok, PowerOffset, RemoveOok, Repack, Scenario, default_users
from .spectrum import OOK_DEFAULT_WIDTH, SLICE_WIDTH

log = logging.getLogger(__name__)

CLASSES = ("ook", "ook-blocked", "clean", "power", "repack")
BLOCK_LEVELS = (0.0, 0.25, 0.5, 0.9)   # oracle blocks slices with occupancy above this
CENTER_STEP = SLICE_WIDTH / 32
TEST_PHASE_PERIOD = 4          # every fourth grid point is held out for test


@dataclass(frozen=True)
class DatasetSpec:
    seed: int = 0
    n_ook: int = 160           # per user, train + test
    blocked_fraction: float = 0.3   # share of training OOK scenarios with oracle blocking
    n_clean: int = 20
    n_power: int = 30
    n_repack: int = 30
    ook_power_range: tuple[float, float] = (-4.0, 4.0)
    power_offset_range: tuple[int, int] = (1, 15)
    repack_range: tuple[int, int] = (1, 10)
    duration: int = 60
    onset_range: tuple[int, int] = (12, 30)
    removal_prob: float = 0.3
    test_fraction: float = 0.2
    window_len: int = 10
    sample_stride: int = 6
    foreign_stride: int = 16   # stride for scenarios with no OOK in the user's window
    onset_span: int = 12       # ticks after an OOK onset/removal sampled densely

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidSpec("test_fraction must lie in (0, 1)")
        if not 0.0 <= self.blocked_fraction <= 1.0:
            raise InvalidSpec("blocked_fraction must lie in [0, 1]")
        counts = (self.n_ook, self.n_clean, self.n_power, self.n_repack)
        if any(c < 0 for c in counts):
            raise InvalidSpec("scenario counts must be non-negative")
        lo, hi = self.ook_power_range
        if lo > hi or self.power_offset_range[0] > self.power_offset_range[1]:
            raise InvalidSpec("ranges must be ordered")
        if self.repack_range[0] < 1 or self.repack_range[0] > self.repack_range[1]:
            raise InvalidSpec("repack channel counts must be >= 1 and ordered")
        if self.window_len < 1 or self.sample_stride < 1 or self.foreign_stride < 1:
            raise InvalidSpec("window_len and strides must be >= 1")
        if not self.window_len <= self.onset_range[0] <= self.onset_range[1] < self.duration:
            raise InvalidSpec("onsets must leave room for a full window and lie inside the run")

    @property
    def total_scenarios(self) -> int:
        return self.n_ook * len(default_users()) + self.n_clean + self.n_power + self.n_repack

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        for key in ("ook_power_range", "power_offset_range", "repack_range", "onset_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def ook_centers(window, split: str) -> np.ndarray:
    """Admissible OOK centres for one split.

    Centres sit on a fine sub-slice grid and every fourth point is held out
    for test, so both splits span all slice positions and edge-occupancy
    phases while never sharing a centre frequency.
    """
    half = OOK_DEFAULT_WIDTH / 2
    grid = np.arange(window.start_offset + half, window.end_offset - half + 1e-9, CENTER_STEP)
    held_out = np.arange(len(grid)) % TEST_PHASE_PERIOD == TEST_PHASE_PERIOD // 2
    return grid[held_out] if split == "test" else grid[~held_out]


def _split_counts(n: int, frac: float) -> tuple[int, int]:
    n_test = int(round(n * frac))
    if n > 1:
        n_test = min(max(n_test, 1), n - 1)
    return n - n_test, n_test


def build_scenarios(spec: DatasetSpec) -> list[tuple[str, str, Scenario]]:
    """``(split, class, scenario)`` triples in a fixed order."""
    users = default_users()
    plan: list[tuple[str, str, str | None]] = []
    for split_idx, split in enumerate(("train", "test")):
        for u in users:
            n = _split_counts(spec.n_ook, spec.test_fraction)[split_idx]
            plan += [(split, "ook", u.user_id)] * n
        for cls, n_total in (("clean", spec.n_clean), ("power", spec.n_power), ("repack", spec.n_repack)):
            n = _split_counts(n_total, spec.test_fraction)[split_idx]
            plan += [(split, cls, None)] * n

    out = []
    for i, (split, cls, target) in enumerate(plan):
        rng = np.random.default_rng([spec.seed, i])
        onset = int(rng.integers(spec.onset_range[0], spec.onset_range[1] + 1))
        events = []
        if cls == "ook":
            window = next(u.window for u in users if u.user_id == target)
            center = float(rng.choice(ook_centers(window, split)))
            power = round(float(rng.uniform(*spec.ook_power_range)), 2)
            events.append(AddOok(onset, target, center, power))
            if split == "train" and rng.random() < spec.removal_prob:
                end = onset + int(rng.integers(spec.onset_span, 2 * spec.onset_span + 1))
                if end < spec.duration:
                    events.append(RemoveOok(end, target))
            if split == "train" and rng.random() < spec.blocked_fraction:
                cls = "ook-blocked"
        elif cls == "power":
            uid = users[int(rng.integers(len(users)))].user_id
            lo, hi = spec.power_offset_range
            events.append(PowerOffset(onset, uid, float(rng.integers(lo, hi + 1))))
        elif cls == "repack":
            uid = users[int(rng.integers(len(users)))].user_id
            lo, hi = spec.repack_range
            events.append(Repack(onset, uid, int(rng.integers(lo, hi + 1))))
        name = f"{split}-{i:04d}-{cls}"
        seed = int(np.random.SeedSequence([spec.seed, i, 7]).generate_state(1)[0])
        out.append((split, cls, Scenario(name=name, seed=seed, duration=spec.duration,
                                         events=tuple(events))))
    return out


def block_level(index: int) -> float:
    return BLOCK_LEVELS[index % len(BLOCK_LEVELS)]


def ook_intervals(scenario: Scenario, user_id: str) -> list[tuple[int, int]]:
    """``[onset, end)`` tick intervals during which an OOK signal sits in the user's window."""
    out, start = [], None
    for ev in scenario.events:
        if ev.user != user_id:
            continue
        if isinstance(ev, AddOok) and start is None:
            start = ev.t
        elif isinstance(ev, RemoveOok) and start is not None:
            out.append((start, ev.t))
            start = None
    if start is not None:
        out.append((start, scenario.duration))
    return out


def sample_ticks(scenario: Scenario, user_id: str, spec: DatasetSpec) -> list[int]:
    first = spec.window_len - 1
    intervals = ook_intervals(scenario, user_id)
    stride = spec.sample_stride if intervals else spec.foreign_stride
    ticks = set(range(first, scenario.duration, stride))
    for start, end in intervals:
        for edge in (start, end):
            ticks.update(range(max(first, edge - 2), min(scenario.duration, edge + spec.onset_span)))
    return sorted(ticks)


def elapsed_since_onset(scenario: Scenario, user_id: str, tick: int) -> int:
    for start, end in ook_intervals(scenario, user_id):
        if start <= tick < end:
            return tick - start
    return -1


@dataclass
class UserSplit:
    X: np.ndarray
    y: np.ndarray
    meta: np.ndarray


@dataclass
class Dataset:
    spec: DatasetSpec
    scenarios: list[tuple[str, str, Scenario]]
    users: dict[str, dict[str, UserSplit]] = field(default_factory=dict)
    status: str = "ok"

    def split(self, user_id: str, split: str) -> UserSplit:
        return self.users[user_id][split]

    def test_scenarios(self) -> list[tuple[str, Scenario]]:
        return [(cls, sc) for split, cls, sc in self.scenarios if split == "test"]


def generate(spec: DatasetSpec, out_dir: str | os.PathLike | None = None) -> Dataset:
    scenarios = build_scenarios(spec)
    users = [u.user_id for u in default_users()]
    n_feat = {u.user_id: u.window.n_slices + 7 for u in default_users()}
    buckets = {u: {s: ([], [], []) for s in ("train", "test")} for u in users}
    for idx, (split, cls, sc) in enumerate(scenarios):
        if cls == "ook-blocked":
            run = run_closed_loop(sc, oracle=True, oracle_min_occupancy=block_level(idx))
        else:
            run = run_closed_loop(sc)
        for uid in users:
            tr = run.traces[uid]
            rows = np.stack(tr.rows)
            for t in sample_ticks(sc, uid, spec):
                xs, ys, ms = buckets[uid][split]
                xs.append(rows[t - spec.window_len + 1:t + 1])
                ys.append(tr.labels[t])
                ms.append((idx, t, elapsed_since_onset(sc, uid, t)))
    ds = Dataset(spec, scenarios)
    if not scenarios:
        ds.status = "empty"
        log.warning("dataset spec produced no scenarios")
    for uid in users:
        ds.users[uid] = {}
        for split in ("train", "test"):
            xs, ys, ms = buckets[uid][split]
            S = n_feat[uid] - 7
            ds.users[uid][split] = UserSplit(
                np.stack(xs) if xs else np.empty((0, spec.window_len, n_feat[uid])),
                np.stack(ys).astype(np.int8) if ys else np.empty((0, S), dtype=np.int8),
                np.array(ms, dtype=np.int64).reshape(-1, 3))
    if out_dir is not None:
        save(ds, out_dir)
    return ds


def save(ds: Dataset, out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    (out / "scenarios").mkdir(parents=True, exist_ok=True)
    files = []
    for uid, splits in ds.users.items():
        (out / uid).mkdir(exist_ok=True)
        for split, data in splits.items():
            for name, arr in (("X", data.X), ("y", data.y), ("meta", data.meta)):
                rel = f"{uid}/{split}_{name}.npy"
                np.save(out / rel, arr, allow_pickle=False)
                files.append(rel)
    index = []
    for split, cls, sc in ds.scenarios:
        rel = f"scenarios/{sc.name}.json"
        sc.save(out / rel)
        index.append({"name": sc.name, "split": split, "class": cls, "file": rel})
    manifest = {"format": "osaas-dataset/1", "status": ds.status, "spec": ds.spec.to_dict(),
                "users": sorted(ds.users), "arrays": files, "scenarios": index}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load(out_dir: str | os.PathLike) -> Dataset:
    root = Path(out_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    spec = DatasetSpec.from_dict(manifest["spec"])
    scenarios = [(e["split"], e["class"], Scenario.load(root / e["file"])) for e in manifest["scenarios"]]
    ds = Dataset(spec, scenarios, status=manifest.get("status", "ok"))
    for uid in manifest["users"]:
        ds.users[uid] = {}
        for split in ("train", "test"):
            ds.users[uid][split] = UserSplit(*(np.load(root / uid / f"{split}_{n}.npy", allow_pickle=False)
                                               for n in ("X", "y", "meta")))
    return ds
