"""Synthetic goal-driven sequences, JSON-lines feature files, and splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, SpecError, SamplingError


@dataclass
class VideoSample:
    id: str
    features: np.ndarray  # T x d_f
    label: int
    goal_id: int | None = None
    anticipation_gap_steps: int = 0

    @property
    def T(self):
        return self.features.shape[0]

    def to_record(self):
        rec = {"id": self.id, "label": int(self.label), "features": self.features.tolist()}
        if self.goal_id is not None:
            rec["goal_id"] = int(self.goal_id)
        if self.anticipation_gap_steps:
            rec["gap_steps"] = int(self.anticipation_gap_steps)
        return rec


@dataclass
class SyntheticSpec:
    """Per-goal Markov chains over actions with Gaussian feature emissions.

    ``transition[g]`` is the ``A x A`` chain followed under goal ``g``.  A
    step emits ``action_centers[a] + goal_offsets[g] + noise``; each action
    lasts ``steps_per_action`` steps.  The label is the action in progress
    ``gap_steps`` steps after the last observed step.
    """

    transition: np.ndarray  # G x A x A
    action_centers: np.ndarray  # A x d_f
    goal_offsets: np.ndarray  # G x d_f
    noise_std: float = 0.3
    steps_per_action: int = 2
    T: int = 6
    gap_steps: int = 1
    initial: np.ndarray | None = field(default=None)  # A, uniform when omitted

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.action_centers = np.asarray(self.action_centers, dtype=np.float64)
        self.goal_offsets = np.asarray(self.goal_offsets, dtype=np.float64)
        if self.initial is not None:
            self.initial = np.asarray(self.initial, dtype=np.float64)
        self.validate()

    @property
    def n_goals(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def d_f(self):
        return self.action_centers.shape[1]

    def validate(self):
        t = self.transition
        if t.ndim != 3 or t.shape[1] != t.shape[2]:
            raise SpecError(f"transition must be G x A x A, got shape {t.shape}")
        if np.any(t < 0) or np.any(np.abs(t.sum(axis=2) - 1.0) > 1e-12):
            raise SpecError("every transition row must be non-negative and sum to 1")
        if self.action_centers.shape[0] != self.n_actions:
            raise SpecError(f"action_centers must have {self.n_actions} rows")
        if self.goal_offsets.shape != (self.n_goals, self.d_f):
            raise SpecError(f"goal_offsets must be {self.n_goals} x {self.d_f}")
        if not self.noise_std > 0:
            raise SpecError("noise_std must be positive")
        if self.steps_per_action < 1 or self.T < 1 or self.gap_steps < 1:
            raise SpecError("steps_per_action, T and gap_steps must be >= 1")
        if self.initial is not None:
            if self.initial.shape != (self.n_actions,) or abs(self.initial.sum() - 1.0) > 1e-12:
                raise SpecError("initial must be a distribution over actions")

    def to_dict(self):
        d = {
            "n_goals": self.n_goals,
            "n_actions": self.n_actions,
            "d_f": self.d_f,
            "steps_per_action": self.steps_per_action,
            "T": self.T,
            "gap_steps": self.gap_steps,
            "noise_std": self.noise_std,
            "transition": self.transition.tolist(),
            "action_centers": self.action_centers.tolist(),
            "goal_offsets": self.goal_offsets.tolist(),
        }
        if self.initial is not None:
            d["initial"] = self.initial.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                transition=d["transition"],
                action_centers=d["action_centers"],
                goal_offsets=d["goal_offsets"],
                noise_std=float(d.get("noise_std", 0.3)),
                steps_per_action=int(d.get("steps_per_action", 2)),
                T=int(d.get("T", 6)),
                gap_steps=int(d.get("gap_steps", 1)),
                initial=d.get("initial"),
            )
        except KeyError as exc:
            raise SpecError(f"synthetic spec missing field {exc}") from None

    def with_gap(self, gap_steps):
        d = self.to_dict()
        d["gap_steps"] = gap_steps
        return SyntheticSpec.from_dict(d)


def default_spec(
    n_goals=4, n_actions=8, d_f=16, T=6, steps_per_action=2, noise_std=0.3,
    gap_steps=1, dominant=0.8, secondary=0.15, offset_scale=0.5, seed=0,
) -> SyntheticSpec:
    """Desk-scale spec: under each goal an action has a dominant and a
    secondary successor; the remaining mass is spread evenly.

    Successor maps are drawn per goal, so one action leads to different next
    actions under different goals.
    """
    if n_actions < 3:
        raise SpecError("default_spec needs at least 3 actions")
    rng = np.random.default_rng(seed)
    rest = (1.0 - dominant - secondary) / (n_actions - 2)
    if rest < 0:
        raise SpecError("dominant + secondary must not exceed 1")
    trans = np.empty((n_goals, n_actions, n_actions))
    for g in range(n_goals):
        first = rng.permutation(n_actions)
        shift_by = rng.integers(1, n_actions)
        second = np.roll(first, shift_by)
        for a in range(n_actions):
            row = np.full(n_actions, rest)
            row[first[a]] = dominant
            row[second[a]] = secondary
            trans[g, a] = row / row.sum()
    centers = rng.standard_normal((n_actions, d_f))
    offsets = offset_scale * rng.standard_normal((n_goals, d_f))
    return SyntheticSpec(trans, centers, offsets, noise_std, steps_per_action, T, gap_steps)


def _chain(spec, goal, n_steps, rng):
    init = spec.initial if spec.initial is not None else np.full(spec.n_actions, 1.0 / spec.n_actions)
    actions = [int(rng.choice(spec.n_actions, p=init))]
    while len(actions) * spec.steps_per_action < n_steps:
        actions.append(int(rng.choice(spec.n_actions, p=spec.transition[goal, actions[-1]])))
    return np.repeat(actions, spec.steps_per_action)[:n_steps]


def sample_video(spec: SyntheticSpec, index, seed):
    """One video; returns ``(sample, per_step_actions)``.

    The chain and the emission noise come from separate streams keyed by
    ``(seed, index)``, so changing ``gap_steps`` extends the same chain.
    """
    chain_rng = np.random.default_rng([seed, index, 0])
    noise_rng = np.random.default_rng([seed, index, 1])
    goal = int(chain_rng.integers(spec.n_goals))
    steps = _chain(spec, goal, spec.T + spec.gap_steps, chain_rng)
    obs = steps[: spec.T]
    feats = spec.action_centers[obs] + spec.goal_offsets[goal]
    feats = feats + spec.noise_std * noise_rng.standard_normal(feats.shape)
    label = int(steps[spec.T - 1 + spec.gap_steps])
    sample = VideoSample(f"v{index:06d}", feats, label, goal, spec.gap_steps)
    return sample, steps


def generate(spec: SyntheticSpec, n_videos, seed) -> list:
    spec.validate()
    return [sample_video(spec, i, seed)[0] for i in range(n_videos)]


def save_features(samples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record()) + "\n")


def load_features(path) -> list:
    """Parse a JSON-lines feature file; ``T`` and ``d_f`` come from the first record."""
    out = []
    shape = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", line=lineno) from None
            if not isinstance(rec, dict):
                raise FormatError("record is not an object", line=lineno)
            for key in ("id", "label", "features"):
                if key not in rec:
                    raise FormatError(f"missing field {key!r}", line=lineno)
            rows = rec["features"]
            if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
                raise FormatError("features must be a non-empty list of rows", line=lineno)
            widths = {len(r) for r in rows}
            if len(widths) != 1:
                raise FormatError(f"ragged feature rows (widths {sorted(widths)})", line=lineno)
            try:
                feats = np.array(rows, dtype=np.float64)
            except (TypeError, ValueError):
                raise FormatError("non-numeric feature value", line=lineno) from None
            if shape is None:
                shape = feats.shape
            elif feats.shape[1] != shape[1]:
                raise FormatError(f"d_f={feats.shape[1]} differs from first record's {shape[1]}", line=lineno)
            elif feats.shape[0] != shape[0]:
                raise FormatError(f"T={feats.shape[0]} differs from first record's {shape[0]}", line=lineno)
            label = rec["label"]
            if isinstance(label, bool) or not isinstance(label, int) or label < 0:
                raise FormatError(f"label must be a non-negative integer, got {label!r}", line=lineno)
            goal = rec.get("goal_id")
            out.append(VideoSample(str(rec["id"]), feats, label, goal, int(rec.get("gap_steps", 0))))
    return out


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list


def split(samples, fractions=(0.7, 0.1, 0.2), seed=0) -> DatasetSplit:
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise SpecError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_parts = int(np.count_nonzero(fr))
    if len(samples) < n_parts:
        raise SamplingError(f"{len(samples)} samples cannot fill {n_parts} partitions")
    order = np.random.default_rng(seed).permutation(len(samples))
    n = len(samples)
    n_train = int(math.floor(fr[0] * n + 0.5))
    n_val = int(math.floor(fr[1] * n + 0.5))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    parts = np.split(order, [n_train, n_train + n_val])
    pick = lambda idx: [samples[i] for i in idx]
    return DatasetSplit(pick(parts[0]), pick(parts[1]), pick(parts[2]))


def load_spec(path) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        return SyntheticSpec.from_dict(json.load(fh))


def save_spec(spec: SyntheticSpec, path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=1) + "\n", encoding="utf-8")
