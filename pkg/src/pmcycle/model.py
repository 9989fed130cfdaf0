"""Targets, scenarios and the sensing / uncertainty model.

Each target accumulates uncertainty at rate ``A`` and, while the agent is
within sensing range ``r``, is drained at rate ``B * p(s)`` where
``p(s) = max(0, 1 - |s - x|^2 / r^2)``.  Uncertainty never drops below zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np


class ScenarioError(ValueError):
    """Raised when scenario data violates a modelling assumption.

    ``violations`` holds one ``(kind, target_ids, message)`` tuple per problem.
    """

    def __init__(self, violations: list[tuple[str, tuple[int, ...], str]]):
        self.violations = violations
        super().__init__("; ".join(msg for _, _, msg in violations))


@dataclass(frozen=True)
class TargetSpec:
    id: int
    position: tuple[float, float]
    growth_rate_A: float
    sensing_gain_B: float
    sensing_radius_r: float

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        problems = target_violations(self)
        if problems:
            raise ScenarioError(problems)

    @property
    def A(self) -> float:
        return self.growth_rate_A

    @property
    def B(self) -> float:
        return self.sensing_gain_B

    @property
    def r(self) -> float:
        return self.sensing_radius_r

    @property
    def x(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def delta(self) -> float:
        return inner_radius(self)


def target_violations(target: TargetSpec) -> list[tuple[str, tuple[int, ...], str]]:
    out = []
    A, B, r = target.growth_rate_A, target.sensing_gain_B, target.sensing_radius_r
    tid = (target.id,)
    if not all(math.isfinite(v) for v in (A, B, r, *target.position)):
        out.append(("parameter", tid, f"target {target.id}: non-finite parameter"))
        return out
    if not A > 0:
        out.append(("parameter", tid, f"target {target.id}: growth rate A must be positive"))
    if not B > A:
        out.append(("parameter", tid, f"target {target.id}: B must exceed A"))
    if not r > 0:
        out.append(("parameter", tid, f"target {target.id}: sensing radius r must be positive"))
    return out


@dataclass(frozen=True)
class Scenario:
    targets: tuple[TargetSpec, ...]
    sequence: tuple[int, ...]
    initial_uncertainty: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "sequence", tuple(int(i) for i in self.sequence))
        object.__setattr__(self, "initial_uncertainty", tuple(float(v) for v in self.initial_uncertainty))
        problems = scenario_violations(self.targets, self.sequence, self.initial_uncertainty)
        if problems:
            raise ScenarioError(problems)

    @property
    def M(self) -> int:
        return len(self.targets)

    @property
    def K(self) -> int:
        return len(self.sequence)

    def index_of(self, target_id: int) -> int:
        for i, t in enumerate(self.targets):
            if t.id == target_id:
                return i
        raise KeyError(target_id)

    def visit_target(self, k: int) -> TargetSpec:
        """Target of visit ``k`` (0-based, cyclic)."""
        return self.targets[self.index_of(self.sequence[k % self.K])]

    def visit_index(self, k: int) -> int:
        """Position in ``targets`` of the target visited at ``k`` (0-based, cyclic)."""
        return self.index_of(self.sequence[k % self.K])


@dataclass(frozen=True)
class AgentState:
    position: tuple[float, float]
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))


def sensing_value(target: TargetSpec, s) -> float:
    d2 = float(np.sum((np.asarray(s, dtype=float) - target.x) ** 2))
    return max(0.0, 1.0 - d2 / target.r**2)


def uncertainty_rate(target: TargetSpec, R: float, s) -> float:
    """Right-hand side of the hybrid uncertainty dynamics."""
    if R < 0:
        raise ValueError(f"uncertainty must be nonnegative, got {R}")
    rate = target.A - target.B * sensing_value(target, s)
    if R == 0 and rate < 0:
        return 0.0
    return rate


def inner_radius(target: TargetSpec) -> float:
    """Distance at which sensing exactly balances growth."""
    A, B, r = target.growth_rate_A, target.sensing_gain_B, target.sensing_radius_r
    return r * math.sqrt((B - A) / B)


def greedy_threshold(target: TargetSpec) -> float:
    """Smallest arrival uncertainty for which radial in/dwell/out is optimal.

    Equals minus the uncertainty change accumulated along the radial path
    from the sensing circle to the center and back out to the inner circle.
    """
    A, B, r = target.A, target.B, target.r
    d = inner_radius(target)
    return -(A - 2.0 * B / 3.0) * r - d * (A - B) - B * d**3 / (3.0 * r**2)


def validate_scenario(raw: Mapping[str, Any]) -> Scenario:
    """Build a :class:`Scenario` from plain data, collecting every violation.

    ``raw`` has keys ``targets`` (list of mappings with ``id, x, y, A, B, r``),
    ``sequence`` and ``initial_uncertainty``.
    """
    violations: list[tuple[str, tuple[int, ...], str]] = []
    targets = []
    for entry in raw["targets"]:
        tid = int(entry["id"])
        try:
            targets.append(
                TargetSpec(tid, (float(entry["x"]), float(entry["y"])),
                           float(entry["A"]), float(entry["B"]), float(entry["r"]))
            )
        except ScenarioError as err:
            violations.extend(err.violations)
    sequence = tuple(int(i) for i in raw["sequence"])
    R0 = tuple(float(v) for v in raw["initial_uncertainty"])
    if not violations:
        violations.extend(scenario_violations(targets, sequence, R0))
    if violations:
        raise ScenarioError(violations)
    return Scenario(tuple(targets), sequence, R0)


def scenario_violations(
    targets: Sequence[TargetSpec], sequence: Sequence[int], R0: Sequence[float]
) -> list[tuple[str, tuple[int, ...], str]]:
    out: list[tuple[str, tuple[int, ...], str]] = []
    ids = [t.id for t in targets]
    if len(set(ids)) != len(ids):
        out.append(("ids", tuple(ids), "target ids must be unique"))
    if len(targets) == 0:
        out.append(("targets", (), "scenario needs at least one target"))
    for i in range(len(targets)):
        for j in range(i + 1, len(targets)):
            a, b = targets[i], targets[j]
            dist = float(np.linalg.norm(a.x - b.x))
            if not dist > a.r + b.r:
                out.append((
                    "overlap", (a.id, b.id),
                    f"sensing disks of targets {a.id} and {b.id} intersect "
                    f"(distance {dist:g} <= {a.r + b.r:g})",
                ))
    missing = sorted(set(sequence) - set(ids))
    if missing:
        out.append(("sequence", tuple(missing), f"sequence references unknown targets {missing}"))
    if len(sequence) == 0:
        out.append(("sequence", (), "sequence must not be empty"))
    if len(sequence) >= 2:
        repeats = [k for k in range(len(sequence)) if sequence[k] == sequence[(k + 1) % len(sequence)]]
        if repeats:
            out.append(("sequence", tuple(sequence[k] for k in repeats),
                        f"consecutive visits (cyclically) must go to different targets; repeated at "
                        f"positions {repeats}"))
    unvisited = [i for i in ids if i not in set(sequence)]
    if unvisited:
        out.append(("sequence", tuple(unvisited), f"targets {unvisited} never visited"))
    if len(R0) != len(targets):
        out.append(("initial_uncertainty", (), f"expected {len(targets)} initial uncertainties, got {len(R0)}"))
    for t, v in zip(targets, R0):
        if not (math.isfinite(v) and v >= 0):
            out.append(("initial_uncertainty", (t.id,), f"target {t.id}: initial uncertainty must be >= 0"))
    return out


def circle_point(center, radius: float, angle: float) -> np.ndarray:
    return np.asarray(center, dtype=float) + radius * np.array([math.cos(angle), math.sin(angle)])


def circle_tangent(radius: float, angle: float) -> np.ndarray:
    """Derivative of ``circle_point`` with respect to the angle."""
    return radius * np.array([-math.sin(angle), math.cos(angle)])
