"""Gradient-driven record-size perturbation and stuffing plans.

The fast gradient sign method moves every feature one epsilon step in the
direction that increases the detector's loss. Raw FGSM output is not
realizable traffic, so it is projected: padding entries stay padding, sizes
snap to the block-cipher grid, and everything is clamped to what a record
can actually carry. A realizable vector then becomes a per-connection
stuffing plan: target sizes for whichever side (framework, payload, or both)
is allowed to stuff.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .detector import DetectorParams, LABEL_INDEX, input_gradient, normalize
from .model import Direction, FeatureVector, Label, MAX_RECORD_SIZE, PAD_VALUE
from .sizing import TlsSizeModel


class StuffSide(enum.Enum):
    """Which endpoint is permitted to stuff its messages."""

    FRAMEWORK_ONLY = "framework_only"
    PAYLOAD_ONLY = "payload_only"
    TWO_SIDE = "two_side"

    def covers(self, direction: Direction) -> bool:
        if self is StuffSide.TWO_SIDE:
            return True
        if self is StuffSide.FRAMEWORK_ONLY:
            return direction is Direction.FRAMEWORK_TO_PAYLOAD
        return direction is Direction.PAYLOAD_TO_FRAMEWORK


@dataclass(frozen=True)
class FgsmConfig:
    epsilon: float = 0.05
    size_model: TlsSizeModel = field(default_factory=TlsSizeModel)
    max_size: int = MAX_RECORD_SIZE
    # Stuffing only adds bytes: a target below the smallest message the
    # protocol ever sends at that position is silently overshot on the wire.
    # (request_floor, response_floor) clamps crafted targets to sizes the
    # even (client) and odd (server) positions can actually realize.
    position_floors: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.position_floors is not None and len(self.position_floors) != 2:
            raise ValueError("position_floors must be (request_floor, response_floor)")

    @property
    def grid_cap(self) -> int:
        # largest grid point a record may advertise
        return (self.max_size // self.size_model.block_len) * self.size_model.block_len


def fgsm_raw(
    params: DetectorParams,
    x_raw: np.ndarray,
    y: np.ndarray | int,
    epsilon: float,
    respect_padding: bool = True,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Unprojected FGSM step in raw size units: x + eps*scale*sign(grad).

    Entries with exactly zero gradient are untouched, as are padding entries
    when respect_padding is set. A mask of per-feature flags restricts the
    step to the coordinates an attacker actually controls; masked-out entries
    keep their original value. Output is float and generally off-grid.
    """
    x = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
    grad = np.atleast_2d(input_gradient(params, normalize(x, params.norm_scale), y))
    signs = np.sign(grad)
    if respect_padding:
        signs[x == PAD_VALUE] = 0.0
    if mask is not None:
        signs = signs * np.atleast_2d(np.asarray(mask, dtype=np.float64))
    adv = x + epsilon * params.norm_scale * signs
    adv[signs == 0.0] = x[signs == 0.0]
    return adv if np.ndim(x_raw) > 1 else adv[0]


def fgsm(
    params: DetectorParams,
    x: FeatureVector,
    y: Label = Label.C2,
    config: FgsmConfig | None = None,
) -> FeatureVector:
    """Realizable adversarial feature vector for a single flow."""
    config = config or FgsmConfig()
    adv = fgsm_batch(params, np.asarray(x.values, dtype=np.float64)[None, :], np.array([LABEL_INDEX[y]]), config)
    return FeatureVector(tuple(adv[0]))


def fgsm_batch(
    params: DetectorParams,
    x_raw: np.ndarray,
    y: np.ndarray,
    config: FgsmConfig,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Vectorized fgsm over raw feature rows; returns projected rows."""
    x = np.atleast_2d(np.asarray(x_raw, dtype=np.float64))
    if config.epsilon == 0.0:
        return x.copy()
    adv = np.atleast_2d(fgsm_raw(params, x, y, config.epsilon, mask=mask))
    moved = adv != x
    block = config.size_model.block_len
    snapped = np.round(adv / block) * block
    floor = np.full(x.shape[1], float(config.size_model.min_framed_size()))
    if config.position_floors is not None:
        req_floor, resp_floor = config.position_floors
        floor[0::2] = np.maximum(floor[0::2], req_floor)
        floor[1::2] = np.maximum(floor[1::2], resp_floor)
    snapped = np.clip(snapped, floor, config.grid_cap)
    out = np.where(moved, snapped, x)
    return out


@dataclass(frozen=True)
class PlanTarget:
    position: int
    direction: Direction
    size: int

    def __post_init__(self) -> None:
        if self.position < 0:
            raise ValueError("negative plan position")
        if self.size < 1:
            raise ValueError("plan target size must be positive")


@dataclass(frozen=True)
class StuffingPlan:
    """Record-size targets for one connection.

    n_records fixes how many records the connection carries; targets cover
    the subset of positions the stuffing side controls. first_size_next_conn
    is the payload target that must be handed across the connection boundary
    with the closing response. profile, when present, records the full
    crafted size vector the plan came from (one entry per record, covered or
    not) so a scheduler can match queued traffic to the plan shape.
    """

    n_records: int
    targets: tuple[PlanTarget, ...]
    first_size_next_conn: int | None = None
    source_id: str = ""
    profile: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.n_records < 1:
            raise ValueError("a plan must cover at least one record")
        if self.profile and len(self.profile) != self.n_records:
            raise ValueError("profile length must match n_records")
        prev = -1
        for t in self.targets:
            if t.position <= prev:
                raise ValueError("plan target positions must be strictly increasing")
            if t.position >= self.n_records:
                raise ValueError("plan target position beyond plan length")
            prev = t.position

    @property
    def n_exchanges(self) -> int:
        return math.ceil(self.n_records / 2)

    def target_at(self, position: int) -> int | None:
        for t in self.targets:
            if t.position == position:
                return t.size
        return None

    def first_payload_target(self) -> int | None:
        for t in self.targets:
            if t.direction is Direction.PAYLOAD_TO_FRAMEWORK:
                return t.size
        return None


def alternating_directions(n: int, first: Direction = Direction.PAYLOAD_TO_FRAMEWORK) -> tuple[Direction, ...]:
    """Request/response alternation: the client speaks on even positions."""
    return tuple(first if i % 2 == 0 else first.flipped() for i in range(n))


def plan_from_adversarial(
    x_star: FeatureVector,
    side: StuffSide,
    directions: Sequence[Direction] | None = None,
    source_id: str = "",
) -> StuffingPlan:
    """Turn a realizable adversarial vector into a stuffing plan.

    The vector's non-padding length fixes the connection's record count;
    positions the given side does not control carry no target.
    """
    n = x_star.n_records
    if n == 0:
        raise ValueError("adversarial vector has no records")
    dirs = tuple(directions) if directions is not None else alternating_directions(n)
    if len(dirs) < n:
        raise ValueError(f"need {n} directions, got {len(dirs)}")
    targets = tuple(
        PlanTarget(i, dirs[i], int(x_star.values[i]))
        for i in range(n)
        if side.covers(dirs[i])
    )
    profile = tuple(int(x_star.values[i]) for i in range(n))
    return StuffingPlan(n_records=n, targets=targets, source_id=source_id, profile=profile)


def stuff_amount(target_size: int, content_size: int) -> int:
    """Filler bytes needed to lift a message to its target record size.

    Content already past the target gets no filler; stuffing can only grow
    a record.
    """
    if target_size < 0 or content_size < 0:
        raise ValueError("sizes must be non-negative")
    return max(0, target_size - content_size)


def sample_plan(library: Sequence[StuffingPlan], rng: np.random.Generator) -> StuffingPlan:
    if not library:
        raise ValueError("empty plan library")
    return library[int(rng.integers(len(library)))]


def chain_plans(plans: Sequence[StuffingPlan]) -> list[StuffingPlan]:
    """Fill each plan's carry-over size from its successor's first payload target."""
    from dataclasses import replace

    chained = []
    for i, plan in enumerate(plans):
        nxt = plans[i + 1].first_payload_target() if i + 1 < len(plans) else None
        chained.append(replace(plan, first_size_next_conn=nxt))
    return chained


def build_plan_library(
    params: DetectorParams,
    samples: Sequence,
    side: StuffSide,
    config: FgsmConfig,
    source_tag: str = "",
    min_exchanges: int = 2,
) -> list[StuffingPlan]:
    """FGSM every C2 sample and compile the results into stuffing plans.

    The gradient step is masked to the record positions the chosen side
    controls, so the crafted vector is exactly what the wire can realize.
    Flows shorter than min_exchanges request/response rounds are skipped:
    a connection carrying a single exchange is the very fingerprint request
    coalescing removes, and no stuffing rescues it.
    """
    feats = [
        s.features
        for s in samples
        if s.label is Label.C2 and s.features.n_records >= 2 * min_exchanges
    ]
    if not feats:
        raise ValueError(
            f"no C2 flows with at least {min_exchanges} exchanges "
            f"({2 * min_exchanges} records) to build plans from"
        )
    dirs = alternating_directions(len(feats[0].values))
    mask = np.array([side.covers(d) for d in dirs], dtype=np.float64)
    x = np.array([fv.values for fv in feats], dtype=np.float64)
    y = np.zeros(len(x), dtype=np.int64)  # true class: C2
    adv = fgsm_batch(params, x, y, config, mask=mask)
    plans = []
    for i, row in enumerate(adv):
        fv = FeatureVector(tuple(row))
        plans.append(plan_from_adversarial(fv, side, source_id=f"{source_tag}[{i}]"))
    return plans


def save_plan_library(path: str | Path, plans: Sequence[StuffingPlan], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": 1,
        "meta": meta,
        "plans": [
            {
                "n_records": p.n_records,
                "targets": [[t.position, t.direction.value, t.size] for t in p.targets],
                "first_size_next_conn": p.first_size_next_conn,
                "source_id": p.source_id,
                "profile": list(p.profile),
            }
            for p in plans
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_plan_library(path: str | Path) -> tuple[list[StuffingPlan], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ValueError(f"{path}: unsupported plan library version")
    plans = [
        StuffingPlan(
            n_records=entry["n_records"],
            targets=tuple(
                PlanTarget(pos, Direction(d), size) for pos, d, size in entry["targets"]
            ),
            first_size_next_conn=entry["first_size_next_conn"],
            source_id=entry.get("source_id", ""),
            profile=tuple(entry.get("profile", ())),
        )
        for entry in doc["plans"]
    ]
    return plans, doc.get("meta", {})
