"""Delay statistics, sequence analysis, settling detection and run reports."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientDataError

DEFAULT_THRESHOLD_M = 0.1
DEFAULT_HOLD_S = 2.0


class DelayKind(str, enum.Enum):
    TRANSPORT_RTT = "transport_rtt"
    WS_ACK = "ws_ack"
    STATE_RTT = "state_rtt"
    TTP = "ttp"


@dataclass(frozen=True)
class DelaySample:
    kind: DelayKind
    value_ms: float
    timestamp_ms: float
    vehicle_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", DelayKind(self.kind))
        if not (math.isfinite(self.value_ms) and self.value_ms >= 0):
            raise ValueError(f"delay must be finite and >= 0, got {self.value_ms}")


@dataclass(frozen=True)
class Stats:
    n: int
    mean: float
    std: float
    p50: float
    p95: float
    max: float


def stats(samples: Iterable[float]) -> Stats:
    """Mean, sample standard deviation (N-1), median, 95th percentile and max."""
    x = np.asarray([float(s.value_ms) if isinstance(s, DelaySample) else float(s) for s in samples])
    if x.size < 2:
        raise InsufficientDataError(f"stats needs at least two samples, got {x.size}")
    mean = float(x.mean())
    std = float(np.sqrt(np.sum((x - mean) ** 2) / (x.size - 1)))
    return Stats(int(x.size), mean, std, float(np.percentile(x, 50)),
                 float(np.percentile(x, 95)), float(x.max()))


def ttp_series(receive_timestamps: Sequence[float]) -> list[float]:
    """Time from previous frame: successive differences of sorted receive times."""
    t = np.asarray(receive_timestamps, dtype=float)
    if t.size and np.any(np.diff(t) < 0):
        raise ValueError("receive timestamps must be sorted")
    return np.diff(t).tolist()


@dataclass(frozen=True)
class SequenceReport:
    monotone: bool
    accepted: int
    missing: int
    gaps: tuple[tuple[float, int], ...]
    discarded: int = 0


def sequence_progression(accepted: Sequence[tuple[float, int]],
                         discarded: Sequence[tuple[float, int]] = ()) -> SequenceReport:
    """Check strict monotonicity and list ``(time, skipped)`` jumps in the accepted log."""
    seqs = [s for _, s in accepted]
    monotone = all(b > a for a, b in zip(seqs, seqs[1:]))
    gaps = tuple((float(t), int(b - a - 1))
                 for (_, a), (t, b) in zip(accepted, accepted[1:]) if b - a > 1)
    return SequenceReport(monotone, len(seqs), sum(g for _, g in gaps), gaps, len(discarded))


def detect_settling(times: Sequence[float], errors, threshold_m: float = DEFAULT_THRESHOLD_M,
                    hold_s: float = DEFAULT_HOLD_S) -> float | None:
    """Earliest sample time after which every error stays within ``threshold_m`` for ``hold_s``.

    ``errors`` is one series or an array of series (one per row). The hold
    window must lie inside the log.
    """
    if not threshold_m > 0:
        raise ValueError("threshold must be > 0")
    t = np.asarray(times, dtype=float)
    e = np.atleast_2d(np.asarray(errors, dtype=float))
    if e.shape[1] != t.size:
        raise ValueError("each error series must align with times")
    if t.size == 0:
        return None
    ok = np.all(np.abs(e) <= threshold_m, axis=0)
    eps = 1e-9
    # next_bad[k]: first index >= k that is out of tolerance (size if none).
    next_bad = np.empty(t.size, dtype=int)
    nb = t.size
    for k in range(t.size - 1, -1, -1):
        if not ok[k]:
            nb = k
        next_bad[k] = nb
    for k in range(t.size):
        if t[k] + hold_s > t[-1] + eps:
            return None
        if ok[k] and (next_bad[k] == t.size or t[next_bad[k]] > t[k] + hold_s + eps):
            return float(t[k])
    return None


def lyapunov_floor(alpha: float, residual_m: float = DEFAULT_THRESHOLD_M) -> float:
    """V of a single edge sitting at the settling threshold with matched speeds."""
    beta = 2 * alpha / (1 + alpha)
    return residual_m ** (1 + beta) / (1 + beta)


@dataclass
class RunReport:
    settling_time_s: float | None
    settling_threshold_m: float
    settling_hold_s: float
    mutual_exclusion_ok: bool
    mutual_exclusion_violations: int
    collision_classifications: dict[str, str]
    delay_stats: dict[str, dict] = field(default_factory=dict)
    c_hat: float | None = None
    v0: float | None = None
    settling_bound_s: float | None = None
    notes: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=_json_default)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls(**json.loads(text))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, enum.Enum):
        return obj.value
    return str(obj)


def delay_stats(samples: Iterable[DelaySample]) -> dict[str, dict]:
    by_kind: dict[str, list[float]] = {}
    for s in samples:
        by_kind.setdefault(s.kind.value, []).append(s.value_ms)
    out = {}
    for kind, values in sorted(by_kind.items()):
        if len(values) >= 2:
            out[kind] = asdict(stats(values))
    return out


def build_report(log, scenario, delays: Iterable[DelaySample] = (),
                 threshold_m: float = DEFAULT_THRESHOLD_M, hold_s: float = DEFAULT_HOLD_S) -> RunReport:
    """Assemble a report from a trajectory log of ``scenario``."""
    from .control_core import estimate_c, settling_time_bound
    from .errors import DomainError
    from .junction import collision_region_trace, crossing_pairs, mutual_exclusion_violations

    specs = dict(zip(scenario.ids, scenario.vehicles))
    viol = mutual_exclusion_violations(log.progress_map(), specs, scenario.junction)
    order = scenario.crossing_order()
    classes = {}
    for lead, follow in crossing_pairs(order):
        cls = collision_region_trace(log.p[:, log.column(lead)], log.p[:, log.column(follow)],
                                     scenario.junction, specs[lead], specs[follow])
        classes[f"{lead}|{follow}"] = cls.value
    errs = log.follower_errors()
    settle = detect_settling(log.t, errs, threshold_m, hold_s) if errs.size else None
    report = RunReport(
        settling_time_s=settle,
        settling_threshold_m=threshold_m,
        settling_hold_s=hold_s,
        mutual_exclusion_ok=not viol,
        mutual_exclusion_violations=len(viol),
        collision_classifications=classes,
        delay_stats=delay_stats(delays),
    )
    if log.lyapunov is not None and len(log.lyapunov) >= 2:
        v = np.asarray(log.lyapunov)
        alpha = scenario.params.alpha
        below = np.flatnonzero(v <= lyapunov_floor(alpha))
        end = int(below[0]) + 1 if below.size else len(v)
        report.v0 = float(v[0])
        try:
            report.c_hat = estimate_c(log.t[:end], v[:end], alpha)
            if report.c_hat > 0:
                report.settling_bound_s = settling_time_bound(report.v0, report.c_hat, alpha)
        except (InsufficientDataError, DomainError) as exc:
            report.notes.append(f"c_hat unavailable: {exc}")
    return report
