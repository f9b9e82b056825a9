"""Prototype dictionary shared by training and streaming inference.

Known classes get unit-norm mean prototypes that track the encoder through a
normalized running mean; streaming items whose best cosine score falls below
the threshold spawn a new prototype on the spot.  The threshold itself is
calibrated during training from score quantiles via an EMA.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_FLOOR = 1e-12


class PrototypeStore:
    """Ordered unit prototypes: indices 0..k_known-1 are the known classes,
    anything appended after that is a spawned category.  Appends never
    reorder existing entries, so stream predictions are final."""

    def __init__(self, protos: np.ndarray, k_known: int, accum: np.ndarray | None = None):
        protos = np.asarray(protos, dtype=np.float64)
        norms = np.linalg.norm(protos, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("prototypes must be unit-norm")
        self.protos = protos
        self.k_known = int(k_known)
        # running-mean accumulators for the known prototypes only
        self.accum = protos[:k_known].copy() if accum is None else np.asarray(accum, dtype=np.float64)

    def __len__(self) -> int:
        return self.protos.shape[0]

    @property
    def n_spawned(self) -> int:
        return len(self) - self.k_known

    def scores(self, features: np.ndarray) -> np.ndarray:
        """Cosine scores of one or many unit features against all prototypes."""
        return np.asarray(features, dtype=np.float64) @ self.protos.T

    def match(self, feature: np.ndarray) -> tuple[int, float, np.ndarray]:
        """Best prototype for a unit feature; ties break to the lowest index."""
        if len(self) == 0:
            raise ValueError("prototype store is empty")
        s = self.scores(feature)
        best = int(np.argmax(s))  # argmax returns the first maximal index
        return best, float(s[best]), s

    def assign_or_spawn(self, feature: np.ndarray, tau: float) -> tuple[int, float, bool]:
        """Streaming decision: assign to the best prototype when its score
        reaches tau, otherwise append the feature as a new prototype.
        Novelty requires strictly s_max < tau."""
        best, s_max, _ = self.match(feature)
        if s_max >= tau:
            return best, s_max, False
        self.protos = np.vstack([self.protos, np.asarray(feature, dtype=np.float64)])
        return len(self) - 1, s_max, True

    def running_update(self, feature: np.ndarray, label: int, momentum: float) -> None:
        """EMA the known-class accumulator toward the feature, re-normalize."""
        if not 0 <= label < self.k_known:
            raise ValueError(f"label {label} is not a known class")
        self.accum[label] = momentum * self.accum[label] + (1.0 - momentum) * np.asarray(
            feature, dtype=np.float64
        )
        norm = np.linalg.norm(self.accum[label])
        if norm < NORM_FLOOR:
            raise ValueError(f"running mean for class {label} collapsed to zero norm")
        self.protos[label] = self.accum[label] / norm

    def copy(self) -> "PrototypeStore":
        return PrototypeStore(self.protos.copy(), self.k_known, self.accum.copy())


def init_prototypes(features: np.ndarray, labels: np.ndarray, k: int) -> PrototypeStore:
    """Unit-normalized class means over labeled features, classes 0..k-1."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    protos = np.zeros((k, features.shape[1]))
    for c in range(k):
        members = features[labels == c]
        if members.shape[0] == 0:
            raise ValueError(f"class {c} has no samples")
        mean = members.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < NORM_FLOOR:
            raise ValueError(f"class {c} mean has zero norm (antipodal features)")
        protos[c] = mean / norm
    return PrototypeStore(protos, k_known=k)


@dataclass
class ThresholdState:
    """Adaptive threshold tau with its EMA bookkeeping."""

    tau: float
    tau_init: float | None = None
    beta: float = 0.001
    q_pos: float = 0.8
    q_neg: float = 0.2
    history: list[tuple[float, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.tau_init is None:
            self.tau_init = self.tau
        if not -1.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (-1, 1)")
        if not (0.0 < self.q_pos < 1.0 and 0.0 < self.q_neg < 1.0):
            raise ValueError("quantile levels must lie in (0, 1)")


def quantile_targets(
    known_scores: np.ndarray,
    pseudo_scores: np.ndarray,
    q_pos: float,
    q_neg: float,
) -> tuple[float, float, float]:
    """Upper quantile of known scores, lower quantile of pseudo scores, and
    their midpoint.  Quantiles interpolate linearly between order statistics
    at rank q*(n-1)."""
    known_scores = np.asarray(known_scores, dtype=np.float64)
    pseudo_scores = np.asarray(pseudo_scores, dtype=np.float64)
    if known_scores.size == 0 or pseudo_scores.size == 0:
        raise ValueError("quantile targets need nonempty known and pseudo scores")
    u_pos = float(np.quantile(known_scores, q_pos))
    u_neg = float(np.quantile(pseudo_scores, q_neg))
    return u_pos, u_neg, 0.5 * (u_pos + u_neg)


def ema_update(state: ThresholdState, tau_target: float,
               u_pos: float = np.nan, u_neg: float = np.nan) -> float:
    """tau <- (1 - beta) tau + beta tau_target; records the step in history."""
    if not np.isfinite(tau_target):
        raise ValueError("tau_target must be finite")
    state.tau = (1.0 - state.beta) * state.tau + state.beta * tau_target
    state.history.append((u_pos, u_neg, tau_target, state.tau))
    return state.tau


# ---------------------------------------------------------------------------
# Stream records and serialization

STREAM_HEADER = "item_id,predicted,s_max,spawned"


@dataclass
class StreamRecord:
    item_id: int
    predicted: int
    s_max: float
    spawned: bool


def write_stream_csv(path, records: list[StreamRecord]) -> None:
    lines = [STREAM_HEADER]
    for r in records:
        lines.append(f"{r.item_id},{r.predicted},{r.s_max!r},{int(r.spawned)}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_stream_csv(path) -> list[StreamRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != STREAM_HEADER:
        raise ValueError(f"{path}: missing stream header {STREAM_HEADER!r}")
    records = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"{path}:{ln}: expected 4 fields, got {len(parts)}")
        records.append(StreamRecord(int(parts[0]), int(parts[1]),
                                    float(parts[2]), bool(int(parts[3]))))
    return records


def store_to_arrays(store: PrototypeStore) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    return {"protos": store.protos, "proto_accum": store.accum}, {"k_known": store.k_known}


def store_from_arrays(arrays: dict[str, np.ndarray], ints: dict[str, int]) -> PrototypeStore:
    return PrototypeStore(arrays["protos"], ints["k_known"], arrays["proto_accum"])
