"""Byte-exact communication metering and the closed-form cost model.

Every simulated transmission appends one event to an integer ledger; the
closed form predicts the total for a full clustered-FL run as

    (N + K) * sum(delta[0:L]) + T * (K + 1) * sum(delta[0:B])

with per-layer sizes ``delta`` in bits.  Broadcasts are metered once per
transmission (not per receiver), matching the closed form's coefficients.
All arithmetic is exact integer math; nothing here touches floats except
the savings ratio.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

from .errors import InputError

PHASES = ("init_upload", "fl_upload", "fl_broadcast", "transfer")

DEFAULT_BITS_PER_PARAM = 32


@dataclass(frozen=True)
class SizeModel:
    """Per-layer transmission sizes in bits."""

    delta: tuple

    def __post_init__(self):
        if not self.delta or any(d <= 0 or not isinstance(d, int) for d in self.delta):
            raise InputError("per-layer sizes must be positive integers")

    @classmethod
    def for_model(cls, m, bits_per_param: int = DEFAULT_BITS_PER_PARAM) -> "SizeModel":
        return cls(tuple(n * bits_per_param for n in m.block_lengths()))

    @property
    def n_layers(self) -> int:
        return len(self.delta)

    def bits_upto(self, n_layers: int) -> int:
        """Total bits of the first ``n_layers`` layers."""
        if not 0 <= n_layers <= len(self.delta):
            raise InputError(f"layer range 1..{n_layers} out of bounds")
        return sum(self.delta[:n_layers])


@dataclass(frozen=True)
class CostEvent:
    phase: str
    sender: str
    receiver: str
    layers: int            # the event covers layers 1..layers
    bits: int


@dataclass
class CostLedger:
    """Append-only transmission record with an exact running total."""

    sizes: SizeModel
    events: list = field(default_factory=list)
    total_bits: int = 0

    def record(self, phase: str, sender, receiver, n_layers: int) -> CostEvent:
        if phase not in PHASES:
            raise InputError(f"unknown phase {phase!r}")
        bits = self.sizes.bits_upto(n_layers)
        event = CostEvent(phase, str(sender), str(receiver), n_layers, bits)
        self.events.append(event)
        self.total_bits += bits
        return event

    def phase_totals(self) -> dict:
        out = {p: 0 for p in PHASES}
        for e in self.events:
            out[e.phase] += e.bits
        return out

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["phase", "sender", "receiver", "layers", "bits"])
            for e in self.events:
                writer.writerow([e.phase, e.sender, e.receiver, e.layers, e.bits])

    def summary(self, closed_form: int | None = None) -> dict:
        out = {
            "per_phase_bits": self.phase_totals(),
            "total_bits": self.total_bits,
        }
        if closed_form is not None:
            out["closed_form_bits"] = closed_form
            out["matches_closed_form"] = closed_form == self.total_bits
        return out

    def export_summary(self, path, closed_form: int | None = None) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(closed_form), f, indent=2, sort_keys=True)


def ledger_total(ledger: CostLedger) -> int:
    return sum(e.bits for e in ledger.events)


def closed_form_delta(n_clients: int, k: int, t: int, b: int, l: int,
                      delta) -> int:
    """Predicted total bits for a clustered run, exact integer arithmetic."""
    if min(n_clients, k, t) < 0:
        raise InputError("counts must be nonnegative")
    if not 1 <= b <= l:
        raise InputError(f"base layer count {b} must lie in [1, {l}]")
    if len(delta) != l:
        raise InputError("size model does not cover L layers")
    sum_l = sum(delta[:l])
    sum_b = sum(delta[:b])
    return (n_clients + k) * sum_l + t * (k + 1) * sum_b


def savings_ratio(candidate_bits: int, baseline_bits: int) -> float:
    """Fraction of the baseline's traffic that the candidate avoids."""
    if baseline_bits <= 0:
        raise InputError("baseline must be positive")
    return 1.0 - candidate_bits / baseline_bits
