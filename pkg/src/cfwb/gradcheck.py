"""Run every registered finite-difference case over a range of seeds."""

from __future__ import annotations

from dataclasses import dataclass

from . import attention, frames, models  # noqa: F401  (imported for their registrations)
from .tensor import GRADCHECK_CASES, grad_check

TOLERANCE = 1e-4


@dataclass
class CheckRow:
    name: str
    max_error: float
    worst_seed: int
    worst_label: str

    @property
    def ok(self) -> bool:
        return self.max_error < TOLERANCE


def run_gradcheck(seeds=range(10), names=None) -> list[CheckRow]:
    rows = []
    for name in sorted(GRADCHECK_CASES) if names is None else names:
        build = GRADCHECK_CASES[name]
        worst = CheckRow(name, 0.0, -1, "")
        for seed in seeds:
            rng = models.substream(seed, name)
            for label, f, x in build(rng):
                err = grad_check(f, x)
                if not err <= worst.max_error:
                    worst = CheckRow(name, err, seed, label)
        rows.append(worst)
    return rows


def format_table(rows: list[CheckRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'op':<{width}}  {'max rel err':>12}  status"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.max_error:12.3e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
