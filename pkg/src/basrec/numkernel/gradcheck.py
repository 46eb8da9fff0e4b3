"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .params import ParamStore


@dataclass
class GradCheckEntry:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    probes: int
    entries: list[GradCheckEntry] = field(default_factory=list)

    def worst(self, n: int = 5) -> list[GradCheckEntry]:
        return sorted(self.entries, key=lambda e: -e.rel_error)[:n]

    def to_text(self) -> str:
        lines = [f"probes = {self.probes}", f"max_rel_error = {self.max_rel_error!r}"]
        for e in self.worst():
            lines.append(f"worst {e.param}{list(e.index)}: analytic={e.analytic!r} numeric={e.numeric!r} rel={e.rel_error!r}")
        return "\n".join(lines)


def grad_check(loss_fn, params: ParamStore, eps: float = 1e-6, probes: int = 200, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must be a deterministic pure function of the stored parameters
    (re-seed any internal randomness per call). Run in float64: central
    differences are unreliable in float32.
    """
    if params.dtype != np.float64:
        raise NumericError("grad_check requires a float64 ParamStore")
    names = params.names()
    sizes = {n: params[n].data.size for n in names}
    total = sum(sizes.values())
    if total == 0:
        return GradCheckReport(max_rel_error=0.0, probes=0)

    params.zero_grads()
    loss = loss_fn()
    loss.backward()
    analytic = {n: (params[n].grad.copy() if params[n].grad is not None else np.zeros_like(params[n].data)) for n in names}

    rng = np.random.Generator(np.random.PCG64(seed))
    flat_choice = rng.choice(total, size=min(probes, total), replace=False)
    bounds = np.cumsum([sizes[n] for n in names])

    report = GradCheckReport(max_rel_error=0.0, probes=len(flat_choice))
    for flat in sorted(flat_choice.tolist()):
        pi = int(np.searchsorted(bounds, flat, side="right"))
        name = names[pi]
        offset = flat - (bounds[pi - 1] if pi > 0 else 0)
        index = np.unravel_index(offset, params[name].data.shape)
        theta = params[name].data
        orig = theta[index]
        theta[index] = orig + eps
        f_plus = float(loss_fn().data)
        theta[index] = orig - eps
        f_minus = float(loss_fn().data)
        theta[index] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(analytic[name][index])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        report.entries.append(GradCheckEntry(name, tuple(int(i) for i in index), a, numeric, rel))
        report.max_rel_error = max(report.max_rel_error, rel)
    return report
