"""Density specification format shared by the command-line tools.

A density is a JSON object:

    {"kind": "gaussian", "mean": 0.0, "stddev": 1.0}
    {"kind": "mixture", "components": [
        {"weight": 0.5, "location": -1.0, "scale": 0.6, "shape": 5.0}, ...]}
    {"kind": "grid", "lo": -5.0, "hi": 5.0, "n": 101, "log_values": [...]}

On the command line a spec can also be the shorthand ``gaussian:MU,SIGMA``,
the word ``mixture:default`` for the stock two-component skew target, a
path prefixed with ``@``, or an inline JSON object.
"""

from __future__ import annotations

import json

import numpy as np

from .density_fit import SkewComponent, SkewMixtureTarget
from .divergence import DEFAULT_GRID_POINTS, DEFAULT_GRID_SPAN, GridDensity


class SpecError(ValueError):
    pass


class GaussianSpec:
    def __init__(self, mean: float, stddev: float):
        if stddev <= 0:
            raise SpecError("gaussian stddev must be positive")
        self.mean = float(mean)
        self.stddev = float(stddev)

    def range_hint(self, span: float) -> tuple[float, float]:
        return self.mean - span * self.stddev, self.mean + span * self.stddev

    def tabulate(self, lo, hi, n) -> GridDensity:
        return GridDensity.gaussian(self.mean, self.stddev, lo, hi, n)


class MixtureSpec:
    def __init__(self, target: SkewMixtureTarget):
        self.target = target

    def range_hint(self, span: float) -> tuple[float, float]:
        return self.target.grid_range(span)

    def tabulate(self, lo, hi, n) -> GridDensity:
        return GridDensity.from_callable(self.target.log_pdf, lo, hi, n)


class GridSpec:
    def __init__(self, density: GridDensity):
        self.density = density

    def range_hint(self, span: float) -> tuple[float, float]:
        return self.density.lo, self.density.hi

    def tabulate(self, lo, hi, n) -> GridDensity:
        d = self.density
        if (lo, hi, n) != (d.lo, d.hi, d.n):
            raise SpecError("grid-kind densities carry their own grid; "
                            "pair them only with densities that can be retabulated")
        return d


def parse_density_spec(text):
    """Parse a CLI density argument or an already-decoded JSON object."""
    if isinstance(text, str):
        text = text.strip()
        if text.startswith("gaussian:"):
            try:
                mu, sigma = (float(v) for v in text[len("gaussian:"):].split(","))
            except ValueError:
                raise SpecError(f"bad gaussian shorthand {text!r}; want gaussian:MU,SIGMA") from None
            return GaussianSpec(mu, sigma)
        if text == "mixture:default":
            return MixtureSpec(SkewMixtureTarget.default())
        if text.startswith("@"):
            with open(text[1:]) as fh:
                obj = json.load(fh)
        elif text.startswith("{"):
            obj = json.loads(text)
        else:
            raise SpecError(f"unrecognized density spec {text!r}")
    else:
        obj = text

    if not isinstance(obj, dict) or "kind" not in obj:
        raise SpecError("density spec must be an object with a 'kind' field")
    kind = obj["kind"]
    try:
        if kind == "gaussian":
            return GaussianSpec(obj["mean"], obj["stddev"])
        if kind == "mixture":
            comps = tuple(SkewComponent(c["weight"], c["location"], c["scale"], c["shape"])
                          for c in obj["components"])
            return MixtureSpec(SkewMixtureTarget(comps))
        if kind == "grid":
            return GridSpec(GridDensity(float(obj["lo"]), float(obj["hi"]),
                                        np.asarray(obj["log_values"], dtype=float)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"bad {kind!r} density spec: {exc}") from exc
    raise SpecError(f"unknown density kind {kind!r}")


def tabulate_pair(spec_p, spec_q, n: int = DEFAULT_GRID_POINTS,
                  span: float = DEFAULT_GRID_SPAN) -> tuple[GridDensity, GridDensity]:
    """Put two density specs on one shared grid.

    A grid-kind spec pins the grid (two grid specs must agree); otherwise
    the grid covers the union of both range hints.
    """
    grids = [s for s in (spec_p, spec_q) if isinstance(s, GridSpec)]
    if grids:
        d = grids[0].density
        lo, hi, n = d.lo, d.hi, d.n
    else:
        lo_p, hi_p = spec_p.range_hint(span)
        lo_q, hi_q = spec_q.range_hint(span)
        lo, hi = min(lo_p, lo_q), max(hi_p, hi_q)
    return spec_p.tabulate(lo, hi, n), spec_q.tabulate(lo, hi, n)
