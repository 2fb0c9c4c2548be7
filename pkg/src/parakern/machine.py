"""Machine description files: symbolic hardware limits, counter roster,
strategy order, and the parameter box.

Format (INI-style sections)::

    [machine]
    name = fermi
    grid_stride = 256          # grid-stride cap used by emitted kernels
    witness_budget = 200000    # consistency search budget per case
    coverage_samples = 1000    # default sample count for coverage checks

    [param.Z_B]                # one machine parameter per section
    kind = resource            # resource | performance
    range = 0 12288            # its box (performance defaults to 0 1)

    [counter.shared_words]     # one enabled counter per section, in order
    measure = shared-words
    bound = Z_B                # machine parameter it is compared against
    reduce_with = granularity caching-off
    # any other key = value pairs become counter options (e.g. overhead)

    [strategies]
    order = granularity caching-off cse-0 ...

    [box]
    default = 1 64             # box for program/data parameters
    N = 2 1048576              # per-parameter overrides

Resource counters must precede performance counters, mirroring the
pending-counter stack the optimizer starts from.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from fractions import Fraction

from .counters import MEASURES, CounterSpec


class MachineError(Exception):
    """The machine file is malformed or inconsistent."""


@dataclass(frozen=True)
class MachineParam:
    name: str
    kind: str  # 'resource' | 'performance'
    lo: Fraction
    hi: Fraction


@dataclass(frozen=True)
class MachineSpec:
    name: str
    grid_stride: int
    witness_budget: int
    coverage_samples: int
    params: tuple[MachineParam, ...]
    counters: tuple[CounterSpec, ...]
    strategy_order: tuple[str, ...]
    box_default: tuple[int, int]
    box_overrides: dict = field(default_factory=dict)

    def param(self, name: str) -> MachineParam:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def resource_counters(self) -> tuple[CounterSpec, ...]:
        return tuple(c for c in self.counters if c.kind == "resource")

    @property
    def performance_counters(self) -> tuple[CounterSpec, ...]:
        return tuple(c for c in self.counters if c.kind == "performance")

    def box(self, param_order) -> dict[str, tuple]:
        """Finite bounds for every symbol: program/data parameters from the
        box section, machine parameters from their declared ranges."""
        box: dict[str, tuple] = {}
        for n in param_order:
            box[n] = self.box_overrides.get(n, self.box_default)
        for p in self.params:
            box[p.name] = (p.lo, p.hi)
        return box

    @property
    def rational_params(self) -> tuple[str, ...]:
        """Performance-ratio parameters range over rationals, not integers."""
        return tuple(p.name for p in self.params if p.kind == "performance")


def _split_range(text: str, where: str) -> tuple[Fraction, Fraction]:
    parts = text.split()
    if len(parts) != 2:
        raise MachineError("%s: range must be two numbers, got %r" % (where, text))
    try:
        lo, hi = (Fraction(x) for x in parts)
    except ValueError:
        raise MachineError("%s: bad number in range %r" % (where, text))
    if lo < 0 or hi < lo:
        raise MachineError(
            "%s: range must satisfy 0 <= lo <= hi, got %s..%s" % (where, lo, hi)
        )
    return lo, hi


def parse_machine(text: str, *, known_strategies=None) -> MachineSpec:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # parameter names are case-sensitive
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise MachineError("machine file: %s" % exc)

    if "machine" not in cp:
        raise MachineError("missing [machine] section")
    m = cp["machine"]
    name = m.get("name", "machine")
    try:
        grid_stride = int(m.get("grid_stride", "256"))
        witness_budget = int(m.get("witness_budget", "200000"))
        coverage_samples = int(m.get("coverage_samples", "1000"))
    except ValueError as exc:
        raise MachineError("[machine]: %s" % exc)
    if grid_stride <= 0:
        raise MachineError("[machine]: grid_stride must be positive")

    params: list[MachineParam] = []
    for section in cp.sections():
        if not section.startswith("param."):
            continue
        pname = section[len("param."):]
        kind = cp[section].get("kind", "resource")
        if kind not in ("resource", "performance"):
            raise MachineError("[%s]: unknown kind %r" % (section, kind))
        default_range = "0 1" if kind == "performance" else None
        rng = cp[section].get("range", default_range)
        if rng is None:
            raise MachineError("[%s]: missing range" % section)
        lo, hi = _split_range(rng, "[%s]" % section)
        if kind == "performance" and hi > 1:
            raise MachineError(
                "[%s]: performance ratios live in [0, 1], got hi=%s" % (section, hi)
            )
        if kind == "resource" and (lo.denominator != 1 or hi.denominator != 1):
            raise MachineError("[%s]: resource ranges must be integers" % section)
        params.append(MachineParam(pname, kind, lo, hi))
    declared = {p.name for p in params}

    counters: list[CounterSpec] = []
    for section in cp.sections():
        if not section.startswith("counter."):
            continue
        cname = section[len("counter."):]
        sec = cp[section]
        measure = sec.get("measure")
        if measure not in MEASURES:
            raise MachineError(
                "[%s]: measure must be one of %s, got %r"
                % (section, ", ".join(MEASURES), measure)
            )
        bound = sec.get("bound")
        if bound not in declared:
            raise MachineError(
                "[%s]: bound %r is not a declared machine parameter" % (section, bound)
            )
        kind = "performance" if measure == "occupancy" else "resource"
        pkind = next(p.kind for p in params if p.name == bound)
        if pkind != kind:
            raise MachineError(
                "[%s]: %s counter bound to %s parameter %r"
                % (section, kind, pkind, bound)
            )
        reduce_with = tuple(sec.get("reduce_with", "").split())
        if not reduce_with:
            raise MachineError("[%s]: reduce_with must name at least one strategy" % section)
        options = {
            k: v
            for k, v in sec.items()
            if k not in ("measure", "bound", "reduce_with")
        }
        counters.append(CounterSpec(cname, measure, bound, kind, reduce_with, options))
    seen_perf = False
    for c in counters:
        if c.kind == "performance":
            seen_perf = True
        elif seen_perf:
            raise MachineError(
                "resource counter %r follows a performance counter; "
                "list resources first" % c.name
            )

    order: tuple[str, ...] = ()
    if "strategies" in cp:
        order = tuple(cp["strategies"].get("order", "").split())
    if len(set(order)) != len(order):
        raise MachineError("[strategies]: duplicate names in order")
    if known_strategies is None:
        from .strategies import STRATEGIES

        known_strategies = set(STRATEGIES)
    for s in order:
        if s not in known_strategies:
            raise MachineError("[strategies]: unknown strategy %r" % s)
    for c in counters:
        for s in c.reduce_with:
            if s not in known_strategies:
                raise MachineError(
                    "[counter.%s]: unknown strategy %r in reduce_with" % (c.name, s)
                )

    box_default = (1, 64)
    box_overrides: dict = {}
    if "box" in cp:
        for key, val in cp["box"].items():
            lo, hi = _split_range(val, "[box] %s" % key)
            if lo.denominator != 1 or hi.denominator != 1:
                raise MachineError("[box] %s: bounds must be integers" % key)
            if key == "default":
                box_default = (int(lo), int(hi))
            else:
                box_overrides[key] = (int(lo), int(hi))

    return MachineSpec(
        name=name,
        grid_stride=grid_stride,
        witness_budget=witness_budget,
        coverage_samples=coverage_samples,
        params=tuple(params),
        counters=tuple(counters),
        strategy_order=order,
        box_default=box_default,
        box_overrides=box_overrides,
    )


def load_machine(path) -> MachineSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_machine(fh.read())
