"""Experiment configuration: YAML with a fixed schema, unknown keys rejected with line numbers."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import yaml

from . import examples
from .bsde import GeneratorSpec, TerminalSpec
from .control import ControlModel
from .mpp import ExponentialLaw, MarkKernel, MppModel, TabulatedLaw, UniformTailLaw

KINDS = ("solve", "simulate", "verify-example", "estimates", "pathology", "control", "truncation")
SEED_ENV = "JUMPFLOW_SEED"

NUM, INT, STR, LIST, BOOL = "number", "integer", "string", "list", "boolean"

LAW = {"kind": STR, "rate": NUM, "v": NUM, "times": LIST, "values": LIST}
SCHEMA = {
    "kind": STR,
    "seed": INT,
    "output": STR,
    "model": {
        "example": STR, "horizon": NUM, "marks": INT, "max_jumps": INT, "markov": BOOL,
        "law": LAW, "laws": LIST, "kernel": LIST, "rate": NUM, "rate1": NUM, "v": NUM,
    },
    "generator": {"kind": STR, "a": NUM, "b": NUM, "c": NUM},
    "terminal": {"kind": STR, "cap": INT, "position": INT, "mark": INT, "value": NUM,
                 "weights": LIST},
    "numeric": {"n_grid": INT, "tol_picard": NUM, "max_iters": INT, "n_mc": INT,
                "tol_residual": NUM, "tol_example": NUM, "workers": INT, "n_out": INT},
    "path": LIST,
    "estimates": {"alpha": NUM, "beta": NUM, "perturbation": NUM},
    "truncation": {"caps": LIST, "tol": NUM},
    "control": {"actions": LIST, "cost_rate": NUM, "jump_cost": NUM, "n_random": INT,
                "exhaustive": BOOL, "direct_paths": INT},
    "pathology": {
        "atom": {"p": NUM, "r": NUM, "cases": LIST, "generator": STR},
        "support": {"v": NUM, "h": STR, "h_value": NUM, "w": LIST, "n_grid": INT, "g_clip": NUM},
    },
    "simulate": {"n_paths": INT, "n_table": INT},
}

REQUIRED = {"kind": "kind", "model": None}
NEEDS = {
    "solve": ("model", "terminal", "generator"),
    "simulate": ("model",),
    "verify-example": ("model",),
    "estimates": ("model", "terminal", "generator", "estimates"),
    "pathology": ("pathology",),
    "control": ("model", "control"),
    "truncation": ("model", "terminal", "generator", "truncation"),
}


class ConfigError(ValueError):
    """Invalid configuration, with file and line when known."""


def _where(source, node):
    return f"{source}:{node.start_mark.line + 1}"


def _check_type(value, kind):
    if kind == NUM:
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if kind == INT:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == STR:
        return isinstance(value, str)
    if kind == LIST:
        return isinstance(value, list)
    if kind == BOOL:
        return isinstance(value, bool)
    return True


def _validate(node, schema, data, source, path):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(source, node)}: '{path or 'config'}' must be a mapping")
    for key_node, value_node in node.value:
        key = key_node.value
        where = _where(source, key_node)
        full = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"{where}: unknown key '{full}'")
        spec = schema[key]
        if isinstance(spec, dict):
            _validate(value_node, spec, data[key], source, full)
        elif not _check_type(data[key], spec):
            raise ConfigError(f"{where}: '{full}' must be a {spec}, got {data[key]!r}")


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    data: dict
    source: str
    lines: dict

    def block(self, name):
        return self.data.get(name) or {}

    def numeric(self, key, default):
        return self.block("numeric").get(key, default)

    def line(self, name):
        return self.lines.get(name, "?")


def parse_config(text, source="<config>", seed_override=None, kind_override=None):
    """Parse and validate; the seed comes from the override, the environment, or the file."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{line}: YAML parse error: {getattr(exc, 'problem', exc)}") from None
    if node is None:
        raise ConfigError(f"{source}:1: empty config")
    _validate(node, SCHEMA, data, source, "")
    lines = {k.value: k.start_mark.line + 1 for k, _ in node.value}
    kind = data.get("kind")
    if kind_override is not None:
        if kind is not None and kind != kind_override:
            raise ConfigError(f"{source}:{lines['kind']}: config is for '{kind}', not '{kind_override}'")
        kind = kind_override
    if kind is None:
        raise ConfigError(f"{source}: missing required field 'kind'")
    if kind not in KINDS:
        raise ConfigError(f"{source}:{lines['kind']}: unknown experiment kind '{kind}'")
    named = "example" in (data.get("model") or {})
    for block in NEEDS[kind]:
        if named and block in ("terminal", "generator"):
            continue  # named examples carry their own terminal and generator
        if block not in data:
            raise ConfigError(f"{source}: missing required block '{block}' for kind '{kind}'")
    seed = seed_override
    if seed is None and os.environ.get(SEED_ENV):
        seed = int(os.environ[SEED_ENV])
    if seed is None:
        seed = data.get("seed")
    if seed is None:
        raise ConfigError(f"{source}: missing required field 'seed'")
    numeric = data.get("numeric") or {}
    for key in ("tol_picard", "tol_residual", "tol_example"):
        if key in numeric and not numeric[key] > 0:
            raise ConfigError(f"{source}:{lines.get('numeric', '?')}: tolerance 'numeric.{key}' must be positive")
    return ExperimentConfig(kind, int(seed), data, source, lines)


def load_config(path, seed_override=None, kind_override=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path), seed_override, kind_override)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _law_factory(spec, where):
    kind = spec.get("kind")
    if kind == "exponential":
        rate = float(spec.get("rate", 1.0))
        return lambda h: ExponentialLaw(rate, start=h.dmax), True
    if kind == "uniform-tail":
        v = float(spec["v"])
        return lambda h: UniformTailLaw(v, start=h.dmax), True
    if kind == "tabulated":
        times, values = np.asarray(spec["times"], float), np.asarray(spec["values"], float)
        return lambda h: TabulatedLaw(times, values, start=h.dmax), True
    raise ConfigError(f"{where}: unknown law kind '{kind}'")


def build_model(cfg):
    """MppModel from the model block (a named example or an explicit description)."""
    m = cfg.block("model")
    where = f"{cfg.source}:{cfg.line('model')}"
    if "example" in m:
        name = m["example"]
        horizon = float(m.get("horizon", 1.0))
        if name == "worked-example":
            return examples.worked_example(m.get("rate", 1.0), m.get("rate1", 2.0), horizon)[0]
        if name == "poisson":
            return examples.poisson(m.get("rate", 1.0), horizon, m.get("max_jumps"))[0]
        if name == "uniform-tail":
            return examples.uniform_tail(m.get("v", 2.0), horizon, m.get("max_jumps", 3))[0]
        if name == "tabulated":
            return examples.tabulated(horizon, m.get("max_jumps", 3))[0]
        raise ConfigError(f"{where}: unknown example '{name}'")
    for key in ("horizon", "marks"):
        if key not in m:
            raise ConfigError(f"{where}: model block needs '{key}'")
    K = int(m["marks"])
    laws = m.get("laws") or [m.get("law") or {"kind": "exponential", "rate": 1.0}]
    factories = [_law_factory(s, where)[0] for s in laws]
    kernels = [MarkKernel(w) for w in (m.get("kernel") or [[1.0 / K] * K])]
    if any(len(k.fixed) != K for k in kernels):
        raise ConfigError(f"{where}: kernel weights must have {K} entries")
    bound = sum(_hazard_bound(s, float(m["horizon"])) for s in laws) if len(laws) > 1 else \
        _hazard_bound(laws[0], float(m["horizon"]))
    return MppModel(
        horizon=float(m["horizon"]), n_marks=K,
        law=lambda n, h: factories[min(n, len(factories) - 1)](h),
        kernel=lambda n, h: kernels[min(n, len(kernels) - 1)],
        max_jumps=m.get("max_jumps"), markov=m.get("markov", True),
        compensator_bound=bound, name="config")


def _hazard_bound(spec, horizon):
    kind = spec.get("kind")
    if kind == "exponential":
        return float(spec.get("rate", 1.0)) * horizon
    if kind == "uniform-tail":
        return math.log(spec["v"] / (spec["v"] - horizon))
    return -math.log(min(spec["values"]))


def build_terminal(cfg):
    t = cfg.block("terminal")
    where = f"{cfg.source}:{cfg.line('terminal')}"
    kind = t.get("kind", "constant")
    if kind == "constant":
        value = float(t.get("value", 0.0))
        return TerminalSpec(lambda n, h: value, marks_only=True)
    if kind == "count":
        cap = t.get("cap", 10 ** 9)
        scale = float(t.get("value", 1.0))
        return TerminalSpec(lambda n, h: scale * min(n, cap), marks_only=True)
    if kind == "mark-indicator":
        pos, mark = int(t["position"]), int(t["mark"])
        return TerminalSpec(lambda n, h: 1.0 if n >= pos and h.marks[pos - 1] == mark else 0.0,
                            marks_only=True)
    if kind == "mark-sum":
        w = np.asarray(t["weights"], float)
        return TerminalSpec(lambda n, h: float(sum(w[x] for x in h.marks)), marks_only=True)
    raise ConfigError(f"{where}: unknown terminal kind '{kind}'")


def build_generator(cfg):
    g = cfg.block("generator")
    kind = g.get("kind", "martingale")
    if kind == "martingale":
        return GeneratorSpec.martingale()
    if kind == "zero":
        return GeneratorSpec.zero()
    if kind == "linear":
        return GeneratorSpec.linear(g.get("a", 0.0), g.get("b", 0.0), g.get("c", 0.0))
    raise ConfigError(f"{cfg.source}:{cfg.line('generator')}: unknown generator kind '{kind}'")


def build_problem(cfg):
    """(model, terminal, generator); named examples supply their own defaults."""
    model = build_model(cfg)
    name = cfg.block("model").get("example")
    if "terminal" in cfg.data:
        terminal = build_terminal(cfg)
    elif name == "worked-example":
        terminal = examples.worked_example()[1]
    elif name is not None:
        terminal = getattr(examples, name.replace("-", "_"))()[1]
    else:
        terminal = TerminalSpec(lambda n, h: 0.0, marks_only=True)
    gen = build_generator(cfg) if "generator" in cfg.data else GeneratorSpec.martingale()
    return model, terminal, gen


def build_control(cfg):
    c = cfg.block("control")
    model = build_model(cfg)
    if model.max_jumps is None:
        raise ConfigError(f"{cfg.source}:{cfg.line('model')}: control needs model.max_jumps")
    actions = tuple(float(u) for u in c.get("actions", [0.5, 2.0]))
    cost_rate = float(c.get("cost_rate", 0.4))
    cap = model.max_jumps
    terminal = build_terminal(cfg) if "terminal" in cfg.data else TerminalSpec(
        lambda n, h: -float(min(n, cap)), marks_only=True)
    jump_cost = c.get("jump_cost")
    jc = None if jump_cost is None else (lambda t, x, u: float(jump_cost) + 0.0 * t)
    return ControlModel(model, actions, r=lambda t, x, u: u + 0.0 * t,
                        l=lambda t, u: cost_rate * u + 0.0 * t, terminal=terminal,
                        C=max(actions), jump_cost=jc, name="config")
