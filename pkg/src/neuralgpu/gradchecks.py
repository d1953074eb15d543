"""Graded finite-difference checks over primitives, cells and whole models.

Each check builds a small random float64 instance, runs
:func:`neuralgpu.autograd.gradcheck_report` and compares the worst relative
error with the tolerance of its grade.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ad
from . import models
from . import nn
from . import tensor as T

TOLERANCES = {"primitives": 1e-6, "cells": 1e-5, "models": 1e-4}
COMPONENTS = tuple(TOLERANCES)


@dataclass
class CheckResult:
    component: str
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error < self.tolerance)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.component}:{self.name} max_rel_err={self.error:.3e} tol={self.tolerance:.0e}"


def _primitive_cases(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 5))
    s = rng.standard_normal((2, 3, 4, 3))
    k = rng.standard_normal((3, 3, 3, 2)) * 0.5
    table = rng.standard_normal((5, 4))
    ids = np.array([[0, 3, 3], [4, 1, 0]])
    rows = rng.standard_normal((2, 3, 4))
    targets = np.array([1, 0, 4])
    weights = np.array([1.0, 0.0, 1.0])
    mask = np.array([[1.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0]])
    probe = rng.standard_normal

    def dot(x, c):
        return ad.reduce_sum(ad.mul_const(x, c))

    def case(shape_fn, pts):
        c = probe(shape_fn)
        return lambda P, _c=c: dot(pts(P), _c)

    return {
        "add": ({"a": a, "b": b}, case((3, 4), lambda P: ad.add(P["a"], P["b"]))),
        "sub": ({"a": a, "b": b}, case((3, 4), lambda P: ad.sub(P["a"], P["b"]))),
        "mul": ({"a": a, "b": b}, case((3, 4), lambda P: ad.mul(P["a"], P["b"]))),
        "sigmoid": ({"a": a}, case((3, 4), lambda P: ad.sigmoid(P["a"]))),
        "tanh": ({"a": a}, case((3, 4), lambda P: ad.tanh(P["a"]))),
        "one_minus": ({"a": a}, case((3, 4), lambda P: ad.one_minus(P["a"]))),
        "add_bias": ({"a": a, "b": b[0]}, case((3, 4), lambda P: ad.add_bias(P["a"], P["b"]))),
        "matmul": ({"a": a, "w": w}, case((3, 5), lambda P: ad.matmul(P["a"], P["w"]))),
        "conv": ({"k": k, "s": s}, case((2, 3, 4, 2), lambda P: ad.conv(P["k"], P["s"]))),
        "concat": ({"a": a, "b": b}, case((3, 8), lambda P: ad.concat([P["a"], P["b"]]))),
        "gather": ({"t": table}, case((2, 3, 4), lambda P: ad.gather(P["t"], ids))),
        "column": ({"s": s}, case((2, 3), lambda P: ad.column(P["s"], 2))),
        "write_column": ({"s": s, "v": s[:, 0, 0, :]},
                         case((2, 3, 4, 3), lambda P: ad.write_column(P["s"], 1, P["v"]))),
        "select": ({"r": rows}, case((2, 4), lambda P: ad.select(P["r"], 1, axis=1))),
        "stack": ({"a": a, "b": b}, case((3, 2, 4), lambda P: ad.stack([P["a"], P["b"]], axis=1))),
        "softmax": ({"a": a}, case((3, 4), lambda P: ad.softmax(P["a"], mask))),
        "weighted_sum": ({"p": rows[:, :, 0], "r": rows},
                         case((2, 4), lambda P: ad.weighted_sum(P["p"], P["r"]))),
        "cross_entropy": ({"a": rng.standard_normal((3, 5))},
                          lambda P: ad.cross_entropy(P["a"], targets, weights)),
    }


def _cell_cases(rng, m=3, w=2, n=4):
    store = ad.ParameterStore()
    nn.init_cgru(store, "c", 3, 3, m, rng, np.float64, tape=True)
    for name, value in store.items():
        # nonzero biases so every term of the update is exercised
        if name.endswith("bias"):
            store[name] = rng.uniform(-0.5, 0.5, value.shape)
    cgru_names = [f"c.{p}" for p in nn.CGRU_PARTS]
    dcgru_names = cgru_names + [f"c.{p}" for p in nn.TAPE_PARTS]
    s = rng.standard_normal((w, n, m))
    p = rng.standard_normal((w, n, m))
    probe = rng.standard_normal((w, n, m))

    def cgru(P):
        cell = nn.CgruCell.from_params(P, "c")
        return ad.reduce_sum(ad.mul_const(nn.cgru_step(cell, P["s"]), probe))

    def dcgru(P):
        cell = nn.DcgruCell.from_params(P, "c")
        return ad.reduce_sum(ad.mul_const(nn.dcgru_step(cell, P["s"], P["p"]), probe))

    cgru_point = {k: store[k] for k in cgru_names}
    cgru_point["s"] = s
    dcgru_point = {k: store[k] for k in dcgru_names}
    dcgru_point.update(s=s, p=p)
    return {"cgru": (cgru_point, cgru), "dcgru": (dcgru_point, dcgru)}


def _model_cases(rng, layers=2, width=4, channels=4, n=4):
    out = {}
    batch = models.make_batch([[0, 1, 2], [2, 2, 1, 0]], [[1, 0], [2, 1, 1]], eos=3, memory=n)
    for variant in models.VARIANTS:
        config = models.ModelConfig(variant=variant, layers=layers, width=width, channels=channels,
                                    vocab_in=3, vocab_out=4, embed_scale=1.0)
        params = models.init_params(config, int(rng.integers(1 << 30)))
        point = dict(params.items())
        out[variant] = (point, lambda P, c=config: models.forward(c, P, batch)[1])
    return out


def run_checks(components=COMPONENTS, seed=0, max_coords=12):
    """Run the checks of the named components; returns a list of :class:`CheckResult`."""
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise ValueError(f"unknown gradcheck components {sorted(unknown)}")
    results = []
    with T.precision("float64"):
        for component in components:
            rng = np.random.default_rng([seed, COMPONENTS.index(component)])
            cases = {"primitives": _primitive_cases, "cells": _cell_cases,
                     "models": _model_cases}[component](rng)
            for name, (point, f) in cases.items():
                try:
                    error = ad.gradcheck(f, point, max_coords=max_coords, seed=seed)
                except FloatingPointError:
                    error = float("inf")
                results.append(CheckResult(component, name, float(error), TOLERANCES[component]))
    return results
