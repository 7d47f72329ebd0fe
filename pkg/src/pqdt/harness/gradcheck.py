"""Finite-difference gradient checks for primitives, blocks and the full network.

The error of one check is ``max|analytic - numeric| / max(max|analytic|,
max|numeric|)`` over the probed entries (central differences, step 1e-5).
When a composite check fails, the primitive checks of every op in its graph
are rerun to name the offending backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad

STEP = 1e-5
PRIMITIVE_THRESHOLD = 1e-4
NETWORK_THRESHOLD = 1e-3


@dataclass
class CheckResult:
    scope: str
    error: float
    threshold: float
    probes: int
    failing_ops: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.error < self.threshold

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = f"gradcheck {self.scope}: {status} rel err {self.error:.3e} (threshold {self.threshold:.0e}, {self.probes} probes)"
        if self.failing_ops:
            msg += "; failing ops: " + ", ".join(self.failing_ops)
        return msg


def graph_ops(out: ad.Tensor) -> set[str]:
    ops, seen, stack = set(), set(), [out]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.op:
            ops.add(t.op)
        stack.extend(t._parents)
    return ops


def compare(fn, params: list[ad.Tensor], rng: np.random.Generator, max_probes: int | None = None,
            step: float = STEP) -> tuple[float, int, set[str]]:
    """Analytic vs central-difference gradient of scalar ``fn()`` w.r.t. ``params``.

    With ``max_probes`` only that many entries (spread over all tensors) are
    perturbed; otherwise every entry is.
    """
    for p in params:
        p.grad = None
    out = fn()
    ops = graph_ops(out)
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if max_probes is not None and len(coords) > max_probes:
        pick = rng.choice(len(coords), size=max_probes, replace=False)
        coords = [coords[k] for k in np.sort(pick)]
    a_vals, n_vals = [], []
    with ad.no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + step
            up = fn().item()
            flat[j] = orig - step
            down = fn().item()
            flat[j] = orig
            n_vals.append((up - down) / (2 * step))
            a_vals.append(analytic[i].reshape(-1)[j])
    a, n = np.array(a_vals), np.array(n_vals)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    err = float(np.abs(a - n).max(initial=0.0) / scale) if scale > 0 else 0.0
    return err, len(coords), ops


def _leaf(rng, *shape, low=-1.0, high=1.0):
    return ad.Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _projected(out: ad.Tensor, rng) -> ad.Tensor:
    """Scalar <out, R> with a fixed random R so every output entry matters."""
    r = rng.normal(size=out.shape)
    return ad.sum_(out * r)


def _primitive_cases():
    """name -> builder(rng) returning (fn, params)."""
    def unary(op, low=-1.0, high=1.0):
        def build(rng):
            x = _leaf(rng, 3, 4, low=low, high=high)
            r = rng.normal(size=(3, 4))
            return (lambda: ad.sum_(op(x) * r)), [x]
        return build

    def binary(op, shape_a=(3, 4), shape_b=(3, 4), low=-1.0):
        def build(rng):
            a, b = _leaf(rng, *shape_a, low=low), _leaf(rng, *shape_b, low=low)
            probe = op(a, b)
            r = rng.normal(size=probe.shape)
            return (lambda: ad.sum_(op(a, b) * r)), [a, b]
        return build

    def relu_build(rng):
        x = ad.Tensor(rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)), requires_grad=True)
        r = rng.normal(size=(3, 4))
        return (lambda: ad.sum_(ad.relu(x) * r)), [x]

    def max_build(rng):
        x = ad.Tensor(rng.permutation(12).reshape(3, 4) * 0.1 + rng.uniform(0, 0.01, (3, 4)), requires_grad=True)
        r = rng.normal(size=3)
        return (lambda: ad.sum_(ad.max_reduce(x, axis=1)[0] * r)), [x]

    def gather_build(rng):
        x = _leaf(rng, 5, 3)
        idx = np.array([[2, 0], [4, 4], [1, 3]])
        r = rng.normal(size=(3, 2, 3))
        return (lambda: ad.sum_(ad.gather(x, idx) * r)), [x]

    def concat_build(rng):
        a, b = _leaf(rng, 2, 3), _leaf(rng, 4, 3)
        r = rng.normal(size=(6, 3))
        return (lambda: ad.sum_(ad.concat([a, b], axis=0) * r)), [a, b]

    def where_build(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
        mask = rng.uniform(size=(3, 4)) > 0.5
        r = rng.normal(size=(3, 4))
        return (lambda: ad.sum_(ad.where(mask, a, b) * r)), [a, b]

    def softmax_build(rng):
        x = _leaf(rng, 3, 5, low=-2, high=2)
        r = rng.normal(size=(3, 5))
        return (lambda: ad.sum_(ad.softmax(x, axis=-1) * r)), [x]

    def layernorm_build(rng):
        x = _leaf(rng, 3, 6, low=-2, high=2)
        r = rng.normal(size=(3, 6))
        return (lambda: ad.sum_(ad.layer_norm(x) * r)), [x]

    def norm_build(rng):
        x = _leaf(rng, 4, 3)
        r = rng.normal(size=4)
        return (lambda: ad.sum_(ad.norm(x, axis=-1) * r)), [x]

    def reduce_build(op):
        def build(rng):
            x = _leaf(rng, 3, 4)
            r = rng.normal(size=4)
            return (lambda: ad.sum_(op(x, axis=0) * r)), [x]
        return build

    def shape_build(op, out_shape):
        def build(rng):
            x = _leaf(rng, 3, 4)
            r = rng.normal(size=out_shape)
            return (lambda: ad.sum_(op(x) * r)), [x]
        return build

    return {
        "add": binary(ad.add, (3, 4), (1, 4)),
        "sub": binary(ad.sub, (3, 4), (3, 1)),
        "mul": binary(ad.mul, (3, 4), (4,)),
        "div": binary(ad.div, (3, 4), (3, 4), low=0.5),
        "pow": unary(lambda x: ad.power(x, 3.0), 0.2, 1.0),
        "atan2": binary(ad.atan2, (3, 4), (3, 4), low=0.2),
        "matmul": binary(ad.matmul, (2, 3, 4), (4, 5)),
        "einsum": binary(lambda a, b: ad.einsum("mkc,mc->mk", a, b), (2, 3, 4), (2, 4)),
        "exp": unary(ad.exp),
        "log": unary(ad.log, 0.2, 2.0),
        "sin": unary(ad.sin, -3, 3),
        "cos": unary(ad.cos, -3, 3),
        "sqrt": unary(ad.sqrt, 0.2, 2.0),
        "tanh": unary(ad.tanh, -2, 2),
        "relu": relu_build,
        "norm": norm_build,
        "sum": reduce_build(ad.sum_),
        "mean": reduce_build(ad.mean),
        "max": max_build,
        "softmax": softmax_build,
        "layernorm": layernorm_build,
        "reshape": shape_build(lambda x: ad.reshape(x, (2, 6)), (2, 6)),
        "transpose": shape_build(lambda x: ad.transpose(x), (4, 3)),
        "broadcast": shape_build(lambda x: ad.broadcast_to(ad.reshape(x, (1, 3, 4)), (2, 3, 4)), (2, 3, 4)),
        "gather": gather_build,
        "concat": concat_build,
        "where": where_build,
    }


PRIMITIVES = _primitive_cases()


def _edgeconv(rng):
    from ..layers import EdgeConv
    conv = EdgeConv(4, 6, 4, rng)
    pts = rng.normal(size=(12, 3))
    feats = _leaf(rng, 12, 4)
    idx = np.array([0, 3, 5, 8, 11])
    r = rng.normal(size=(5, 6))
    return (lambda: ad.sum_(conv(feats, pts, idx) * r)), [feats] + conv.parameters()


def _ge_attention(rng):
    from ..geo import GEAttention, build_geometry
    attn = GEAttention(8, 2, 4, 4, rng)
    pts = ad.Tensor(rng.normal(size=(10, 3)), requires_grad=True)
    x = _leaf(rng, 10, 8)
    r = rng.normal(size=(10, 8))

    def fn():
        geom = build_geometry(pts, pts, 4, 4)
        return ad.sum_(attn(x, pts, geom) * r)
    return fn, [x, pts] + attn.parameters()


def _dqs(rng):
    from ..dqs import QuerySelector, SelectionConfig, straight_through_tape
    sel = QuerySelector(SelectionConfig(8, 4, 6), 5, rng)
    coords = _leaf(rng, 8, 3)
    feats = _leaf(rng, 8, 5)
    pad = rng.normal(size=(4, 3))
    rf, rc = rng.normal(size=(6, 5)), rng.normal(size=(6, 3))
    tape: list = []

    def run():
        res = sel(coords, feats, pad, 0.5, np.random.default_rng(7))
        return ad.sum_(res.feats * rf) + ad.sum_(res.coords * rc)

    with straight_through_tape("record", tape):
        run()

    def fn():
        with straight_through_tape("replay", tape):
            return run()
    return fn, [coords, feats] + sel.parameters()


def _upsample(rng):
    from ..network.blocks import UpTrans
    up = UpTrans(6, 4, 3, 2, 0.5, rng)
    seeds = _leaf(rng, 5, 3)
    seed_feats = _leaf(rng, 5, 6)
    pts = _leaf(rng, 8, 3)
    feats = _leaf(rng, 8, 6)
    r1, r2 = rng.normal(size=(16, 3)), rng.normal(size=(16, 6))

    def fn():
        c, f = up(seeds, seed_feats, pts, feats)
        return ad.sum_(c * r1) + ad.sum_(f * r2)
    return fn, [seeds, seed_feats, pts, feats] + up.parameters()


def _full(rng):
    from ..dqs import straight_through_tape
    from ..network import DESK, PQDT, loss
    model = PQDT(DESK)
    x = rng.normal(size=(DESK.n_in, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True).max()
    gt = rng.normal(size=(DESK.n_out, 3))
    gt /= np.linalg.norm(gt, axis=1, keepdims=True)
    tape: list = []

    def run():
        res = model.forward(x, rng=np.random.default_rng(3), mode="train", beta=0.5)
        return loss(res.levels, res.pseudo, gt)[0]

    with straight_through_tape("record", tape):
        run()

    def fn():
        with straight_through_tape("replay", tape):
            return run()
    return fn, model.parameters()


COMPOSITES = {"edgeconv": _edgeconv, "ge_attention": _ge_attention, "dqs": _dqs,
              "upsample": _upsample, "full": _full}
SCOPES = sorted(PRIMITIVES) + sorted(COMPOSITES)


def gradcheck(scope: str, seed: int = 0, threshold: float | None = None,
              max_probes: int | None = None) -> CheckResult:
    """Run one scope. ``full`` probes 400 random parameter entries by default."""
    rng = np.random.default_rng(seed)
    if scope in PRIMITIVES:
        fn, params = PRIMITIVES[scope](rng)
        limit = PRIMITIVE_THRESHOLD
    elif scope in COMPOSITES:
        fn, params = COMPOSITES[scope](rng)
        limit = NETWORK_THRESHOLD if scope == "full" else PRIMITIVE_THRESHOLD
        if scope == "full" and max_probes is None:
            max_probes = 400
    else:
        raise ValueError(f"gradcheck: unknown scope {scope!r}; choose from {', '.join(SCOPES)} or 'all'")
    threshold = limit if threshold is None else threshold
    err, probes, ops = compare(fn, params, rng, max_probes)
    result = CheckResult(scope, err, threshold, probes)
    if not result.passed:
        if scope in PRIMITIVES:
            result.failing_ops = [scope]
        else:
            result.failing_ops = [op for op in sorted(ops & set(PRIMITIVES))
                                  if not gradcheck(op, seed).passed]
    return result


def gradcheck_all(seed: int = 0) -> list[CheckResult]:
    return [gradcheck(s, seed) for s in SCOPES]
