"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, tensor as T
from .dad import DAD
from .fce import FCE, wavelet_interaction
from .layers import ChannelAttention, spatial_attention
from .model import ModelConfig, SaliencyNet
from .optim import ParamStore
from .rpl import RPL, PGHead, ProportionBin
from .tensor import Tensor
from .wavelet import dwt2, idwt2, WaveletQuad

OP_TOL = 1e-4
MODEL_TOL = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||); zero when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    inputs: dict[str, Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    corrupt: float = 0.0,
) -> dict[str, float]:
    """Relative error between backprop and central differences per input.

    ``loss_fn`` must rebuild the graph from the current values of ``inputs``.
    With ``max_entries`` only that many randomly chosen coordinates of each
    input are perturbed. ``corrupt`` scales the analytic gradient by
    (1 + corrupt), a negative control for the checker itself.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs.values():
        t.requires_grad = True
        t.grad = None
    loss_fn().backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) * (1.0 + corrupt) for k, t in inputs.items()}

    errors = {}
    for name, t in inputs.items():
        flat = t.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, max_entries, replace=False))
        else:
            coords = np.arange(flat.size)
        numeric = np.empty(coords.size)
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + h
            plus = loss_fn().item()
            flat[c] = orig - h
            minus = loss_fn().item()
            flat[c] = orig
            numeric[j] = (plus - minus) / (2.0 * h)
        errors[name] = relative_error(analytic[name].reshape(-1)[coords], numeric)
    return errors


def projected(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum(out * weights) for checking non-scalar outputs."""
    return T.sum(out * Tensor(weights))


@dataclass
class CaseResult:
    name: str
    worst: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance


def _op_case(rng, fn, *shapes, positive=False):
    xs = []
    for s in shapes:
        data = rng.uniform(0.1, 1.0, s) if positive else rng.standard_normal(s)
        xs.append(Tensor(data, requires_grad=True))
    r = rng.standard_normal(fn(*xs).shape)
    inputs = {f"x{i}": x for i, x in enumerate(xs)}
    return (lambda: projected(fn(*xs), r)), inputs


def _store_inputs(store: ParamStore, extra: dict[str, Tensor]) -> dict[str, Tensor]:
    inputs = dict(extra)
    inputs.update({k: t for k, t in store})
    return inputs


def build_cases(seed: int = 0) -> list[tuple[str, Callable, float, int | None]]:
    """(name, factory -> (loss_fn, inputs), tolerance, max_entries) for every check."""
    cases = []

    def op(name, fn, *shapes, positive=False):
        def factory(rng):
            return _op_case(rng, fn, *shapes, positive=positive)
        cases.append((name, factory, OP_TOL, None))

    def conv_factory(k):
        def factory(rng):
            x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
            w = Tensor(rng.standard_normal((3, 2, k, k)), requires_grad=True)
            b = Tensor(rng.standard_normal(3), requires_grad=True)
            r = rng.standard_normal((1, 3, 6, 6))
            return (lambda: projected(T.conv2d(x, w, b), r)), {"x": x, "weight": w, "bias": b}
        return factory

    for k in (1, 3, 5):
        cases.append((f"conv2d_k{k}", conv_factory(k), OP_TOL, None))

    def conv_chain(rng):
        x = Tensor(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(2), requires_grad=True)
        return (lambda: T.mean_all(T.sigmoid(T.conv2d(x, w, b)))), {"x": x, "weight": w, "bias": b}

    cases.append(("mean_sigmoid_conv2d", conv_chain, OP_TOL, None))

    op("add_broadcast", lambda a, b: a + b, (1, 4, 3, 3), (1, 4, 1, 1))
    op("mul_broadcast", lambda a, b: a * b, (1, 4, 3, 3), (1, 1, 3, 3))
    op("div", lambda a, b: a / b, (2, 3), (2, 3), positive=True)
    op("sigmoid", T.sigmoid, (1, 4, 8, 8))
    op("log", T.log, (1, 2, 4, 4), positive=True)
    op("global_avg_pool", T.global_avg_pool, (1, 4, 8, 8))
    op("channel_max_pool", T.channel_max_pool, (1, 4, 8, 8))
    op("avg_pool2", T.avg_pool2, (1, 3, 8, 8))
    op("upsample_nearest", lambda x: T.upsample_nearest(x, 2), (1, 3, 4, 4))
    op("concat_channels", lambda a, b: T.concat_channels([a, b]), (1, 2, 4, 4), (1, 3, 4, 4))
    op("reshape", lambda x: T.reshape(x, (1, 4, 64)), (1, 4, 8, 8))
    op("transpose", lambda x: T.transpose(x), (1, 5, 7))
    op("take", lambda x: T.take(x, [2, 0, 1]), (3, 2, 2, 2))
    op("sum_all", lambda x: T.sum_all(x * x), (1, 4, 8, 8))
    op("mean_all", lambda x: T.mean_all(x * x), (1, 4, 8, 8))
    op("matmul", T.matmul, (7, 5), (5, 3))
    op("matmul_batched", T.matmul, (2, 4, 3), (2, 3, 5))
    op("softmax", T.softmax, (6, 5))
    op("fully_connected", T.fully_connected, (2, 5, 1, 1), (3, 5), (3,))
    op("dwt2", lambda x: T.concat(list(dwt2(x)), axis=1), (1, 2, 8, 8))
    op("idwt2", lambda a, b, c, d: idwt2(WaveletQuad(a, b, c, d)), *([(1, 2, 4, 4)] * 4))
    op("spatial_attention", spatial_attention, (1, 4, 8, 8))
    op("wavelet_interaction", wavelet_interaction, (1, 3, 4, 4), (1, 3, 4, 4))

    def channel_attention(rng):
        store = ParamStore()
        ca = ChannelAttention(store, "ca", 4, 2, rng)
        x = Tensor(rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
        r = rng.standard_normal((1, 4, 1, 1))
        return (lambda: projected(ca(x), r)), _store_inputs(store, {"x": x})

    cases.append(("channel_attention", channel_attention, OP_TOL, None))

    def rpl(rng):
        store = ParamStore()
        mod = RPL(store, 4, rng, reduction_ratio=2)
        f4 = Tensor(rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
        f5 = Tensor(rng.standard_normal((1, 4, 4, 4)), requires_grad=True)
        r = rng.standard_normal((1, 4, 8, 8))
        return (lambda: projected(mod(f4, f5), r)), _store_inputs(store, {"f4": f4, "f5": f5})

    cases.append(("rpl", rpl, OP_TOL, None))

    def pg(rng):
        store = ParamStore()
        mod = PGHead(store, 4, rng, hidden=8)
        f5 = Tensor(rng.standard_normal((2, 4, 4, 4)), requires_grad=True)
        r = rng.standard_normal((2, 1, 1, 1))
        return (lambda: projected(mod(f5), r)), _store_inputs(store, {"f5": f5})

    cases.append(("pg_head", pg, OP_TOL, None))

    def dad_factory(bin_):
        def factory(rng):
            store = ParamStore()
            mod = DAD(store, 3, rng)
            f1 = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
            r = rng.standard_normal((1, 3, 8, 8))
            return (lambda: projected(mod(f1, [bin_]), r)), _store_inputs(store, {"f1": f1})
        return factory

    for b in ProportionBin:
        cases.append((f"dad_{b.value}", dad_factory(b), OP_TOL, 12))

    def dad_mixed(rng):
        store = ParamStore()
        mod = DAD(store, 2, rng)
        f1 = Tensor(rng.standard_normal((3, 2, 6, 6)), requires_grad=True)
        r = rng.standard_normal((3, 2, 6, 6))
        bins = [ProportionBin.LARGE, ProportionBin.SMALL, ProportionBin.MID]
        return (lambda: projected(mod(f1, bins), r)), _store_inputs(store, {"f1": f1})

    cases.append(("dad_mixed_batch", dad_mixed, OP_TOL, 12))

    def fce(rng):
        store = ParamStore()
        mod = FCE(store, 4, 6, 4, rng, reduction_ratio=2)
        f2 = Tensor(rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
        f3 = Tensor(rng.standard_normal((1, 6, 4, 4)), requires_grad=True)
        r = rng.standard_normal((1, 4, 8, 8))
        return (lambda: projected(mod(f2, f3), r)), _store_inputs(store, {"f2": f2, "f3": f3})

    cases.append(("fce", fce, OP_TOL, 16))

    def loss_factory(name, fn):
        def factory(rng):
            s = Tensor(rng.uniform(0.05, 0.95, (1, 1, 4, 4)), requires_grad=True)
            g = Tensor((rng.random((1, 1, 4, 4)) > 0.5).astype(float))
            return (lambda: fn(s, g)), {"s": s}
        return factory

    cases.append(("bce_loss", loss_factory("bce", losses.bce_loss), OP_TOL, None))
    cases.append(("iou_loss", loss_factory("iou", losses.iou_loss), OP_TOL, None))
    cases.append(("fm_loss", loss_factory("fm", losses.fm_loss), OP_TOL, None))

    def mse(rng):
        p = Tensor(rng.random((3, 1, 1, 1)), requires_grad=True)
        t = Tensor(rng.random((3, 1, 1, 1)))
        return (lambda: losses.mse_loss(p, t)), {"pred": p}

    cases.append(("mse_loss", mse, OP_TOL, None))

    def total(rng):
        s = Tensor(rng.uniform(0.05, 0.95, (2, 1, 4, 4)), requires_grad=True)
        g = Tensor((rng.random((2, 1, 4, 4)) > 0.5).astype(float))
        p = Tensor(rng.random((2, 1, 1, 1)), requires_grad=True)
        t = Tensor(rng.random((2, 1, 1, 1)))
        return (lambda: losses.total_loss(s, g, p, t).total_tensor), {"s": s, "pg_pred": p}

    cases.append(("total_loss", total, OP_TOL, None))

    def full_model(rng):
        cfg = ModelConfig(input_size=32, channels=(2, 4, 4, 4, 4), common_channels=2,
                          decoder_channels=2, reduction_ratio=2, pg_hidden=3, seed=int(rng.integers(1 << 31)))
        net = SaliencyNet(cfg)
        image = Tensor(rng.random((1, 3, 32, 32)), requires_grad=True)
        gt = (rng.random((1, 1, 32, 32)) > 0.5).astype(float)
        target = Tensor(np.full((1, 1, 1, 1), gt.mean()))
        bins = [ProportionBin.LARGE]

        def loss():
            out = net.forward(image, bins)
            return losses.total_loss(out.s, Tensor(gt), out.f_g, target).total_tensor

        return loss, _store_inputs(net.params, {"image": image})

    cases.append(("full_model", full_model, MODEL_TOL, 3))
    return cases


def run_suite(seed: int = 0, corrupt: str | None = None, report=print) -> list[CaseResult]:
    results = []
    for name, factory, tol, max_entries in build_cases(seed):
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        start = time.perf_counter()
        loss_fn, inputs = factory(rng)
        errs = check_gradients(
            loss_fn, inputs, max_entries=max_entries, rng=rng,
            corrupt=1e-2 if corrupt == name else 0.0,
        )
        res = CaseResult(name, max(errs.values()), tol, time.perf_counter() - start)
        results.append(res)
        if report:
            status = "PASS" if res.passed else "FAIL"
            report(f"{status}  {name:<22} worst rel err {res.worst:.3e}  (tol {tol:g})")
    return results
