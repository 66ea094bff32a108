"""Differentiable primitives, Adam, gradient checking, checkpoints.

Forward and backward math is delegated to torch on CPU; this module pins
down the exact semantics the models rely on (shape guards that name their
operands, explicit RNG threading, a finite-difference oracle that never
touches autograd) and keeps every stateful bit inspectable.
"""
from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import NumericError, ShapeError, ValidationError

__all__ = [
    "AdamState",
    "adam_init",
    "adam_step",
    "add",
    "check_gradients",
    "concat",
    "dropout",
    "embedding",
    "interp1d",
    "layer_norm",
    "load_checkpoint",
    "matmul",
    "mul",
    "primitive_set",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "save_checkpoint",
    "softmax",
    "unit_norm",
]


def _shapes(*ts):
    return ", ".join(str(tuple(t.shape)) for t in ts)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    inner_b = b.shape[-1] if b.dim() == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise ShapeError(f"matmul: inner dims disagree for {_shapes(a, b)}")
    return a @ b

def _broadcast_guard(name, a, b):
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError as exc:
        raise ShapeError(f"{name}: shapes {_shapes(a, b)} do not broadcast") from exc


def add(a, b):
    _broadcast_guard("add", a, b)
    return a + b


def mul(a, b):
    _broadcast_guard("mul", a, b)
    return a * b


def relu(x):
    return torch.relu(x)


def softmax(x, axis: int = -1):
    return torch.softmax(x, dim=axis)


def layer_norm(x, axis: int = -1, eps: float = 1e-5):
    """Normalize to zero mean, unit variance along one axis. No affine part."""
    mean = x.mean(dim=axis, keepdim=True)
    var = x.var(dim=axis, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


def unit_norm(x, axis: int = -1, eps: float = 1e-8):
    """Scale rows to unit L2 norm; zero rows stay bounded via the floor."""
    n = torch.linalg.vector_norm(x, dim=axis, keepdim=True).clamp_min(eps)
    return x / n


def embedding(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    if table.dim() != 2:
        raise ShapeError(f"embedding table must be 2d, got {_shapes(table)}")
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValidationError(
            f"embedding ids out of range [0, {table.shape[0]}): "
            f"min {int(ids.min())}, max {int(ids.max())}"
        )
    return table[ids]


def concat(xs, axis: int = 0):
    if not xs:
        raise ShapeError("concat of zero tensors")
    return torch.cat(list(xs), dim=axis)


def reduce_mean(x, axis=None):
    return x.mean() if axis is None else x.mean(dim=axis)


def reduce_sum(x, axis=None):
    return x.sum() if axis is None else x.sum(dim=axis)


def interp1d(x: torch.Tensor, size: int, mode: str = "linear", axis: int = 0):
    """Resample along one axis.

    mode="linear" interpolates with half-pixel alignment (a length-1 input
    broadcasts to a constant); mode="area" averages adaptive windows, so
    4 -> 2 gives pair means and any length -> 1 gives the full mean.
    Length-preserving calls return the input unchanged up to dtype.
    """
    if size < 1:
        raise ValidationError(f"interp1d target size must be >= 1, got {size}")
    if mode not in ("linear", "area"):
        raise ValidationError(f"interp1d mode must be linear or area, got {mode!r}")
    moved = torch.movedim(x, axis, 0)
    length = moved.shape[0]
    rest = moved.shape[1:]
    flat = moved.reshape(length, -1).transpose(0, 1).unsqueeze(0)  # (1, R, L)
    if mode == "linear":
        out = F.interpolate(flat, size=size, mode="linear", align_corners=False)
    else:
        out = F.interpolate(flat, size=size, mode="area")
    out = out.squeeze(0).transpose(0, 1).reshape((size,) + rest)
    return torch.movedim(out, 0, axis)


def dropout(x, rate: float, generator: torch.Generator, training: bool = True):
    """Inverted dropout with an explicitly threaded generator."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (
        torch.rand(x.shape, generator=generator, dtype=torch.float64) >= rate
    ).to(x.dtype)
    return x * keep / (1.0 - rate)


# ---------------------------------------------------------------------------
# primitive catalog for the gradient-check sweep


@dataclass(frozen=True)
class Primitive:
    """A differentiable op plus a canonical scalar-valued test case."""

    name: str
    fn: object
    build_case: object  # (torch.Generator) -> (params dict, closure params->scalar)


def _randn(gen, *shape):
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def _scalarize(out, gen):
    # fixed random projection so every output coordinate carries gradient
    w = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    return lambda o: (o * w).sum()


def primitive_set() -> "OrderedDict[str, Primitive]":
    """Every differentiable primitive with a ready-made gradcheck case."""

    def case(build):
        return build

    cases = OrderedDict()

    def register(name, fn, build):
        cases[name] = Primitive(name, fn, build)

    def b_matmul(gen):
        p = {"a": _randn(gen, 3, 4), "b": _randn(gen, 4, 2)}
        proj = _scalarize(torch.zeros(3, 2), gen)
        return p, lambda q: proj(matmul(q["a"], q["b"]))

    def b_add(gen):
        p = {"a": _randn(gen, 3, 4), "b": _randn(gen, 4)}
        proj = _scalarize(torch.zeros(3, 4), gen)
        return p, lambda q: proj(add(q["a"], q["b"]))

    def b_mul(gen):
        p = {"a": _randn(gen, 3, 4), "b": _randn(gen, 3, 4)}
        proj = _scalarize(torch.zeros(3, 4), gen)
        return p, lambda q: proj(mul(q["a"], q["b"]))

    def b_relu(gen):
        # keep inputs away from the kink so central differences stay valid
        raw = _randn(gen, 4, 5)
        x = torch.sign(raw) * (raw.abs() + 0.1)
        proj = _scalarize(torch.zeros(4, 5), gen)
        return {"x": x}, lambda q: proj(relu(q["x"]))

    def b_softmax(gen):
        p = {"x": _randn(gen, 3, 5)}
        proj = _scalarize(torch.zeros(3, 5), gen)
        return p, lambda q: proj(softmax(q["x"], axis=-1))

    def b_layer_norm(gen):
        p = {"x": _randn(gen, 4, 6)}
        proj = _scalarize(torch.zeros(4, 6), gen)
        return p, lambda q: proj(layer_norm(q["x"], axis=-1))

    def b_unit_norm(gen):
        p = {"x": _randn(gen, 4, 5) + 0.5}
        proj = _scalarize(torch.zeros(4, 5), gen)
        return p, lambda q: proj(unit_norm(q["x"], axis=-1))

    def b_embedding(gen):
        ids = torch.randint(0, 7, (5,), generator=gen)
        p = {"table": _randn(gen, 7, 3)}
        proj = _scalarize(torch.zeros(5, 3), gen)
        return p, lambda q: proj(embedding(q["table"], ids))

    def b_concat(gen):
        p = {"a": _randn(gen, 2, 3), "b": _randn(gen, 2, 4)}
        proj = _scalarize(torch.zeros(2, 7), gen)
        return p, lambda q: proj(concat([q["a"], q["b"]], axis=1))

    def b_reduce_mean(gen):
        p = {"x": _randn(gen, 3, 4)}
        proj = _scalarize(torch.zeros(3), gen)
        return p, lambda q: proj(reduce_mean(q["x"], axis=1))

    def b_reduce_sum(gen):
        p = {"x": _randn(gen, 2, 5)}
        proj = _scalarize(torch.zeros(5), gen)
        return p, lambda q: proj(reduce_sum(q["x"], axis=0))

    def b_interp_linear_up(gen):
        p = {"x": _randn(gen, 3, 2)}
        proj = _scalarize(torch.zeros(7, 2), gen)
        return p, lambda q: proj(interp1d(q["x"], 7, mode="linear", axis=0))

    def b_interp_linear_down(gen):
        p = {"x": _randn(gen, 9, 2)}
        proj = _scalarize(torch.zeros(4, 2), gen)
        return p, lambda q: proj(interp1d(q["x"], 4, mode="linear", axis=0))

    def b_interp_area(gen):
        p = {"x": _randn(gen, 8, 3)}
        proj = _scalarize(torch.zeros(3, 3), gen)
        return p, lambda q: proj(interp1d(q["x"], 3, mode="area", axis=0))

    def b_dropout(gen):
        # freeze the mask so the closure is deterministic under re-evaluation
        keep = (torch.rand(4, 5, generator=gen, dtype=torch.float64) >= 0.3).to(
            torch.float64
        )
        p = {"x": _randn(gen, 4, 5)}
        proj = _scalarize(torch.zeros(4, 5), gen)
        return p, lambda q: proj(q["x"] * keep / 0.7)

    register("matmul", matmul, case(b_matmul))
    register("add", add, case(b_add))
    register("mul", mul, case(b_mul))
    register("relu", relu, case(b_relu))
    register("softmax", softmax, case(b_softmax))
    register("layer_norm", layer_norm, case(b_layer_norm))
    register("unit_norm", unit_norm, case(b_unit_norm))
    register("embedding", embedding, case(b_embedding))
    register("concat", concat, case(b_concat))
    register("reduce_mean", reduce_mean, case(b_reduce_mean))
    register("reduce_sum", reduce_sum, case(b_reduce_sum))
    register("interp1d_linear_up", interp1d, case(b_interp_linear_up))
    register("interp1d_linear_down", interp1d, case(b_interp_linear_down))
    register("interp1d_area", interp1d, case(b_interp_area))
    register("dropout", dropout, case(b_dropout))
    return cases


# ---------------------------------------------------------------------------
# gradient checking


def check_gradients(fn, params: dict, eps: float = 1e-3) -> float:
    """Compare autograd against central differences, coordinate by coordinate.

    fn maps a {name: float64 tensor} dict to a scalar and must be
    deterministic. Returns the worst relative error
    |analytic - fd| / max(|analytic|, |fd|, 1), i.e. relative above unit
    gradient scale and absolute below it. The finite-difference side never
    uses autograd.
    """
    base = {
        k: torch.as_tensor(v, dtype=torch.float64).detach().clone()
        for k, v in params.items()
    }

    def evaluate(p):
        with torch.no_grad():
            out = fn(p)
        val = float(out)
        if not np.isfinite(val):
            raise NumericError("fn produced a non-finite value")
        return val

    v0 = evaluate(base)
    v1 = evaluate(base)
    if v0 != v1:
        raise NumericError("fn is not deterministic; cannot check gradients")

    leaves = {k: v.clone().requires_grad_(True) for k, v in base.items()}
    loss = fn(leaves)
    if not torch.isfinite(loss):
        raise NumericError("fn produced a non-finite loss under autograd")
    loss.backward()
    analytic = {
        k: (v.grad.detach().clone() if v.grad is not None else torch.zeros_like(v))
        for k, v in leaves.items()
    }

    worst = 0.0
    for name, tensor in base.items():
        flat = tensor.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for idx in range(flat.numel()):
            orig = flat[idx].item()
            flat[idx] = orig + eps
            fplus = evaluate(base)
            flat[idx] = orig - eps
            fminus = evaluate(base)
            flat[idx] = orig
            fd = (fplus - fminus) / (2.0 * eps)
            a = grad_flat[idx].item()
            err = abs(a - fd) / max(abs(a), abs(fd), 1.0)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay


@dataclass
class AdamState:
    """Optimizer state; moments keyed like the parameter dict."""

    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(
    params: dict,
    lr: float = 3e-5,
    beta1: float = 0.9,
    beta2: float = 0.99,
    eps: float = 1e-8,
    weight_decay: float = 1e-2,
) -> AdamState:
    if lr <= 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValidationError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    for k, p in params.items():
        state.m[k] = torch.zeros_like(p, memory_format=torch.contiguous_format)
        state.v[k] = torch.zeros_like(p)
    return state


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """One in-place update. Weight decay is decoupled from the moments."""
    if set(grads) - set(params):
        raise ValidationError(f"grads for unknown params: {sorted(set(grads) - set(params))}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    with torch.no_grad():
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ShapeError(f"grad/param shape mismatch for {k}: {_shapes(g, p)}")
            if not torch.all(torch.isfinite(g)):
                raise NumericError(f"non-finite gradient for {k}")
            m = state.m[k]
            v = state.v[k]
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            if state.weight_decay:
                p.mul_(1.0 - state.lr * state.weight_decay)
            denom = (v / bc2).sqrt_().add_(state.eps)
            p.addcdiv_(m / bc1, denom, value=-state.lr)


# ---------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"SGCKPT1\n"
_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4"), "<i8": np.dtype("<i8")}


def _as_array(t):
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    a = np.asarray(t)
    if a.dtype == np.float64:
        return a.astype("<f8")
    if a.dtype == np.float32:
        return a.astype("<f4")
    if np.issubdtype(a.dtype, np.integer) or a.dtype == np.bool_:
        return a.astype("<i8")
    raise ValidationError(f"unsupported checkpoint dtype {a.dtype}")


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """Write arrays plus JSON metadata as one self-describing binary file."""
    entries = []
    blobs = []
    for name in arrays:
        a = _as_array(arrays[name])
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape)})
        blobs.append(np.ascontiguousarray(a).tobytes())
    payload = b"".join(blobs)
    header = {
        "version": 1,
        "meta": meta or {},
        "entries": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint; returns ({name: ndarray}, meta). Verifies payload hash."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValidationError(f"{path} is not a checkpoint (bad magic)")
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: unreadable checkpoint header") from exc
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise ValidationError(f"{path}: checkpoint payload hash mismatch")
    arrays = {}
    offset = 0
    for entry in header["entries"]:
        dt = _DTYPES.get(entry["dtype"])
        if dt is None:
            raise ValidationError(f"{path}: unknown dtype {entry['dtype']}")
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dt.itemsize
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ValidationError(f"{path}: truncated checkpoint payload")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dt).reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(payload):
        raise ValidationError(f"{path}: trailing bytes in checkpoint payload")
    return arrays, header.get("meta", {})
