"""Residual MLP trial functions.

A network is a lift layer R^2 -> R^width, a stack of ResBlocks
B(z) = z + W2 sigma(W1 sigma(z) + b1) + b2, and an affine head.  Parameters
live in one flat float64 vector with a fixed per-layer layout so optimizer
state, checkpoints, and tape gradients all align.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import _kernels
from .autodiff import Dual1, Dual2, UnsupportedActivationError

__all__ = [
    "NetworkSpec",
    "ParamSet",
    "ACTIVATIONS",
    "init_params",
    "forward",
    "forward_grad",
    "forward_dual",
    "watch_params",
    "unflatten",
    "save_checkpoint",
    "load_checkpoint",
]


class _Tanh:
    """tanh and the derivative tables the fused channel activation needs."""

    name = "tanh"
    family = "tanh"
    p = 0
    shifted = False
    second_order_ok = True

    def tables(self, v, order):
        t = np.tanh(v)
        s = 1.0 - t * t
        if order < 2:
            return t, s, -2.0 * t * s, None
        sp = -2.0 * t * s
        spp = -2.0 * s * s + 4.0 * t * t * s
        return t, s, sp, spp


class _RePU:
    """Rectified power unit max(0, x)^p; derivatives take the right-sided
    value 0 at the kink."""

    family = "repu"
    shifted = False

    def __init__(self, name, p, second_order_ok):
        self.name = name
        self.p = p
        self.second_order_ok = second_order_ok

    def tables(self, v, order):
        p = self.p
        pos = v > 0.0
        m = np.where(pos, v, 0.0)
        f = m**p
        s = np.where(pos, p * m ** (p - 1), 0.0)
        sp = np.where(pos, p * (p - 1) * m ** (p - 2), 0.0)
        spp = None
        if order >= 2:
            spp = np.where(pos, float(p * (p - 1) * (p - 2)) * m ** max(p - 3, 0), 0.0)
        return f, s, sp, spp


class _RePUr:
    """Difference form RePU_p(x) - 2 RePU_p(x - 1/2).

    A placeholder definition for the shifted variants, kept swappable by
    configuration through the registry.
    """

    family = "repu"
    shifted = True

    def __init__(self, name, p, second_order_ok):
        self.name = name
        self.base = _RePU(name, p, second_order_ok)
        self.p = p
        self.second_order_ok = second_order_ok

    def tables(self, v, order):
        f1, s1, sp1, spp1 = self.base.tables(v, order)
        f2, s2, sp2, spp2 = self.base.tables(v - 0.5, order)
        spp = None if spp1 is None else spp1 - 2.0 * spp2
        return f1 - 2.0 * f2, s1 - 2.0 * s2, sp1 - 2.0 * sp2, spp


ACTIVATIONS = {
    "tanh": _Tanh(),
    "requ": _RePU("requ", 2, second_order_ok=False),
    "recu": _RePU("recu", 3, second_order_ok=True),
    "requr": _RePUr("requr", 2, second_order_ok=False),
    "recur": _RePUr("recur", 3, second_order_ok=True),
}


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description for a residual MLP trial function."""

    input_dim: int = 2
    output_dim: int = 1
    n_blocks: int = 5
    width: int = 20
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if self.n_blocks < 1 or self.width < 1:
            raise ValueError("n_blocks and width must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layout(self):
        """Per-layer (name, shape, offset, size) tuples for the flat vector."""
        return _layout(self)

    @property
    def n_params(self):
        name, shape, off, size = self.layout[-1]
        return off + size


@lru_cache(maxsize=None)
def _layout(spec):
    entries = []
    off = 0

    def put(name, shape):
        nonlocal off
        size = int(np.prod(shape))
        entries.append((name, shape, off, size))
        off += size

    put("W0", (spec.input_dim, spec.width))
    put("b0", (spec.width,))
    for k in range(spec.n_blocks):
        put(f"W1_{k}", (spec.width, spec.width))
        put(f"b1_{k}", (spec.width,))
        put(f"W2_{k}", (spec.width, spec.width))
        put(f"b2_{k}", (spec.width,))
    put("Wh", (spec.width, spec.output_dim))
    put("bh", (spec.output_dim,))
    return tuple(entries)


@dataclass
class ParamSet:
    """Flat parameter vector tied to a NetworkSpec layout."""

    spec: NetworkSpec
    flat: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=float)
        if self.flat.shape != (self.spec.n_params,):
            raise ValueError(
                f"parameter vector has length {self.flat.size}, "
                f"spec requires {self.spec.n_params}"
            )


def init_params(spec):
    """Fan-in scaled uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    flat = np.zeros(spec.n_params)
    for name, shape, off, size in spec.layout:
        if name.startswith("W"):
            bound = 1.0 / np.sqrt(shape[0])
            flat[off : off + size] = rng.uniform(-bound, bound, size=size)
    return ParamSet(spec, flat)


def unflatten(spec, flat):
    """Layout-ordered dict of per-layer arrays (views reshaped by copy)."""
    flat = np.asarray(flat, dtype=float)
    return {name: flat[off : off + size].reshape(shape) for name, shape, off, size in spec.layout}


def watch_params(tape, spec, flat):
    """Register every layer of a flat vector on a tape, in layout order, so
    backprop returns gradients aligned with the flat vector."""
    return {name: tape.watch(arr) for name, arr in unflatten(spec, flat).items()}


def _stack_lift(tape, channels, order):
    """Stack the lift value and derivative channels into one channel-major
    array node (second-derivative channels, when present, start at zero)."""
    n_chan = {0: 1, 1: 1 + len(channels) - 1, 2: 5}[order]
    vals = [ad._val(c) for c in channels]
    value = np.zeros((max(n_chan, len(channels)),) + vals[0].shape)
    for k, v in enumerate(vals):
        value[k] = v
    if tape is None:
        return value
    parents, vjps = [], []
    for k, ch in enumerate(channels):
        if isinstance(ch, ad.Num):
            parents.append(ch.idx)
            vjps.append(lambda g, k=k: g[k])
    return tape._record(value, tuple(parents), tuple(vjps))


def _fused_act(act, z, bias, order):
    """Activation of (z + bias) across all stacked dual channels in one tape
    node; the bias shifts only the value channel."""
    if not _kernels.HAVE_NUMBA:
        return _fused_act_numpy(act, z, bias, order)
    v = ad._val(z)
    live = isinstance(z, ad.Num) or isinstance(bias, ad.Num)
    tape = ad._tape_of(z, bias)
    width = v.shape[-1]
    shape = v.shape
    C = 1 if v.ndim == 2 else v.shape[0]
    v2 = v.reshape(C, -1)
    m = v2.shape[1]
    out = np.empty_like(v2)
    s = np.empty(m)
    sp = np.empty(m)
    spp = np.empty(m if order == 2 else 0)
    korder = 2 if order == 2 else 1
    v0b = v2[0] if bias is None else (v2[0].reshape(-1, width) + ad._val(bias)).ravel()
    if act.family == "tanh":
        _kernels.tanh_fwd(np.tanh(v0b), v2, out, s, sp, spp, korder)
    else:
        _kernels.repu_fwd(v0b, v2, out, s, sp, spp, korder, act.p, act.shifted)
    value = out.reshape(shape)
    if not live:
        return value

    shared = [None, None]  # adjoint object -> full input adjoint, shared by both vjps

    def gz_of(g, v2=v2, s=s, sp=sp, spp=spp, C=C):
        if shared[0] is not g:
            g2 = np.ascontiguousarray(g).reshape(C, -1)
            gz = np.empty_like(g2)
            _kernels.act_bwd(g2, v2, s, sp, spp, gz, 2 if order == 2 else 1)
            shared[0] = g
            shared[1] = gz
        return shared[1]

    nw_shape = (shape[-2], shape[-1]) if v.ndim != 2 else shape
    parents, vjps = [], []
    if isinstance(z, ad.Num):
        parents.append(z.idx)
        vjps.append(lambda g: gz_of(g).reshape(shape))
    if isinstance(bias, ad.Num):
        # the bias shifts the value channel, so its adjoint is the full
        # channel-0 input adjoint summed over points
        parents.append(bias.idx)
        vjps.append(lambda g: gz_of(g)[0].reshape(nw_shape).sum(axis=0))
    return tape._record(value, tuple(parents), tuple(vjps))


def _fused_act_numpy(act, z, bias, order):
    """Activation of (z + bias) across all stacked dual channels in one tape
    node; the bias shifts only the value channel.  Derivative tables are
    skipped entirely on constant inputs."""
    v = ad._val(z)
    bv = 0.0 if bias is None else ad._val(bias)
    live = isinstance(z, ad.Num) or isinstance(bias, ad.Num)
    tape = ad._tape_of(z, bias)

    if order == 0:
        v0 = v + bv
        f, s, _, _ = act.tables(v0, 1 if live else 0)
        if not live:
            return f
        parents, vjps = [], []
        if isinstance(z, ad.Num):
            parents.append(z.idx)
            vjps.append(lambda g: g * s)
        if isinstance(bias, ad.Num):
            parents.append(bias.idx)
            vjps.append(lambda g: (g * s).sum(axis=0))
        return tape._record(f, tuple(parents), tuple(vjps))

    n_dir = 2 if order == 2 else v.shape[0] - 1
    v0 = v[0] + bv
    f, s, sp, spp = act.tables(v0, order)
    out = np.empty_like(v)
    out[0] = f
    for k in range(1, 1 + n_dir):
        out[k] = s * v[k]
    if order == 2:
        out[3] = s * v[3] + sp * v[1] ** 2
        out[4] = s * v[4] + sp * v[2] ** 2
    if not live:
        return out

    def vjp_z(g, v=v, s=s, sp=sp, spp=spp):
        gz = np.empty_like(v)
        gz[0] = g[0] * s
        for k in range(1, 1 + n_dir):
            gz[0] += sp * (g[k] * v[k])
            gz[k] = g[k] * s
        if order == 2:
            gz[0] += g[3] * (sp * v[3] + spp * v[1] ** 2) + g[4] * (sp * v[4] + spp * v[2] ** 2)
            gz[1] += g[3] * (2.0 * sp * v[1])
            gz[2] += g[4] * (2.0 * sp * v[2])
            gz[3] = g[3] * s
            gz[4] = g[4] * s
        return gz

    parents, vjps = [], []
    if isinstance(z, ad.Num):
        parents.append(z.idx)
        vjps.append(vjp_z)
    if isinstance(bias, ad.Num):
        parents.append(bias.idx)
        vjps.append(lambda g: vjp_z(g)[0].sum(axis=0))
    return tape._record(out, tuple(parents), tuple(vjps))


def _add_bias0(m, b):
    """Add a bias to the value channel only (used at the head)."""
    mv, bv = ad._val(m), ad._val(b)
    if mv.ndim == 2:
        return ad.add(m, b)
    value = mv.copy()
    value[0] += bv
    tape = ad._tape_of(m, b)
    if tape is None:
        return value
    parents, vjps = [], []
    if isinstance(m, ad.Num):
        parents.append(m.idx)
        vjps.append(lambda g: g)
    if isinstance(b, ad.Num):
        parents.append(b.idx)
        vjps.append(lambda g: g[0].sum(axis=0))
    return tape._record(value, tuple(parents), tuple(vjps))


def _skip_bias(z, a2, b2):
    """Residual update z + a2 with the bias on the value channel."""
    zv, av = ad._val(z), ad._val(a2)
    if zv.ndim == 2:
        return ad.add(ad.add(z, a2), b2)
    value = zv + av
    value[0] += ad._val(b2)
    tape = ad._tape_of(z, a2, b2)
    if tape is None:
        return value
    parents, vjps = [], []
    for nd in (z, a2):
        if isinstance(nd, ad.Num):
            parents.append(nd.idx)
            vjps.append(lambda g: g)
    if isinstance(b2, ad.Num):
        parents.append(b2.idx)
        vjps.append(lambda g: g[0].sum(axis=0))
    return tape._record(value, tuple(parents), tuple(vjps))


def _pick(y, ch, j):
    """Extract one channel / output-component column as an (n,) value."""
    yv = ad._val(y)
    if yv.ndim == 2:
        return ad.col(y, j)
    value = yv[ch, :, j]
    if not isinstance(y, ad.Num):
        return value
    shape = yv.shape

    def vjp(g, shape=shape, ch=ch, j=j):
        z = np.zeros(shape)
        z[ch, :, j] = g
        return z

    return y.tape._record(value, (y.idx,), (vjp,))


def forward_dual(spec, params, X, order=1, directions=None):
    """Evaluate the network on an (n, 2) batch with forward-mode duals.

    `params` is either a flat vector / dict of plain arrays (frozen network)
    or a dict of tape nodes from watch_params (trainable network).  Returns
    one dual per output component with (n,) entries; order 0 skips the
    derivative channels, order 2 adds pure second partials (allowed only for
    activations with continuous second derivatives).  Passing per-point unit
    `directions` (n, 2) tracks a single directional derivative instead of the
    full gradient; it lands in the dx1 slot.

    Internally the value and derivative channels are stacked channel-major so
    each layer is a single fused tape operation.
    """
    if not isinstance(params, dict):
        params = unflatten(spec, params)
    act = ACTIVATIONS[spec.activation]
    if order == 2 and not act.second_order_ok:
        raise UnsupportedActivationError(
            f"{spec.activation} has a discontinuous second derivative; "
            "second-order mode is not supported"
        )
    if directions is not None and order != 1:
        raise ValueError("directional duals are first-order only")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    tape = next((p.tape for p in params.values() if isinstance(p, ad.Num)), None)

    z0 = ad.add(ad.matmul(X, params["W0"]), params["b0"])
    if order == 0:
        z = z0
    else:
        ones = np.ones((n, 1))
        if directions is not None:
            seeds = [ad.matmul(np.asarray(directions, dtype=float), params["W0"])]
        else:
            e1 = np.array([[1.0, 0.0]])
            e2 = np.array([[0.0, 1.0]])
            seeds = [
                ad.matmul(ones, ad.matmul(e1, params["W0"])),
                ad.matmul(ones, ad.matmul(e2, params["W0"])),
            ]
        z = _stack_lift(tape, [z0] + seeds, order)

    for k in range(spec.n_blocks):
        h = _fused_act(act, z, None, order)
        a1 = _fused_act(act, ad.matmul(h, params[f"W1_{k}"]), params[f"b1_{k}"], order)
        a2 = ad.matmul(a1, params[f"W2_{k}"])
        z = _skip_bias(z, a2, params[f"b2_{k}"])
    y = _add_bias0(ad.matmul(z, params["Wh"]), params["bh"])

    comps = []
    n_chan = {0: 1, 1: 2 if directions is not None else 3, 2: 5}[order]
    cls = Dual2 if order == 2 else Dual1
    for j in range(spec.output_dim):
        fields = [_pick(y, ch, j) for ch in range(n_chan)]
        comps.append(cls(*fields) if order > 0 else Dual1(fields[0]))
    return comps


def forward(spec, params, x):
    """Network output at a point (2,) -> (output_dim,) or batch (n, 2) ->
    (n, output_dim)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    comps = forward_dual(spec, params, np.atleast_2d(x), order=0)
    out = np.stack([np.asarray(c.val) for c in comps], axis=-1)
    return out[0] if single else out


def forward_grad(spec, params, x, component=0, second=False):
    """Value, spatial gradient, and optionally pure second partials of one
    output component.  Propagates kink and unsupported-activation errors from
    the dual arithmetic."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    order = 2 if second else 1
    comp = forward_dual(spec, params, np.atleast_2d(x), order=order)[component]
    val = np.asarray(comp.val)
    grad = np.stack([np.asarray(comp.dx1), np.asarray(comp.dx2)], axis=-1)
    dxx = None
    if second:
        dxx = np.stack(
            [np.asarray(np.broadcast_to(comp.dxx1, val.shape)), np.asarray(np.broadcast_to(comp.dxx2, val.shape))],
            axis=-1,
        )
    if single:
        return float(val[0]), grad[0], (dxx[0] if second else None)
    return val, grad, dxx


# ---------------------------------------------------------------------------
# checkpoints: flat float64 payload behind a small fixed header, plus a text
# manifest for humans

_MAGIC = b"NRZNET01"
_ACT_IDS = {name: i for i, name in enumerate(sorted(ACTIVATIONS))}
_ACT_NAMES = {i: name for name, i in _ACT_IDS.items()}


def save_checkpoint(path, params):
    spec = params.spec
    header = struct.pack(
        "<8s7q",
        _MAGIC,
        spec.input_dim,
        spec.output_dim,
        spec.n_blocks,
        spec.width,
        _ACT_IDS[spec.activation],
        spec.seed,
        spec.n_params,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(params.flat, dtype="<f8").tobytes())
    manifest = {
        "input_dim": spec.input_dim,
        "output_dim": spec.output_dim,
        "n_blocks": spec.n_blocks,
        "width": spec.width,
        "activation": spec.activation,
        "seed": spec.seed,
        "n_params": spec.n_params,
    }
    with open(str(path) + ".manifest.txt", "w") as fh:
        for key, value in manifest.items():
            fh.write(f"{key}: {value}\n")


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<8s7q"))
        magic, din, dout, nb, width, act_id, seed, n_params = struct.unpack("<8s7q", header)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a network checkpoint")
        flat = np.frombuffer(fh.read(8 * n_params), dtype="<f8").astype(float)
    spec = NetworkSpec(din, dout, nb, width, _ACT_NAMES[act_id], seed)
    return ParamSet(spec, flat)
