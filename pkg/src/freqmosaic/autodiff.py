"""Dense f64 tensors with a reverse-mode differentiation tape.

Every operation the demosaicking model needs is defined here together with
its exact backward rule.  Ops execute eagerly on numpy arrays; while a Tape
is active they also append a closure that pushes adjoints back to their
inputs.  Complex values are carried as a pair of real tensors, so the tape
only ever sees real nodes; all losses are real-valued, which makes this
two-channel view equivalent to the usual complex gradient without any
Wirtinger bookkeeping.

Conventions fixed here:
  * fft2 is the unnormalized forward DFT, ifft2 divides by H*W
    (so Parseval reads sum(x^2) * H * W == sum(|fft2(x)|^2)).
  * all data is float64, row-major.
  * broadcasting is allowed only in the channel-mask sense:
    a [1,H,W] tensor may multiply a [C,H,W] tensor.
"""

from __future__ import annotations

import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation

# Counts backward() invocations; training instrumentation reads this to
# verify the two-pass schedule.
BACKWARD_CALLS = 0


class Tensor:
    """A dense real array plus autodiff bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        # set when this tensor was produced by a recorded op
        self._tracked = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


class ComplexTensor:
    """A complex array stored as two real tensors (re, im)."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if re.shape != im.shape:
            raise ContractViolation(f"re/im shape mismatch: {re.shape} vs {im.shape}")
        self.re = re
        self.im = im

    @property
    def shape(self):
        return self.re.shape

    def to_numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def __repr__(self):
        return f"ComplexTensor(shape={tuple(self.shape)})"


_ACTIVE_TAPE = None


class Tape:
    """Ordered record of operations; single-owner, replayed by backward().

    Use as a context manager; ops executed inside the block are recorded in
    topological order (inputs always precede their consumers).
    """

    def __init__(self):
        self.records = []  # (inputs, outputs, backward_fn)

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractViolation("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


def _record(inputs, outputs, backward_fn):
    tape = _ACTIVE_TAPE
    if tape is None:
        return
    if not any(t.requires_grad or t._tracked for t in inputs):
        return
    for out in outputs:
        out._tracked = True
    tape.records.append((inputs, outputs, backward_fn))


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad for every requires_grad leaf reachable from `loss`.

    Leaves recorded on the tape but not reachable from the loss receive a
    zero gradient.  Replay order and accumulation order are fixed, so two
    calls on the same tape produce bit-identical gradients.
    """
    global BACKWARD_CALLS
    if loss.data.size != 1:
        raise ContractViolation("backward expects a scalar loss")
    BACKWARD_CALLS += 1

    adjoint = {id(loss): np.ones_like(loss.data)}
    for inputs, outputs, backward_fn in reversed(tape.records):
        out_grads = [adjoint.get(id(o)) for o in outputs]
        if all(g is None for g in out_grads):
            continue
        out_grads = [
            g if g is not None else np.zeros(o.shape)
            for g, o in zip(out_grads, outputs)
        ]
        in_grads = backward_fn(*out_grads)
        for tensor, grad in zip(inputs, in_grads):
            if grad is None:
                continue
            seen = adjoint.get(id(tensor))
            adjoint[id(tensor)] = grad if seen is None else seen + grad

    # every requires_grad leaf seen on the tape gets a fresh grad buffer
    for inputs, _, _ in tape.records:
        for tensor in inputs:
            if tensor.requires_grad:
                g = adjoint.get(id(tensor))
                tensor.grad = np.zeros(tensor.shape) if g is None else np.array(g)


# ---------------------------------------------------------------------------
# pointwise ops
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ContractViolation(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _check_mask_broadcast(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape:
        return
    ok = (
        len(a.shape) == 3
        and len(b.shape) == 3
        and a.shape[1:] == b.shape[1:]
        and 1 in (a.shape[0], b.shape[0])
    )
    if not ok:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    _record((a, b), (out,), lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    _record((a, b), (out,), lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product; one side may be a [1,H,W] mask against [C,H,W]."""
    _check_mask_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        ga = g * b.data
        gb = g * a.data
        if a.shape != out.shape:
            ga = ga.sum(axis=0, keepdims=True)
        if b.shape != out.shape:
            gb = gb.sum(axis=0, keepdims=True)
        return ga, gb

    _record((a, b), (out,), backward_fn)
    return out


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale each channel of x[C,H,W] by s[C,1,1] (channel attention)."""
    if len(x.shape) != 3 or s.shape != (x.shape[0], 1, 1):
        raise ContractViolation(f"channel_scale: got x{x.shape}, s{s.shape}")
    out = Tensor(x.data * s.data)

    def backward_fn(g):
        return g * s.data, (g * x.data).sum(axis=(1, 2), keepdims=True)

    _record((x, s), (out,), backward_fn)
    return out


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = Tensor(x.data * factor)
    _record((x,), (out,), lambda g: (g * factor,))
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    out = Tensor(np.where(mask, x.data, 0.0))
    _record((x,), (out,), lambda g: (g * mask,))
    return out


def sigmoid(x: Tensor) -> Tensor:
    # split form avoids overflow in exp for large |x|
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    out = Tensor(s)
    _record((x,), (out,), lambda g: (g * s * (1.0 - s),))
    return out


def absolute(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data))
    sign = np.sign(x.data)
    _record((x,), (out,), lambda g: (g * sign,))
    return out


def mean_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.mean())
    n = x.data.size
    # materialized (not broadcast-view) adjoints keep downstream BLAS fast
    _record((x,), (out,), lambda g: (np.full(x.shape, float(g) / n),))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    _record((x,), (out,), lambda g: (np.full(x.shape, float(g)),))
    return out


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate [Ci,H,W] tensors along the channel axis."""
    if len(tensors) < 2:
        raise ContractViolation("concat_channels needs at least two tensors")
    hw = tensors[0].shape[1:]
    for t in tensors:
        if len(t.shape) != 3 or t.shape[1:] != hw:
            raise ContractViolation("concat_channels: spatial shapes differ")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0))
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=0))

    _record(tensors, (out,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# structured ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int) -> Tensor:
    """Cross-correlation of x[Cin,H,W] with weight[Cout,Cin,k,k] plus bias.

    k must be odd and padding == (k-1)//2 so the spatial size is preserved
    (zero padding).  1x1 convolutions use padding 0.
    """
    if len(x.shape) != 3 or len(weight.shape) != 4:
        raise ContractViolation(f"conv2d: bad ranks x{x.shape}, w{weight.shape}")
    cout, cin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ContractViolation(f"conv2d: kernel must be odd square, got {k}x{k2}")
    if padding != (k - 1) // 2:
        raise ContractViolation(f"conv2d: padding {padding} != (k-1)/2 for k={k}")
    if x.shape[0] != cin:
        raise ContractViolation(f"conv2d: input channels {x.shape[0]} != weight Cin {cin}")
    if bias.shape != (cout,):
        raise ContractViolation(f"conv2d: bias shape {bias.shape} != ({cout},)")

    _, h, w = x.shape
    wmat = weight.data.reshape(cout, cin * k * k)
    if k == 1:
        cols = x.data.reshape(cin, h * w)
    else:
        xp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
        xp[:, padding:padding + h, padding:padding + w] = x.data
        # im2col with rows ordered (c, u, v) to match the weight layout; the
        # 4D buffer keeps every slice assignment a direct strided copy
        cols4 = np.empty((cin, k * k, h, w))
        for u in range(k):
            for v in range(k):
                cols4[:, u * k + v] = xp[:, u:u + h, v:v + w]
        cols = cols4.reshape(cin * k * k, h * w)
    y = (wmat @ cols).reshape(cout, h, w) + bias.data[:, None, None]
    out = Tensor(y)

    def backward_fn(g):
        gmat = g.reshape(cout, h * w)
        gb = g.sum(axis=(1, 2))
        gw = (gmat @ cols.T).reshape(weight.shape)
        gcols = wmat.T @ gmat
        if k == 1:
            gx = gcols.reshape(cin, h, w)
        else:
            gcols4 = gcols.reshape(cin, k * k, h, w)
            gxp = np.zeros((cin, h + 2 * padding, w + 2 * padding))
            for u in range(k):
                for v in range(k):
                    gxp[:, u:u + h, v:v + w] += gcols4[:, u * k + v]
            gx = gxp[:, padding:padding + h, padding:padding + w]
        return gx, gw, gb

    _record((x, weight, bias), (out,), backward_fn)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, [C,H,W] -> [C,1,1]."""
    if len(x.shape) != 3:
        raise ContractViolation(f"global_avg_pool: expected [C,H,W], got {x.shape}")
    _, h, w = x.shape
    out = Tensor(x.data.mean(axis=(1, 2), keepdims=True))

    def backward_fn(g):
        return (np.ascontiguousarray(np.broadcast_to(g / (h * w), x.shape)),)

    _record((x,), (out,), backward_fn)
    return out


def _axis_coords(src: int, dst: int):
    # align-corners-false source coordinates, clamped to the valid range
    coords = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    coords = np.clip(coords, 0.0, src - 1.0)
    lo = np.floor(coords).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coords - lo
    return lo, hi, frac


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear upsampling of [C,h,w] to [C,out_h,out_w], align-corners false."""
    if len(x.shape) != 3:
        raise ContractViolation(f"bilinear_upsample: expected [C,h,w], got {x.shape}")
    c, h, w = x.shape
    if h < 1 or w < 1:
        raise ContractViolation("bilinear_upsample: zero-sized input")
    if h > out_h or w > out_w:
        raise ContractViolation(f"bilinear_upsample: target {(out_h, out_w)} smaller than source {(h, w)}")

    y0, y1, wy = _axis_coords(h, out_h)
    x0, x1, wx = _axis_coords(w, out_w)
    wy_ = wy[None, :, None]
    wx_ = wx[None, None, :]
    d = x.data
    top = (1.0 - wx_) * d[:, y0[:, None], x0[None, :]] + wx_ * d[:, y0[:, None], x1[None, :]]
    bot = (1.0 - wx_) * d[:, y1[:, None], x0[None, :]] + wx_ * d[:, y1[:, None], x1[None, :]]
    out = Tensor((1.0 - wy_) * top + wy_ * bot)

    def backward_fn(g):
        gx = np.zeros_like(d)
        for rows, wrow in ((y0, 1.0 - wy_), (y1, wy_)):
            for colz, wcol in ((x0, 1.0 - wx_), (x1, wx_)):
                np.add.at(gx, (slice(None), rows[:, None], colz[None, :]), g * wrow * wcol)
        return (gx,)

    _record((x,), (out,), backward_fn)
    return out


def binarize_ste(x: Tensor) -> Tensor:
    """Threshold at zero (1 where x > 0, else 0) with a clipped
    straight-through backward: identity where |x| <= 1, zero outside."""
    out = Tensor((x.data > 0.0).astype(np.float64))
    passthrough = np.abs(x.data) <= 1.0
    _record((x,), (out,), lambda g: (g * passthrough,))
    return out


# ---------------------------------------------------------------------------
# fourier ops
# ---------------------------------------------------------------------------


def fft2(x: Tensor) -> ComplexTensor:
    """Unnormalized per-channel 2D DFT of a real [C,H,W] tensor.

    Backward: the DFT matrix F is symmetric, so the real-adjoint of x -> Fx
    is x_grad = Re(F^H G) = Re(H*W * ifft2(G)) for the combined output
    adjoint G = g_re + i*g_im.
    """
    if len(x.shape) != 3:
        raise ContractViolation(f"fft2: expected [C,H,W], got {x.shape}")
    _, h, w = x.shape
    spec = np.fft.fft2(x.data, axes=(-2, -1))
    out_re = Tensor(np.ascontiguousarray(spec.real))
    out_im = Tensor(np.ascontiguousarray(spec.imag))

    def backward_fn(g_re, g_im):
        g = g_re + 1j * g_im
        return (np.fft.ifft2(g, axes=(-2, -1)).real * (h * w),)

    _record((x,), (out_re, out_im), backward_fn)
    return ComplexTensor(out_re, out_im)


def ifft2(x: ComplexTensor) -> ComplexTensor:
    """Inverse 2D DFT with 1/(H*W) normalization, complex in, complex out.

    Backward of Y = (1/N) F^H X is X_grad = (1/N) F G, i.e. an unnormalized
    forward FFT of the output adjoint divided by N.
    """
    if len(x.shape) != 3:
        raise ContractViolation(f"ifft2: expected [C,H,W], got {x.shape}")
    _, h, w = x.shape
    spat = np.fft.ifft2(x.to_numpy(), axes=(-2, -1))
    out_re = Tensor(np.ascontiguousarray(spat.real))
    out_im = Tensor(np.ascontiguousarray(spat.imag))

    def backward_fn(g_re, g_im):
        g = np.fft.fft2(g_re + 1j * g_im, axes=(-2, -1)) / (h * w)
        return np.ascontiguousarray(g.real), np.ascontiguousarray(g.imag)

    _record((x.re, x.im), (out_re, out_im), backward_fn)
    return ComplexTensor(out_re, out_im)


def complex_mul(x: ComplexTensor, m: Tensor) -> ComplexTensor:
    """Multiply a complex tensor by a real mask (re and im separately).

    m is either the same shape as x or a [1,H,W] mask shared by all channels.
    """
    _check_mask_broadcast(x.re, m, "complex_mul")
    out_re = Tensor(x.re.data * m.data)
    out_im = Tensor(x.im.data * m.data)

    def backward_fn(g_re, g_im):
        gm = g_re * x.re.data + g_im * x.im.data
        if m.shape != x.shape:
            gm = gm.sum(axis=0, keepdims=True)
        return g_re * m.data, g_im * m.data, gm

    _record((x.re, x.im, m), (out_re, out_im), backward_fn)
    return ComplexTensor(out_re, out_im)


def complex_real(x: ComplexTensor) -> Tensor:
    out = Tensor(x.re.data.copy())
    _record((x.re,), (out,), lambda g: (g,))
    return out


def complex_imag(x: ComplexTensor) -> Tensor:
    out = Tensor(x.im.data.copy())
    _record((x.im,), (out,), lambda g: (g,))
    return out


def complex_abs(x: ComplexTensor) -> Tensor:
    """Pointwise modulus; gradient is zero at exact zeros."""
    mag = np.hypot(x.re.data, x.im.data)
    out = Tensor(mag)
    safe = np.where(mag > 0.0, mag, 1.0)

    def backward_fn(g):
        return g * x.re.data / safe, g * x.im.data / safe

    _record((x.re, x.im), (out,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(f, x: Tensor, eps: float = 1e-5, max_coords=None, rng=None) -> float:
    """Max relative error between tape gradients and central differences.

    f must be a deterministic map Tensor -> scalar Tensor.  Error at each
    coordinate is |analytic - central| / max(1, |central|).  Ops with a
    non-differentiable forward (binarize_ste) are exempt and must be
    excluded by the caller.  Set max_coords to probe a random coordinate
    subset for large tensors.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractViolation(f"grad_check: eps {eps} outside [1e-7, 1e-3]")
    had_grad = x.requires_grad
    x.requires_grad = True
    try:
        with Tape() as tape:
            loss = f(x)
            backward(tape, loss)
        analytic = x.grad.reshape(-1).copy()
        flat = x.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_coords is not None and max_coords < flat.size:
            rng = rng or np.random.default_rng(0)
            indices = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f(x).data)
            flat[i] = orig - eps
            f_minus = float(f(x).data)
            flat[i] = orig
            central = (f_plus - f_minus) / (2.0 * eps)
            err = abs(analytic[i] - central) / max(1.0, abs(central))
            worst = max(worst, err)
        return worst
    finally:
        x.requires_grad = had_grad


def grad_check_params(build_loss, tensors, eps: float = 1e-5, fraction: float = 1.0, rng=None) -> float:
    """Finite-difference check of one scalar loss against many parameter
    tensors, probing a fraction of coordinates per tensor.

    build_loss is a zero-argument closure over the tensors; it is re-run for
    every perturbed coordinate, so keep it desk-scale.
    """
    rng = rng or np.random.default_rng(0)
    with Tape() as tape:
        loss = build_loss()
        backward(tape, loss)
    analytic = [t.grad.reshape(-1).copy() for t in tensors]
    worst = 0.0
    for t, grad_flat in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        count = max(1, int(round(n * fraction)))
        indices = np.arange(n) if count >= n else np.sort(rng.choice(n, size=count, replace=False))
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(build_loss().data)
            flat[i] = orig - eps
            f_minus = float(build_loss().data)
            flat[i] = orig
            central = (f_plus - f_minus) / (2.0 * eps)
            err = abs(grad_flat[i] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# binary tensor framing
# ---------------------------------------------------------------------------

REAL_MAGIC = b"FMT1"
COMPLEX_MAGIC = b"FMC1"


def write_tensor(fp, t) -> None:
    """Write a Tensor (FMT1) or ComplexTensor (FMC1) frame.

    Layout: magic, rank (u32 LE), dims (u32 LE each), then the f64 payload
    row-major; complex frames store the re payload followed by the im payload.
    """
    if isinstance(t, ComplexTensor):
        fp.write(COMPLEX_MAGIC)
        fp.write(struct.pack("<I", len(t.shape)))
        fp.write(struct.pack(f"<{len(t.shape)}I", *t.shape))
        fp.write(np.ascontiguousarray(t.re.data, dtype="<f8").tobytes())
        fp.write(np.ascontiguousarray(t.im.data, dtype="<f8").tobytes())
    else:
        fp.write(REAL_MAGIC)
        fp.write(struct.pack("<I", len(t.shape)))
        fp.write(struct.pack(f"<{len(t.shape)}I", *t.shape))
        fp.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_tensor(fp):
    """Read one FMT1/FMC1 frame; returns Tensor or ComplexTensor."""
    magic = fp.read(4)
    if magic not in (REAL_MAGIC, COMPLEX_MAGIC):
        raise ValueError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<I", fp.read(4))
    dims = struct.unpack(f"<{rank}I", fp.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    payload = np.frombuffer(fp.read(8 * count), dtype="<f8").reshape(dims)
    if magic == REAL_MAGIC:
        return Tensor(payload.copy())
    im = np.frombuffer(fp.read(8 * count), dtype="<f8").reshape(dims)
    return ComplexTensor(Tensor(payload.copy()), Tensor(im.copy()))


def save_tensor(path, t) -> None:
    with open(path, "wb") as fp:
        write_tensor(fp, t)


def load_tensor(path):
    with open(path, "rb") as fp:
        return read_tensor(fp)
