"""Dense float64 tensors with explicit-tape reverse-mode differentiation.

A GradientTape records operations in execution order and replays them in
exact reverse on backward(). Tapes are single-use. Tensors created without
a tape are constants, so the same forward code runs tape-free for cheap
inference. Broadcasting is limited to scalar-with-tensor; the few vector
broadcasts the model needs (bias rows, column normalizers, per-channel
affines) are dedicated ops with their own backward rules.
"""

from __future__ import annotations

import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Operand values lie outside the operation's domain."""


class NumericError(ArithmeticError):
    """A non-finite value surfaced where a finite one is required."""


class TapeError(RuntimeError):
    """Tape misuse: double backward, cross-tape operands, non-scalar root."""


class Tensor:
    """Row-major float64 array, optionally recorded on a GradientTape.

    Immutable after creation except for gradient accumulation; the
    optimizer swaps in fresh data arrays between tapes rather than
    mutating in place.
    """

    __slots__ = ("data", "grad", "tape", "tape_id")

    def __init__(self, data, tape: "GradientTape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.tape_id = tape._register() if tape is not None else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a one-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant view of this tensor: same data, no tape."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.tape = None
        out.tape_id = None
        return out

    def __repr__(self):
        taped = "" if self.tape is None else ", taped"
        return f"Tensor(shape={self.data.shape}{taped})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class GradientTape:
    """Append-only record of operations, replayed once in reverse.

    watch() marks leaves whose gradients the caller wants; backward()
    accumulates into their .grad and releases their tape reference so the
    same parameter tensors can be watched by the next step's tape.
    """

    __slots__ = ("_ops", "_leaves", "_count", "_spent")

    def __init__(self):
        self._ops: list[tuple] = []
        self._leaves: list[Tensor] = []
        self._count = 0
        self._spent = False

    def _register(self) -> int:
        i = self._count
        self._count = i + 1
        return i

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if t.tape is None:
                t.tape = self
                t.tape_id = self._register()
            elif t.tape is not self:
                raise TapeError("tensor is already attached to a different tape")
            self._leaves.append(t)

    def backward(self, root: Tensor) -> None:
        """Replay recorded ops in reverse, seeding d(root)/d(root)=1.

        Finiteness is enforced at flush: a non-finite root value or leaf
        gradient raises NumericError.
        """
        if self._spent:
            raise TapeError("a tape is single-use; backward already ran")
        self._spent = True
        if root.tape is not self:
            raise TapeError("backward root was not recorded on this tape")
        if root.data.size != 1:
            raise TapeError(f"backward root must be scalar, got shape {root.data.shape}")
        if not np.isfinite(root.data.reshape(())):
            raise NumericError("backward root is not finite")

        grads: dict[int, np.ndarray] = {root.tape_id: np.ones_like(root.data)}
        for out_id, parent_ids, fns in reversed(self._ops):
            g = grads.pop(out_id, None)
            if g is None:
                continue
            for pid, fn in zip(parent_ids, fns):
                if pid is None:
                    continue
                contrib = fn(g)
                acc = grads.get(pid)
                grads[pid] = contrib if acc is None else acc + contrib

        for t in self._leaves:
            g = grads.get(t.tape_id)
            if g is None:
                g = np.zeros_like(t.data)
            elif g.shape != t.data.shape:
                g = np.asarray(g).reshape(t.data.shape)
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient reached a watched leaf")
            t.grad = g if t.grad is None else t.grad + g
            t.tape = None
            t.tape_id = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _common_tape(*ts: Tensor):
    tape = None
    for t in ts:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise TapeError("operands were recorded on different tapes")
    return tape


def _record(tape: GradientTape, out: Tensor, pairs) -> None:
    tape._ops.append((
        out.tape_id,
        tuple(p.tape_id if p.tape is tape else None for p, _ in pairs),
        tuple(fn for _, fn in pairs),
    ))


def _fit(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce an upstream gradient onto a scalar-broadcast parent."""
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape or a.data.size == 1 or b.data.size == 1:
        return
    raise DimensionError(
        f"{op}: shapes {a.data.shape} and {b.data.shape} differ and neither is scalar"
    )


# ---------------------------------------------------------------------------
# elementwise ops (same-shape or scalar broadcast)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "add")
    tape = _common_tape(a, b)
    out = Tensor(a.data + b.data, tape)
    if tape is not None:
        ash, bsh = a.data.shape, b.data.shape
        _record(tape, out, ((a, lambda g: _fit(g, ash)), (b, lambda g: _fit(g, bsh))))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "sub")
    tape = _common_tape(a, b)
    with np.errstate(invalid="ignore", over="ignore"):
        out = Tensor(a.data - b.data, tape)
    if tape is not None:
        ash, bsh = a.data.shape, b.data.shape
        _record(tape, out, ((a, lambda g: _fit(g, ash)), (b, lambda g: _fit(-g, bsh))))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "mul")
    tape = _common_tape(a, b)
    with np.errstate(over="ignore"):
        out = Tensor(a.data * b.data, tape)
    if tape is not None:
        ad, bd = a.data, b.data
        _record(tape, out, (
            (a, lambda g: _fit(g * bd, ad.shape)),
            (b, lambda g: _fit(g * ad, bd.shape)),
        ))
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "div")
    tape = _common_tape(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(a.data / b.data, tape)
    if tape is not None:
        ad, bd = a.data, b.data
        _record(tape, out, (
            (a, lambda g: _fit(g / bd, ad.shape)),
            (b, lambda g: _fit(-g * ad / (bd * bd), bd.shape)),
        ))
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data, a.tape)
    if a.tape is not None:
        _record(a.tape, out, ((a, lambda g: -g),))
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), a.tape)
    if a.tape is not None:
        mask = a.data > 0
        _record(a.tape, out, ((a, lambda g: g * mask),))
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    with np.errstate(over="ignore", invalid="ignore"):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
    out = Tensor(s, a.tape)
    if a.tape is not None:
        _record(a.tape, out, ((a, lambda g: g * s * (1.0 - s)),))
    return out


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    out = Tensor(e, a.tape)
    if a.tape is not None:
        _record(a.tape, out, ((a, lambda g: g * e),))
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    out = Tensor(np.log(a.data), a.tape)
    if a.tape is not None:
        ad = a.data
        _record(a.tape, out, ((a, lambda g: g / ad),))
    return out


def power(a, exponent: float) -> Tensor:
    """a**exponent for a fixed float exponent; exponent 0 gives exact ones."""
    a = _as_tensor(a)
    p = float(exponent)
    if p == 0.0:
        out = Tensor(np.ones_like(a.data), a.tape)
        if a.tape is not None:
            _record(a.tape, out, ((a, lambda g: np.zeros_like(a.data)),))
        return out
    with np.errstate(invalid="ignore", divide="ignore"):
        out = Tensor(a.data ** p, a.tape)
    if a.tape is not None:
        ad = a.data
        def back(g):
            with np.errstate(invalid="ignore", divide="ignore"):
                return g * p * ad ** (p - 1.0)
        _record(a.tape, out, ((a, back),))
    return out


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient passes where a was not clamped."""
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, floor), a.tape)
    if a.tape is not None:
        mask = a.data >= floor
        _record(a.tape, out, ((a, lambda g: g * mask),))
    return out


# ---------------------------------------------------------------------------
# vector-broadcast ops: v matches one axis of a 2-D (or channel) operand
# ---------------------------------------------------------------------------

def _check_rowvec(m: Tensor, v: Tensor, op: str) -> None:
    if m.data.ndim != 2 or v.data.ndim != 1 or v.data.shape[0] != m.data.shape[1]:
        raise DimensionError(f"{op}: matrix {m.data.shape} with row vector {v.data.shape}")


def add_rowvec(m, v) -> Tensor:
    """m + v with v broadcast across rows (the affine-bias pattern)."""
    m, v = _as_tensor(m), _as_tensor(v)
    _check_rowvec(m, v, "add_rowvec")
    tape = _common_tape(m, v)
    out = Tensor(m.data + v.data, tape)
    if tape is not None:
        _record(tape, out, ((m, lambda g: g), (v, lambda g: g.sum(axis=0))))
    return out


def mul_rowvec(m, v) -> Tensor:
    m, v = _as_tensor(m), _as_tensor(v)
    _check_rowvec(m, v, "mul_rowvec")
    tape = _common_tape(m, v)
    out = Tensor(m.data * v.data, tape)
    if tape is not None:
        md, vd = m.data, v.data
        _record(tape, out, (
            (m, lambda g: g * vd),
            (v, lambda g: (g * md).sum(axis=0)),
        ))
    return out


def div_rowvec(m, v) -> Tensor:
    """m / v with v broadcast across rows (per-column normalization)."""
    m, v = _as_tensor(m), _as_tensor(v)
    _check_rowvec(m, v, "div_rowvec")
    tape = _common_tape(m, v)
    out = Tensor(m.data / v.data, tape)
    if tape is not None:
        md, vd = m.data, v.data
        _record(tape, out, (
            (m, lambda g: g / vd),
            (v, lambda g: -(g * md).sum(axis=0) / (vd * vd)),
        ))
    return out


def div_colvec(m, v) -> Tensor:
    """m / v with v matching the row axis (per-row normalization)."""
    m, v = _as_tensor(m), _as_tensor(v)
    if m.data.ndim != 2 or v.data.ndim != 1 or v.data.shape[0] != m.data.shape[0]:
        raise DimensionError(f"div_colvec: matrix {m.data.shape} with column vector {v.data.shape}")
    tape = _common_tape(m, v)
    col = v.data[:, None]
    out = Tensor(m.data / col, tape)
    if tape is not None:
        md, vd = m.data, v.data
        _record(tape, out, (
            (m, lambda g: g / vd[:, None]),
            (v, lambda g: -(g * md).sum(axis=1) / (vd * vd)),
        ))
    return out


def channel_affine(x, scale, shift) -> Tensor:
    """x*scale + shift with scale/shift per leading channel of a C×... array."""
    x, scale, shift = _as_tensor(x), _as_tensor(scale), _as_tensor(shift)
    c = x.data.shape[0]
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise DimensionError(
            f"channel_affine: x {x.data.shape} needs ({c},) scale/shift, "
            f"got {scale.data.shape} and {shift.data.shape}"
        )
    tape = _common_tape(x, scale, shift)
    ext = (c,) + (1,) * (x.data.ndim - 1)
    s = scale.data.reshape(ext)
    out = Tensor(x.data * s + shift.data.reshape(ext), tape)
    if tape is not None:
        xd = x.data
        tail = tuple(range(1, xd.ndim))
        _record(tape, out, (
            (x, lambda g: g * s),
            (scale, lambda g: (g * xd).sum(axis=tail)),
            (shift, lambda g: g.sum(axis=tail)),
        ))
    return out


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not align")
    tape = _common_tape(a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        out = Tensor(a.data @ b.data, tape)
    if tape is not None:
        ad, bd = a.data, b.data
        _record(tape, out, (
            (a, lambda g: g @ bd.T),
            (b, lambda g: ad.T @ g),
        ))
    return out


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {a.data.shape}")
    out = Tensor(a.data.T, a.tape)
    if a.tape is not None:
        _record(a.tape, out, ((a, lambda g: g.T),))
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape), a.tape)
    if a.tape is not None:
        orig = a.data.shape
        _record(a.tape, out, ((a, lambda g: g.reshape(orig)),))
    return out


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of an empty sequence")
    tape = _common_tape(*parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), tape)
    if tape is not None:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)
        pairs = []
        for i, p in enumerate(parts):
            lo, hi = int(offsets[i]), int(offsets[i + 1])
            def back(g, lo=lo, hi=hi):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                return g[tuple(sl)]
            pairs.append((p, back))
        _record(tape, out, tuple(pairs))
    return out


def gather(a, indices) -> Tensor:
    """Select rows (2-D) or elements (1-D) by index; backward scatters-adds."""
    a = _as_tensor(a)
    if a.data.ndim not in (1, 2):
        raise DimensionError(f"gather expects a 1-D or 2-D tensor, got shape {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("gather indices must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise DimensionError(
            f"gather index out of range for leading extent {a.data.shape[0]}"
        )
    out = Tensor(a.data[idx], a.tape)
    if a.tape is not None:
        shape = a.data.shape
        def back(g):
            z = np.zeros(shape)
            np.add.at(z, idx, g)
            return z
        _record(a.tape, out, ((a, back),))
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _check_axis(a: Tensor, axis) -> None:
    if axis is not None and not (0 <= axis < a.data.ndim):
        raise DimensionError(f"axis {axis} out of range for rank {a.data.ndim}")


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    _check_axis(a, axis)
    out = Tensor(a.data.sum(axis=axis), a.tape)
    if a.tape is not None:
        shape = a.data.shape
        def back(g):
            if axis is None:
                return np.broadcast_to(g, shape)
            return np.broadcast_to(np.expand_dims(g, axis), shape)
        _record(a.tape, out, ((a, back),))
    return out


def reduce_mean(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    _check_axis(a, axis)
    out = Tensor(a.data.mean(axis=axis), a.tape)
    if a.tape is not None:
        shape = a.data.shape
        n = a.data.size if axis is None else shape[axis]
        def back(g):
            if axis is None:
                return np.broadcast_to(g / n, shape)
            return np.broadcast_to(np.expand_dims(g, axis) / n, shape)
        _record(a.tape, out, ((a, back),))
    return out


def reduce_max(a, axis: int | None = None) -> Tensor:
    """Max reduction; ties route the gradient to the lowest flat index."""
    a = _as_tensor(a)
    _check_axis(a, axis)
    out = Tensor(a.data.max(axis=axis), a.tape)
    if a.tape is not None:
        ad = a.data
        def back(g):
            z = np.zeros_like(ad)
            if axis is None:
                z.flat[int(ad.argmax())] = np.asarray(g).reshape(())
            else:
                idx = np.expand_dims(ad.argmax(axis=axis), axis)
                np.put_along_axis(z, idx, np.expand_dims(g, axis), axis)
            return z
        _record(a.tape, out, ((a, back),))
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x, kernel, bias, padding: int) -> Tensor:
    """Cross-correlation of a C_in×H×W input with a C_out×C_in×K×K kernel.

    Stride 1, symmetric zero padding. Output is C_out×H'×W' with
    H' = H + 2*padding - K + 1.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise DimensionError(
            f"conv2d: input {x.data.shape} must be C×H×W and kernel "
            f"{kernel.data.shape} must be C_out×C_in×K×K"
        )
    c_out, c_in, k, k2 = kernel.data.shape
    if k != k2:
        raise DimensionError(f"conv2d: kernel window must be square, got {k}×{k2}")
    if k % 2 != 1:
        raise DimensionError(f"conv2d: kernel window must be odd, got {k}")
    if x.data.shape[0] != c_in:
        raise DimensionError(
            f"conv2d: input channels {x.data.shape[0]} do not match kernel "
            f"input channels {c_in} (input {x.data.shape}, kernel {kernel.data.shape})"
        )
    if bias.data.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.data.shape} must be ({c_out},)")
    p = int(padding)
    _, h, w = x.data.shape
    ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: window {k} too large for padded input {h}×{w}")

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))       # C_in,Ho,Wo,K,K
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c_in * k * k)
    wmat = kernel.data.reshape(c_out, c_in * k * k)
    flat = cols @ wmat.T + bias.data                              # Ho*Wo, C_out
    tape = _common_tape(x, kernel, bias)
    out = Tensor(flat.T.reshape(c_out, ho, wo), tape)
    if tape is not None:
        kshape = kernel.data.shape

        def back_x(g):
            dcols = g.reshape(c_out, ho * wo).T @ wmat            # Ho*Wo, C_in*K*K
            dc = dcols.reshape(ho, wo, c_in, k, k)
            dxp = np.zeros((c_in, h + 2 * p, w + 2 * p))
            for ki in range(k):
                for kj in range(k):
                    dxp[:, ki:ki + ho, kj:kj + wo] += dc[:, :, :, ki, kj].transpose(2, 0, 1)
            return dxp[:, p:p + h, p:p + w] if p else dxp

        def back_w(g):
            return (g.reshape(c_out, ho * wo) @ cols).reshape(kshape)

        _record(tape, out, (
            (x, back_x),
            (kernel, back_w),
            (bias, lambda g: g.sum(axis=(1, 2))),
        ))
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, point: Tensor, eps: float = 1e-5) -> float:
    """Worst relative error between taped and central-difference gradients.

    f must map a Tensor at `point` to a scalar Tensor and be deterministic.
    The relative error denominator is max(|analytic|, |numeric|, 1e-8).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    tape = GradientTape()
    probe = Tensor(point.data.copy())
    tape.watch(probe)
    out = f(probe)
    tape.backward(out)
    analytic = probe.grad.ravel()

    base = point.data.ravel().copy()
    shape = point.data.shape
    worst = 0.0
    for i in range(base.size):
        for sign in (1.0, -1.0):
            base[i] += sign * eps
            val = f(Tensor(base.reshape(shape))).item()
            if not np.isfinite(val):
                raise NumericError(f"non-finite value while probing coordinate {i}")
            if sign > 0:
                plus = val
            else:
                minus = val
            base[i] -= sign * eps
        numeric = (plus - minus) / (2.0 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"SATN"


def dump_tensor(t: Tensor, fh) -> None:
    """Write one binary tensor record: magic, u32 rank, u32 extents, f64 data."""
    fh.write(_MAGIC)
    shape = t.data.shape
    fh.write(struct.pack("<I", len(shape)))
    for extent in shape:
        fh.write(struct.pack("<I", extent))
    fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_tensor(fh) -> Tensor:
    magic = fh.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}, expected {_MAGIC!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(rank))
    n = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
    return Tensor(data.reshape(shape))


def save_tensor(t: Tensor, path) -> None:
    with open(path, "wb") as fh:
        dump_tensor(t, fh)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def tensor_to_csv(t: Tensor, path) -> None:
    """Human-readable dump: a shape comment line, then one row per line."""
    rows = t.data.reshape(-1, t.data.shape[-1]) if t.data.ndim >= 2 else t.data.reshape(1, -1)
    with open(path, "w") as fh:
        fh.write("# shape: " + "x".join(str(e) for e in t.data.shape) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
