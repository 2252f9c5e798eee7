"""Reverse-mode automatic differentiation over dense 4-D tensors.

The operation set is exactly what a densely connected super-resolution
graph needs: convolution, transposed convolution, pixel shuffle, channel
concatenation, ReLU, elementwise addition, and a mean-absolute-error
objective.  Ops record onto an explicitly opened :class:`Tape`; gradients
are produced by replaying the tape in reverse insertion order.

Convolutions run as im2col / col2im plus one BLAS matmul per layer, so
the engine stays fast enough for desk-scale training while remaining a
single readable file.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "ConvParams",
    "Tape",
    "conv2d",
    "conv2d_transpose",
    "pixel_shuffle",
    "concat_channels",
    "relu",
    "add",
    "l1_loss",
    "sum_all",
]


class ShapeError(ValueError):
    """Raised when tensor geometry does not satisfy an op's contract."""


class Tensor:
    """A 4-D (batch, channels, height, width) value.

    ``data`` is immutable by convention once the tensor participates in a
    recorded graph; ``grad`` is written only by :meth:`Tape.backward`.
    Training code mutates parameter ``data`` in place between steps,
    never while a tape is live.  ``node_id`` is only meaningful together
    with the tape generation that assigned it, so one tensor (a network
    parameter, say) can participate in many consecutive tapes.
    """

    __slots__ = ("data", "grad", "node_id", "tape_gen")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be 4-D (n, c, h, w), got shape {arr.shape}")
        if 0 in arr.shape:
            raise ShapeError(f"all tensor dims must be >= 1, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.node_id = None
        self.tape_gen = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


class ConvParams:
    """Parameters of one (de)convolution layer.

    ``weight`` is laid out ``(out_channels, in_channels, kh, kw)`` for
    :func:`conv2d` and ``(in_channels, out_channels, kh, kw)`` for
    :func:`conv2d_transpose`, so the two ops can share one weight
    interpretation as exact adjoints.  ``bias`` holds one value per
    output channel, stored as a ``(1, out_channels, 1, 1)`` tensor so it
    rides the same tape as every other parameter.
    """

    __slots__ = ("weight", "bias", "stride", "padding", "transposed")

    def __init__(self, weight, bias, stride: int = 1, padding: int = 0,
                 transposed: bool = False):
        self.weight = weight if isinstance(weight, Tensor) else Tensor(weight)
        if not isinstance(bias, Tensor):
            b = np.asarray(bias)
            bias = Tensor(b.reshape(1, b.size, 1, 1))
        self.bias = bias
        if stride < 1:
            raise ShapeError(f"stride must be positive, got {stride}")
        if padding < 0:
            raise ShapeError(f"padding must be non-negative, got {padding}")
        self.stride = int(stride)
        self.padding = int(padding)
        self.transposed = bool(transposed)
        oc = self.out_channels
        if self.bias.data.shape != (1, oc, 1, 1):
            raise ShapeError(
                f"bias must have one value per output channel ({oc}), "
                f"got shape {self.bias.data.shape}"
            )

    @property
    def in_channels(self) -> int:
        return self.weight.shape[0] if self.transposed else self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1] if self.transposed else self.weight.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def bias_vector(self) -> np.ndarray:
        return self.bias.data.reshape(-1)

    def n_params(self) -> int:
        return self.weight.data.size + self.bias.data.size

    def __repr__(self) -> str:
        kind = "deconv" if self.transposed else "conv"
        kh, kw = self.kernel
        return (f"ConvParams({kind} {self.in_channels}->{self.out_channels}, "
                f"{kh}x{kw}, stride={self.stride}, pad={self.padding})")


# ---------------------------------------------------------------------------
# Tape


class _Node:
    __slots__ = ("tensor", "input_ids", "backward_fn", "op")

    def __init__(self, tensor, input_ids, backward_fn, op):
        self.tensor = tensor
        self.input_ids = input_ids
        self.backward_fn = backward_fn
        self.op = op


_ACTIVE_TAPE: "Tape | None" = None
_TAPE_GENERATIONS = iter(range(1, 1 << 62))


class Tape:
    """Recording context for one forward/backward pass.

    Insertion order is topological order; :meth:`backward` walks the
    node list strictly in reverse.  Only one tape may be open at a time
    (single-writer model).
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._gen = next(_TAPE_GENERATIONS)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already recording; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def __len__(self) -> int:
        return len(self._nodes)

    def _owns(self, t: Tensor) -> bool:
        return t.tape_gen == self._gen and t.node_id is not None

    def _leaf(self, t: Tensor) -> int:
        node_id = len(self._nodes)
        self._nodes.append(_Node(t, (), None, "leaf"))
        t.node_id = node_id
        t.tape_gen = self._gen
        return node_id

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn, op: str) -> None:
        input_ids = tuple(
            t.node_id if self._owns(t) else self._leaf(t) for t in inputs
        )
        node_id = len(self._nodes)
        self._nodes.append(_Node(out, input_ids, backward_fn, op))
        out.node_id = node_id
        out.tape_gen = self._gen

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and accumulate grads onto every reachable tensor."""
        if not self._owns(loss) or self._nodes[loss.node_id].tensor is not loss:
            raise ValueError("loss tensor was not produced on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        pending: dict[int, np.ndarray] = {
            loss.node_id: np.ones_like(loss.data)
        }
        for node_id in range(loss.node_id, -1, -1):
            grad = pending.pop(node_id, None)
            if grad is None:
                continue
            node = self._nodes[node_id]
            t = node.tensor
            t.grad = grad if t.grad is None else t.grad + grad
            if node.backward_fn is None:
                continue
            input_grads = node.backward_fn(grad)
            for input_id, g in zip(node.input_ids, input_grads):
                if g is None:
                    continue
                if input_id in pending:
                    pending[input_id] = pending[input_id] + g
                else:
                    pending[input_id] = g


def _emit(out: Tensor, inputs: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._record(out, inputs, backward_fn, op)
    return out


# ---------------------------------------------------------------------------
# im2col / col2im shared by conv2d and conv2d_transpose


def _conv_extent(size: int, k: int, stride: int, pad: int, what: str) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(
            f"negative output extent: {what}={size} with kernel {k}, pad {pad}"
        )
    if span % stride:
        raise ShapeError(
            f"{what}={size} with kernel {k}, pad {pad} is not divisible by stride {stride}"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(n, c, h, w) -> (n, c*kh*kw, oh*ow) patch matrix.

    One block copy per kernel tap; the batch-major layout feeds batched
    GEMMs whose outputs are already in (n, channels, pixels) order.
    """
    n, c, h, w = x.shape
    oh = _conv_extent(h, kh, stride, pad, "height")
    ow = _conv_extent(w, kw, stride, pad, "width")
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + stride * oh:stride,
                                 j:j + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols: np.ndarray, n: int, c: int, h: int, w: int,
            kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back to (n, c, h, w)."""
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


# ---------------------------------------------------------------------------
# Stride-1 correlation core.
#
# A k x k correlation is k*k rank-(oc, ic) GEMMs against flat shifted
# slices of one zero-padded buffer: with rows flattened to width Wp, the
# tap (i, j) contribution to output element t is W_ij @ buf[t + i*Wp + j].
# Row wrap-around only touches columns that the final crop discards.
# Every GEMM operand is contiguous (or BLAS-stride-compatible), which is
# what makes this formulation fast; im2col stays as the fallback for
# strided plain convolutions.


def _pad_flat(x: np.ndarray, pt: int, pb: int, pl: int, pr: int,
              slack: int) -> tuple[np.ndarray, int, int]:
    """Zero-pad (n, c, h, w) into a flat (n, c, Hp*Wp + slack) buffer.

    Negative padding crops the corresponding edge instead.
    """
    n, c, h, w = x.shape
    ct, cb, cl, cr = max(-pt, 0), max(-pb, 0), max(-pl, 0), max(-pr, 0)
    if ct or cb or cl or cr:
        x = x[:, :, ct:h - cb, cl:w - cr]
        h, w = x.shape[2], x.shape[3]
        pt, pb, pl, pr = max(pt, 0), max(pb, 0), max(pl, 0), max(pr, 0)
    hp, wp = h + pt + pb, w + pl + pr
    buf = np.zeros((n, c, hp * wp + slack), dtype=x.dtype)
    buf[:, :, :hp * wp].reshape(n, c, hp, wp)[:, :, pt:pt + h, pl:pl + w] = x
    return buf, hp, wp


def _corr_wide(buf: np.ndarray, wp: int, taps: np.ndarray, rows: int,
               base: int = 0) -> np.ndarray:
    """Accumulate the tap GEMMs; returns (n, oc, rows*wp) wide output."""
    kh, kw = taps.shape[0], taps.shape[1]
    span = rows * wp
    y = np.matmul(taps[0, 0], buf[:, :, base:base + span])
    for i in range(kh):
        for j in range(kw):
            if i == 0 and j == 0:
                continue
            off = base + i * wp + j
            y += np.matmul(taps[i, j], buf[:, :, off:off + span])
    return y


def _embed_wide(g: np.ndarray, wp: int) -> np.ndarray:
    """Zero-extend (n, c, gh, gw) rows to width wp, flattened."""
    n, c, gh, gw = g.shape
    buf = np.zeros((n, c, gh * wp), dtype=g.dtype)
    buf.reshape(n, c, gh, wp)[:, :, :, :gw] = g
    return buf


def _corr_weight_grad(buf: np.ndarray, wp: int, gwide: np.ndarray, kh: int,
                      kw: int, row0: int = 0, col0: int = 0) -> np.ndarray:
    """d(loss)/d(taps) as (kh, kw, oc, ic); gwide columns beyond the clean
    output width must be zero so wrapped reads cancel."""
    span = gwide.shape[2]
    out = None
    for i in range(kh):
        for j in range(kw):
            base = (row0 + i) * wp + col0 + j
            sl = buf[:, :, base:base + span]
            dw = np.matmul(gwide, sl.transpose(0, 2, 1)).sum(axis=0)
            if out is None:
                out = np.empty((kh, kw) + dw.shape, dtype=dw.dtype)
            out[i, j] = dw
    return out


def _phase_table(k: int, stride: int, pad: int, in_len: int, out_len: int):
    """Per-phase geometry of a transposed convolution along one axis.

    Output positions R with (R + pad) % stride == alpha are produced by a
    stride-1 correlation of the input with every stride-th kernel tap,
    reversed.  Yields (tap_start, tap_count, pad_front, pad_back, out_count)
    per phase.
    """
    rows = []
    for alpha in range(stride):
        start = (alpha + pad) % stride
        count = 0 if start >= k else (k - 1 - start) // stride + 1
        shift = (alpha + pad) // stride
        out_count = len(range(alpha, out_len, stride))
        pad_front = count - 1 - shift
        pad_back = out_count + shift - in_len
        rows.append((start, count, pad_front, pad_back, out_count))
    return rows


# ---------------------------------------------------------------------------
# Ops


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Strided 2-D convolution (cross-correlation) with zero padding."""
    if p.transposed:
        raise ShapeError("conv2d got transposed-layout weights; use conv2d_transpose")
    n, c, h, w = x.shape
    oc, ic, kh, kw = p.weight.shape
    if c != ic:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weights expect {ic}")
    oh = _conv_extent(h, kh, p.stride, p.padding, "height")
    ow = _conv_extent(w, kw, p.stride, p.padding, "width")
    stride, padding = p.stride, p.padding

    if (kh, kw, stride, padding) == (1, 1, 1, 0):
        # pointwise conv is one batched GEMM, no patch matrix needed
        w2 = p.weight.data.reshape(oc, ic)
        x3 = x.data.reshape(n, ic, h * w)
        y = np.matmul(w2, x3)
        y += p.bias_vector[:, None]
        out = Tensor(y.reshape(n, oc, h, w), dtype=y.dtype)

        def backward_pointwise(g):
            g3 = g.reshape(n, oc, h * w)
            dw = np.matmul(g3, x3.transpose(0, 2, 1)).sum(axis=0).reshape(p.weight.shape)
            db = g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)
            dx = np.matmul(w2.T, g3).reshape(n, ic, h, w)
            return dx, dw, db

        return _emit(out, (x, p.weight, p.bias), backward_pointwise, "conv2d")

    if stride == 1:
        taps = np.ascontiguousarray(p.weight.data.transpose(2, 3, 0, 1))
        buf, hp, wp = _pad_flat(x.data, padding, padding, padding, padding, kw)
        ywide = _corr_wide(buf, wp, taps, oh)
        y = np.ascontiguousarray(ywide.reshape(n, oc, oh, wp)[:, :, :, :ow])
        y += p.bias.data
        out = Tensor(y, dtype=y.dtype)

        def backward_corr(g):
            db = g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)
            gwide = _embed_wide(g, wp)
            dtaps = _corr_weight_grad(buf, wp, gwide, kh, kw)
            dw = np.ascontiguousarray(dtaps.transpose(2, 3, 0, 1))
            ftaps = np.ascontiguousarray(
                p.weight.data.transpose(2, 3, 1, 0)[::-1, ::-1])
            gbuf, _, gwp = _pad_flat(g, kh - 1 - padding, kh - 1 - padding,
                                     kw - 1 - padding, kw - 1 - padding, kw)
            dwide = _corr_wide(gbuf, gwp, ftaps, h)
            dx = np.ascontiguousarray(dwide.reshape(n, ic, h, gwp)[:, :, :, :w])
            return dx, dw, db

        return _emit(out, (x, p.weight, p.bias), backward_corr, "conv2d")

    w2 = p.weight.data.reshape(oc, -1)
    cols = _im2col(x.data, kh, kw, stride, padding)           # (n, ic*kh*kw, oh*ow)
    y = np.matmul(w2, cols)                                   # (n, oc, oh*ow)
    y += p.bias_vector[:, None]
    out = Tensor(y.reshape(n, oc, oh, ow), dtype=y.dtype)

    def backward(g):
        g3 = g.reshape(n, oc, oh * ow)
        dw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(p.weight.shape)
        db = g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)
        dx = _col2im(np.matmul(w2.T, g3), n, ic, h, w, kh, kw, stride, padding)
        return dx, dw, db

    return _emit(out, (x, p.weight, p.bias), backward, "conv2d")


def conv2d_transpose(x: Tensor, p: ConvParams) -> Tensor:
    """Transposed convolution: the exact linear adjoint of :func:`conv2d`.

    Decomposed into one stride-1 correlation per output phase (the s*s
    polyphase components), each using every s-th kernel tap reversed.
    """
    if not p.transposed:
        raise ShapeError("conv2d_transpose needs transposed-layout weights "
                         "(in_channels, out_channels, kh, kw)")
    n, c, m_h, m_w = x.shape
    ic, oc, kh, kw = p.weight.shape
    if c != ic:
        raise ShapeError(
            f"conv2d_transpose channel mismatch: input has {c}, weights expect {ic}"
        )
    s, padding = p.stride, p.padding
    out_h = (m_h - 1) * s - 2 * padding + kh
    out_w = (m_w - 1) * s - 2 * padding + kw
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"non-positive output extent {out_h}x{out_w} for input {m_h}x{m_w}, "
            f"kernel {kh}x{kw}, stride {s}, pad {padding}"
        )

    rows_tab = _phase_table(kh, s, padding, m_h, out_h)
    cols_tab = _phase_table(kw, s, padding, m_w, out_w)
    pad_top = max(max(r[2] for r in rows_tab), 0)
    pad_bot = max(max(r[3] for r in rows_tab), 0)
    pad_lef = max(max(cc[2] for cc in cols_tab), 0)
    pad_rig = max(max(cc[3] for cc in cols_tab), 0)
    slack = m_w + pad_lef + pad_rig + kw      # one padded row covers any offset
    buf, hp, wp = _pad_flat(x.data, pad_top, pad_bot, pad_lef, pad_rig, slack)

    weight = p.weight.data

    def phase_taps(i0, cnt_i, j0, cnt_j):
        sub = weight[:, :, i0::s, j0::s][:, :, :cnt_i, :cnt_j]
        return np.ascontiguousarray(sub[:, :, ::-1, ::-1].transpose(2, 3, 1, 0))

    y = np.empty((n, oc, out_h, out_w), dtype=x.dtype)
    for a, (i0, li, pt, _, orows) in enumerate(rows_tab):
        for b, (j0, lj, pl, _, ocols) in enumerate(cols_tab):
            if li == 0 or lj == 0 or orows == 0 or ocols == 0:
                if orows and ocols:
                    y[:, :, a::s, b::s] = 0.0
                continue
            base = (pad_top - pt) * wp + (pad_lef - pl)
            ywide = _corr_wide(buf, wp, phase_taps(i0, li, j0, lj), orows, base)
            y[:, :, a::s, b::s] = ywide.reshape(n, oc, orows, wp)[:, :, :, :ocols]
    y += p.bias.data
    out = Tensor(y, dtype=x.dtype)

    def backward(g):
        db = g.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)
        dx = None
        dw = np.zeros_like(weight)
        for a, (i0, li, pt, pb, orows) in enumerate(rows_tab):
            for b, (j0, lj, pl, pr, ocols) in enumerate(cols_tab):
                if li == 0 or lj == 0 or orows == 0 or ocols == 0:
                    continue
                g_ph = np.ascontiguousarray(g[:, :, a::s, b::s])
                # data grad: correlate the phase grad with unreversed taps
                btaps = np.ascontiguousarray(
                    weight[:, :, i0::s, j0::s][:, :, :li, :lj].transpose(2, 3, 0, 1))
                gbuf, _, gwp = _pad_flat(g_ph, li - 1 - pt, li - 1 - pb,
                                         lj - 1 - pl, lj - 1 - pr, 2 * lj)
                dwide = _corr_wide(gbuf, gwp, btaps, m_h)
                part = dwide.reshape(n, ic, m_h, gwp)[:, :, :, :m_w]
                dx = np.ascontiguousarray(part) if dx is None else dx.__iadd__(part)
                # weight grad: wide GEMM against the shared input buffer
                gwide = _embed_wide(g_ph, wp)
                dtaps = _corr_weight_grad(buf, wp, gwide, li, lj,
                                          pad_top - pt, pad_lef - pl)
                dsub = dtaps[::-1, ::-1].transpose(3, 2, 0, 1)   # (ic, oc, li, lj)
                dw[:, :, i0::s, j0::s][:, :, :li, :lj] = dsub
        return dx, dw, db

    return _emit(out, (x, p.weight, p.bias), backward, "conv2d_transpose")


def pixel_shuffle(x: Tensor, a: int) -> Tensor:
    """Rearrange (n, c*a^2, h, w) into (n, c, a*h, a*w); a bijection on elements."""
    if a < 1:
        raise ShapeError(f"shuffle factor must be >= 1, got {a}")
    n, c, h, w = x.shape
    if c % (a * a):
        raise ShapeError(f"channel count {c} not divisible by {a}^2")
    c2 = c // (a * a)
    y = (x.data.reshape(n, c2, a, a, h, w)
         .transpose(0, 1, 4, 2, 5, 3)
         .reshape(n, c2, h * a, w * a))
    out = Tensor(np.ascontiguousarray(y), dtype=x.dtype)

    def backward(g):
        dx = (g.reshape(n, c2, h, a, w, a)
              .transpose(0, 1, 3, 5, 2, 4)
              .reshape(n, c, h, w))
        return (np.ascontiguousarray(dx),)

    return _emit(out, (x,), backward, "pixel_shuffle")


def concat_channels(xs: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis; backward splits at the same boundaries."""
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        tn, _, th, tw = t.shape
        if (tn, th, tw) != (n, h, w):
            raise ShapeError(
                f"concat_channels batch/spatial mismatch: {t.shape} vs {xs[0].shape}"
            )
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    bounds = np.cumsum([t.shape[1] for t in xs])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(part) for part in np.split(g, bounds, axis=1))

    return _emit(out, tuple(xs), backward, "concat_channels")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); gradient passes only where x > 0."""
    out = Tensor(np.maximum(x.data, 0), dtype=x.dtype)
    mask = x.data > 0

    def backward(g):
        return (_relu_grad(g, mask),)

    return _emit(out, (x,), backward, "relu")


def _relu_grad(g: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return g * mask


def add(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise sum of identically shaped tensors."""
    if x.shape != y.shape:
        raise ShapeError(f"add shape mismatch: {x.shape} vs {y.shape}")
    out = Tensor(x.data + y.data)

    def backward(g):
        return g, g

    return _emit(out, (x, y), backward, "add")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference as a (1,1,1,1) scalar; sub-gradient 0 at ties."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.abs(diff).mean().reshape(1, 1, 1, 1), dtype=diff.dtype)
    inv_n = 1.0 / diff.size

    def backward(g):
        s = np.sign(diff) * (float(g.reshape(())) * inv_n)
        return s, -s

    return _emit(out, (pred, target), backward, "l1_loss")


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements as a (1,1,1,1) scalar."""
    out = Tensor(x.data.sum().reshape(1, 1, 1, 1), dtype=x.dtype)

    def backward(g):
        return (np.full(x.shape, float(g.reshape(())), dtype=x.dtype),)

    return _emit(out, (x,), backward, "sum_all")
