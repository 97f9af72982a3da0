"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Design notes, in one place because every op below leans on them:

* Storage is float64 (complex128 for spectra). The finite-difference
  harness uses h = 1e-4 central differences with a 1e-4 relative bound;
  float32 storage leaves too little headroom between truncation and
  round-off error, so full precision is kept end to end.
* Complex tensors carry gradients in the pair convention
  g = dL/dRe(z) + i * dL/dIm(z). Under it, elementwise complex multiply
  has grad_A = conj(B) * G, the FFT pair below is exactly adjoint, and
  the hermitian symmetrizer is self-adjoint. Generic arithmetic ops are
  for real tensors; complex data flows only through the dedicated ops.
* Spatial ops use reflect padding; one convention everywhere.
* backward() accumulates into .grad, so a second call without zeroing
  adds gradients. Optimizers must clear grads between steps.
* relu and abs take the zero subgradient at 0.

Graphs are built implicitly: each Tensor keeps its parents and a closure
that maps the output gradient to parent gradients. backward() runs an
iterative topological sort, so deep graphs do not hit recursion limits.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    """Dense array node in a computation graph."""

    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind == "c":
            arr = arr.astype(np.complex128)
        else:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents
        )
        self.name = name

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + g

    def backward(self):
        """Populate .grad on every reachable node; self must be scalar."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        if self.data.dtype.kind == "c":
            raise ValueError("backward requires a real-valued loss")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bw(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return Tensor(out_data, parents=(a, b), backward=bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out_data = np.where(mask, x.data, 0.0)

    def bw(g):
        x._accumulate(g * mask)

    return Tensor(out_data, parents=(x,), backward=bw)


def absval(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.abs(x.data)
    s = np.sign(x.data)

    def bw(g):
        x._accumulate(g * s)

    return Tensor(out_data, parents=(x,), backward=bw)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError("log requires strictly positive input")
    out_data = np.log(x.data)

    def bw(g):
        x._accumulate(g / x.data)

    return Tensor(out_data, parents=(x,), backward=bw)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def bw(g):
        x._accumulate(g * out_data)

    return Tensor(out_data, parents=(x,), backward=bw)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("sqrt requires nonnegative input")
    out_data = np.sqrt(x.data)

    # clamp keeps the subgradient finite at exactly zero
    def bw(g):
        x._accumulate(g * 0.5 / np.maximum(out_data, 1e-8))

    return Tensor(out_data, parents=(x,), backward=bw)


def square(x) -> Tensor:
    x = as_tensor(x)
    return mul(x, x)


def softplus(x) -> Tensor:
    """log(1 + exp(x)), overflow-safe; derivative is the logistic sigmoid."""
    x = as_tensor(x)
    out_data = np.logaddexp(0.0, x.data)
    sig = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        x._accumulate(g * sig)

    return Tensor(out_data, parents=(x,), backward=bw)


# ---------------------------------------------------------------------------
# Shape plumbing


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor(out_data, parents=(x,), backward=bw)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def bw(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(a, b)
            t._accumulate(g[tuple(sl)])

    return Tensor(out_data, parents=tuple(tensors), backward=bw)


def roll_rows(x, shift: int) -> Tensor:
    """Cyclic shift along axis 0; used to pair rows with shuffled partners."""
    x = as_tensor(x)
    out_data = np.roll(x.data, shift, axis=0)

    def bw(g):
        x._accumulate(np.roll(g, -shift, axis=0))

    return Tensor(out_data, parents=(x,), backward=bw)


# ---------------------------------------------------------------------------
# Reductions


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(sorted(a % ndim for a in axis))


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    out_data = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return Tensor(out_data, parents=(x,), backward=bw)


def reduce_mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _axis_tuple(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    out_data = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        x._accumulate(np.broadcast_to(g / count, x.shape).copy())

    return Tensor(out_data, parents=(x,), backward=bw)


def reduce_max(x) -> Tensor:
    """Global maximum; the gradient flows to the first attaining element."""
    x = as_tensor(x)
    flat_idx = int(np.argmax(x.data))
    out_data = np.asarray(x.data.reshape(-1)[flat_idx])

    def bw(g):
        gx = np.zeros_like(x.data)
        gx.reshape(-1)[flat_idx] = np.sum(g)
        x._accumulate(gx)

    return Tensor(out_data, parents=(x,), backward=bw)


def softmax(x, axis=0) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - inner))

    return Tensor(out_data, parents=(x,), backward=bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul supports 2-d operands only")
    out_data = a.data @ b.data

    def bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return Tensor(out_data, parents=(a, b), backward=bw)


# ---------------------------------------------------------------------------
# Spatial ops (inputs are (C, H, W) or (H, W); reflect padding)


def _reflect_maps(h, w, ph, pw):
    iy = np.pad(np.arange(h), ph, mode="reflect") if ph else np.arange(h)
    ix = np.pad(np.arange(w), pw, mode="reflect") if pw else np.arange(w)
    return iy, ix


def _pad_adjoint(gpad, h, w, iy, ix):
    c = gpad.shape[0]
    gx = np.zeros((c, h, w))
    np.add.at(gx, (np.arange(c)[:, None, None], iy[:, None], ix[None, :]), gpad)
    return gx


def conv2d(x, w, b=None) -> Tensor:
    """Stride-1 same-size convolution, odd square kernels, reflect pad.

    x: (C_in, H, W); w: (C_out, C_in, k, k); b: (C_out,) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError("conv2d expects (C,H,W) input and (O,C,k,k) weight")
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ValueError("conv2d channel mismatch")
    if kh != kw or kh % 2 == 0:
        raise ValueError("conv2d supports odd square kernels")
    if b is not None and b.shape != (cout,):
        raise ValueError("conv2d bias shape mismatch")

    ph = pw = kh // 2
    iy, ix = _reflect_maps(h, wd, ph, pw)
    padded = x.data[:, iy[:, None], ix[None, :]]
    # (C, H, W, kh, kw) sliding windows over the padded plane
    cols = sliding_window_view(padded, (kh, kw), axis=(1, 2))
    cols_mat = cols.reshape(cin, h * wd, kh * kw)
    cols_mat = np.moveaxis(cols_mat, 1, 2).reshape(cin * kh * kw, h * wd)
    w_mat = w.data.reshape(cout, cin * kh * kw)
    out_data = (w_mat @ cols_mat).reshape(cout, h, wd)
    if b is not None:
        out_data = out_data + b.data[:, None, None]

    def bw(g):
        gmat = g.reshape(cout, h * wd)
        w._accumulate((gmat @ cols_mat.T).reshape(w.shape))
        if b is not None:
            b._accumulate(g.sum(axis=(1, 2)))
        gcols = (w_mat.T @ gmat).reshape(cin, kh, kw, h, wd)
        gpad = np.zeros((cin, h + 2 * ph, wd + 2 * pw))
        for dy in range(kh):
            for dx in range(kw):
                gpad[:, dy:dy + h, dx:dx + wd] += gcols[:, dy, dx]
        x._accumulate(_pad_adjoint(gpad, h, wd, iy, ix))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out_data, parents=parents, backward=bw)


def filter2d(x, kernel: np.ndarray) -> Tensor:
    """Depthwise correlation with one fixed 2-d kernel, reflect pad.

    The kernel is a plain array, not a graph node; gradients flow to x only.
    """
    x = as_tensor(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ValueError("filter2d kernel must be 2-d")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ValueError("filter2d expects (H,W) or (C,H,W) input")
    c, h, wd = xd.shape
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    iy, ix = _reflect_maps(h, wd, ph, pw)
    padded = xd[:, iy[:, None], ix[None, :]]
    out_data = np.zeros((c, h, wd))
    for dy in range(kh):
        for dx in range(kw):
            out_data += kernel[dy, dx] * padded[:, dy:dy + h, dx:dx + wd]

    def bw(g):
        g3 = g[None] if squeeze else g
        gpad = np.zeros((c, h + 2 * ph, wd + 2 * pw))
        for dy in range(kh):
            for dx in range(kw):
                gpad[:, dy:dy + h, dx:dx + wd] += kernel[dy, dx] * g3
        gx = _pad_adjoint(gpad, h, wd, iy, ix)
        x._accumulate(gx[0] if squeeze else gx)

    return Tensor(out_data[0] if squeeze else out_data, parents=(x,), backward=bw)


def avg_pool3(x) -> Tensor:
    """3x3 box average at stride 1 (shape preserving)."""
    return filter2d(x, np.full((3, 3), 1.0 / 9.0))


def avg_pool2(x) -> Tensor:
    """2x2 average pooling at stride 2, ceil mode (edges replicate)."""
    x = as_tensor(x)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ValueError("avg_pool2 expects (H,W) or (C,H,W) input")
    c, h, wd = xd.shape
    ho, wo = (h + 1) // 2, (wd + 1) // 2
    maps = []
    out_data = np.zeros((c, ho, wo))
    for dy in (0, 1):
        for dx in (0, 1):
            iy = np.minimum(2 * np.arange(ho) + dy, h - 1)
            ix = np.minimum(2 * np.arange(wo) + dx, wd - 1)
            maps.append((iy, ix))
            out_data += xd[:, iy[:, None], ix[None, :]]
    out_data *= 0.25

    def bw(g):
        g3 = g[None] if squeeze else g
        gx = np.zeros((c, h, wd))
        carr = np.arange(c)[:, None, None]
        for iy, ix in maps:
            np.add.at(gx, (carr, iy[:, None], ix[None, :]), 0.25 * g3)
        x._accumulate(gx[0] if squeeze else gx)

    return Tensor(out_data[0] if squeeze else out_data, parents=(x,), backward=bw)


def upsample2(x, out_hw=None) -> Tensor:
    """Nearest-neighbour 2x upsampling, optionally cropped to out_hw."""
    x = as_tensor(x)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ValueError("upsample2 expects (H,W) or (C,H,W) input")
    c, h, wd = xd.shape
    ho, wo = out_hw if out_hw is not None else (2 * h, 2 * wd)
    if not (h <= ho <= 2 * h and wd <= wo <= 2 * wd):
        raise ValueError("upsample2 target must lie within the 2x envelope")
    iy = np.minimum(np.arange(ho) // 2, h - 1)
    ix = np.minimum(np.arange(wo) // 2, wd - 1)
    out_data = xd[:, iy[:, None], ix[None, :]]

    def bw(g):
        g3 = g[None] if squeeze else g
        gx = np.zeros((c, h, wd))
        np.add.at(gx, (np.arange(c)[:, None, None], iy[:, None], ix[None, :]), g3)
        x._accumulate(gx[0] if squeeze else gx)

    return Tensor(out_data[0] if squeeze else out_data, parents=(x,), backward=bw)


# ---------------------------------------------------------------------------
# Spectral ops (FFT over the last two axes)


def fft2(x) -> Tensor:
    """Unnormalized 2-d DFT of a real tensor; complex output."""
    x = as_tensor(x)
    if x.data.dtype.kind == "c":
        raise ValueError("fft2 expects real input")
    h, w = x.shape[-2], x.shape[-1]
    out_data = np.fft.fft2(x.data, axes=(-2, -1))

    def bw(g):
        x._accumulate(h * w * np.real(np.fft.ifft2(g, axes=(-2, -1))))

    return Tensor(out_data, parents=(x,), backward=bw)


def ifft2_real(z) -> Tensor:
    """Real part of the normalized inverse 2-d DFT."""
    z = as_tensor(z)
    out_data = np.real(np.fft.ifft2(z.data, axes=(-2, -1)))

    def bw(g):
        z._accumulate(np.conj(np.fft.ifft2(g, axes=(-2, -1))))

    return Tensor(out_data, parents=(z,), backward=bw)


def make_complex(re, im) -> Tensor:
    re, im = as_tensor(re), as_tensor(im)
    if re.shape != im.shape:
        raise ValueError("real and imaginary parts must share a shape")
    out_data = re.data + 1j * im.data

    def bw(g):
        re._accumulate(np.real(g))
        im._accumulate(np.imag(g))

    return Tensor(out_data, parents=(re, im), backward=bw)


def complex_mul(a, b) -> Tensor:
    """Elementwise complex product; grads follow the pair convention."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        a._accumulate(_unbroadcast(np.conj(b.data) * g, a.shape))
        b._accumulate(_unbroadcast(np.conj(a.data) * g, b.shape))

    return Tensor(out_data, parents=(a, b), backward=bw)


def _freq_flip(z: np.ndarray) -> np.ndarray:
    # index negation k -> -k mod N on the last two axes
    out = z[..., ::-1, ::-1]
    return np.roll(out, (1, 1), axis=(-2, -1))


def hermitian_symmetrize(z) -> Tensor:
    """Project a spectrum onto the hermitian subspace: 0.5(z + conj(z(-k))).

    The result is the spectrum of a real signal; the map is self-adjoint,
    so the backward pass applies the identical projection to the gradient.
    """
    z = as_tensor(z)
    out_data = 0.5 * (z.data + np.conj(_freq_flip(z.data)))

    def bw(g):
        z._accumulate(0.5 * (g + np.conj(_freq_flip(g))))

    return Tensor(out_data, parents=(z,), backward=bw)


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Standard Adam with bias correction; aborts on non-finite gradients."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = [p for p in params if p.requires_grad]
        if not self.params:
            raise ValueError("optimizer needs at least one trainable tensor")
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                label = p.name or f"param[{i}]"
                raise RuntimeError(f"non-finite gradient in {label}; aborting update")
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            m_hat = self.m[i] / (1 - self.b1 ** self.t)
            v_hat = self.v[i] / (1 - self.b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
