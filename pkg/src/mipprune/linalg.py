"""Dense matrix kernels and the lowering of 2-D convolution to matrix form.

Convolution layers in this package are rewritten once, at model build time,
as a single dense matrix acting on the flattened input image.  Every
downstream consumer (forward pass, interval propagation, the mixed-integer
encoding) therefore only ever deals with one layer shape: y = W x + b.

The lowering assembles small Toeplitz matrices, one per kernel row, into a
doubly blocked Toeplitz matrix whose action on vec(input) is the full 2-D
convolution; padded outputs are obtained by selecting the appropriate rows
and columns.  The layers compute true convolution (kernel flipped), not
cross-correlation, and the trainer uses the same convention so training and
encoding agree exactly.

All kernels here are pure functions on immutable inputs and use fixed
left-to-right summation (einsum without BLAS dispatch) so results are
bit-reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, UnsupportedFeature

__all__ = ["ConvSpec", "as_matrix", "toeplitz_1d", "conv_to_matrix", "matvec", "matmat"]


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate and return a dense float64 matrix.

    Rejects non-2-D shapes, NaN and infinity; optionally enforces dimensions.
    Returns a C-contiguous copy so callers can treat the result as immutable.
    """
    m = np.array(data, dtype=np.float64, order="C")
    if m.ndim != 2:
        raise InvalidArgument(f"matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgument("matrix entries must be finite")
    if rows is not None and m.shape[0] != rows:
        raise InvalidArgument(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise InvalidArgument(f"expected {cols} cols, got {m.shape[1]}")
    return m


@dataclass(frozen=True)
class ConvSpec:
    """Shape parameters of a 2-D convolution layer.

    ``padding`` is the number of zero pixels added on every side of the
    input.  Only stride 1 is supported; larger strides are rejected rather
    than silently decomposed.
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    input_h: int
    input_w: int
    padding: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.stride != 1:
            raise UnsupportedFeature(f"stride must be 1, got {self.stride}")
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "input_h", "input_w"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.padding < 0:
            raise InvalidArgument("padding must be >= 0")
        if self.kernel_h > self.padded_h or self.kernel_w > self.padded_w:
            raise InvalidArgument("kernel dims exceed padded input dims")

    @property
    def padded_h(self) -> int:
        return self.input_h + 2 * self.padding

    @property
    def padded_w(self) -> int:
        return self.input_w + 2 * self.padding

    @property
    def output_h(self) -> int:
        return self.padded_h - self.kernel_h + 1

    @property
    def output_w(self) -> int:
        return self.padded_w - self.kernel_w + 1

    @property
    def input_size(self) -> int:
        return self.in_channels * self.input_h * self.input_w

    @property
    def output_size(self) -> int:
        return self.out_channels * self.output_h * self.output_w


def toeplitz_1d(sequence, n_cols: int) -> np.ndarray:
    """Toeplitz matrix with ``sequence`` as first column, shifted down per column.

    The result has ``len(sequence) + n_cols - 1`` rows (the sequence is
    zero-extended above and below), so ``M @ x`` is the full 1-D convolution
    of ``sequence`` with a length ``n_cols`` vector ``x``.
    """
    seq = np.asarray(sequence, dtype=np.float64).ravel()
    if seq.size == 0:
        raise InvalidArgument("sequence must be non-empty")
    if n_cols < 1:
        raise InvalidArgument("n_cols must be >= 1")
    k = seq.size
    out = np.zeros((k + n_cols - 1, n_cols), dtype=np.float64)
    for j in range(n_cols):
        out[j : j + k, j] = seq
    return out


def _full_conv_matrix(kernel: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Doubly blocked Toeplitz matrix computing the full 2-D convolution.

    Block column i holds the Toeplitz matrix of kernel row d at block row
    i + d, mirroring how a 1-D Toeplitz matrix is built from a sequence.
    """
    kh, kw = kernel.shape
    out_h = in_h + kh - 1
    out_w = in_w + kw - 1
    blocks = [toeplitz_1d(kernel[d], in_w) for d in range(kh)]
    m = np.zeros((out_h * out_w, in_h * in_w), dtype=np.float64)
    for i in range(in_h):
        for d in range(kh):
            r = (i + d) * out_w
            c = i * in_w
            m[r : r + out_w, c : c + in_w] = blocks[d]
    return m


def _pad_select(spec: ConvSpec, m_full_padded: np.ndarray) -> np.ndarray:
    """Restrict the padded-input full-convolution matrix to the layer's output.

    Columns for the zero padding are dropped; rows are selected so the output
    covers exactly the stride-1 window positions of the padded input.
    """
    hp, wp = spec.padded_h, spec.padded_w
    fw = wp + spec.kernel_w - 1
    p = spec.padding
    # columns: positions of the original image inside the zero-padded image
    cols = np.array(
        [(r + p) * wp + (c + p) for r in range(spec.input_h) for c in range(spec.input_w)],
        dtype=np.intp,
    )
    # rows: the "valid" region of the full convolution over the padded image
    r0 = spec.kernel_h - 1
    c0 = spec.kernel_w - 1
    rows = np.array(
        [(r0 + r) * fw + (c0 + c) for r in range(spec.output_h) for c in range(spec.output_w)],
        dtype=np.intp,
    )
    return m_full_padded[np.ix_(rows, cols)]


def conv_to_matrix(kernels, spec: ConvSpec) -> np.ndarray:
    """Lower a convolution to one dense matrix on the flattened input.

    ``kernels`` has shape (out_channels, in_channels, kernel_h, kernel_w).
    The returned matrix M has shape (spec.output_size, spec.input_size) and
    satisfies M @ vec(x) == vec(conv(x)) where conv is true convolution
    (flipped kernel) with ``spec.padding`` zeros per side and stride 1.
    Input and output vectors are laid out channel-major, row-major inside
    each channel.
    """
    if spec.stride != 1:
        raise UnsupportedFeature(f"stride must be 1, got {spec.stride}")
    k = np.asarray(kernels, dtype=np.float64)
    expect = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
    if k.shape != expect:
        raise InvalidArgument(f"kernel shape {k.shape} does not match spec {expect}")
    if not np.all(np.isfinite(k)):
        raise InvalidArgument("kernel entries must be finite")

    out = np.zeros((spec.output_size, spec.input_size), dtype=np.float64)
    ohw = spec.output_h * spec.output_w
    ihw = spec.input_h * spec.input_w
    for oc in range(spec.out_channels):
        for ic in range(spec.in_channels):
            full = _full_conv_matrix(k[oc, ic], spec.padded_h, spec.padded_w)
            block = _pad_select(spec, full)
            out[oc * ohw : (oc + 1) * ohw, ic * ihw : (ic + 1) * ihw] = block
    return out


def matvec(m: np.ndarray, v) -> np.ndarray:
    """Matrix-vector product with fixed left-to-right accumulation per row."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if m.ndim != 2 or m.shape[1] != v.size:
        raise InvalidArgument(f"dimension mismatch: {m.shape} @ ({v.size},)")
    return np.einsum("ij,j->i", m, v, optimize=False)


def matmat(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-matrix product with the same deterministic accumulation as matvec."""
    if m.ndim != 2 or x.ndim != 2 or m.shape[1] != x.shape[0]:
        raise InvalidArgument(f"dimension mismatch: {m.shape} @ {x.shape}")
    return np.einsum("ij,jk->ik", m, x, optimize=False)
