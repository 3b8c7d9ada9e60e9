"""Numba kernels with a fixed accumulation order.

Every output element is accumulated left to right over the inner index, one
product at a time, so results are bit-identical to a naive float32 triple loop
and independent of the machine's BLAS or thread count.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def _matmul_f32(a, b, c):
    m, k = a.shape
    n = b.shape[1]
    for i in range(m):
        for t in range(k):
            ait = a[i, t]
            for j in range(n):
                c[i, j] += ait * b[t, j]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    c = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    _matmul_f32(a, b, c)
    return c


@numba.njit(cache=True)
def _sum_rows_f32(a, out):
    rows, cols = a.shape
    for r in range(rows):
        for j in range(cols):
            out[j] += a[r, j]


def sum_rows(a: np.ndarray) -> np.ndarray:
    """Sum a 2-D array over its first axis, row after row."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    out = np.zeros(a.shape[1], dtype=np.float32)
    _sum_rows_f32(a, out)
    return out


def sum_all(a: np.ndarray) -> np.float32:
    flat = np.ascontiguousarray(a, dtype=np.float32).reshape(-1, 1)
    return sum_rows(flat)[0]
