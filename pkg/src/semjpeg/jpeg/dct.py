"""Orthonormal 8x8 type-II DCT and its inverse, vectorized over leading axes."""

import numpy as np


def _basis() -> np.ndarray:
    k = np.arange(8)[:, None]
    n = np.arange(8)[None, :]
    c = np.cos((2 * n + 1) * k * np.pi / 16) * np.sqrt(2 / 8)
    c[0] /= np.sqrt(2)
    return c


BASIS = _basis()


def fdct8x8(blocks: np.ndarray) -> np.ndarray:
    """Coefficients C X C^T for every trailing 8x8 block."""
    blocks = np.asarray(blocks, dtype=np.float64)
    return BASIS @ blocks @ BASIS.T


def idct8x8(coefs: np.ndarray) -> np.ndarray:
    coefs = np.asarray(coefs, dtype=np.float64)
    return BASIS.T @ coefs @ BASIS


# IJG "accurate integer" IDCT (13-bit constants, 2 extra bits between passes)
_CONST_BITS = 13
_PASS1_BITS = 2
_F0_298 = 2446
_F0_390 = 3196
_F0_541 = 4433
_F0_765 = 6270
_F0_899 = 7373
_F1_175 = 9633
_F1_501 = 12299
_F1_847 = 15137
_F1_961 = 16069
_F2_053 = 16819
_F2_562 = 20995
_F3_072 = 25172


def _descale(x, n):
    return (x + (1 << (n - 1))) >> n


def _idct_1d(v, shift_out: int):
    """One butterfly pass along axis -2 of int64 (..., 8, k) data."""
    z2, z3 = v[..., 2, :], v[..., 6, :]
    z1 = (z2 + z3) * _F0_541
    tmp2 = z1 - z3 * _F1_847
    tmp3 = z1 + z2 * _F0_765
    tmp0 = (v[..., 0, :] + v[..., 4, :]) << _CONST_BITS
    tmp1 = (v[..., 0, :] - v[..., 4, :]) << _CONST_BITS
    tmp10, tmp13 = tmp0 + tmp3, tmp0 - tmp3
    tmp11, tmp12 = tmp1 + tmp2, tmp1 - tmp2

    t0, t1, t2, t3 = v[..., 7, :], v[..., 5, :], v[..., 3, :], v[..., 1, :]
    z1, z2, z3, z4 = t0 + t3, t1 + t2, t0 + t2, t1 + t3
    z5 = (z3 + z4) * _F1_175
    t0 = t0 * _F0_298
    t1 = t1 * _F2_053
    t2 = t2 * _F3_072
    t3 = t3 * _F1_501
    z1 = z1 * -_F0_899
    z2 = z2 * -_F2_562
    z3 = z3 * -_F1_961 + z5
    z4 = z4 * -_F0_390 + z5
    t0 += z1 + z3
    t1 += z2 + z4
    t2 += z2 + z3
    t3 += z1 + z4
    out = np.stack([tmp10 + t3, tmp11 + t2, tmp12 + t1, tmp13 + t0,
                    tmp13 - t0, tmp12 - t1, tmp11 - t2, tmp10 - t3], axis=-2)
    return _descale(out, shift_out)


def idct8x8_islow(coefs: np.ndarray) -> np.ndarray:
    """Integer IDCT of dequantized (..., 8, 8) coefficients, bit-exact with
    the IJG islow method; returns level-shifted samples clamped to 0..255."""
    c = np.asarray(coefs, dtype=np.int64)
    cols = _idct_1d(c, _CONST_BITS - _PASS1_BITS)  # columns: transform along rows axis
    rows = _idct_1d(np.swapaxes(cols, -1, -2), _CONST_BITS + _PASS1_BITS + 3)
    return np.clip(np.swapaxes(rows, -1, -2) + 128, 0, 255)
