"""Pauli-string algebra on spin-1/2 clusters.

Operators are labelled by strings like "xIz" (one letter per site, first
site leftmost) and indexed in base 4 with the first site as the most
significant digit.  A string is stored as a pair of bitmasks (xmask,
zmask) under the convention

    P = i^{popcount(xmask & zmask)} * X^xmask * Z^zmask,

which makes every string Hermitian with matrix entries in {+-1, +-i}.
The letter values I=0, x=1, y=2, z=3 map GF(2)-linearly onto the mask
bits, so the basis index of a product (up to phase) is the bitwise XOR
of the factor indices.

State indices use the matching bit order: bit (n-1-p) of a basis state
records whether site p is flipped, so state 0 is all-up and the first
site is the most significant bit.
"""

from __future__ import annotations

import numpy as np

LETTERS = "Ixyz"
_LETTER_INDEX = {c: i for i, c in enumerate(LETTERS)}

# xbit/zbit of each letter: I -> (0,0), x -> (1,0), y -> (1,1), z -> (0,1)
_XBIT = (0, 1, 1, 0)
_ZBIT = (0, 0, 1, 1)

SINGLE_SITE = {
    "I": np.eye(2, dtype=complex),
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


def index_from_label(label: str) -> int:
    """Base-4 index of a letter string, first site most significant."""
    alpha = 0
    for ch in label:
        try:
            alpha = alpha * 4 + _LETTER_INDEX[ch]
        except KeyError:
            raise ValueError(f"bad Pauli letter {ch!r} in {label!r}") from None
    return alpha


def label_from_index(alpha: int, n_sites: int) -> str:
    out = []
    for p in range(n_sites):
        digit = (alpha >> (2 * (n_sites - 1 - p))) & 3
        out.append(LETTERS[digit])
    return "".join(out)


def masks_from_index(alpha: int, n_sites: int) -> tuple[int, int]:
    """(xmask, zmask) of operator alpha; mask bit d belongs to site n-1-d."""
    x = z = 0
    for d in range(n_sites):
        v = (alpha >> (2 * d)) & 3
        x |= _XBIT[v] << d
        z |= _ZBIT[v] << d
    return x, z


def index_from_masks(x: int, z: int, n_sites: int) -> int:
    alpha = 0
    for d in range(n_sites):
        xb = (x >> d) & 1
        zb = (z >> d) & 1
        # invert the (xbit, zbit) map: letter bits are b0 = xb ^ zb? no:
        # xbit = b0 xor b1, zbit = b1  =>  b1 = zb, b0 = xb xor zb
        v = ((xb ^ zb) | (zb << 1))
        alpha |= v << (2 * d)
    return alpha


def mask_table(n_sites: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (xmask, zmask) arrays over all 4**n operator indices."""
    alphas = np.arange(4**n_sites, dtype=np.uint64)
    x = np.zeros_like(alphas)
    z = np.zeros_like(alphas)
    xlut = np.array(_XBIT, dtype=np.uint64)
    zlut = np.array(_ZBIT, dtype=np.uint64)
    for d in range(n_sites):
        v = (alphas >> np.uint64(2 * d)) & np.uint64(3)
        x |= xlut[v] << np.uint64(d)
        z |= zlut[v] << np.uint64(d)
    return x, z


def _popcount(a):
    return np.bitwise_count(np.asarray(a, dtype=np.uint64)).astype(np.int64)


def phase_exponent(x1, z1, x2, z2):
    """Power of i in P1 @ P2 = i^e * P3, elementwise over arrays.

    e = c1 + c2 - c3 + 2*|z1 & x2| (mod 4) with c = |x & z| of each string.
    """
    x1 = np.asarray(x1, dtype=np.uint64)
    z1 = np.asarray(z1, dtype=np.uint64)
    x2 = np.asarray(x2, dtype=np.uint64)
    z2 = np.asarray(z2, dtype=np.uint64)
    c1 = _popcount(x1 & z1)
    c2 = _popcount(x2 & z2)
    c3 = _popcount((x1 ^ x2) & (z1 ^ z2))
    return (c1 + c2 - c3 + 2 * _popcount(z1 & x2)) % 4


_I_POWERS = np.array([1.0, 1.0j, -1.0, -1.0j])


def product(alpha: int, beta: int, n_sites: int) -> tuple[int, complex]:
    """(gamma, phase) with X_alpha X_beta = phase * X_gamma."""
    x1, z1 = masks_from_index(alpha, n_sites)
    x2, z2 = masks_from_index(beta, n_sites)
    e = int(phase_exponent(x1, z1, x2, z2))
    return alpha ^ beta, complex(_I_POWERS[e])


def commutes(alpha: int, beta: int, n_sites: int) -> bool:
    x1, z1 = masks_from_index(alpha, n_sites)
    x2, z2 = masks_from_index(beta, n_sites)
    return (int(_popcount(x1 & z2)) + int(_popcount(z1 & x2))) % 2 == 0


def f_scalar(alpha: int, beta: int, n_sites: int) -> float:
    """Structure constant f with [X_a, X_b] = i f X_{a^b} (0 if commuting)."""
    x1, z1 = masks_from_index(alpha, n_sites)
    x2, z2 = masks_from_index(beta, n_sites)
    e = int(phase_exponent(x1, z1, x2, z2))
    if e == 1:
        return 2.0
    if e == 3:
        return -2.0
    return 0.0


def f_column(beta: int, xmasks: np.ndarray, zmasks: np.ndarray) -> np.ndarray:
    """f_{alpha, beta, alpha^beta} for every alpha, as a float vector.

    xmasks/zmasks are the full tables from mask_table; the column drives
    the equation-of-motion contraction dx_alpha += f * h_beta * x_{alpha^beta}.
    """
    xb = xmasks[beta]
    zb = zmasks[beta]
    e = phase_exponent(xmasks, zmasks, xb, zb)
    out = np.zeros(len(xmasks))
    out[e == 1] = 2.0
    out[e == 3] = -2.0
    return out


def pauli_matrix(alpha: int, n_sites: int) -> np.ndarray:
    """Dense 2^n x 2^n matrix of X_alpha in the cluster state basis."""
    dim = 1 << n_sites
    x, z = masks_from_index(alpha, n_sites)
    c = int(_popcount(x & z))
    m = np.arange(dim)
    col_phase = _I_POWERS[c % 4] * np.where(_popcount(z & m.astype(np.uint64)) % 2, -1.0, 1.0)
    mat = np.zeros((dim, dim), dtype=complex)
    mat[m ^ x, m] = col_phase
    return mat


def apply_tables(alphas, n_sites: int) -> tuple[np.ndarray, np.ndarray]:
    """Permutation/phase tables so that (X_a psi)[m] = phase[a,m] * psi[perm[a,m]].

    perm[a, m] = m ^ xmask_a and phase[a, m] is the matrix entry
    <m| X_a |perm[a, m]>.  Shapes (len(alphas), 2^n).
    """
    alphas = np.asarray(alphas, dtype=np.int64)
    dim = 1 << n_sites
    m = np.arange(dim, dtype=np.uint64)
    perm = np.empty((len(alphas), dim), dtype=np.int64)
    phase = np.empty((len(alphas), dim), dtype=complex)
    for k, a in enumerate(alphas):
        x, z = masks_from_index(int(a), n_sites)
        c = int(_popcount(x & z))
        src = m ^ np.uint64(x)
        perm[k] = src.astype(np.int64)
        phase[k] = _I_POWERS[c % 4] * np.where(_popcount(np.uint64(z) & src) % 2, -1.0, 1.0)
    return perm, phase


def weight(alpha: int, n_sites: int) -> int:
    """Number of sites on which the operator acts non-trivially."""
    x, z = masks_from_index(alpha, n_sites)
    return int(_popcount(x | z))


def support_sites(alpha: int, n_sites: int) -> tuple[int, ...]:
    """Positions (0-indexed from the first site) with a non-identity letter."""
    x, z = masks_from_index(alpha, n_sites)
    mask = x | z
    return tuple(p for p in range(n_sites) if (mask >> (n_sites - 1 - p)) & 1)
