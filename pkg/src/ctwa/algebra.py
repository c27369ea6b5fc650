"""Complete operator bases on clusters and their structure constants.

Two bases are provided: the Pauli-string basis (normalization
Tr[X_a X_b] = 2^n delta_ab, X_0 = identity) used for the phase-space
coordinates, and a unit-normalized rank-1 basis built from reference
states (Tr[Y_a Y_b] = delta_ab) that makes the Gaussian sampling rule
transparent.  Structure constants are defined by

    [X_a, X_b] = i f_{abc} X_c

and for Pauli strings every (a, b) pair has at most one partner
c = a XOR b with f in {+2, -2}.  Tables are cached on disk in a small
checksummed binary format because rebuilds at 6-site clusters are
noticeably slow.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pauli

_MAGIC = b"CTWAFTBL"
_VERSION = 1
_KIND_CODES = {"pauli": 0, "rank1": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


class StructureCacheError(RuntimeError):
    """Raised when a structure-constant cache file fails validation."""


class ClusterBasis:
    """Pauli-string operator basis on a cluster of n spin-1/2 sites."""

    def __init__(self, n_sites: int):
        if not 1 <= n_sites <= 8:
            raise ValueError(f"cluster size {n_sites} outside supported range 1..8")
        self.n_sites = n_sites
        self.dim = 4**n_sites
        self.state_dim = 2**n_sites
        self.xmasks, self.zmasks = pauli.mask_table(n_sites)

    def index(self, label: str) -> int:
        if len(label) != self.n_sites:
            raise ValueError(f"label {label!r} has {len(label)} letters, need {self.n_sites}")
        return pauli.index_from_label(label)

    def label(self, alpha: int) -> str:
        return pauli.label_from_index(alpha, self.n_sites)

    def matrix(self, alpha: int) -> np.ndarray:
        return pauli.pauli_matrix(alpha, self.n_sites)

    def f(self, alpha: int, beta: int) -> float:
        return pauli.f_scalar(alpha, beta, self.n_sites)

    def f_column(self, beta: int) -> np.ndarray:
        return pauli.f_column(beta, self.xmasks, self.zmasks)

    def apply_tables(self, alphas) -> tuple[np.ndarray, np.ndarray]:
        return pauli.apply_tables(alphas, self.n_sites)

    def weight(self, alpha: int) -> int:
        return pauli.weight(alpha, self.n_sites)

    def single_site_index(self, position: int, letter: str) -> int:
        """Index of the weight-1 operator with `letter` at `position`."""
        if not 0 <= position < self.n_sites:
            raise ValueError(f"position {position} outside cluster of {self.n_sites}")
        label = ["I"] * self.n_sites
        label[position] = letter
        return self.index("".join(label))

    def structure_table(self, cache_dir: str | os.PathLike | None = None) -> "StructureTable":
        return structure_table_for(self, cache_dir=cache_dir)


@dataclass(frozen=True)
class StructureTable:
    """Nonzero structure constants, stored once per unordered pair (a < b)."""

    basis_kind: str
    n_sites: int
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    f: np.ndarray

    def __len__(self) -> int:
        return len(self.alpha)

    def as_dict(self) -> dict[tuple[int, int], tuple[int, float]]:
        """Full antisymmetric lookup {(a, b): (c, f)} including b < a."""
        out: dict[tuple[int, int], tuple[int, float]] = {}
        for a, b, g, v in zip(self.alpha, self.beta, self.gamma, self.f):
            out[(int(a), int(b))] = (int(g), float(v))
            out[(int(b), int(a))] = (int(g), -float(v))
        return out


def _build_pauli_table(basis: ClusterBasis) -> StructureTable:
    alphas_out = []
    betas_out = []
    fs_out = []
    all_alphas = np.arange(basis.dim, dtype=np.int64)
    for beta in range(1, basis.dim):
        col = basis.f_column(beta)
        keep = (col != 0.0) & (all_alphas < beta)
        if keep.any():
            a = all_alphas[keep]
            alphas_out.append(a)
            betas_out.append(np.full(len(a), beta, dtype=np.int64))
            fs_out.append(col[keep])
    alpha = np.concatenate(alphas_out)
    beta = np.concatenate(betas_out)
    f = np.concatenate(fs_out)
    order = np.lexsort((beta, alpha))
    return StructureTable(
        basis_kind="pauli",
        n_sites=basis.n_sites,
        alpha=alpha[order],
        beta=beta[order],
        gamma=alpha[order] ^ beta[order],
        f=f[order],
    )


_RECORD_DTYPE = np.dtype([("alpha", "<u4"), ("beta", "<u4"), ("gamma", "<u4"), ("f", "<f8")])


def save_structure_table(path: str | os.PathLike, table: StructureTable) -> None:
    records = np.empty(len(table), dtype=_RECORD_DTYPE)
    records["alpha"] = table.alpha
    records["beta"] = table.beta
    records["gamma"] = table.gamma
    records["f"] = table.f
    payload = records.tobytes()
    header = struct.pack(
        "<8sHBBQ", _MAGIC, _VERSION, _KIND_CODES[table.basis_kind], table.n_sites, len(table)
    )
    tmp = Path(path).with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))
    os.replace(tmp, path)


def load_structure_table(path: str | os.PathLike) -> StructureTable:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize("<8sHBBQ")
    if len(raw) < head_size + 4:
        raise StructureCacheError(f"{path}: truncated header")
    magic, version, kind_code, n_sites, count = struct.unpack("<8sHBBQ", raw[:head_size])
    if magic != _MAGIC:
        raise StructureCacheError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise StructureCacheError(f"{path}: unsupported version {version}")
    if kind_code not in _KIND_NAMES:
        raise StructureCacheError(f"{path}: unknown basis kind {kind_code}")
    payload = raw[head_size:-4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc:
        raise StructureCacheError(f"{path}: checksum mismatch")
    if len(payload) != count * _RECORD_DTYPE.itemsize:
        raise StructureCacheError(f"{path}: record count disagrees with payload size")
    records = np.frombuffer(payload, dtype=_RECORD_DTYPE)
    alpha = records["alpha"].astype(np.int64)
    beta = records["beta"].astype(np.int64)
    if np.any(alpha >= beta):
        raise StructureCacheError(f"{path}: records must satisfy alpha < beta")
    return StructureTable(
        basis_kind=_KIND_NAMES[kind_code],
        n_sites=int(n_sites),
        alpha=alpha,
        beta=beta,
        gamma=records["gamma"].astype(np.int64),
        f=records["f"].astype(np.float64),
    )


def default_cache_dir() -> Path:
    env = os.environ.get("CTWA_CACHE_DIR")
    if env:
        return Path(env)
    xdg = os.environ.get("XDG_CACHE_HOME")
    base = Path(xdg) if xdg else Path.home() / ".cache"
    return base / "ctwa"


def structure_table_for(
    basis: ClusterBasis, cache_dir: str | os.PathLike | None = None
) -> StructureTable:
    """Build (or load from cache) the Pauli structure-constant table."""
    if cache_dir is None and os.environ.get("CTWA_CACHE_DIR"):
        cache_dir = default_cache_dir()
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"f_pauli_{basis.n_sites}.ctwa"
        if path.exists():
            try:
                cached = load_structure_table(path)
            except StructureCacheError:
                path.unlink()
            else:
                if cached.n_sites == basis.n_sites and cached.basis_kind == "pauli":
                    return cached
    table = _build_pauli_table(basis)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_structure_table(path, table)
    return table


class YBasis:
    """Unit-normalized rank-1 Hermitian basis over D reference states.

    Ordering: D diagonal projectors |n><n| first, then for each pair
    n > m the symmetric (|n><m| + |m><n|)/sqrt(2) followed by the
    antisymmetric i(|n><m| - |m><n|)/sqrt(2).
    """

    def __init__(self, state_dim: int):
        if not 2 <= state_dim <= 16:
            raise ValueError(f"state dimension {state_dim} outside supported range 2..16")
        self.state_dim = state_dim
        self.dim = state_dim**2
        self._pairs = [(n, m) for n in range(1, state_dim) for m in range(n)]

    def element(self, a: int) -> tuple[str, int, int]:
        """(kind, n, m) of element a; kind is 'diag', 'plus' or 'minus'."""
        d = self.state_dim
        if not 0 <= a < self.dim:
            raise ValueError(f"index {a} outside basis of dimension {self.dim}")
        if a < d:
            return ("diag", a, a)
        pair_index, parity = divmod(a - d, 2)
        n, m = self._pairs[pair_index]
        return ("plus" if parity == 0 else "minus", n, m)

    def index(self, kind: str, n: int, m: int = -1) -> int:
        if kind == "diag":
            return n
        rank = self._pairs.index((n, m))
        return self.state_dim + 2 * rank + (0 if kind == "plus" else 1)

    def matrix(self, a: int) -> np.ndarray:
        kind, n, m = self.element(a)
        out = np.zeros((self.state_dim, self.state_dim), dtype=complex)
        if kind == "diag":
            out[n, n] = 1.0
        elif kind == "plus":
            out[n, m] = out[m, n] = 1.0 / np.sqrt(2.0)
        else:
            out[n, m] = 1.0j / np.sqrt(2.0)
            out[m, n] = -1.0j / np.sqrt(2.0)
        return out

    def structure_table(self) -> dict[tuple[int, int], list[tuple[int, float]]]:
        """Sparse {(a, b): [(c, f_abc), ...]} for a < b; dense D <= 8 only."""
        if self.state_dim > 8:
            raise ValueError("rank-1 structure constants limited to state_dim <= 8")
        mats = [self.matrix(a) for a in range(self.dim)]
        out: dict[tuple[int, int], list[tuple[int, float]]] = {}
        for a in range(self.dim):
            for b in range(a + 1, self.dim):
                comm = mats[a] @ mats[b] - mats[b] @ mats[a]
                if not comm.any():
                    continue
                entries = []
                for c in range(self.dim):
                    val = -1j * np.trace(comm @ mats[c])
                    if abs(val) > 1e-14:
                        entries.append((c, float(val.real)))
                if entries:
                    out[(a, b)] = entries
        return out


def frame_conversion(basis: ClusterBasis, ybasis: YBasis) -> np.ndarray:
    """Real matrix C with x_alpha = C @ y, C[alpha, a] = Tr[Y_a X_alpha].

    Valid because x_alpha = Tr[M X_alpha] and M = sum_a y_a Y_a with the
    Y frame unit-normalized.
    """
    if ybasis.state_dim != basis.state_dim:
        raise ValueError("state dimensions of the two frames disagree")
    conv = np.empty((basis.dim, ybasis.dim))
    for a in range(ybasis.dim):
        ymat = ybasis.matrix(a)
        for alpha in range(basis.dim):
            conv[alpha, a] = np.trace(ymat @ basis.matrix(alpha)).real
    return conv


def adjoint_rotation(basis: ClusterBasis, unitary: np.ndarray) -> np.ndarray:
    """Orthogonal matrix R with x'_alpha = sum_beta R[alpha, beta] x_beta.

    R[alpha, beta] = Tr[U^dag X_alpha U X_beta] / 2^n, i.e. the adjoint
    action of U on the coordinate vector: rotating the sampled state by
    U is the same as rotating sampled coordinates by R.  Dense matrices
    throughout, so restricted to clusters of at most 4 sites.
    """
    if basis.n_sites > 4:
        raise ValueError("adjoint_rotation materializes dense operators; use <= 4 sites")
    dim, sdim = basis.dim, basis.state_dim
    unitary = np.asarray(unitary, dtype=complex)
    if unitary.shape != (sdim, sdim):
        raise ValueError(f"unitary must be {sdim}x{sdim}")
    xs = np.stack([basis.matrix(a) for a in range(dim)])
    rotated = np.einsum("ij,ajk,kl->ail", unitary.conj().T, xs, unitary)
    r = np.einsum("aij,bji->ab", rotated, xs).real / sdim
    return r
