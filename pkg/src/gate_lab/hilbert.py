"""Composite Hilbert space of two four-level ions and truncated motional modes.

Global ordering is ion1 (x) ion2 (x) mode1 (x) mode2, slowest to fastest index.
Each ion carries the bare levels in the fixed order |0>, |0'>, |-1>, |+1>.
The dressed basis reuses the same slots as |u>, |0'>, |d>, |D>, so |0'> keeps
its index under the dressed transform.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SPIN_LEVELS = ("0", "0'", "-1", "+1")
DRESSED_LEVELS = ("u", "0'", "d", "D")
SPARSE_THRESHOLD = 512

_S = 1.0 / math.sqrt(2.0)
# rows: dressed states in slot order (u, 0', d, D); columns: bare (0, 0', -1, +1)
DRESSED_MATRIX = np.array(
    [
        [_S, 0.0, 0.5, 0.5],
        [0.0, 1.0, 0.0, 0.0],
        [-_S, 0.0, 0.5, 0.5],
        [0.0, 0.0, -_S, _S],
    ]
)

_BARE_INDEX = {name: i for i, name in enumerate(SPIN_LEVELS)}


class LayoutError(ValueError):
    pass


class TruncationError(RuntimeError):
    """Population reached the top of a truncated Fock space."""


@dataclass(frozen=True)
class BasisLayout:
    n_ions: int = 2
    fock_cutoffs: tuple[int, ...] = ()
    sparse_threshold: int = SPARSE_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "fock_cutoffs", tuple(int(n) for n in self.fock_cutoffs))
        if self.n_ions < 1:
            raise LayoutError("need at least one ion")
        if any(n < 1 for n in self.fock_cutoffs):
            raise LayoutError("Fock cutoffs must be >= 1")

    @property
    def n_modes(self) -> int:
        return len(self.fock_cutoffs)

    @property
    def dims(self) -> tuple[int, ...]:
        return (4,) * self.n_ions + tuple(n + 1 for n in self.fock_cutoffs)

    @property
    def spin_dim(self) -> int:
        return 4**self.n_ions

    @property
    def motion_dim(self) -> int:
        return int(np.prod([n + 1 for n in self.fock_cutoffs], dtype=int))

    @property
    def total_dim(self) -> int:
        return self.spin_dim * self.motion_dim

    @property
    def sparse(self) -> bool:
        return self.total_dim > self.sparse_threshold

    def spin_only(self) -> "BasisLayout":
        return BasisLayout(self.n_ions, (), self.sparse_threshold)

    def describe(self) -> dict:
        return {
            "n_ions": self.n_ions,
            "spin_levels": list(SPIN_LEVELS),
            "fock_cutoffs": list(self.fock_cutoffs),
            "order": "ions then modes, slowest to fastest",
        }


def _as_format(mat, layout: BasisLayout):
    if layout.sparse:
        return sp.csr_matrix(mat)
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat)


@dataclass(frozen=True, eq=False)
class Operator:
    matrix: object
    layout: BasisLayout
    basis: str = "bare"

    def __post_init__(self):
        n = self.layout.total_dim
        if self.matrix.shape != (n, n):
            raise LayoutError(f"matrix shape {self.matrix.shape} does not match layout dimension {n}")

    def _check(self, other: "Operator"):
        if other.layout != self.layout or other.basis != self.basis:
            raise LayoutError("operators live on different layouts or bases")

    def __add__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(_as_format(self.matrix + other.matrix, self.layout), self.layout, self.basis)
        return NotImplemented

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return Operator(self.matrix * scalar, self.layout, self.basis)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(_as_format(self.matrix @ other.matrix, self.layout), self.layout, self.basis)
        if isinstance(other, StateVector):
            return StateVector(np.asarray(self.matrix @ other.amplitudes), other.layout, other.basis)
        return NotImplemented

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.layout, self.basis)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.asarray(self.matrix)

    def hermiticity_residual(self) -> float:
        d = self.matrix - self.matrix.conj().T
        if sp.issparse(d):
            return float(abs(d).max()) if d.nnz else 0.0
        return float(np.max(np.abs(d))) if d.size else 0.0

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return self.hermiticity_residual() < tol

    def allclose(self, other: "Operator", atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.dense(), other.dense(), atol=atol, rtol=0.0))


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    layout: BasisLayout
    basis: str = "bare"

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        if amps.shape != (self.layout.total_dim,):
            raise LayoutError("state length does not match layout dimension")
        object.__setattr__(self, "amplitudes", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        return StateVector(self.amplitudes / self.norm(), self.layout, self.basis)

    def overlap(self, other: "StateVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def spin_density(self) -> np.ndarray:
        """Reduced density matrix of the spins with the motion traced out."""
        psi = self.amplitudes.reshape(self.layout.spin_dim, self.layout.motion_dim)
        return psi @ psi.conj().T

    def fock_populations(self, mode: int) -> np.ndarray:
        dims = self.layout.dims
        axis = self.layout.n_ions + mode
        p = np.abs(self.amplitudes.reshape(dims)) ** 2
        other = tuple(i for i in range(len(dims)) if i != axis)
        return p.sum(axis=other)


# --- elementary single-site matrices ---------------------------------------

def bare_ket(level: str) -> np.ndarray:
    v = np.zeros(4)
    v[_BARE_INDEX[level]] = 1.0
    return v


def dressed_ket(level: str) -> np.ndarray:
    """Bare-basis components of a dressed level (u, d, D) or |0'>."""
    return DRESSED_MATRIX[DRESSED_LEVELS.index(level)].copy()


def ket(level: str) -> np.ndarray:
    if level in _BARE_INDEX:
        return bare_ket(level)
    if level in DRESSED_LEVELS:
        return dressed_ket(level)
    raise LayoutError(f"unknown level {level!r}")


def ketbra(a: str, b: str) -> np.ndarray:
    return np.outer(ket(a), ket(b))


def local_spin_matrix(kind: str, transition: str | None = None) -> np.ndarray:
    """4x4 single-ion matrix in the bare basis.

    kinds: ``sigma_z`` (|m><m| - |0><0| with transition m in {+1, -1, 0'}),
    ``sigma_plus`` (|+-1><0|), ``sigma_zJ`` (2(|+1><+1| - |-1><-1|), the
    magnetic moment entering the J-coupling), ``S_plus``, ``S_minus``, ``S_z``.
    """
    if kind == "sigma_z":
        if transition not in ("+1", "-1", "0'"):
            raise LayoutError("sigma_z needs transition '+1', '-1' or \"0'\"")
        return ketbra(transition, transition) - ketbra("0", "0")
    if kind == "sigma_plus":
        if transition not in ("+1", "-1"):
            raise LayoutError("sigma_plus needs transition '+1' or '-1'")
        return ketbra(transition, "0")
    if kind == "sigma_zJ":
        return 2.0 * (ketbra("+1", "+1") - ketbra("-1", "-1"))
    if kind == "S_plus":
        return ketbra("u", "D") + ketbra("D", "d")
    if kind == "S_minus":
        return ketbra("D", "u") + ketbra("d", "D")
    if kind == "S_z":
        return ketbra("u", "u") - ketbra("d", "d")
    raise LayoutError(f"unknown spin operator kind {kind!r}")


def local_mode_matrix(kind: str, n_max: int) -> np.ndarray:
    a = np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1)
    if kind == "a":
        return a
    if kind == "adag":
        return a.T.copy()
    if kind == "n":
        return np.diag(np.arange(n_max + 1, dtype=float))
    raise LayoutError(f"unknown mode operator kind {kind!r}")


def embed(local_mats: dict[int, np.ndarray], layout: BasisLayout) -> Operator:
    """Tensor-embed site-local matrices (site index over ions then modes)."""
    dims = layout.dims
    for site, m in local_mats.items():
        if not 0 <= site < len(dims):
            raise LayoutError(f"site {site} out of range")
        if m.shape != (dims[site], dims[site]):
            raise LayoutError(f"matrix for site {site} has wrong shape")
    factors = [sp.csr_matrix(local_mats[s]) if s in local_mats else sp.identity(d, format="csr") for s, d in enumerate(dims)]
    mat = reduce(lambda x, y: sp.kron(x, y, format="csr"), factors)
    return Operator(_as_format(mat, layout), layout)


def spin_op(local: np.ndarray, ion: int, layout: BasisLayout) -> Operator:
    if not 0 <= ion < layout.n_ions:
        raise LayoutError(f"ion index {ion} out of range")
    return embed({ion: local}, layout)


def mode_op(kind: str, mode: int, layout: BasisLayout) -> Operator:
    if not 0 <= mode < layout.n_modes:
        raise LayoutError(f"mode index {mode} out of range")
    return embed({layout.n_ions + mode: local_mode_matrix(kind, layout.fock_cutoffs[mode])}, layout)


def operator_factory(kind: str, index: int, layout: BasisLayout, transition: str | None = None, levels=None) -> Operator:
    """Elementary operator embedded in the full space.

    Spin kinds take an ion index, mode kinds (``a``, ``adag``, ``n``) a mode
    index; ``proj`` takes ``levels=(m, m')`` and returns |m><m'|.
    """
    if kind in ("a", "adag", "n"):
        return mode_op(kind, index, layout)
    if kind == "proj":
        if levels is None:
            raise LayoutError("proj needs levels=(m, m')")
        return spin_op(ketbra(*levels), index, layout)
    return spin_op(local_spin_matrix(kind, transition), index, layout)


def identity(layout: BasisLayout) -> Operator:
    return Operator(_as_format(sp.identity(layout.total_dim, format="csr"), layout), layout)


def zero(layout: BasisLayout) -> Operator:
    return Operator(_as_format(sp.csr_matrix((layout.total_dim, layout.total_dim)), layout), layout)


def _transform_unitary(layout: BasisLayout) -> sp.csr_matrix:
    factors = [sp.csr_matrix(DRESSED_MATRIX)] * layout.n_ions
    factors += [sp.identity(n + 1, format="csr") for n in layout.fock_cutoffs]
    return reduce(lambda x, y: sp.kron(x, y, format="csr"), factors)


def dressed_transform(x, inverse: bool = False):
    """Express an operator or state in dressed coordinates (or back)."""
    target = "bare" if inverse else "dressed"
    source = "dressed" if inverse else "bare"
    if x.basis != source:
        raise LayoutError(f"expected a {source}-basis object")
    W = _transform_unitary(x.layout)
    if inverse:
        W = W.T
    if isinstance(x, Operator):
        m = W @ x.matrix @ W.T
        return Operator(_as_format(m, x.layout), x.layout, target)
    return StateVector(np.asarray(W @ x.amplitudes), x.layout, target)


def product_state(spin_levels, fock=None, layout: BasisLayout | None = None) -> StateVector:
    """|m1 m2 ...> (x) |n1 n2 ...> with spin labels from either basis."""
    fock = tuple(fock or ())
    if layout is None:
        layout = BasisLayout(len(spin_levels), tuple(max(1, n) for n in fock))
    vecs = [ket(m) for m in spin_levels]
    for n, cutoff in zip(fock, layout.fock_cutoffs):
        if n > cutoff:
            raise LayoutError(f"Fock index {n} above cutoff {cutoff}")
        e = np.zeros(cutoff + 1)
        e[n] = 1.0
        vecs.append(e)
    if len(vecs) != len(layout.dims):
        raise LayoutError("state labels do not cover the layout")
    return StateVector(reduce(np.kron, vecs).astype(complex), layout)


def thermal_distribution(n_bar: float, n_max: int) -> tuple[np.ndarray, float]:
    """Bose-Einstein weights for n = 0..n_max and the probability mass above n_max.

    The weights are not renormalised.
    """
    if n_bar < 0:
        raise ValueError("mean phonon number must be non-negative")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    n = np.arange(n_max + 1)
    if n_bar == 0:
        p = (n == 0).astype(float)
        return p, 0.0
    r = n_bar / (1.0 + n_bar)
    p = np.exp(n * math.log(r)) / (1.0 + n_bar)
    return p, float(r ** (n_max + 1))


def top_fock_population(state: StateVector, levels: int = 2) -> float:
    """Population in the top ``levels`` Fock states of any mode, ignoring n < 2."""
    worst = 0.0
    for mode, cutoff in enumerate(state.layout.fock_cutoffs):
        pops = state.fock_populations(mode)
        lo = max(cutoff + 1 - levels, 2)
        worst = max(worst, float(pops[lo:].sum()))
    return worst


def check_truncation(state: StateVector, tol: float = 1e-6) -> None:
    p = top_fock_population(state)
    if p > tol:
        raise TruncationError(f"{p:.2e} population in the top Fock levels exceeds {tol:.0e}")


# --- state snapshots -----------------------------------------------------------

_MAGIC = b"GLSV"


def dump_state(path, state: StateVector, **meta) -> None:
    """Write ``GLSV`` + uint32 header length + JSON header + little-endian complex128 data."""
    header = {"layout": state.layout.describe(), "basis": state.basis, "dim": state.layout.total_dim, **meta}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(np.asarray(state.amplitudes, dtype="<c16").tobytes())


def load_state(path) -> tuple[StateVector, dict]:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError("not a state snapshot")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + n])
    amps = np.frombuffer(data[8 + n :], dtype="<c16")
    lay = header["layout"]
    layout = BasisLayout(lay["n_ions"], tuple(lay["fock_cutoffs"]))
    return StateVector(amps.copy(), layout, header["basis"]), header
