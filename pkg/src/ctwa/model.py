"""Spin-1/2 lattice models: Hamiltonian terms, disorder, initial states.

A model is a flat list of one- and two-site Pauli terms on a chain of
n sites; anything geometric (bonds, boundaries) is resolved into that
list by the builders.  Site 0 is "the first site" everywhere; the
single-site basis states are |up> = (1, 0) and |down> = (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class FieldTerm:
    site: int
    axis: str
    coeff: float


@dataclass(frozen=True)
class CouplingTerm:
    site_i: int
    site_j: int
    axis_i: str
    axis_j: str
    coeff: float


@dataclass(frozen=True)
class DisorderSpec:
    """Per-site random z fields h_z * delta_i with delta_i ~ U[-1, 1]."""

    kind: str
    strength: float


@dataclass(frozen=True)
class SpinModel:
    n_sites: int
    couplings: tuple[CouplingTerm, ...]
    fields: tuple[FieldTerm, ...] = ()
    disorder: DisorderSpec | None = None
    name: str = ""
    periodic: bool = False

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("model needs at least one site")
        for t in self.fields:
            if not 0 <= t.site < self.n_sites:
                raise ValueError(f"field site {t.site} outside 0..{self.n_sites - 1}")
            if t.axis not in AXES:
                raise ValueError(f"bad field axis {t.axis!r}")
        for t in self.couplings:
            for s in (t.site_i, t.site_j):
                if not 0 <= s < self.n_sites:
                    raise ValueError(f"coupling site {s} outside 0..{self.n_sites - 1}")
            if t.site_i == t.site_j:
                raise ValueError("coupling must join two distinct sites")
            if t.axis_i not in AXES or t.axis_j not in AXES:
                raise ValueError(f"bad coupling axes ({t.axis_i!r}, {t.axis_j!r})")
        if self.disorder is not None and self.disorder.kind != "uniform_z":
            raise ValueError(f"unknown disorder kind {self.disorder.kind!r}")

    def with_extra_fields(self, extra: tuple[FieldTerm, ...]) -> "SpinModel":
        return replace(self, fields=self.fields + extra, disorder=None)


def realize_disorder(model: SpinModel, rng: np.random.Generator) -> np.ndarray:
    """Per-site z-field offsets for one disorder realization (zeros if clean).

    Always consumes the same number of draws for a given n_sites so that
    co-sampled runs stay aligned.
    """
    if model.disorder is None:
        return np.zeros(model.n_sites)
    return model.disorder.strength * rng.uniform(-1.0, 1.0, size=model.n_sites)


def apply_disorder(model: SpinModel, offsets: np.ndarray) -> SpinModel:
    """Clean model with the realized z fields folded into the term list."""
    extra = tuple(
        FieldTerm(site=i, axis="z", coeff=float(h)) for i, h in enumerate(offsets) if h != 0.0
    )
    return model.with_extra_fields(extra)


def chain_bonds(n_sites: int, periodic: bool) -> list[tuple[int, int]]:
    bonds = [(i, i + 1) for i in range(n_sites - 1)]
    if periodic and n_sites > 2:
        bonds.append((n_sites - 1, 0))
    return bonds


# ---------------------------------------------------------------------------
# initial states


def bloch_spinor(theta: float, phi: float) -> np.ndarray:
    return np.array([np.cos(theta / 2.0), np.exp(1j * phi) * np.sin(theta / 2.0)])


UP = np.array([1.0 + 0j, 0.0 + 0j])
DOWN = np.array([0.0 + 0j, 1.0 + 0j])


@dataclass(frozen=True)
class ProductState:
    """Pure product state, one normalized 2-spinor per site."""

    spinors: tuple[tuple[complex, complex], ...]

    @property
    def n_sites(self) -> int:
        return len(self.spinors)

    def spinor(self, site: int) -> np.ndarray:
        return np.array(self.spinors[site])


def _as_state(spinors) -> ProductState:
    frozen = []
    for s in spinors:
        s = np.asarray(s, dtype=complex)
        norm = np.linalg.norm(s)
        if not np.isclose(norm, 1.0, atol=1e-12):
            s = s / norm
        frozen.append((complex(s[0]), complex(s[1])))
    return ProductState(spinors=tuple(frozen))


@dataclass(frozen=True)
class InitialStateSpec:
    """Named initial-state recipe; `stochastic` recipes redraw per trajectory."""

    kind: str
    spinors: tuple[tuple[complex, complex], ...] | None = None

    KINDS = ("all_up", "neel", "single_up", "single_up_random_bath", "product")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown initial state {self.kind!r}")
        if self.kind == "product" and self.spinors is None:
            raise ValueError("product initial state needs explicit spinors")

    @property
    def stochastic(self) -> bool:
        return self.kind == "single_up_random_bath"


def realize_initial_state(
    spec: InitialStateSpec, n_sites: int, rng: np.random.Generator | None = None
) -> ProductState:
    """Concrete product state for one trajectory.

    Deterministic recipes ignore rng.  The random-bath recipe keeps site 0
    up and draws every other site uniformly on the Bloch sphere, so the
    marginal bath state is the infinite-temperature mixed state.
    """
    if spec.kind == "all_up":
        return _as_state([UP] * n_sites)
    if spec.kind == "neel":
        return _as_state([UP if i % 2 == 0 else DOWN for i in range(n_sites)])
    if spec.kind == "single_up":
        return _as_state([UP] + [DOWN] * (n_sites - 1))
    if spec.kind == "single_up_random_bath":
        if rng is None:
            raise ValueError("single_up_random_bath needs an rng")
        spinors = [UP]
        for _ in range(n_sites - 1):
            theta = np.arccos(rng.uniform(-1.0, 1.0))
            phi = rng.uniform(0.0, 2.0 * np.pi)
            spinors.append(bloch_spinor(theta, phi))
        return _as_state(spinors)
    if len(spec.spinors) != n_sites:
        raise ValueError(f"product state has {len(spec.spinors)} spinors, model has {n_sites}")
    return _as_state(spec.spinors)


def staggered_signs(n_sites: int) -> np.ndarray:
    """Signs of the staggered magnetization, +1 on even sites."""
    return np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n_sites)])


# ---------------------------------------------------------------------------
# presets


@dataclass(frozen=True)
class Preset:
    model: SpinModel
    initial: InitialStateSpec
    observables: tuple[str, ...]
    description: str = ""


def four_spin_ising(j: float = 0.125, h_x: float = 1.0) -> Preset:
    """Open 4-site Ising chain in a transverse field, Neel start."""
    n = 4
    couplings = tuple(
        CouplingTerm(i, k, "z", "z", j) for i, k in chain_bonds(n, periodic=False)
    )
    fields = tuple(FieldTerm(i, "x", h_x) for i in range(n))
    model = SpinModel(n, couplings, fields, name="four_spin_ising")
    return Preset(
        model=model,
        initial=InitialStateSpec("neel"),
        observables=("staggered_magnetization",),
        description="4-site transverse-field Ising chain, weak zz coupling",
    )


def chaotic_ising(n_sites: int = 20, bath: str = "pure") -> Preset:
    """Nonintegrable Ising chain with tilted field, single up spin."""
    if bath not in ("pure", "mixed"):
        raise ValueError(f"bath must be 'pure' or 'mixed', got {bath!r}")
    couplings = tuple(
        CouplingTerm(i, k, "x", "x", 1.0) for i, k in chain_bonds(n_sites, periodic=True)
    )
    fields = tuple(FieldTerm(i, "x", 0.8090) for i in range(n_sites)) + tuple(
        FieldTerm(i, "z", -0.9045) for i in range(n_sites)
    )
    model = SpinModel(n_sites, couplings, fields, name="chaotic_ising", periodic=True)
    initial = InitialStateSpec("single_up" if bath == "pure" else "single_up_random_bath")
    return Preset(
        model=model,
        initial=initial,
        observables=("sz_site_0",),
        description="chaotic Ising chain, magnetization decay of one up spin",
    )


def disordered_heisenberg(n_sites: int = 16, h_z: float = 1.0) -> Preset:
    """Heisenberg chain with random z fields, Neel start."""
    couplings = tuple(
        CouplingTerm(i, k, a, a, 1.0)
        for i, k in chain_bonds(n_sites, periodic=True)
        for a in AXES
    )
    model = SpinModel(
        n_sites,
        couplings,
        disorder=DisorderSpec("uniform_z", h_z),
        name="disordered_heisenberg",
        periodic=True,
    )
    return Preset(
        model=model,
        initial=InitialStateSpec("neel"),
        observables=("staggered_magnetization",),
        description="disordered Heisenberg chain, staggered magnetization",
    )


def xy_chain(n_sites: int = 16) -> Preset:
    """XY chain (xx + yy couplings only), Neel start."""
    couplings = tuple(
        CouplingTerm(i, k, a, a, 1.0)
        for i, k in chain_bonds(n_sites, periodic=True)
        for a in ("x", "y")
    )
    model = SpinModel(n_sites, couplings, name="xy_chain", periodic=True)
    return Preset(
        model=model,
        initial=InitialStateSpec("neel"),
        observables=("staggered_magnetization",),
        description="XY chain, staggered magnetization",
    )


PRESETS = {
    "four_spin_ising": four_spin_ising,
    "chaotic_ising": chaotic_ising,
    "disordered_heisenberg": disordered_heisenberg,
    "xy_chain": xy_chain,
}
