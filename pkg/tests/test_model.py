"""Model definitions, presets, disorder realization, initial states."""

import numpy as np
import pytest

from ctwa.model import (
    AXES,
    CouplingTerm,
    DisorderSpec,
    FieldTerm,
    InitialStateSpec,
    PRESETS,
    SpinModel,
    apply_disorder,
    bloch_spinor,
    chain_bonds,
    chaotic_ising,
    disordered_heisenberg,
    four_spin_ising,
    realize_disorder,
    realize_initial_state,
    staggered_signs,
    xy_chain,
)


class TestValidation:
    def test_rejects_empty_lattice(self):
        with pytest.raises(ValueError):
            SpinModel(0, ())

    def test_rejects_out_of_range_field(self):
        with pytest.raises(ValueError, match="field site"):
            SpinModel(2, (), fields=(FieldTerm(2, "z", 1.0),))

    def test_rejects_bad_axis(self):
        with pytest.raises(ValueError, match="axis"):
            SpinModel(2, (), fields=(FieldTerm(0, "w", 1.0),))

    def test_rejects_self_coupling(self):
        with pytest.raises(ValueError, match="distinct"):
            SpinModel(2, (CouplingTerm(1, 1, "z", "z", 1.0),))

    def test_rejects_unknown_disorder(self):
        with pytest.raises(ValueError, match="disorder"):
            SpinModel(2, (), disorder=DisorderSpec("gaussian_x", 1.0))


def test_chain_bonds():
    assert chain_bonds(4, periodic=False) == [(0, 1), (1, 2), (2, 3)]
    assert chain_bonds(4, periodic=True) == [(0, 1), (1, 2), (2, 3), (3, 0)]
    # a 2-site ring would double-count its single bond
    assert chain_bonds(2, periodic=True) == [(0, 1)]


def test_with_extra_fields_preserves_everything_else():
    m = disordered_heisenberg(n_sites=6, h_z=2.0).model
    m2 = m.with_extra_fields((FieldTerm(0, "z", 0.5),))
    assert m2.disorder is None          # folded in, not double-applied
    assert m2.couplings == m.couplings
    assert m2.periodic == m.periodic
    assert m2.fields[-1].coeff == 0.5


def test_realize_disorder_bounds_and_alignment():
    m = disordered_heisenberg(n_sites=8, h_z=3.0).model
    rng = np.random.default_rng(0)
    offs = realize_disorder(m, rng)
    assert offs.shape == (8,)
    assert np.all(np.abs(offs) <= 3.0)
    # clean model consumes nothing and returns zeros
    clean = SpinModel(8, ())
    assert np.array_equal(realize_disorder(clean, rng), np.zeros(8))


def test_realize_disorder_draw_count_is_size_only():
    # same rng state must yield the same offsets regardless of anything else
    m = disordered_heisenberg(n_sites=5, h_z=1.0).model
    a = realize_disorder(m, np.random.default_rng(44))
    b = realize_disorder(m, np.random.default_rng(44))
    np.testing.assert_array_equal(a, b)


def test_apply_disorder_folds_offsets():
    m = disordered_heisenberg(n_sites=4, h_z=1.0).model
    offs = np.array([0.1, -0.2, 0.0, 0.4])
    m2 = apply_disorder(m, offs)
    assert m2.disorder is None
    zfields = {(t.site, t.coeff) for t in m2.fields if t.axis == "z"}
    assert (0, 0.1) in zfields and (3, 0.4) in zfields
    assert all(site != 2 for site, _ in zfields)


class TestPresets:
    def test_registry_contents(self):
        assert set(PRESETS) == {
            "four_spin_ising", "chaotic_ising", "disordered_heisenberg", "xy_chain"
        }

    def test_four_spin_ising(self):
        p = four_spin_ising()
        assert p.model.n_sites == 4
        assert not p.model.periodic
        zz = [t for t in p.model.couplings if (t.axis_i, t.axis_j) == ("z", "z")]
        assert len(zz) == 3 and all(t.coeff == 0.125 for t in zz)
        xf = [t for t in p.model.fields if t.axis == "x"]
        assert len(xf) == 4 and all(t.coeff == 1.0 for t in xf)
        assert p.initial.kind == "neel"

    def test_chaotic_ising_fields(self):
        p = chaotic_ising(n_sites=6)
        assert p.model.periodic
        by_axis = {}
        for t in p.model.fields:
            by_axis.setdefault(t.axis, set()).add(t.coeff)
        assert by_axis["x"] == {0.8090}
        assert by_axis["z"] == {-0.9045}
        assert chaotic_ising(bath="mixed").initial.stochastic
        with pytest.raises(ValueError):
            chaotic_ising(bath="thermal")

    def test_heisenberg_has_all_three_axes_per_bond(self):
        p = disordered_heisenberg(n_sites=6, h_z=7.0)
        per_bond = {}
        for t in p.model.couplings:
            assert t.axis_i == t.axis_j
            per_bond.setdefault((t.site_i, t.site_j), set()).add(t.axis_i)
        assert all(axes == set(AXES) for axes in per_bond.values())
        assert len(per_bond) == 6  # periodic ring
        assert p.model.disorder.strength == 7.0

    def test_xy_chain_has_no_zz(self):
        p = xy_chain(n_sites=6)
        assert all(t.axis_i in ("x", "y") for t in p.model.couplings)


def test_staggered_signs():
    np.testing.assert_array_equal(staggered_signs(4), [1, -1, 1, -1])


def test_bloch_spinor_poles_and_norm():
    np.testing.assert_allclose(bloch_spinor(0.0, 0.0), [1, 0], atol=1e-15)
    np.testing.assert_allclose(np.abs(bloch_spinor(np.pi, 0.3)), [0, 1], atol=1e-12)
    for theta, phi in [(0.3, 1.0), (2.0, -2.5)]:
        assert abs(np.linalg.norm(bloch_spinor(theta, phi)) - 1.0) < 1e-14


class TestInitialStates:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            InitialStateSpec("thermal")

    def test_product_needs_spinors(self):
        with pytest.raises(ValueError):
            InitialStateSpec("product")

    def test_neel_alternates(self):
        state = realize_initial_state(InitialStateSpec("neel"), 4)
        for i in range(4):
            s = state.spinor(i)
            expect = [1, 0] if i % 2 == 0 else [0, 1]
            np.testing.assert_allclose(s, expect, atol=1e-15)

    def test_single_up(self):
        state = realize_initial_state(InitialStateSpec("single_up"), 3)
        np.testing.assert_allclose(state.spinor(0), [1, 0])
        np.testing.assert_allclose(state.spinor(1), [0, 1])

    def test_random_bath_requires_rng(self):
        spec = InitialStateSpec("single_up_random_bath")
        assert spec.stochastic
        with pytest.raises(ValueError):
            realize_initial_state(spec, 3)

    def test_random_bath_site0_up_and_isotropic_marginals(self):
        spec = InitialStateSpec("single_up_random_bath")
        rng = np.random.default_rng(9)
        mz = []
        for _ in range(2000):
            state = realize_initial_state(spec, 2, rng)
            np.testing.assert_allclose(state.spinor(0), [1, 0])
            a, b = state.spinor(1)
            mz.append(abs(a) ** 2 - abs(b) ** 2)
        # bath spin is uniform on the sphere: <sigma_z> = 0, var = 1/3
        assert abs(np.mean(mz)) < 5 / np.sqrt(3 * len(mz))
        assert abs(np.var(mz) - 1 / 3) < 0.03

    def test_product_state_spinor_count_checked(self):
        spec = InitialStateSpec("product", spinors=((1 + 0j, 0j),))
        with pytest.raises(ValueError):
            realize_initial_state(spec, 2)
