"""Tests for the PRISM export layer.

The rendered files are pinned by golden copies frozen from a hand-checked
export, and the meaning of the emitted properties is anchored by evaluating
the same queries two independent ways: a first-hit recursion over the
compiled machine's main cycles, and the reachability engine on the chain
itself. Both are exact, so every comparison is equality.
"""

import math
import os
import re
import subprocess
from fractions import Fraction as F
from importlib.resources import files
from pathlib import Path

import pytest

from bichain import prism, scm
from bichain.errors import DomainError, ModelError
from bichain.model import BinomialChain, ExpTable, LinearFn, parse_model
from bichain.reach import build_reachable, expected_hitting_times, until_probability
from chains import lone_chain, sir_chain, two_exit_chain

GOLDEN = Path(__file__).parent / "golden"


def bundled(name):
    return parse_model((files("bichain") / f"models/{name}.json").read_text())


def bundled_export(name):
    chain = bundled(name)
    machine = scm.compile_bc_to_scm(chain)
    return prism.export_prism(machine, chain=chain), prism.emit_properties(chain)


def fan_out_chain(initial, depth):
    """Acyclic, non-closed: a path a0 -> .. -> a_depth plus a second exit
    a0 -> a2, so the first row has two entries and the depth is `depth`."""
    k = depth + 1
    names = tuple(f"a{i}" for i in range(k))
    transfers = {}
    entries = {}
    for i in range(depth):
        transfers[(i, i + 1)] = LinearFn((F(0),) * k, F(1, 2))
        entries[(i, i + 1, None)] = F(1, 2)
    transfers[(0, 2)] = LinearFn((F(0),) * k, F(1, 2))
    entries[(0, 2, None)] = F(1, 2)
    return BinomialChain(names, tuple(initial), transfers, ExpTable(entries))


def machine_property_values(chain):
    """PopInc, OS, and EoE evaluated on the compiled machine itself.

    Cycle distributions are taken per chain state; the recursion excludes
    the self mass and divides by its complement, exactly like the linear
    solve it mirrors. Clamping mass sits in the cycle deficit, so it counts
    toward no property, matching the error-location encoding.
    """
    machine = scm.compile_bc_to_scm(chain)
    sup = scm.absorbing_guard_support(chain)
    s0, i0 = chain.initial[0], chain.initial[1]
    cycles = {}

    def cycle(u):
        if u not in cycles:
            d = scm.main_cycle_distribution(machine, chain, u)
            out = {}
            for w, p in d.on_counters().items():
                key = w[:chain.k]
                out[key] = out.get(key, F(0)) + p
            cycles[u] = out
        return cycles[u]

    def absorbed(u):
        return all(u[l] == 0 for l in sup)

    def solve(value, memo, u):
        if u not in memo:
            memo[u] = value(u)
        return memo[u]

    def popinc(u):
        if absorbed(u):
            return F(1)
        dist = cycle(u)
        hit = sum((p * solve(popinc, mp, w) for w, p in dist.items() if w != u),
                  F(0))
        return hit / (1 - dist.get(u, F(0)))

    def one_shot(u):
        if u[1] == s0 + i0:
            return F(1)
        if u[0] < s0 or absorbed(u):
            return F(0)
        dist = cycle(u)
        hit = sum((p * solve(one_shot, mo, w) for w, p in dist.items() if w != u),
                  F(0))
        return hit / (1 - dist.get(u, F(0)))

    def eoe(u):
        if absorbed(u):
            return F(0)
        dist = cycle(u)
        acc = 1 + sum((p * solve(eoe, me, w) for w, p in dist.items() if w != u),
                      F(0))
        return acc / (1 - dist.get(u, F(0)))

    mp, mo, me = {}, {}, {}
    u0 = tuple(chain.initial)
    return solve(popinc, mp, u0), solve(one_shot, mo, u0), solve(eoe, me, u0)


class TestCertifiedBound:
    def test_closed_chain_uses_population(self):
        assert prism.certified_counter_bound(sir_chain(initial=(5, 1, 0))) == 6

    def test_closed_cyclic_chain_still_certifies(self):
        transfers = {
            (0, 1): LinearFn((F(0), F(0)), F(1)),
            (1, 0): LinearFn((F(0), F(0)), F(1)),
        }
        chain = BinomialChain(("A", "B"), (3, 4), transfers)
        assert prism.certified_counter_bound(chain) == 7

    def test_acyclic_open_chain_scales_by_depth(self):
        chain = fan_out_chain((2, 0, 0, 0), depth=3)
        assert prism.certified_counter_bound(chain) == 2 * 4**3

    def test_no_transfers(self):
        assert prism.certified_counter_bound(lone_chain((4,))) == 4

    def test_open_cyclic_chain_rejected(self):
        transfers = {
            (0, 1): LinearFn((F(0),) * 3, F(1)),
            (0, 2): LinearFn((F(0),) * 3, F(1)),
            (1, 0): LinearFn((F(0),) * 3, F(1)),
        }
        chain = BinomialChain(("A", "B", "C"), (1, 1, 1), transfers)
        with pytest.raises(DomainError):
            prism.certified_counter_bound(chain)


def sir_machine(initial=(5, 1, 0)):
    chain = sir_chain(e_beta=F(1, 2), e_gamma=F(2, 3), initial=initial)
    return chain, scm.compile_bc_to_scm(chain)


class TestExportStructure:
    def test_model_shape(self):
        chain, machine = sir_machine()
        out = prism.export_prism(machine, chain=chain)
        assert out.startswith("dtmc\n")
        assert out.count("module bc") == 1
        assert out.count("endmodule") == 1
        assert "  loc : [0..5] init 0;" in out
        # Closed chain: every counter is bounded by the population.
        assert "  S_ : [0..6] init 5;" in out
        assert "  l1 : [0..6] init 0;" in out

    def test_reserved_names_are_mangled(self):
        chain, machine = sir_machine()
        out = prism.export_prism(machine, chain=chain)
        for line in out.splitlines():
            assert not line.startswith("  S :")
        assert "(S_'=S_-acc0)" in out

    def test_export_is_pure(self):
        chain, machine = sir_machine()
        again = scm.compile_bc_to_scm(chain)
        assert prism.export_prism(machine, chain=chain) == \
            prism.export_prism(again, chain=chain)

    def test_probability_one_commands_are_unprefixed(self):
        chain, machine = sir_machine()
        out = prism.export_prism(machine, chain=chain)
        assert "  [] loc=0 -> (loc'=2) & (l0'=S_);" in out
        assert re.search(r"(->|\+) 1 : ", out) is None

    def test_probabilities_are_rationals(self):
        chain, machine = sir_machine()
        out = prism.export_prism(machine, chain=chain)
        assert "const double p0 = 1/2;" in out
        assert "const double p1 = 2/3;" in out
        assert "const double p2 = 1/3;" in out
        # Equal values share one constant, so only three are declared.
        assert "const double p3" not in out
        assert re.search(r"\d\.\d", out) is None

    def test_reward_structure(self):
        chain, machine = sir_machine()
        out = prism.export_prism(machine, chain=chain)
        assert 'rewards "time_step"' in out
        assert "  loc=0 & I_>=1 : 1;" in out

    def test_reward_free_machine_has_no_reward_block(self):
        machine = scm.build_binomial_gadget(F(1, 3))
        out = prism.export_prism(machine, bound=10)
        assert "rewards" not in out
        assert "module bc" in out

    def test_explicit_bound_overrides(self):
        chain, machine = sir_machine()
        out = prism.export_prism(machine, bound=50, chain=chain)
        assert "  S_ : [0..50] init 5;" in out

    def test_no_bound_and_no_chain_rejected(self):
        machine = scm.build_binomial_gadget(F(1, 3))
        with pytest.raises(DomainError):
            prism.export_prism(machine)

    def test_bound_below_initial_value_rejected(self):
        chain, machine = sir_machine()
        with pytest.raises(DomainError):
            prism.export_prism(machine, bound=4, chain=chain)

    def test_bound_above_integer_range_rejected(self):
        chain, machine = sir_machine()
        with pytest.raises(DomainError):
            prism.export_prism(machine, bound=2**31, chain=chain)

    def test_certified_bound_overflow_rejected(self):
        # 10^9 * 4^3 overflows the 31-bit range without an explicit cap.
        chain = fan_out_chain((10**9, 0, 0, 0), depth=3)
        machine = scm.compile_bc_to_scm(chain)
        with pytest.raises(DomainError):
            prism.export_prism(machine, chain=chain)
        out = prism.export_prism(machine, bound=10**9, chain=chain)
        assert "[0..1000000000]" in out

    def test_mismatched_chain_rejected(self):
        chain, machine = sir_machine()
        other = sir_chain(initial=(4, 2, 0))
        with pytest.raises(ModelError):
            prism.export_prism(machine, chain=other)

    def test_unbalanced_family_rejected(self):
        t = scm.Transition("a", scm.Guard.true(), scm.Update.identity(1),
                           "a", F(1, 2))
        machine = scm.Scm(states=("a",), q0="a", c0=(0,), counters=("x",),
                          transitions=(t,))
        with pytest.raises(ModelError):
            prism.export_prism(machine, bound=5)

    def test_counter_names_dodge_keywords_and_constants(self):
        ident = scm.Update.identity(4)
        t = scm.Transition("a", scm.Guard.true(), ident, "a", F(1))
        machine = scm.Scm(states=("a",), q0="a", c0=(0, 0, 0, 0),
                          counters=("min", "loc", "p0", "x"),
                          transitions=(t,))
        out = prism.export_prism(machine, bound=3)
        assert "  min_ : [0..3] init 0;" in out
        assert "  loc_ : [0..3] init 0;" in out
        assert "  p0_ : [0..3] init 0;" in out
        assert "  x : [0..3] init 0;" in out

    def test_unnameable_counter_rejected(self):
        t = scm.Transition("a", scm.Guard.true(), scm.Update.identity(1),
                           "a", F(1))
        machine = scm.Scm(states=("a",), q0="a", c0=(0,), counters=("a b",),
                          transitions=(t,))
        with pytest.raises(ModelError):
            prism.export_prism(machine, bound=3)


class TestGolden:
    @pytest.mark.parametrize("name", ["sir", "covid_single_age"])
    def test_model_matches_golden(self, name):
        model_text, props_text = bundled_export(name)
        assert model_text == (GOLDEN / f"{name}.prism").read_text()
        assert props_text == (GOLDEN / f"{name}.props").read_text()

    def test_goldens_are_dtmc_files(self):
        for name in ("sir", "covid_single_age"):
            assert (GOLDEN / f"{name}.prism").read_text().startswith("dtmc\n")

    def test_bundled_covid_is_open_and_acyclic(self):
        from bichain.model import is_acyclic, is_closed

        covid = bundled("covid_single_age")
        assert is_acyclic(covid) and not is_closed(covid)
        sir = bundled("sir")
        assert is_acyclic(sir) and is_closed(sir)


class TestProperties:
    def test_sir_property_text(self):
        chain = sir_chain(initial=(5, 1, 0))
        out = prism.emit_properties(chain)
        assert out == (
            '"PopInc": P=? [ (loc!=1) U (I_=0) ];\n'
            '"OS": P=? [ (S_>=5) U (I_=6) ];\n'
            '"EoE": R{"time_step"}=? [ F (I_=0) ];\n'
        )

    def test_covid_depletion_set_matches_infectious_compartments(self):
        covid = bundled("covid_single_age")
        out = prism.emit_properties(covid, "EoE")
        assert out == ('"EoE": R{"time_step"}=? '
                       "[ F (E_+I_presym+I_asym+I_mild+I_sev+I_hosp+I_icu=0) ];\n")

    def test_single_kind_accepted(self):
        out = prism.emit_properties(sir_chain(), "PopInc")
        assert out.count("\n") == 1 and out.startswith('"PopInc"')

    def test_unknown_kind_rejected(self):
        with pytest.raises(DomainError):
            prism.emit_properties(sir_chain(), "EoWhat")

    def test_target_override(self):
        out = prism.emit_properties(sir_chain(), "EoE", target=("R", "S"))
        assert "[ F (S_+R_=0) ];" in out

    def test_unknown_target_rejected(self):
        with pytest.raises(ModelError):
            prism.emit_properties(sir_chain(), "EoE", target=("Q",))

    def test_empty_support_needs_explicit_target(self):
        with pytest.raises(DomainError):
            prism.emit_properties(lone_chain(), "EoE")
        out = prism.emit_properties(lone_chain(), "EoE", target=("A",))
        assert "(A_=0)" in out

    def test_one_shot_needs_a_transfer(self):
        with pytest.raises(DomainError):
            prism.emit_properties(lone_chain(), "OS")


class TestPropertySemantics:
    """The emitted queries mean on the machine what the chain engines say.

    PopInc on the chain side is the population-preservation until (the
    error location is entered exactly when a step would change the
    population); the target also requires preservation because the machine
    only reaches it through an unclamped cycle.
    """

    initials = [(2, 1, 0), (1, 1, 1), (1, 2, 0), (3, 0, 0), (0, 2, 1)]

    @pytest.mark.parametrize("initial", initials)
    def test_small_sir_cross_checks(self, initial):
        chain = sir_chain(e_beta=F(1, 2), e_gamma=F(2, 3), initial=initial)
        popinc_m, os_m, eoe_m = machine_property_values(chain)
        ec = build_reachable(chain)
        n0 = sum(initial)
        sup = scm.absorbing_guard_support(chain)
        popinc_c = until_probability(
            ec,
            lambda u: sum(u) == n0,
            lambda u: all(u[l] == 0 for l in sup) and sum(u) == n0,
        )
        s0, i0 = initial[0], initial[1]
        os_c = until_probability(ec, lambda u: u[0] >= s0,
                                 lambda u: u[1] == s0 + i0)
        assert popinc_m == popinc_c == 1
        assert os_m == os_c
        assert eoe_m == expected_hitting_times(ec).initial

    def test_one_shot_value_frozen(self):
        # From (2,1,0) with stay probabilities 1/2 and 2/3: winning takes
        # both susceptibles moving while the infectious one stays, 1/4 * 2/3,
        # and the only other safe continuation is the full self-loop with
        # the same mass, so the value solves x = 1/6 + x/6.
        chain = sir_chain(e_beta=F(1, 2), e_gamma=F(2, 3), initial=(2, 1, 0))
        assert machine_property_values(chain)[1] == F(1, 5)

    def test_eoe_value_frozen(self):
        # Two infectious individuals leaving independently w.p. 1/3 each
        # step: E2 = 1 + (4/9) E2 + (4/9) E1 with E1 = 3 gives 21/5.
        chain = sir_chain(e_beta=F(1, 2), e_gamma=F(2, 3), initial=(0, 2, 1))
        assert machine_property_values(chain)[2] == F(21, 5)

    def test_popinc_on_open_chain(self):
        # One individual, two exits, each draw keeps it w.p. 1/2: the four
        # outcomes are stay, move to B, move to C, and the clamped double
        # move into the error location, so the preservation probability is
        # (1/4 + 1/4) / (1 - 1/4).
        chain = two_exit_chain(initial=(1, 0, 0))
        popinc_m, _, _ = machine_property_values(chain)
        assert popinc_m == F(2, 3)
        ec = build_reachable(chain)
        sup = scm.absorbing_guard_support(chain)
        popinc_c = until_probability(
            ec,
            lambda u: sum(u) == 1,
            lambda u: all(u[l] == 0 for l in sup) and sum(u) == 1,
        )
        assert popinc_c == F(2, 3)


@pytest.mark.skipif(not os.environ.get("BICHAIN_EXTERNAL_MC"),
                    reason="set BICHAIN_EXTERNAL_MC to a model checker binary")
class TestExternalChecker:
    """Optional end-to-end run of a storm-compatible model checker."""

    def test_sir_properties_agree(self, tmp_path):
        chain = sir_chain(e_beta=F(1, 2), e_gamma=F(2, 3), initial=(2, 1, 0))
        machine = scm.compile_bc_to_scm(chain)
        model = tmp_path / "sir.prism"
        props = tmp_path / "sir.props"
        model.write_text(prism.export_prism(machine, chain=chain))
        props.write_text(prism.emit_properties(chain))
        out = subprocess.run(
            [os.environ["BICHAIN_EXTERNAL_MC"], "--prism", str(model),
             "--prop", str(props)],
            capture_output=True, text=True, timeout=600, check=True,
        ).stdout
        got = [float(x) for x in re.findall(
            r"Result \(for initial states\): ([0-9.eE+-]+)", out)]
        popinc, one_shot, eoe = machine_property_values(chain)
        assert len(got) == 3
        for reference, value in zip((popinc, one_shot, eoe), got):
            assert math.isclose(float(reference), value, rel_tol=1e-6)
