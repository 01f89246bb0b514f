"""Tests for the counter-machine layer.

The interpreter is exercised against closed-form probabilities first
(binomial pmf, stay-probability products), and the compiler against the
general chain engines: one main cycle must reproduce one chain step
exactly, and accumulated rewards must reproduce expected hitting times.
"""

import random
from dataclasses import replace
from fractions import Fraction as F

import pytest

from bichain import reach, scm, semantics
from bichain.errors import (
    DomainError,
    InvariantError,
    ModelError,
    ResourceCapError,
)
from bichain.model import BinomialChain, ExpTable, LinearFn
from bichain.semantics import binom_pmf
from chains import sir_chain, two_exit_chain

HALF = F(1, 2)


def counter_machine(transitions, n_states=2, c0=(0,)):
    """Tiny machine builder over states a, b, ... and one counter."""
    states = tuple("ab"[:n_states])
    return scm.Scm(states=states, q0="a", c0=c0, counters=("x",),
                   transitions=tuple(transitions))


class TestGuard:
    def test_true_always_holds(self):
        assert scm.Guard.true().satisfied((5, 7))

    def test_counter_ge(self):
        g = scm.Guard.counter_ge(2, 0, 1)
        assert g.satisfied((1, 0))
        assert not g.satisfied((0, 9))

    def test_counter_le(self):
        g = scm.Guard.counter_le(2, 1, 0)
        assert g.satisfied((3, 0))
        assert not g.satisfied((3, 1))

    def test_sum_ge(self):
        g = scm.Guard.sum_ge(3, (0, 2), 1)
        assert g.satisfied((0, 0, 1))
        assert not g.satisfied((0, 5, 0))

    def test_conjoin(self):
        g = scm.Guard.counter_ge(1, 0, 1).conjoin(
            scm.Guard.counter_le(1, 0, 3))
        assert g.satisfied((2,))
        assert not g.satisfied((4,))
        assert not g.satisfied((0,))


class TestUpdate:
    def test_identity(self):
        u = scm.Update.identity(3)
        assert u.apply((4, 0, 2)) == (4, 0, 2)

    def test_copy_zero_const(self):
        u = scm.Update.identity(3).assign_copy(2, 0).assign_zero(1)
        assert u.apply((4, 9, 1)) == (4, 0, 4)
        u2 = u.add_const(0, -1)
        assert u2.apply((4, 9, 1)) == (3, 0, 4)

    def test_negative_result_rejected(self):
        u = scm.Update.identity(1).add_const(0, -1)
        with pytest.raises(InvariantError):
            u.apply((0,))

    def test_fractional_result_rejected(self):
        u = scm.Update(matrix=((HALF,),), shift=(F(0),))
        with pytest.raises(InvariantError):
            u.apply((3,))


class TestScmValidation:
    def test_duplicate_states(self):
        with pytest.raises(ModelError):
            scm.Scm(states=("a", "a"), q0="a", c0=(), counters=(),
                    transitions=())

    def test_unknown_initial_state(self):
        with pytest.raises(ModelError):
            scm.Scm(states=("a",), q0="b", c0=(), counters=(),
                    transitions=())

    def test_negative_initial_counter(self):
        with pytest.raises(ModelError):
            scm.Scm(states=("a",), q0="a", c0=(-1,), counters=("x",),
                    transitions=())

    def test_zero_probability_rejected(self):
        t = scm.Transition("a", scm.Guard.true(), scm.Update.identity(1),
                           "a", F(0))
        with pytest.raises(ModelError):
            counter_machine([t], n_states=1)

    def test_update_width_mismatch(self):
        t = scm.Transition("a", scm.Guard.true(), scm.Update.identity(2),
                           "a", F(1))
        with pytest.raises(ModelError):
            counter_machine([t], n_states=1)

    def test_reward_unknown_state(self):
        with pytest.raises(ModelError):
            scm.Scm(states=("a",), q0="a", c0=(0,), counters=("x",),
                    transitions=(scm.Transition(
                        "a", scm.Guard.true(), scm.Update.identity(1),
                        "a", F(1)),),
                    rewards=(scm.Reward("b", scm.Guard.true(), F(1)),))


class TestValidateScm:
    def test_gadget_is_clean(self):
        g = replace(scm.build_binomial_gadget(HALF), c0=(3, 0, 0))
        report = scm.validate_scm(g)
        assert report.ok
        assert report.complete
        assert report.explored > 3

    def test_closure_violation(self):
        ident = scm.Update.identity(1)
        t = scm.Transition("a", scm.Guard.true(), ident, "a", HALF)
        report = scm.validate_scm(counter_machine([t], n_states=1))
        assert not report.ok
        assert any("closure" in v for v in report.violations)

    def test_determinism_violation(self):
        ident = scm.Update.identity(1)
        ts = [scm.Transition("a", scm.Guard.true(), ident, "a", HALF),
              scm.Transition("a", scm.Guard.true(), ident, "a", HALF)]
        report = scm.validate_scm(counter_machine(ts, n_states=1))
        assert any("determinism" in v for v in report.violations)

    def test_budget_gives_partial_report(self):
        ident = scm.Update.identity(1)
        ts = [scm.Transition("a", scm.Guard.true(), ident.add_const(0, 1),
                             "a", F(1))]
        report = scm.validate_scm(counter_machine(ts, n_states=1), budget=10)
        assert not report.complete
        assert report.explored == 10


class TestBinomialGadget:
    @pytest.mark.parametrize("p", [F(0), F(1, 4), HALF, F(3, 4), F(1)])
    @pytest.mark.parametrize("n", [0, 1, 3, 6])
    def test_exact_binomial_distribution(self, p, n):
        g = scm.build_binomial_gadget(p)
        d = scm.scm_distribution(g, ("q0", (n, 0, 0)), ("q2",))
        assert d.deficit == 0
        got = {c[1]: mass for (q, c), mass in d.masses.items()}
        for m in range(n + 1):
            assert got.get(m, F(0)) == binom_pmf(m, n, p)

    def test_source_count_survives(self):
        g = scm.build_binomial_gadget(HALF)
        d = scm.scm_distribution(g, ("q0", (4, 0, 0)), ("q2",))
        assert all(c[0] == 4 and c[2] == 0 for q, c in d.masses)

    def test_certain_success_is_a_point(self):
        g = scm.build_binomial_gadget(F(1))
        d = scm.scm_distribution(g, ("q0", (5, 0, 0)), ("q2",))
        assert d.masses == {("q2", (5, 5, 0)): F(1)}

    def test_probability_out_of_range(self):
        with pytest.raises(DomainError):
            scm.build_binomial_gadget(F(3, 2))


class TestBernoulliGadget:
    def test_single_stage(self):
        g = scm.build_bernoulli_gadget((F(1), HALF))
        d = scm.scm_distribution(g, ("q0", (1, 0)), ("qx", "qy"))
        by_state = {}
        for (q, c), mass in d.masses.items():
            by_state[q] = by_state.get(q, F(0)) + mass
        assert by_state == {"qx": HALF, "qy": HALF}

    def test_empty_counters_give_p0(self):
        g = scm.build_bernoulli_gadget((F(2, 7), HALF, F(1, 3)))
        d = scm.scm_distribution(g, ("q0", (0, 0, 0, 0)), ("qx", "qy"))
        qy = sum(m for (q, c), m in d.masses.items() if q == "qy")
        assert qy == F(2, 7)

    def test_zero_p0_fails_immediately(self):
        g = scm.build_bernoulli_gadget((F(0), HALF))
        d = scm.scm_distribution(g, ("q0", (3, 0)), ("qx", "qy"))
        assert list(d.masses) == [("qx", (3, 1))]

    def test_failure_increments_result(self):
        g = scm.build_bernoulli_gadget((HALF,))
        d = scm.scm_distribution(g, ("q0", (0,)), ("qx", "qy"))
        assert d.masses == {("qx", (1,)): HALF, ("qy", (0,)): HALF}

    @pytest.mark.parametrize("seed", [11, 23, 47])
    def test_survival_probability_product(self, seed):
        rng = random.Random(seed)
        k = rng.randint(1, 3)
        ps = [F(rng.randint(0, 8), 8) for _ in range(k + 1)]
        counts = tuple(rng.randint(0, 4) for _ in range(k))
        g = scm.build_bernoulli_gadget(ps)
        d = scm.scm_distribution(g, ("q0", counts + (0,)), ("qx", "qy"))
        qy = sum(m for (q, c), m in d.masses.items() if q == "qy")
        want = ps[0]
        for p, c in zip(ps[1:], counts):
            want *= p**c
        assert qy == want


def one_shot_chain():
    """Two compartments, constant transfer, no clamping ever."""
    return BinomialChain(
        names=("A", "B"), initial=(2, 0),
        transfers={(0, 1): LinearFn(coeffs=(F(0), F(0)), offset=F(1))},
        exp_table=ExpTable(entries={(0, 1, None): F(1, 3)}),
    )


def lone_compartment_chain():
    return BinomialChain(names=("A",), initial=(4,), transfers={},
                         exp_table=ExpTable(entries={}))


class TestCompile:
    def test_sir_size(self):
        m = scm.compile_bc_to_scm(sir_chain())
        assert len(m.states) == 6
        assert len(m.counters) == 7

    def test_size_ignores_population(self):
        small = scm.compile_bc_to_scm(sir_chain(initial=(1, 1, 0)))
        large = scm.compile_bc_to_scm(sir_chain(initial=(40, 9, 3)))
        assert len(small.states) == len(large.states)
        assert len(small.counters) == len(large.counters)
        assert small.states == large.states

    def test_initial_valuation(self):
        m = scm.compile_bc_to_scm(sir_chain(initial=(3, 2, 1)))
        assert m.c0 == (3, 2, 1, 0, 0, 0, 0)

    def test_compiled_machine_validates(self):
        m = scm.compile_bc_to_scm(sir_chain(initial=(2, 1, 0)))
        assert scm.validate_scm(m).ok

    def test_counter_name_collision_resolved(self):
        chain = BinomialChain(
            names=("acc0", "l0"), initial=(1, 0),
            transfers={(0, 1): LinearFn(coeffs=(F(0), F(0)), offset=F(1))},
            exp_table=ExpTable(entries={(0, 1, None): HALF}),
        )
        m = scm.compile_bc_to_scm(chain)
        assert len(set(m.counters)) == len(m.counters)

    def test_rejects_cyclic_chain(self):
        cyc = BinomialChain(
            names=("A", "B"), initial=(1, 1),
            transfers={
                (0, 1): LinearFn(coeffs=(F(0), F(0)), offset=F(1)),
                (1, 0): LinearFn(coeffs=(F(0), F(0)), offset=F(1)),
            })
        with pytest.raises(ModelError):
            scm.compile_bc_to_scm(cyc)

    def test_rejects_missing_table(self):
        with pytest.raises(ModelError):
            scm.compile_bc_to_scm(sir_chain(table=False))

    def test_empty_support_idles_without_reward(self):
        m = scm.compile_bc_to_scm(lone_compartment_chain())
        assert m.rewards == ()
        cfg = m.initial_configuration
        assert scm.step_distribution(m, cfg) == [(cfg, F(1))]
        assert scm.reward_at(m, cfg) == 0

    def test_absorbing_guard_support(self):
        assert scm.absorbing_guard_support(sir_chain()) == (1,)
        assert scm.absorbing_guard_support(two_exit_chain()) == (0,)
        assert scm.absorbing_guard_support(lone_compartment_chain()) == ()


class TestFaithfulness:
    def states_of_population(self, total, k=3):
        if k == 1:
            yield (total,)
            return
        for head in range(total + 1):
            for rest in self.states_of_population(total - head, k - 1):
                yield (head,) + rest

    @pytest.mark.parametrize("population", [1, 2, 3])
    def test_main_cycle_equals_one_step(self, population):
        for state in self.states_of_population(population):
            bc = sir_chain(initial=state)
            m = scm.compile_bc_to_scm(bc)
            d = scm.main_cycle_distribution(m, bc, state)
            assert d.deficit == 0
            got = {}
            for c, mass in d.on_counters().items():
                assert c[3:] == (0, 0, 0, 0)
                got[c[:3]] = mass
            assert got == semantics.successors(bc, state)

    @pytest.mark.parametrize("initial", [(1, 1, 0), (2, 1, 0), (1, 2, 0),
                                         (0, 3, 0), (1, 1, 1)])
    def test_expected_reward_equals_hitting_time(self, initial):
        bc = sir_chain(initial=initial)
        m = scm.compile_bc_to_scm(bc)
        guard = m.rewards[0].guard

        memo: dict = {}

        def expected_reward(state):
            if state in memo:
                return memo[state]
            cfg = scm.chain_configuration(m, bc, state)
            r = scm.reward_at(m, cfg)
            if not guard.satisfied(cfg[1]):
                memo[state] = F(0)
                return memo[state]
            d = scm.main_cycle_distribution(m, bc, state)
            total = r
            self_mass = F(0)
            for c, mass in d.on_counters().items():
                w = c[:3]
                if w == state:
                    self_mass = mass
                else:
                    total += mass * expected_reward(w)
            memo[state] = total / (1 - self_mass)
            return memo[state]

        ec = reach.build_reachable(bc)
        hit = reach.expected_hitting_times(ec)
        assert expected_reward(initial) == hit.initial

    def test_clamping_mass_becomes_deficit(self):
        bc = two_exit_chain()
        m = scm.compile_bc_to_scm(bc)
        d = scm.main_cycle_distribution(m, bc, (1, 0, 0))
        # Both exits firing on a single individual would drive A negative;
        # the chain clamps, the machine reports the mass as error deficit.
        assert d.deficit == F(1, 4)
        assert sum(d.masses.values(), F(0)) == F(3, 4)


class TestDistribution:
    def test_point_distribution_for_deterministic_machine(self):
        g = scm.build_binomial_gadget(F(1))
        d = scm.scm_distribution(g, ("q0", (2, 0, 0)), ("q2",))
        assert d.masses == {("q2", (2, 2, 0)): F(1)}
        assert d.total() == 1

    def test_reentry_needs_a_step(self):
        m = scm.compile_bc_to_scm(lone_compartment_chain())
        d = scm.scm_distribution(m, m.initial_configuration, (scm.MAIN_STATE,))
        assert d.masses == {m.initial_configuration: F(1)}

    def test_unknown_stop_state(self):
        g = scm.build_binomial_gadget(HALF)
        with pytest.raises(ModelError):
            scm.scm_distribution(g, ("q0", (1, 0, 0)), ("nowhere",))

    def test_budget_exhaustion(self):
        ident = scm.Update.identity(1)
        ts = [scm.Transition("a", scm.Guard.true(), ident.add_const(0, 1),
                             "a", F(1)),
              scm.Transition("b", scm.Guard.true(), ident, "b", F(1))]
        m = counter_machine(ts)
        with pytest.raises(ResourceCapError):
            scm.scm_distribution(m, ("a", (0,)), ("b",), budget=50)

    def test_dead_configuration(self):
        ts = [scm.Transition("b", scm.Guard.true(), scm.Update.identity(1),
                             "b", F(1))]
        m = counter_machine(ts)
        with pytest.raises(InvariantError):
            scm.scm_distribution(m, ("a", (0,)), ("b",))


class TestSimulate:
    def test_forced_gadget_trace_length(self):
        c1 = 4
        g = replace(scm.build_binomial_gadget(F(1)), c0=(c1, 0, 0))
        trace = scm.scm_simulate(g, seed=1, stop=("q2",))
        assert trace.stopped
        assert trace.steps == c1 + 2

    def test_same_seed_same_trace(self):
        g = replace(scm.build_binomial_gadget(HALF), c0=(5, 0, 0))
        t1 = scm.scm_simulate(g, seed=99, stop=("q2",))
        t2 = scm.scm_simulate(g, seed=99, stop=("q2",))
        assert t1.configurations == t2.configurations

    def test_max_steps_raises(self):
        g = replace(scm.build_binomial_gadget(HALF), c0=(5, 0, 0))
        with pytest.raises(ResourceCapError):
            scm.scm_simulate(g, seed=1, max_steps=2, stop=("q2",))

    def test_no_reward_once_absorbed(self):
        bc = sir_chain(initial=(2, 0, 1))
        m = scm.compile_bc_to_scm(bc)
        trace = scm.scm_simulate(m, seed=5, max_steps=40)
        assert not trace.stopped
        assert trace.reward == 0

    def test_mean_reward_tracks_hitting_time(self):
        bc = sir_chain(initial=(1, 1, 0))
        m = scm.compile_bc_to_scm(bc)
        idx_i = m.counters.index("I")

        def absorbed(cfg):
            return cfg[0] == scm.MAIN_STATE and cfg[1][idx_i] == 0

        runs = 10_000
        rng = random.Random(1234)
        total = 0.0
        totalsq = 0.0
        for _ in range(runs):
            t = scm.scm_simulate(m, seed=rng, stop=absorbed)
            r = float(t.reward)
            total += r
            totalsq += r * r
        mean = total / runs
        var = totalsq / runs - mean * mean
        sigma = (var / runs) ** 0.5
        want = float(F(26, 9))
        assert abs(mean - want) <= 3 * sigma + 1e-9

    def test_dilation_of_small_sir(self):
        bc = sir_chain(initial=(1, 1, 0))
        m = scm.compile_bc_to_scm(bc)
        # Longest cycle: dispatch, trial setup, survive, stage exit,
        # outer exit, init, recovery trial, exit-and-apply.
        assert scm.measure_dilation(m, bc, (1, 1, 0)) == 8


class TestDump:
    def test_deterministic(self):
        m = scm.compile_bc_to_scm(sir_chain())
        assert scm.dump_scm(m) == scm.dump_scm(m)

    def test_transitions_sorted(self):
        m = scm.compile_bc_to_scm(sir_chain())
        text = scm.dump_scm(m)
        rows = [l for l in text.splitlines() if l.startswith("trans ")]
        keys = [tuple(l.split()[1:4:2]) for l in rows]
        assert keys == sorted(keys)

    def test_rational_rendering(self):
        m = scm.compile_bc_to_scm(sir_chain())
        text = scm.dump_scm(m)
        assert "@ 1/2" in text
        assert "0.5" not in text

    def test_reward_line_present(self):
        text = scm.dump_scm(scm.compile_bc_to_scm(sir_chain()))
        assert any(l.startswith("reward main") for l in text.splitlines())
