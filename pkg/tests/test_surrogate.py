from fractions import Fraction

import pytest

from homcert.abstraction import identity_map, induce_process
from homcert.dists import Categorical
from homcert.fixtures import build_region_chain, random_mdp_homomorphism, random_process
from homcert.history import (
    DiscountConfig,
    HistoryPolicy,
    context_universe,
    optimal_q,
    policy_values,
)
from homcert.solver import AbstractPolicy
from homcert.surrogate import (
    DegenerateSupportError,
    InverseError,
    StochasticInverse,
    b_average_q,
    build_inverse,
    class_joint,
    epsilon_b,
    induced_action_measure,
    induced_action_weights,
    surrogate_mdp,
)

CFG = DiscountConfig(gamma=0.5, horizon=10)


def instance(seed=0, memory=1, depth=4):
    proc, pol = random_process(seed=seed, n_obs=2, n_actions=2, n_rewards=2,
                               memory=memory)
    universe = context_universe(proc, memory, depth)
    return proc, pol, universe


def test_uniform_inverse_singletons_and_pairs():
    proc, _, universe = instance()
    psi = identity_map(proc, universe)
    inv = build_inverse(psi, universe, "uniform", actions=proc.alphabets.actions)
    for key in inv.classes():
        dist = inv.distribution(*key)
        assert len(dist) == 1  # identity classes are singletons


def test_uniform_inverse_equal_weights():
    proc, _, universe = instance()
    k = proc.memory_bound
    ctxs = sorted({h.context(k) for h, _ in universe}, key=repr)
    pair = ctxs[:2]
    from homcert.abstraction import HomomorphismMap
    psi = HomomorphismMap(
        states=("m", "r"), abstract_actions=proc.alphabets.actions,
        state_fn=lambda h: "m" if h.context(k) in pair else "r",
        action_fn=lambda h, a: a, memory_bound=k)
    inv = build_inverse(psi, universe, "uniform", actions=proc.alphabets.actions)
    dist = inv.distribution("m", 0)
    assert len(dist) == 2
    for _, w in dist.items():
        assert w == pytest.approx(0.5)


def test_visitation_inverse_renormalizes_reach():
    # reach probabilities 0.2 and 0.6 on a two-member class: weights 1/4, 3/4
    proc, _, universe = instance()
    k = proc.memory_bound
    h1, h2 = universe[1][0], universe[2][0]
    fake_universe = [(h1, 0.2), (h2, 0.6)]
    from homcert.abstraction import HomomorphismMap
    psi = HomomorphismMap(
        states=("m",), abstract_actions=(0,),
        state_fn=lambda h: "m", action_fn=lambda h, a: 0, memory_bound=k)
    behavior = HistoryPolicy.deterministic(lambda h: 0, memory_bound=0)
    only0 = [0]
    inv = build_inverse(psi, fake_universe, "visitation", actions=only0,
                        behavior=behavior)
    dist = inv.distribution("m", 0)
    assert dist[(h1, 0)] == pytest.approx(0.25)
    assert dist[(h2, 0)] == pytest.approx(0.75)


def test_visitation_needs_behavior_and_mass():
    proc, _, universe = instance()
    psi = identity_map(proc, universe)
    with pytest.raises(InverseError):
        build_inverse(psi, universe, "visitation", actions=proc.alphabets.actions)
    never = HistoryPolicy.deterministic(lambda h: 1, memory_bound=0)
    with pytest.raises(InverseError):
        build_inverse(psi, universe, "visitation", actions=proc.alphabets.actions,
                      behavior=never)


def test_support_constraint_enforced():
    proc, _, universe = instance()
    psi = identity_map(proc, universe)
    h = universe[0][0]
    other = universe[1][0]
    wrong = {psi.pair(h, 0): Categorical.point((other, 0))}
    with pytest.raises(InverseError):
        StochasticInverse(psi=psi, weights=wrong)


def test_surrogate_rows_normalize_and_rewards_in_range():
    proc, _, universe = instance()
    psi = identity_map(proc, universe)
    inv = build_inverse(psi, universe, "uniform", actions=proc.alphabets.actions)
    mdp = surrogate_mdp(induce_process(proc, psi), inv)
    for row in mdp.kernel.values():
        assert abs(sum(p for _, p in row.items()) - 1.0) <= 1e-12
        for (_, r), _ in row.items():
            assert 0 <= r <= 1


def test_exact_mdp_fixture_is_inverse_independent():
    fx = random_mdp_homomorphism(seed=3)
    universe = context_universe(fx.process, 1, 4)
    induced = induce_process(fx.process, fx.psi)
    uniform = build_inverse(fx.psi, universe, "uniform",
                            actions=fx.process.alphabets.actions)
    behavior = HistoryPolicy.uniform(fx.process.alphabets)
    visitation = build_inverse(fx.psi, universe, "visitation",
                               actions=fx.process.alphabets.actions,
                               behavior=behavior)
    m1 = surrogate_mdp(induced, uniform)
    m2 = surrogate_mdp(induced, visitation)
    assert set(m1.kernel) == set(m2.kernel)
    for key in m1.kernel:
        assert m1.kernel[key].allclose(m2.kernel[key], atol=1e-12)
        # and both agree with the reference abstract model
        ref = fx.reference_mdp.kernel[key]
        assert m1.kernel[key].allclose(ref, atol=1e-12)


def test_identity_surrogate_reproduces_kernel():
    proc, _, universe = instance()
    psi = identity_map(proc, universe)
    inv = build_inverse(psi, universe, "uniform", actions=proc.alphabets.actions)
    mdp = surrogate_mdp(induce_process(proc, psi), inv)
    k = proc.memory_bound
    for h, _ in universe:
        ctx = h.context(k)
        for a in proc.alphabets.actions:
            row = mdp.kernel[(ctx, a)]
            for (o, r), p in proc.step(h, a).items():
                ctx2 = h.extend(a, o, r).context(k)
                assert row[(ctx2, r)] == pytest.approx(p)


def test_case1_hand_weighted_inverse_mixture():
    """Two-thirds/one-third weights on the two final regions give the
    documented 1/6 probability of staying in the merged state."""
    chain = build_region_chain(1, Fraction(1, 2))
    proc = chain.process
    universe = context_universe(proc, 2, 5, behavior=chain.policy)
    histories = [h for h, _ in universe]
    induced = induce_process(proc, chain.psi)
    in_4a, in_4b = [], []
    for h in histories:
        if len(h) == 0:
            continue
        for a in (1, 2):  # alpha-block actions
            region = chain.region_of_pair(h.last_observation(), a)
            if region == "R4a":
                in_4a.append((h, a))
            elif region == "R4b":
                in_4b.append((h, a))
    assert in_4a and in_4b
    weights = [(ha, (2.0 / 3.0) / len(in_4a)) for ha in in_4a]
    weights += [(ha, (1.0 / 3.0) / len(in_4b)) for ha in in_4b]
    inv = StochasticInverse(psi=chain.psi,
                            weights={("X", "alpha"): Categorical(weights)})
    row = surrogate_mdp(induced, inv).kernel[("X", "alpha")]
    p_stay = sum(p for (s, _), p in row.items() if s == "X")
    assert p_stay == pytest.approx(1.0 / 6.0)


def test_b_average_constant_and_midpoint():
    proc, pol, universe = instance()
    psi = identity_map(proc, universe)
    inv = build_inverse(psi, universe, "uniform", actions=proc.alphabets.actions)
    vals = policy_values(proc, pol, CFG, universe)
    for key in list(inv.classes())[:5]:
        (h, a), _ = inv.distribution(*key).items()[0]
        assert b_average_q(vals.q, inv, *key) == pytest.approx(vals.q.mid(h, a))


def test_b_average_two_member_arithmetic_and_convexity():
    proc, pol, universe = instance()
    k = proc.memory_bound
    from homcert.abstraction import HomomorphismMap
    psi = HomomorphismMap(
        states=("m",), abstract_actions=("b",),
        state_fn=lambda h: "m", action_fn=lambda h, a: "b", memory_bound=k)
    inv = build_inverse(psi, universe, "uniform", actions=proc.alphabets.actions)
    vals = policy_values(proc, pol, CFG, universe)
    avg = b_average_q(vals.q, inv, "m", "b")
    members = [vals.q.mid(h, a) for (h, a), _ in inv.distribution("m", "b").items()]
    assert min(members) - 1e-12 <= avg <= max(members) + 1e-12
    assert avg == pytest.approx(sum(members) / len(members))


def joint_for(proc, universe, psi, behavior=None):
    behavior = behavior or HistoryPolicy.uniform(proc.alphabets)
    inv = build_inverse(psi, universe, "uniform", actions=proc.alphabets.actions)
    return inv, class_joint(psi, universe, inv, behavior,
                            actions=proc.alphabets.actions)


def test_induced_action_measure_singleton_point_mass():
    proc, _, universe = instance()
    psi = identity_map(proc, universe)
    inv, joint = joint_for(proc, universe, psi)
    h = universe[2][0]
    s = psi.state_of(h)
    pi = AbstractPolicy.from_actions({psi.state_of(hh): psi.action_of(hh, 0)
                                      for hh, _ in universe})
    measure = induced_action_measure(joint, pi, h, s,
                                     actions=proc.alphabets.actions)
    assert measure.support() == (0,)


def test_shadow_agent_property():
    """When the policy equals the inverse's abstract-action marginal, the
    induced measure reduces to the joint's own action conditional."""
    proc, _, universe = instance(seed=5)
    psi = identity_map(proc, universe)
    inv, joint = joint_for(proc, universe, psi)
    h = universe[3][0]
    s = psi.state_of(h)
    rules = {st: Categorical([(b, joint.abstract_action_weight(st, b))
                              for b in psi.abstract_actions
                              if joint.abstract_action_weight(st, b) > 0])
             for st in {psi.state_of(hh) for hh, _ in universe}}
    pi = AbstractPolicy(rules)
    weights = induced_action_weights(joint, pi, h, s,
                                     actions=proc.alphabets.actions)
    for a in proc.alphabets.actions:
        assert weights[a] == pytest.approx(joint.action_pair_weight(h, a))


def test_uniform_quotient_example():
    """Uniform policy over two abstract actions and uniform conditionals give
    the uniform induced measure over original actions."""
    proc, _, universe = instance()
    k = proc.memory_bound
    from homcert.abstraction import HomomorphismMap
    psi = HomomorphismMap(
        states=("m",), abstract_actions=("b0", "b1"),
        state_fn=lambda h: "m",
        action_fn=lambda h, a: f"b{a}", memory_bound=k)
    inv, joint = joint_for(proc, universe, psi)
    pi = AbstractPolicy({"m": Categorical([("b0", 0.5), ("b1", 0.5)])})
    h = universe[1][0]
    measure = induced_action_measure(joint, pi, h, "m",
                                     actions=proc.alphabets.actions)
    for a in proc.alphabets.actions:
        assert measure[a] == pytest.approx(0.5)


def test_degenerate_support_error():
    proc, _, universe = instance()
    k = proc.memory_bound
    from homcert.abstraction import HomomorphismMap
    psi = HomomorphismMap(
        states=("m",), abstract_actions=("b0", "b1"),
        state_fn=lambda h: "m",
        action_fn=lambda h, a: f"b{a}", memory_bound=k)
    behavior = HistoryPolicy.deterministic(lambda h: 0, memory_bound=0)
    inv = build_inverse(psi, universe, "uniform", actions=proc.alphabets.actions)
    joint = class_joint(psi, universe, inv, behavior,
                        actions=proc.alphabets.actions)
    pi = AbstractPolicy({"m": Categorical([("b1", 1.0)])})
    h = universe[1][0]
    with pytest.raises(DegenerateSupportError):
        induced_action_weights(joint, pi, h, "m", actions=proc.alphabets.actions)


def test_epsilon_b_zero_for_identity_uplift():
    """Singleton classes with the policy uplifted from its own induced
    abstract policy reproduce the values exactly."""
    proc, _, universe = instance(seed=2)
    psi = identity_map(proc, universe)
    opt = optimal_q(proc, CFG, universe)
    vals = policy_values(proc, opt.policy, CFG, universe)
    inv, joint = joint_for(proc, universe, psi)
    # abstract policy matching the greedy policy through the identity map
    rules = {}
    for h, _ in universe:
        s = psi.state_of(h)
        a = opt.policy.probabilities(h).support()[0]
        rules[s] = Categorical.point(psi.action_of(h, a))
    pi = AbstractPolicy(rules, deterministic=True)
    eps = epsilon_b(vals.q, vals.v, joint, pi, psi,
                    [h for h, _ in universe], actions=proc.alphabets.actions)
    assert eps <= 1e-12
