from fractions import Fraction

import pytest

from homcert.abstraction import (
    AbstractionError,
    HomomorphismMap,
    gap_report,
    identity_map,
    induce_policy,
    induce_process,
    measure_epsilon_mdp,
    partition_classes,
    representative_history,
    representative_policy,
    state_aggregation_map,
)
from homcert.dists import Categorical
from homcert.fixtures import build_region_chain, random_mdp_homomorphism, random_process
from homcert.history import (
    DiscountConfig,
    History,
    HistoryPolicy,
    context_universe,
    optimal_q,
    policy_values,
)

CFG = DiscountConfig(gamma=0.5, horizon=10)


def small_instance(seed=0):
    proc, pol = random_process(seed=seed, n_obs=2, n_actions=2, n_rewards=2,
                               memory=1)
    universe = context_universe(proc, 1, 4)
    return proc, pol, universe


def test_state_of_is_singleton_for_many_maps():
    # the structural form psi(h, a) = (f(h), g(h, a)) makes the state unique
    for seed in range(20):
        proc, _, universe = small_instance(seed)
        psi = identity_map(proc, universe)
        for h, _ in universe:
            states = {psi.pair(h, a)[0] for a in proc.alphabets.actions}
            assert len(states) == 1


def test_identity_map_classes_are_singletons():
    proc, _, universe = small_instance()
    psi = identity_map(proc, universe)
    histories = [h for h, _ in universe]
    classes = partition_classes(psi, histories, proc.alphabets.actions)
    for (s, b), members in classes.pairs.items():
        assert len(members) == 1
        assert psi.histories_of(s, b, histories, proc.alphabets.actions) == (
            members[0][0],)


def test_marginalized_queries():
    proc, _, universe = small_instance()
    psi = identity_map(proc, universe)
    histories = [h for h, _ in universe]
    h0 = histories[0]
    s0 = psi.state_of(h0)
    b0 = psi.action_of(h0, 0)
    assert psi.actions_of(s0, b0, h0, proc.alphabets.actions) == (0,)
    assert psi.actions_of(s0, b0, histories[1], proc.alphabets.actions) in ((), (0,))
    assert h0 in psi.histories_of_state(s0, histories)
    # unreachable state: empty result, not an error
    assert psi.histories_of_state("nowhere", histories) == () \
        if "nowhere" not in psi.states else True


def test_unreached_state_gives_empty_sets():
    proc, _, universe = small_instance()
    k = proc.memory_bound
    table = {h.context(k): h.context(k) for h, _ in universe}
    extra = "never-reached"
    psi = HomomorphismMap(
        states=tuple(table.values()) + (extra,),
        abstract_actions=proc.alphabets.actions,
        state_fn=lambda h: table[h.context(k)],
        action_fn=lambda h, a: a,
        memory_bound=k)
    histories = [h for h, _ in universe]
    assert psi.histories_of_state(extra, histories) == ()
    assert psi.histories_of(extra, 0, histories, proc.alphabets.actions) == ()
    with pytest.raises(AbstractionError):
        representative_history(psi, extra, histories, proc.alphabets)


def test_induce_process_relabeling_and_collapse():
    proc, _, universe = small_instance()
    # f reading the last observation bijectively: induced rows are relabelings
    obs_map = HomomorphismMap(
        states=proc.alphabets.observations + ("start",),
        abstract_actions=proc.alphabets.actions,
        state_fn=lambda h: h.last_observation() if len(h) else "start",
        action_fn=lambda h, a: a,
        memory_bound=1)
    induced = induce_process(proc, obs_map)
    h = universe[0][0]
    raw = proc.step(h, 0)
    lifted = induced.kernel(h, 0)
    for (o, r), p in raw.items():
        assert lifted[(o, r)] == pytest.approx(p)
    # collapsing everything to one state: induced next-state is certain
    one = HomomorphismMap(states=("all",), abstract_actions=proc.alphabets.actions,
                          state_fn=lambda h: "all", action_fn=lambda h, a: a,
                          memory_bound=0)
    collapsed = induce_process(proc, one).kernel(h, 0)
    assert sum(p for (s, _), p in collapsed.items() if s == "all") == pytest.approx(1.0)


def test_case1_chain_induced_state_probabilities():
    chain = build_region_chain(1, Fraction(1, 2))
    induced = induce_process(chain.process, chain.psi)
    r0 = chain.process.alphabets.rewards[0]
    # histories whose last pair lies in each of the two final regions
    h_4a = History(((1, 2, r0),))   # previous observation 2, alpha action next
    h_4b = History(((1, 1, r0),))
    row_4a = induced.kernel(h_4a, 1)
    row_4b = induced.kernel(h_4b, 1)
    p_x_4a = sum(p for (s, _), p in row_4a.items() if s == "X")
    p_x_4b = sum(p for (s, _), p in row_4b.items() if s == "X")
    assert p_x_4a == 0.0
    assert p_x_4b == 0.5


def test_induce_policy_renaming_and_merging():
    proc, pol, universe = small_instance()
    psi = identity_map(proc, universe)
    h = universe[1][0]
    raw = pol.probabilities(h)
    lifted = induce_policy(pol, psi).probabilities(h)
    for a, p in raw.items():
        assert lifted[a] == pytest.approx(p)
    both = HomomorphismMap(states=("all",), abstract_actions=("only",),
                           state_fn=lambda h: "all",
                           action_fn=lambda h, a: "only", memory_bound=0)
    merged = induce_policy(pol, both).probabilities(h)
    assert merged["only"] == pytest.approx(1.0)


def test_case3_policy_split_matches_construction():
    eps_prime = 0.2
    chain = build_region_chain(3, Fraction(1, 2), eps=Fraction(1, 10),
                               eps_prime=eps_prime)
    r0 = chain.process.alphabets.rewards[0]
    # histories arriving in the two halves of the split region (obs 4 vs 3)
    # after an R1 pair; per original action the policy rows differ by eps'
    h_2a = History(((1, 4, r0), (1, 4, r0)))
    h_2b = History(((1, 4, r0), (1, 3, r0)))
    row_a = chain.policy.probabilities(h_2a)
    row_b = chain.policy.probabilities(h_2b)
    for action in (3, 4):  # the merged abstract action's originals
        assert abs(row_a[action] - row_b[action]) == pytest.approx(eps_prime)
    induced = induce_policy(chain.policy, chain.psi)
    gap = abs(induced.probabilities(h_2a)["beta"] -
              induced.probabilities(h_2b)["beta"])
    assert gap == pytest.approx(2 * eps_prime)


def test_representative_policy_and_epsilon():
    proc, _, universe = small_instance()
    histories = [h for h, _ in universe]
    # two-history pre-image with rows (1,0) and (0,1): representative is the
    # lexicographically smaller history and the policy gap is 2
    k = proc.memory_bound
    ctxs = sorted({h.context(k) for h in histories}, key=repr)
    first_two = ctxs[:2]
    psi = HomomorphismMap(
        states=("merged", "rest"), abstract_actions=proc.alphabets.actions,
        state_fn=lambda h: "merged" if h.context(k) in first_two else "rest",
        action_fn=lambda h, a: a, memory_bound=k)
    members = psi.histories_of_state("merged", histories)
    rep = representative_history(psi, "merged", histories, proc.alphabets)
    assert rep == min(members, key=lambda h: h.sort_key(proc.alphabets))
    rows = {members[0]: Categorical.point(0), members[1]: Categorical.point(1)}
    pol = HistoryPolicy(rule=lambda h: rows.get(h, Categorical.point(0)),
                        memory_bound=None)
    induced = induce_policy(pol, psi)
    rep_row = representative_policy(induced, psi, "merged", histories,
                                    proc.alphabets)
    assert rep_row == induced.probabilities(rep)
    gap = max(rep_row.l1_distance(induced.probabilities(h)) for h in members)
    assert gap == pytest.approx(2.0)


def test_gap_report_identity_map_all_zero():
    proc, pol, universe = small_instance()
    psi = identity_map(proc, universe)
    vals = policy_values(proc, pol, CFG, universe)
    report = gap_report(proc, pol, psi, vals.q, CFG, universe)
    assert report.epsilon_mdp == 0.0
    assert report.epsilon_q_uniform == 0.0
    assert report.epsilon_v_uniform == 0.0
    assert report.epsilon_max == 0.0
    assert all(v == 0.0 for v in report.epsilon_q_rep.values())
    assert all(v == 0.0 for v in report.epsilon_pi_rep.values())
    assert report.tail_slack == pytest.approx(CFG.tail)


def test_gap_report_exact_mdp_fixture():
    fx = random_mdp_homomorphism(seed=5)
    universe = context_universe(fx.process, 1, 4)
    opt = optimal_q(fx.process, CFG, universe)
    report = gap_report(fx.process, opt.policy, fx.psi, opt.q, CFG, universe)
    assert report.epsilon_mdp <= 1e-12
    # merged pairs share optimal action-values when the induced process is
    # an MDP, up to the truncation tail
    assert report.epsilon_q_uniform <= CFG.tail + 1e-12


def test_gap_report_state_policy_is_class_uniform():
    fx = random_mdp_homomorphism(seed=9)
    universe = context_universe(fx.process, 1, 4)
    vals = policy_values(fx.process, fx.state_policy, CFG, universe)
    report = gap_report(fx.process, fx.state_policy, fx.psi, vals.q, CFG,
                        universe)
    assert all(v <= 1e-12 for v in report.epsilon_pi_rep.values())
    for v in report.epsilon_pi_rep.values():
        assert 0.0 <= v <= 2.0


def test_case1_epsilon_mdp_at_least_half():
    chain = build_region_chain(1, Fraction(1, 2))
    universe = context_universe(chain.process, 2, 5, behavior=chain.policy)
    vals = policy_values(chain.process, chain.policy, CFG, universe)
    report = gap_report(chain.process, chain.policy, chain.psi, vals.q, CFG,
                        universe)
    assert report.epsilon_mdp >= 0.5


def test_esa_reduction_matches_state_aggregation_oracle():
    """With an identity action map, every gap equals the state-only
    aggregation gap computed by direct dict arithmetic."""
    proc, pol, universe = small_instance(seed=7)

    def group(ctx):
        return "even" if len(ctx) % 2 == 0 else "odd"

    psi = state_aggregation_map(proc, universe, group)
    assert set(psi.abstract_actions) == set(proc.alphabets.actions)
    vals = policy_values(proc, pol, CFG, universe)
    report = gap_report(proc, pol, psi, vals.q, CFG, universe)

    # independent oracle over plain dicts
    histories = [h for h, _ in universe]
    k = proc.memory_bound
    groups: dict = {}
    for h in histories:
        groups.setdefault(group(h.context(k)), []).append(h)
    q_spread = max(
        max(vals.q.mid(h, a) for h in members) - min(vals.q.mid(h, a) for h in members)
        for members in groups.values() for a in proc.alphabets.actions)
    v_mid = {h: sum(pa * vals.q.mid(h, a) for a, pa in pol.probabilities(h).items())
             for h in histories}
    v_spread = max(max(v_mid[h] for h in members) - min(v_mid[h] for h in members)
                   for members in groups.values())
    assert report.epsilon_q_uniform == pytest.approx(q_spread)
    assert report.epsilon_v_uniform == pytest.approx(v_spread)
    pi_oracle = {}
    for name, members in groups.items():
        rep = min(members, key=lambda h: h.sort_key(proc.alphabets))
        pi_oracle[name] = max(
            pol.probabilities(rep).l1_distance(pol.probabilities(h))
            for h in members)
    for name, val in pi_oracle.items():
        assert report.epsilon_pi_rep[name] == pytest.approx(val)
