from fractions import Fraction

import pytest

from homcert.abstraction import identity_map
from homcert.certify import (
    CertificationContext,
    UpliftInfeasibleError,
    certificate_slack,
    certify,
    evaluate_uplift,
    mdp_action_gap_certificate,
    uplift_policy,
)
from homcert.fixtures import (
    build_gridworld,
    build_q_uniform_map,
    build_region_chain,
    context_mdp,
    random_mdp,
    random_mdp_homomorphism,
    random_process,
)
from homcert.history import (
    DiscountConfig,
    History,
    context_universe,
    optimal_q,
)
from homcert.solver import AbstractPolicy, policy_evaluation, value_iteration

CFG = DiscountConfig(gamma=0.5, horizon=12)


def exact_context(seed=0, horizon=12):
    fx = random_mdp_homomorphism(seed=seed)
    cfg = DiscountConfig(gamma=0.5, horizon=horizon)
    universe = context_universe(fx.process, 1, 5)
    return fx, CertificationContext(process=fx.process, psi=fx.psi, cfg=cfg,
                                    universe=universe, policy=fx.state_policy)


def quniform_context(seed=0, eps_target=0.1, policy=False, mode="uniform"):
    proc, pol = random_process(seed=seed, n_obs=2, n_actions=3, n_rewards=2,
                               memory=1)
    universe = context_universe(proc, 1, 5)
    opt = optimal_q(proc, CFG, universe)
    psi = build_q_uniform_map(proc, opt.q, eps_target, CFG, universe)
    return proc, CertificationContext(
        process=proc, psi=psi, cfg=CFG, universe=universe,
        policy=pol if policy else None, inverse_mode=mode)


# --- uplift -----------------------------------------------------------------

def test_uplift_identity_map_reproduces_abstract_policy():
    proc, _ = random_process(seed=1, n_obs=2, n_actions=2, n_rewards=2, memory=1)
    universe = context_universe(proc, 1, 4)
    psi = identity_map(proc, universe)
    ctx = CertificationContext(process=proc, psi=psi, cfg=CFG, universe=universe)
    lifted = ctx.uplifted
    for h, _ in universe:
        s = psi.state_of(h)
        assert lifted.policy.probabilities(h).support()[0] == \
            lifted.abstract.action(s)


def test_uplift_gridworld_mirrors_concrete_actions():
    gw = build_gridworld()
    cfg = DiscountConfig(gamma=0.9, horizon=60)
    sol = value_iteration(gw.cell_mdp, cfg, 1e-10)
    abstract = AbstractPolicy.from_actions(
        {s: sol.policy.action(s) for s in gw.psi.states})
    lifted = uplift_policy(abstract, gw.psi, gw.process.alphabets.actions)
    r0 = gw.process.alphabets.rewards[0]
    above = History((("up", (1, 4), r0),))
    below = History((("up", (4, 1), r0),))
    a_above = lifted.policy.probabilities(above).support()[0]
    a_below = lifted.policy.probabilities(below).support()[0]
    # mirrored cells realize the same abstract move with mirrored actions
    assert gw.psi.action_of(above, a_above) == gw.psi.action_of(below, a_below)
    assert {a_above, a_below} in ({"up", "right"}, {"down", "left"},
                                  {"up"}, {"right"}, {"down"}, {"left"})


def test_uplift_infeasible_reports_offender():
    proc, _ = random_process(seed=1, n_obs=2, n_actions=2, n_rewards=2, memory=1)
    universe = context_universe(proc, 1, 3)
    psi = identity_map(proc, universe)
    missing = AbstractPolicy.from_actions(
        {psi.state_of(h): "no-such-action" for h, _ in universe})
    with pytest.raises(UpliftInfeasibleError):
        lifted = uplift_policy(missing, psi, proc.alphabets.actions)
        lifted.policy.probabilities(universe[0][0])


def test_evaluate_uplift_matches_mdp_oracle():
    proc, _ = random_process(seed=8, n_obs=2, n_actions=2, n_rewards=2, memory=1)
    universe = context_universe(proc, 1, 4)
    ctx = CertificationContext(process=proc, psi=identity_map(proc, universe),
                               cfg=CFG, universe=universe)
    vals = evaluate_uplift(proc, ctx.uplifted, CFG, universe)
    mdp = context_mdp(proc)
    ev = policy_evaluation(
        mdp,
        AbstractPolicy.from_actions(
            {h.context(1): ctx.uplifted.policy.probabilities(h).support()[0]
             for h, _ in universe}),
        CFG, 1e-12)
    for h, _ in universe:
        assert abs(ev.v[h.context(1)] - vals.v.mid(h)) <= CFG.tail


# --- individual certificate kinds -------------------------------------------

def test_t3_equality_and_tightness_on_exact_fixture():
    fx, ctx = exact_context(seed=4)
    cert = certify("T3_mdp_star", ctx)
    assert cert.passed
    for clause in cert.clauses:
        assert clause.rhs == 0.0
        assert abs(clause.lhs) <= cert.slack  # equality up to truncation
    assert cert.inputs["hypothesis_epsilon_mdp"] <= 1e-12


def test_t1_t2_on_exact_fixture_with_state_policy():
    _, ctx = exact_context(seed=6)
    c1 = certify("T1_mdp_pi", ctx)
    c2 = certify("T2_mdp_exact", ctx)
    assert c1.passed and c2.passed
    assert c2.inputs["hypothesis_policy_similarity"] <= 1e-12


def test_t5_formula_and_both_inverse_modes():
    for mode in ("uniform", "visitation"):
        proc, ctx = quniform_context(seed=5, eps_target=0.1, mode=mode)
        cert = certify("T5_q_star", ctx)
        assert cert.passed
        eps = cert.inputs["epsilon"]
        gamma = ctx.cfg.gamma
        by_name = {c.name: c for c in cert.clauses}
        assert by_name["action_value"].rhs == pytest.approx(2 * eps / (1 - gamma))
        assert by_name["uplift_loss"].rhs == pytest.approx(4 * eps / (1 - gamma) ** 2)
        # the value clause's bound never exceeds the uplift clause's
        assert by_name["value"].rhs <= by_name["uplift_loss"].rhs + 1e-15
        # the documented arithmetic: eps = 0.1, gamma = 0.5 gives 1.6
        if abs(eps - 0.1) < 1e-9:
            assert by_name["uplift_loss"].rhs == pytest.approx(1.6)


def test_t5_uplift_loss_measured_by_brute_force():
    proc, ctx = quniform_context(seed=9, eps_target=0.1)
    cert = certify("T5_q_star", ctx)
    lifted = ctx.uplifted
    vals = evaluate_uplift(proc, lifted, ctx.cfg, ctx.universe)
    worst = max(ctx.optimal.v.mid(h) - vals.v.mid(h) for h in ctx.histories)
    by_name = {c.name: c for c in cert.clauses}
    assert by_name["uplift_loss"].lhs == pytest.approx(worst)
    assert worst <= by_name["uplift_loss"].rhs + cert.slack


def test_t4_t6_lqbq_on_policy_contexts():
    for seed in (1, 3):
        proc, ctx = quniform_context(seed=seed, eps_target=0.2, policy=True)
        for kind in ("T4_q_pi", "T6_v_pi", "L_qbq"):
            cert = certify(kind, ctx)
            assert cert.passed, (seed, kind, cert.as_dict())


def test_t7_exact_case_checks_action_identity():
    fx, _ = exact_context(seed=2)
    universe = context_universe(fx.process, 1, 5)
    ctx = CertificationContext(process=fx.process, psi=fx.psi,
                               cfg=DiscountConfig(gamma=0.5, horizon=14),
                               universe=universe)
    cert = certify("T7_v_star", ctx)
    assert cert.passed
    assert cert.inputs.get("exact_case") == 1.0
    by_name = {c.name: c for c in cert.clauses}
    assert by_name["optimal_action_identity"].lhs == 0.0


def test_l_subopt_action_on_histories_and_mdp():
    proc, ctx = quniform_context(seed=4, eps_target=0.2)
    cert = certify("L_subopt_action", ctx)
    assert cert.passed

    mdp = random_mdp(11, n_states=5, n_actions=3, n_rewards=2)
    cfg = DiscountConfig(gamma=0.8, horizon=10)
    star = value_iteration(mdp, cfg, 1e-12)
    # one-step eps-suboptimal policy: pick the worst action within eps of best
    eps = 0.15
    choices = {}
    for s in mdp.states:
        ok = [b for b in mdp.available(s)
              if star.v[s] - star.q[(s, b)] <= eps]
        choices[s] = min(ok, key=lambda b: star.q[(s, b)])
    cert2 = mdp_action_gap_certificate(mdp, AbstractPolicy.from_actions(choices),
                                       cfg)
    assert cert2.passed
    assert cert2.inputs["epsilon"] <= eps + 1e-12


def test_unknown_kind_rejected():
    proc, ctx = quniform_context()
    with pytest.raises(Exception):
        certify("T9_imaginary", ctx)


def test_certificate_records_round_trip():
    _, ctx = exact_context(seed=1)
    cert = certify("T3_mdp_star", ctx)
    recs = cert.as_records()
    assert all(set(r) == {"kind", "clause", "lhs", "rhs", "slack", "pass"}
               for r in recs)
    assert cert.as_dict()["pass"] == cert.passed
    assert cert.lhs >= cert.rhs - 1e-12 or cert.passed


def test_slack_scales_with_tail():
    small = certificate_slack("T5_q_star", DiscountConfig(gamma=0.5, horizon=20))
    big = certificate_slack("T5_q_star", DiscountConfig(gamma=0.5, horizon=5))
    assert small < big
    assert certificate_slack("T3_mdp_star", CFG) == pytest.approx(
        CFG.tail + 1e-9)


def test_region_chain_t3_fails_honestly_with_measured_hypothesis():
    chain = build_region_chain(1, Fraction(1, 2))
    universe = context_universe(chain.process, 2, 6, behavior=chain.policy)
    ctx = CertificationContext(process=chain.process, psi=chain.psi,
                               cfg=DiscountConfig(gamma=0.5, horizon=20),
                               universe=universe, policy=chain.policy,
                               behavior=chain.policy)
    cert = certify("T3_mdp_star", ctx)
    assert not cert.passed  # hypothesis violated: recorded, not errored
    assert cert.inputs["hypothesis_epsilon_mdp"] >= 0.5
