"""Breaking one-step model similarity while preserving action-values.

At one cell below the diagonal the up/down dynamics are swapped and the
rewards compensated by the solved neighbor-value difference.  The one-step
kernel at that cell then disagrees maximally with its mirror, yet every
optimal action-value is unchanged: the merge survives as an action-value
abstraction even though it stops being a model abstraction.
"""

from homcert import DiscountConfig, History, context_universe, optimal_q, value_iteration
from homcert.abstraction import induce_process, measure_epsilon_mdp, partition_classes
from homcert.fixtures import build_modified_gridworld

cfg = DiscountConfig(gamma=0.9, horizon=200)
bundle = build_modified_gridworld(cfg=DiscountConfig(gamma=0.9, horizon=40))
base, modified = bundle.base, bundle.modified
sc = bundle.swap_cell

print(f"Swap cell: {sc} (merged with its mirror {bundle.mirror_cell})")
print(f"Compensation: moving up now pays {float(bundle.r_up):+.4f}, "
      f"moving down {float(bundle.r_down):+.4f} (raw units, step reward "
      f"{float(base.spec.r_step):+.4f})")

base_sol = value_iteration(base.cell_mdp, cfg, 1e-12)
mod_sol = value_iteration(modified.cell_mdp, cfg, 1e-12)
print("\nOptimal action-values at the swap cell:")
for a in ("up", "down", "left", "right"):
    print(f"  {a:5s}  base {base_sol.q[(sc, a)]:.8f}   "
          f"swapped {mod_sol.q[(sc, a)]:.8f}   "
          f"|diff| {abs(base_sol.q[(sc, a)] - mod_sol.q[(sc, a)]):.2e}")

r0 = base.process.alphabets.rewards[0]
probe = History((("up", sc, r0),))
tv = base.process.step(probe, "up").tv_distance(modified.process.step(probe, "up"))
print(f"\nOne-step kernel total-variation distance at {sc}: {tv:.1f}")


def spread(world):
    universe = context_universe(world.process, 1, 14)
    opt = optimal_q(world.process, cfg, universe)
    classes = partition_classes(world.psi, [h for h, _ in universe],
                                world.process.alphabets.actions)
    q_gap = max(
        max(opt.q.mid(h, a) for h, a in members) -
        min(opt.q.mid(h, a) for h, a in members)
        for members in classes.pairs.values())
    model_gap = measure_epsilon_mdp(
        induce_process(world.process, world.psi), classes)
    return q_gap, model_gap


base_q, base_m = spread(base)
mod_q, mod_m = spread(modified)
print("\nMerge-quality numbers (action-value spread / one-step model gap):")
print(f"  base    {base_q:.6f} / {base_m:.3f}")
print(f"  swapped {mod_q:.6f} / {mod_m:.3f}")
print(f"  action-value spread drift: {abs(base_q - mod_q):.2e} "
      "(the abstraction is as good as before)")
