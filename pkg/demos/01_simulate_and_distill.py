# # Simulating a mission and distilling the helm
#
# The bundled obstacle-field scenario runs a survey, a transit leg through
# three obstacles and a surface recovery point. Every tick carries the
# behaviour the helm chose, which is all the distiller needs.

# +
from collections import Counter

from helmexplain import DEFAULT_SCHEMA, fidelity, fit_tree, labelled_samples, load_scenario

scenario = load_scenario("obstacle_field")
run = scenario.run()
print(len(run), "ticks, timed out:", run.timed_out)
print(Counter(b.value for b in run.behaviours))
# -

# Fit with the default parameters. The helm is deterministic, so the training
# trace is consistent and the tree reproduces it exactly.

# +
samples = labelled_samples(run.records, DEFAULT_SCHEMA)
tree = fit_tree(samples)
print("depth", tree.depth, "leaves", tree.n_leaves)
print("training fidelity", fidelity(tree, samples))
# -

# A second run with a different seed moves the obstacles and the start point.
# Agreement on it measures how well the tree generalises.

held_out = labelled_samples(scenario.run(seed=scenario.seed + 1).records, DEFAULT_SCHEMA)
print("held-out fidelity", fidelity(tree, held_out))
