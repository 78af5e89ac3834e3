# # Explaining with stale telemetry
#
# Underwater links drop out. The explainer keeps using the last known value
# of a feature and flags it, so the sentence discloses which facts may be old.

# +
from helmexplain import (
    DEFAULT_SCHEMA,
    Lexicon,
    extract_concept_set,
    featurize,
    fit_tree,
    labelled_samples,
    load_scenario,
    realize,
    staleness_guard,
    traverse,
)

run = load_scenario("obstacle_field").run()
tree = fit_tree(labelled_samples(run.records, DEFAULT_SCHEMA))
lex = Lexicon.load()
# -

# Take the first tick where the vehicle is avoiding an obstacle and pretend the
# sonar range has not been refreshed for two minutes.

# +
record = next(r for r in run.records if r.behaviour.value == "avoid-obstacles")
fv = staleness_guard(featurize(record.state), {"obstacle_range": 120.0}, max_age=30.0)
cs = extract_concept_set(traverse(tree, fv), record.state)
print(realize(cs, lex).text)
print(realize(cs, lex, "wall").text)
# -
