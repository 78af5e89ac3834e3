# # From tree traversals to sentences
#
# Replaying a trace through the tree yields one event at the start and one at
# every change of predicted behaviour. Each event carries the simplified
# root-to-leaf conditions, which the template realizer turns into English.

# +
from helmexplain import (
    DEFAULT_SCHEMA,
    Lexicon,
    TemplateRealizer,
    detect_events,
    fit_tree,
    labelled_samples,
    load_scenario,
)
from helmexplain.explainer import featurized

scenario = load_scenario("obstacle_field")
run = scenario.run()
tree = fit_tree(labelled_samples(run.records, DEFAULT_SCHEMA))
realizer = TemplateRealizer(Lexicon.load())
# -

# +
events = list(detect_events(featurized(run.records, DEFAULT_SCHEMA), tree))
for event in events[:8]:
    print(realizer.realize(event.concept_set).text)
# -

# The obstacle events are the interesting ones: the range bound in the
# causality is the cutoff the tree learnt, not the helm's configured trigger.

for event in events:
    cs = event.concept_set
    if cs.behaviour.value == "avoid-obstacles":
        print([(c.feature, c.relation, c.value) for c in cs.causality])
