"""Explain a behaviour-based vehicle autonomy through a distilled decision tree.

Pipeline: ``helm_sim`` produces labelled telemetry, ``distiller`` fits a
tree to it, ``explainer`` turns tree traversals into concept sets and
behaviour-change events, and ``verbalizer`` renders them as sentences.
"""

__version__ = "0.1.0"

from .telemetry import (  # noqa: E402
    DEFAULT_SCHEMA,
    BehaviourLabel,
    FeatureSchema,
    FeatureVector,
    TraceRecord,
    VehicleState,
    featurize,
    parse_trace_record,
    read_trace,
)
from .distiller import (  # noqa: E402
    DecisionTree,
    FitParams,
    deserialize_tree,
    fidelity,
    fit_tree,
    gini,
    labelled_samples,
    predict,
    serialize_tree,
)
from .explainer import (  # noqa: E402
    ConceptSet,
    ExplanationEvent,
    detect_events,
    extract_concept_set,
    simplify_path,
    staleness_guard,
    traverse,
)
from .helm_sim import HelmConfig, MissionPlan, load_scenario, run_mission, select_behaviour, step  # noqa: E402
from .verbalizer import Lexicon, TemplateRealizer, format_time, realize, realize_condition  # noqa: E402
