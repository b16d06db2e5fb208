"""Relational 3D scene graphs for grounding referential statements."""

from .evaluation import (
    McNemarResult,
    PairedOutcomeTable,
    RunReport,
    accuracy,
    compare_runs,
    mcnemar,
    random_baseline,
)
from .grounding import (
    GroundingResult,
    MessageSequence,
    PromptConfig,
    build_prompt,
    ground,
    oracle_ground,
    parse_model_output,
)
from .relations import RelationConfig, binary_relations, compute_relations, ordered_relations, ternary_between
from .scene import ClassGroup, ObjectNode, SceneGraph, SpatialEdge, build_scene_graph, class_groups
from .serialize import GraphVariant, serialize_edge, serialize_graph, serialize_node
from .statements import ReferentialStatement, SynonymTable, generate_statements, is_ambiguous, sample_synonym_statements
from .vision import GeneratedEdge, Observation, OutlineStyle, generate_open_edge, outline_objects, select_image, substitute_edges

__version__ = "0.1.0"
