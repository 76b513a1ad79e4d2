"""Instance-level causal structure discovery for microservice metrics."""

__version__ = "0.1.0"

from .errors import (CausilError, CycleDetected, CyclicTemplate, DegenerateData, InconsistentPattern,
                     InsufficientData, InvalidConfig, MissingData, NodeSetMismatch)
from .graph import (Dag, Knowledge, MetricCategory, MetricNode, Pdag, ServiceCallGraph, apply_meek_rules,
                    cpdag_to_dag, dag_to_cpdag)
from .score import EstimatorKind, ScoreParams, StackedDataset, local_score
from .ges import GesConfig, run_fges
from .datagen import MetricPanel, SimConfig, generate_synthetic
from .pipeline import DiscoveryConfig, Method, discover_aggregated, discover_causil, generate_domain_knowledge
from .evaluate import EvalReport, evaluate

__all__ = [
    "CausilError", "CycleDetected", "CyclicTemplate", "DegenerateData", "InconsistentPattern",
    "InsufficientData", "InvalidConfig", "MissingData", "NodeSetMismatch",
    "Dag", "Knowledge", "MetricCategory", "MetricNode", "Pdag", "ServiceCallGraph", "apply_meek_rules",
    "cpdag_to_dag", "dag_to_cpdag",
    "EstimatorKind", "ScoreParams", "StackedDataset", "local_score",
    "GesConfig", "run_fges",
    "MetricPanel", "SimConfig", "generate_synthetic",
    "DiscoveryConfig", "Method", "discover_aggregated", "discover_causil", "generate_domain_knowledge",
    "EvalReport", "evaluate",
]
