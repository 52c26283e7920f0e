"""Simulation of an auditor/debiaser feedback loop around a classifier under drift."""

from .auditor import (
    AnytimeAuditorState,
    AuditEstimate,
    AuditorConfig,
    ManipulationCertificate,
    Sampler,
    audit_anytime,
    audit_once,
    is_within,
    manipulation_certificate,
    sample_complexity,
)
from .debiaser import DebiasDecision, DebiaserConfig, oracle_debias, post_process, reweigh
from .game import GameConfig, GameTrace, RoundRecord, regret, run, value
from .metrics import JointTable, MetricKind, MetricValue, empirical_metric, exact_metric
from .model import Classifier, LogisticParams, ThresholdPolicy, TrainConfig, predict, prediction_distribution, train_erm
from .population import Dataset, DriftSchedule, PopulationSpec, Sample, draw, enumerate_cells, spec_at

__version__ = "0.1.0"

__all__ = [
    "AnytimeAuditorState",
    "AuditEstimate",
    "AuditorConfig",
    "ManipulationCertificate",
    "Sampler",
    "audit_anytime",
    "audit_once",
    "is_within",
    "manipulation_certificate",
    "sample_complexity",
    "DebiasDecision",
    "DebiaserConfig",
    "oracle_debias",
    "post_process",
    "reweigh",
    "GameConfig",
    "GameTrace",
    "RoundRecord",
    "regret",
    "run",
    "value",
    "JointTable",
    "MetricKind",
    "MetricValue",
    "empirical_metric",
    "exact_metric",
    "Classifier",
    "LogisticParams",
    "ThresholdPolicy",
    "TrainConfig",
    "predict",
    "prediction_distribution",
    "train_erm",
    "Dataset",
    "DriftSchedule",
    "PopulationSpec",
    "Sample",
    "draw",
    "enumerate_cells",
    "spec_at",
]
