"""Explanation read-outs computed directly from model state."""

from .attribution import AttributionVector, CrossLayerAttribution, attribute, cross_layer_attribution
from .drift import DriftAlarm, DriftMonitor, drift_step
from .dynamics import AttractorDiagnostics, Counterfactual, attractor_diagnostics, counterfactual
from .posterior import (
    PosteriorReport,
    SurpriseScore,
    auroc,
    entropy,
    expected_calibration_error,
    margin,
    margin_from_posterior,
    margin_trajectory,
    margins,
    posterior_with_entropy,
    surprise,
    surprise_from_posterior,
)
from .robustness import METRIC, RobustnessCertificate, certificates, certified_radius, optimal_perturbation
from .structure import Connection, ImportanceGraph, ReceptiveField, global_importance, receptive_field

__all__ = [
    "AttractorDiagnostics",
    "AttributionVector",
    "Connection",
    "Counterfactual",
    "CrossLayerAttribution",
    "DriftAlarm",
    "DriftMonitor",
    "ImportanceGraph",
    "METRIC",
    "PosteriorReport",
    "ReceptiveField",
    "RobustnessCertificate",
    "SurpriseScore",
    "attractor_diagnostics",
    "attribute",
    "auroc",
    "certificates",
    "certified_radius",
    "counterfactual",
    "cross_layer_attribution",
    "drift_step",
    "entropy",
    "expected_calibration_error",
    "global_importance",
    "margin",
    "margin_from_posterior",
    "margin_trajectory",
    "margins",
    "optimal_perturbation",
    "posterior_with_entropy",
    "receptive_field",
    "surprise",
    "surprise_from_posterior",
]
