"""Scenario presets: parameter grids exposed to the CLI, API, and explorer UI."""

from __future__ import annotations

PRESETS = [
    {
        "id": "series1",
        "series": "1",
        "label": "Linear outcome, constructed auxiliary with target correlation",
        "N": 4000,
        "n": 600,
        "params": [
            {"name": "rho", "label": "correlation of auxiliary with influence",
             "min": 0.5, "max": 0.99, "default": 0.9, "step": 0.01},
            {"name": "beta1", "label": "coefficient of X",
             "min": 0.0, "max": 2.0, "default": 1.0, "step": 0.5},
        ],
        "designs": ["srs", "bss", "pss", "if-ipw", "if-gr"],
        "estimators": ["ipw", "raking"],
    },
    {
        "id": "series2",
        "series": "2",
        "label": "Linear outcome, continuous X with additive measurement error",
        "N": 4000,
        "n": 600,
        "params": [
            {"name": "sigma", "label": "error sd of the surrogate",
             "min": 0.25, "max": 1.5, "default": 0.75, "step": 0.25},
            {"name": "beta1", "label": "coefficient of X",
             "min": 0.0, "max": 2.0, "default": 1.0, "step": 1.0},
        ],
        "designs": ["srs", "bss", "pss", "if-ipw", "if-gr"],
        "estimators": ["ipw", "raking"],
    },
    {
        "id": "series3",
        "series": "3",
        "label": "Binary outcome, continuous X with additive measurement error",
        "N": 4000,
        "n": 600,
        "params": [
            {"name": "sigma", "label": "error sd of the surrogate",
             "min": 0.25, "max": 1.5, "default": 0.75, "step": 0.25},
            {"name": "beta1", "label": "coefficient of X",
             "min": 0.0, "max": 1.0, "default": 0.5, "step": 0.5},
        ],
        "designs": ["srs", "bss", "pss", "if-ipw", "if-gr"],
        "estimators": ["ipw", "raking"],
    },
    {
        "id": "series4",
        "series": "4",
        "label": "Rare binary outcome, binary X misclassified by the surrogate",
        "N": 10000,
        "n": 1000,
        "params": [
            {"name": "sens", "label": "surrogate sensitivity",
             "min": 0.85, "max": 0.99, "default": 0.95, "step": 0.01},
            {"name": "spec", "label": "surrogate specificity",
             "min": 0.85, "max": 0.99, "default": 0.95, "step": 0.01},
            {"name": "beta1", "label": "effect size of X",
             "min": 0.0, "max": 1.0, "default": 1.0, "step": 0.5},
        ],
        "designs": ["srs", "scc", "pss", "if-ipw", "if-gr"],
        "estimators": ["ipw", "raking"],
    },
    {
        "id": "nwts",
        "series": "nwts",
        "label": "Synthetic Wilms-tumor-like cohort (central histology as phase 2)",
        "N": 3915,
        "n": 1338,
        "params": [],
        "designs": ["srs", "scc", "pss", "if-ipw", "if-gr"],
        "estimators": ["ipw", "raking"],
    },
]


def preset_by_id(preset_id: str) -> dict:
    for preset in PRESETS:
        if preset["id"] == preset_id or preset["series"] == preset_id:
            return preset
    raise KeyError(f"unknown preset {preset_id!r}")
