"""Tabular preprocessing, masking, missingness scenarios and synthetic paired data."""

from .importance import feature_importance
from .masking import (
    MISSING_SENTINEL,
    SCENARIO_KINDS,
    MissingScenario,
    ScenarioConfigError,
    apply_missing_scenario,
    corrupt_tabular,
    frozen_mask,
    random_msk,
    scenario_mask,
)
from .schema import (
    ColumnSpec,
    DegenerateColumnError,
    OrdinalEncoder,
    SchemaError,
    TabularSchema,
    UnknownCategoryError,
    build_schema,
    ordinal_encode,
    read_csv,
    write_csv,
    zscore_fit_transform,
)
from .synth import BatchConfigError, PairedDataset, SynthConfig, batch_iter, synth_generate

__all__ = [
    "MISSING_SENTINEL",
    "SCENARIO_KINDS",
    "BatchConfigError",
    "ColumnSpec",
    "DegenerateColumnError",
    "MissingScenario",
    "OrdinalEncoder",
    "PairedDataset",
    "ScenarioConfigError",
    "SchemaError",
    "SynthConfig",
    "TabularSchema",
    "UnknownCategoryError",
    "apply_missing_scenario",
    "batch_iter",
    "build_schema",
    "corrupt_tabular",
    "feature_importance",
    "frozen_mask",
    "ordinal_encode",
    "random_msk",
    "read_csv",
    "scenario_mask",
    "synth_generate",
    "write_csv",
    "zscore_fit_transform",
]
