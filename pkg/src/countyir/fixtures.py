"""Bundled reference fixtures.

``reference_taxonomy.csv`` lists 93 county features (64 non-modifiable, 29
modifiable, 23 expert). ``reference_model1.coef`` and
``reference_model2.coef`` are published LASSO coefficient tables on the
standardized scale for the non-modifiable-only and all-feature models.
"""

from __future__ import annotations

from importlib.resources import files
from pathlib import Path

from .dataset import FeatureTaxonomy, load_taxonomy
from .regressors import TrainedLinearModel, read_linear_model

TAXONOMY = "reference_taxonomy.csv"
MODEL1 = "reference_model1.coef"
MODEL2 = "reference_model2.coef"


def fixture_path(name: str) -> Path:
    return Path(str(files("countyir") / "data" / name))


def reference_taxonomy() -> FeatureTaxonomy:
    return load_taxonomy(fixture_path(TAXONOMY))


def reference_models() -> tuple[TrainedLinearModel, TrainedLinearModel]:
    return read_linear_model(fixture_path(MODEL1)), read_linear_model(fixture_path(MODEL2))
