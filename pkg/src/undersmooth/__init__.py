"""Targeted undersmoothing for high-dimensional linear models."""
__version__ = "0.1.0"

from .data import Dataset, FeatureMatrix, HetModelSpec  # noqa: E402
from .functionals import CateAt, Coefficient, ProfitVsAll, ProfitVsNone  # noqa: E402
from .inference import functional_interval, ols_hc_fit  # noqa: E402
from .lasso import cv_lasso, heteroskedastic_lasso, post_lasso  # noqa: E402
from .selection import select_initial_model  # noqa: E402
from .tu import tu_interval, tu_interval_split, tu_wald_test  # noqa: E402

__all__ = [
    "CateAt", "Coefficient", "Dataset", "FeatureMatrix", "HetModelSpec", "ProfitVsAll",
    "ProfitVsNone", "cv_lasso", "functional_interval", "heteroskedastic_lasso", "ols_hc_fit",
    "post_lasso", "select_initial_model", "tu_interval", "tu_interval_split", "tu_wald_test",
]
