"""Quantile regression on subject-level trajectory features estimated with error."""

__version__ = "0.1.0"

from .model import (AutoBandwidth, FixedBandwidth, LongitudinalDataset, ModelConfig,  # noqa: E402
                    SubjectRecord, stage_one)
from .rng import ErrorFamily  # noqa: E402
from .estimator import fit_all, naive_qr  # noqa: E402
from .bandwidth import select_bandwidth  # noqa: E402
from .inference import average_effect, constancy_test, resample_fit  # noqa: E402

__all__ = ["AutoBandwidth", "FixedBandwidth", "LongitudinalDataset", "ModelConfig",
           "SubjectRecord", "stage_one", "ErrorFamily", "fit_all", "naive_qr",
           "select_bandwidth", "average_effect", "constancy_test", "resample_fit"]
