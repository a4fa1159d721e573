"""Ossification staging and bone age estimation from hand bone outlines."""

from .core import (
    BONES,
    ETHNICITIES,
    SEXES,
    STAGES,
    BoneRecord,
    Dataset,
    Subject,
    load_dataset,
    save_dataset,
)
from .errors import BoneAgeError, DataFormatError, InvariantError, NumericError

__version__ = "0.1.0"

__all__ = [
    "BONES",
    "ETHNICITIES",
    "SEXES",
    "STAGES",
    "BoneAgeError",
    "BoneRecord",
    "DataFormatError",
    "Dataset",
    "InvariantError",
    "NumericError",
    "Subject",
    "load_dataset",
    "save_dataset",
    "__version__",
]
