"""Few-shot active view selection on synthetic view grids.

The heavy lifting lives in the compiled extension; this package re-exports
its surface.
"""

from metaview._core import (  # noqa: F401
    Dataset,
    GridGeometry,
    MetaviewError,
    ParamSet,
    default_config,
    evaluate,
    generate_dataset,
    gradcheck,
    load_checkpoint,
    load_dataset,
    train,
)

__all__ = [
    "Dataset",
    "GridGeometry",
    "MetaviewError",
    "ParamSet",
    "default_config",
    "evaluate",
    "generate_dataset",
    "gradcheck",
    "load_checkpoint",
    "load_dataset",
    "train",
]
