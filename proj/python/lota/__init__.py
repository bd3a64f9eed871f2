"""Sparse task-vector fine-tuning, adapters and merging on toy models."""

from ._lota import (
    Error,
    RuntimeFailure,
    ValidationError,
    __version__,
    apply_adapter,
    compression_report,
    compute_task_vector,
    decode,
    digest,
    encode,
    kept_count_for,
    load_adapter,
    load_checkpoint,
    load_mask,
    merge_lota,
    random_mask,
    run_experiment,
    save_adapter,
    save_checkpoint,
    save_mask,
    sparsify,
    task_arithmetic_merge,
    ties_merge,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
