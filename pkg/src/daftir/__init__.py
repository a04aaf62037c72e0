"""Dense retrieval with heterogeneous dual encoders trained in two stages.

Stage 1 aligns a query encoder to a frozen document encoder until a k-NN
KL estimate between their outputs is small; stage 2 fine-tunes both.
Everything runs on numpy, with numba kernels for the hot loops.

Modules:
    numerics     reverse-mode autodiff on numpy arrays, finite-difference checks
    encoders     vocabulary, tokenizer, mean-pool and tiny transformer encoders
    objective    relevance scores and the scaled contrastive loss
    sampling     negative cache with Gumbel top-k sampling and staged refresh
    alignment    KL k-NN estimator and the alignment stopping rule
    trainer      two-stage training loop, optimizer, checkpoints
    retrieval    exact dense index, maxP ranking, metrics, TREC I/O
    diagnostics  collapse statistics and PCA dumps
    data         synthetic corpora and dataset files
    cli          the ``daftir`` command
"""
from .errors import (CacheTooSmallError, ConfigError, DaftError, DataFormatError,
                     DegenerateInputError, NumericError, ShapeError)

__version__ = "0.1.0"

__all__ = [
    "CacheTooSmallError",
    "ConfigError",
    "DaftError",
    "DataFormatError",
    "DegenerateInputError",
    "NumericError",
    "ShapeError",
    "__version__",
]
