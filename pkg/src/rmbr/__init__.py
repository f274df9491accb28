"""Regularized expected-utility (MBR) reranking of n-best translation lists."""

from .analysis import (
    OracleReport,
    TokenProbTable,
    corpus_objective,
    grid_search_lambdas,
    oracle_histogram,
    oracle_select,
    token_prob_by_length,
    tune_l,
)
from .core import (
    DEFAULT_LAMBDA_GRID,
    REGULARIZER_NAMES,
    Candidate,
    CoarseToFine,
    NBestList,
    RerankConfig,
    RerankResult,
    UtilityMatrix,
    combine_scores,
    rank_candidates,
)
from .errors import (
    ConfigError,
    DimensionError,
    InvalidInputError,
    MissingScoreError,
    ParseError,
    RmbrError,
    ScoringError,
    TransportError,
)
from .io import (
    ScorerClient,
    load_nbest,
    load_utility_matrices,
    load_utility_matrix,
    read_results,
    write_nbest,
    write_results,
    write_utility_matrices,
    write_utility_matrix,
)
from .mbr import (
    BleuUtility,
    ChrfUtility,
    MatrixUtility,
    ServiceUtility,
    build_utility_matrix,
    coarse_to_fine,
    make_utility,
    mbr_scores,
    regularizer_values,
    rerank,
    token_entropy,
)
from .metrics import (
    MetricConfig,
    corpus_bleu,
    sentence_bleu,
    sentence_chrf,
)

__version__ = "0.1.0"

__all__ = [
    "BleuUtility",
    "Candidate",
    "ChrfUtility",
    "CoarseToFine",
    "ConfigError",
    "DEFAULT_LAMBDA_GRID",
    "DimensionError",
    "InvalidInputError",
    "MatrixUtility",
    "MetricConfig",
    "MissingScoreError",
    "NBestList",
    "OracleReport",
    "ParseError",
    "REGULARIZER_NAMES",
    "RerankConfig",
    "RerankResult",
    "RmbrError",
    "ScorerClient",
    "ScoringError",
    "ServiceUtility",
    "TokenProbTable",
    "TransportError",
    "UtilityMatrix",
    "build_utility_matrix",
    "coarse_to_fine",
    "combine_scores",
    "corpus_bleu",
    "corpus_objective",
    "grid_search_lambdas",
    "load_nbest",
    "load_utility_matrices",
    "load_utility_matrix",
    "make_utility",
    "mbr_scores",
    "oracle_histogram",
    "oracle_select",
    "rank_candidates",
    "read_results",
    "regularizer_values",
    "rerank",
    "sentence_bleu",
    "sentence_chrf",
    "token_entropy",
    "token_prob_by_length",
    "tune_l",
    "write_nbest",
    "write_results",
    "write_utility_matrices",
    "write_utility_matrix",
]
