"""Multi-aspect cueing toolkit.

Python interface to the C++ core: gazetteer-based aspect extraction,
deterministic prompt assembly, structured-output parsing, Shapley-value
attribution of prompt aspects, classification metrics and the frequency
banding used by the memorization bench.

Templates, knowledge bases and backend configurations are plain dicts with
the same shape as the on-disk JSON documents (see docs/file-formats.md in
the source tree).
"""

__version__ = "0.1.0"

from ._core import (
    ToolkitError,
    aspect_line,
    categorize_frequency,
    compute_metrics,
    discretize_sentiment,
    exact_shapley,
    extract_aspects,
    find_term,
    fleiss_kappa,
    fold_case,
    format_label,
    parse_output,
    render_prompt,
    sampled_shapley,
    scripted_completion,
)

__all__ = [
    "ToolkitError",
    "aspect_line",
    "categorize_frequency",
    "compute_metrics",
    "discretize_sentiment",
    "exact_shapley",
    "extract_aspects",
    "find_term",
    "fleiss_kappa",
    "fold_case",
    "format_label",
    "parse_output",
    "render_prompt",
    "sampled_shapley",
    "scripted_completion",
]
