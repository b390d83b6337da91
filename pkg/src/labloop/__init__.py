"""labloop: an end-to-end autonomous research pipeline.

Generate research ideas, filter them for novelty against the literature,
implement and run experiments through an edit-and-execute coding agent,
write a LaTeX manuscript, and review it with a calibrated automated
reviewer — plus the harness that scores the reviewer against labeled
decisions.
"""

__version__ = "0.1.0"

from .ideation import Idea, IdeaArchive
from .pipeline import RunConfig, RunSummary, emit_summary, resume_run, run_pipeline
from .review import Review, ReviewerConfig

__all__ = [
    "Idea",
    "IdeaArchive",
    "Review",
    "ReviewerConfig",
    "RunConfig",
    "RunSummary",
    "emit_summary",
    "resume_run",
    "run_pipeline",
    "__version__",
]
