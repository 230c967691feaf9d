"""Job-level dependency resolution and incremental release.

Jobs and file-level contents share one indegree counter: a job is releasable
the moment its last unfinished dependency job completes or its last missing
content becomes available, whichever arrives later.
"""

from dds.dagengine.jobs import Availability, ContentItem, JobNode, JobState
from dds.dagengine.index import (
    DependencyIndex,
    build_index,
    mark_content_available,
    mark_done,
)
from dds.dagengine.conditions import evaluate_condition
from dds.dagengine.loops import LoopTerminated, expand_loop, finalize_loop

__all__ = [
    "Availability", "ContentItem", "JobNode", "JobState",
    "DependencyIndex", "build_index", "mark_done", "mark_content_available",
    "evaluate_condition", "LoopTerminated", "expand_loop", "finalize_loop",
]
