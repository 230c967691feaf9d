"""Work lifecycle state machine.

The transition table below is the single source of truth for which lifecycle
events are legal in which state. Terminal states admit no event except retry
on Failed and SubFinished (partial success), which spawns a new attempt.
"""

from __future__ import annotations

from enum import Enum


class WorkState(str, Enum):
    New = "New"
    Ready = "Ready"
    Submitting = "Submitting"
    Submitted = "Submitted"
    Running = "Running"
    Finished = "Finished"
    SubFinished = "SubFinished"  # some jobs succeeded, some failed
    Failed = "Failed"
    Cancelled = "Cancelled"
    Suspended = "Suspended"

    def __str__(self) -> str:
        return self.value


class LifecycleEvent(str, Enum):
    submit_requested = "submit_requested"
    submitted = "submitted"
    started = "started"
    all_jobs_done = "all_jobs_done"
    partial_jobs_done = "partial_jobs_done"
    fatal_error = "fatal_error"
    cancel = "cancel"
    suspend = "suspend"
    resume = "resume"
    retry = "retry"

    def __str__(self) -> str:
        return self.value


S = WorkState
E = LifecycleEvent

TRANSITIONS: dict[tuple[WorkState, LifecycleEvent], WorkState] = {
    (S.New, E.submit_requested): S.Ready,
    (S.New, E.fatal_error): S.Failed,
    (S.New, E.cancel): S.Cancelled,
    (S.New, E.suspend): S.Suspended,

    (S.Ready, E.submit_requested): S.Submitting,
    (S.Ready, E.fatal_error): S.Failed,
    (S.Ready, E.cancel): S.Cancelled,
    (S.Ready, E.suspend): S.Suspended,

    (S.Submitting, E.submitted): S.Submitted,
    (S.Submitting, E.fatal_error): S.Failed,
    (S.Submitting, E.cancel): S.Cancelled,

    (S.Submitted, E.started): S.Running,
    (S.Submitted, E.all_jobs_done): S.Finished,
    (S.Submitted, E.partial_jobs_done): S.SubFinished,
    (S.Submitted, E.fatal_error): S.Failed,
    (S.Submitted, E.cancel): S.Cancelled,
    (S.Submitted, E.suspend): S.Suspended,

    (S.Running, E.all_jobs_done): S.Finished,
    (S.Running, E.partial_jobs_done): S.SubFinished,
    (S.Running, E.fatal_error): S.Failed,
    (S.Running, E.cancel): S.Cancelled,
    (S.Running, E.suspend): S.Suspended,

    (S.SubFinished, E.retry): S.New,
    (S.Failed, E.retry): S.New,

    (S.Suspended, E.resume): S.Ready,
    (S.Suspended, E.cancel): S.Cancelled,
}

TERMINAL_STATES = frozenset({S.Finished, S.SubFinished, S.Failed, S.Cancelled})

# Terminal states from which a new attempt may be spawned.
RETRYABLE_STATES = frozenset({S.Failed, S.SubFinished})

ACTIVE_STATES = frozenset(set(WorkState) - TERMINAL_STATES)


def next_state(state: WorkState, event: LifecycleEvent) -> WorkState | None:
    """Next state per the table, or None when the event is illegal."""
    return TRANSITIONS.get((state, event))


def is_terminal(state: WorkState) -> bool:
    return state in TERMINAL_STATES
