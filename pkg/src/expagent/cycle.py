"""The experiential learning cycle.

An episode alternates four roles: intrinsic steps transform the agent's
internal state without touching the environment (reflect, plan, abstract),
one extrinsic action is emitted from the refined state, the environment
answers with feedback, and an update folds that feedback back into the
state. The state itself is an immutable value; every operation returns a
new state, which is what makes episodes replayable and hashable.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Sequence

from .errors import EpisodeError
from .records import canonical_json, content_hash, text_hash, write_jsonl

FEEDBACK_CAP = 16 * 1024  # characters kept per feedback/stream body
_TRUNCATION_MARK = "...[truncated] "

INTRINSIC_KINDS = ("summarise", "think", "plan", "identify", "abstract")
ACTION_KINDS = ("emit_code", "emit_structured", "emit_text", "select_subset")
FEEDBACK_KINDS = ("unit_test", "exec_log", "validation_score", "structured")


def truncate_tail(text: str, cap: int = FEEDBACK_CAP) -> str:
    """Keep the tail of ``text``; error tracebacks end with the signal."""
    if len(text) <= cap:
        return text
    return _TRUNCATION_MARK + text[-(cap - len(_TRUNCATION_MARK)):]


@dataclass(frozen=True)
class TaskSpec:
    """Immutable task description; never mutates after episode start."""

    text: str
    metadata: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class IntrinsicStep:
    name: str
    kind: str
    prompt_template_id: str
    output_slot: str

    def __post_init__(self):
        if self.kind not in INTRINSIC_KINDS:
            raise ValueError(f"unknown intrinsic kind {self.kind!r}")
        if not self.output_slot:
            raise ValueError("output_slot must be non-empty")


@dataclass(frozen=True)
class Feedback:
    kind: str
    success: bool
    body: str
    score: Optional[tuple[float, str]] = None  # (value, "maximize"|"minimize")

    def __post_init__(self):
        if self.kind not in FEEDBACK_KINDS:
            raise ValueError(f"unknown feedback kind {self.kind!r}")
        if len(self.body) > FEEDBACK_CAP:
            raise ValueError("feedback body exceeds the truncation cap")
        if (self.score is not None) != (self.kind == "validation_score"):
            raise ValueError("score is present iff kind == 'validation_score'")

    @classmethod
    def make(cls, kind: str, success: bool, body: str,
             score: Optional[tuple[float, str]] = None) -> "Feedback":
        """Constructor that applies tail-preserving truncation to the body."""
        return cls(kind=kind, success=success, body=truncate_tail(body), score=score)


@dataclass(frozen=True)
class ActionResult:
    kind: str
    content: str
    parsed: Any = None

    @property
    def digest(self) -> str:
        return text_hash(self.content)


@dataclass(frozen=True)
class HistoryEntry:
    action_digest: str
    action_kind: str
    feedback: Feedback


@dataclass(frozen=True)
class InternalState:
    """The agent's internal record: task, history, abstractions, scratch.

    ``history`` grows by exactly one entry per cycle, so its length always
    equals ``step_index``. ``abstractions`` are append-only within an
    episode. ``scratch`` holds stage-local intermediates and may be
    overwritten by later intrinsic steps or cleared at stage transitions.
    """

    task_spec: TaskSpec
    history: tuple[HistoryEntry, ...] = ()
    abstractions: tuple[str, ...] = ()
    scratch: Mapping[str, str] = field(default_factory=dict)
    step_index: int = 0
    validation_scores: tuple[tuple[float, str], ...] = ()

    def __post_init__(self):
        if len(self.history) != self.step_index:
            raise ValueError("history length must equal step_index")

    def with_scratch(self, slot: str, value: str) -> "InternalState":
        scratch = dict(self.scratch)
        scratch[slot] = value
        return replace(self, scratch=scratch)

    def without_scratch(self) -> "InternalState":
        """Clear stage-local scratch at a stage transition."""
        return replace(self, scratch={})

    def with_abstraction(self, summary: str) -> "InternalState":
        return replace(self, abstractions=self.abstractions + (summary,))

    def best_score(self) -> Optional[tuple[float, str]]:
        """Best validation score seen so far, under its own direction."""
        best = None
        for value, direction in self.validation_scores:
            if best is None:
                best = (value, direction)
            elif direction == "minimize" and value < best[0]:
                best = (value, direction)
            elif direction == "maximize" and value > best[0]:
                best = (value, direction)
        return best

    def digest(self) -> str:
        return content_hash({
            "task": {"text": self.task_spec.text, "metadata": dict(self.task_spec.metadata)},
            "history": [
                {"action": h.action_digest, "kind": h.action_kind,
                 "feedback": {"kind": h.feedback.kind, "success": h.feedback.success,
                              "body": h.feedback.body, "score": h.feedback.score}}
                for h in self.history
            ],
            "abstractions": list(self.abstractions),
            "scratch": dict(self.scratch),
            "step_index": self.step_index,
            "validation_scores": [list(s) for s in self.validation_scores],
        })


def render_history(state: InternalState, limit: int = 5) -> str:
    """Readable view of the most recent action/feedback pairs for prompts."""
    lines = []
    for i, entry in enumerate(state.history[-limit:], start=max(0, len(state.history) - limit)):
        status = "ok" if entry.feedback.success else "FAILED"
        lines.append(f"[step {i}] {entry.action_kind} -> {entry.feedback.kind} {status}")
        if entry.feedback.body:
            lines.append(entry.feedback.body)
    return "\n".join(lines) if lines else "(no history yet)"


def prompt_context(state: InternalState, extra: Optional[Mapping[str, str]] = None) -> dict:
    """Standard slots every template can draw on, plus the live scratch."""
    context = {
        "task": state.task_spec.text,
        "history": render_history(state),
        "abstractions": "\n\n".join(state.abstractions) if state.abstractions else "(none)",
    }
    context.update(state.scratch)
    if extra:
        context.update(extra)
    return context


@dataclass
class CycleRecord:
    before_digest: str
    intrinsic_outputs: dict
    action_kind: str
    action_digest: str
    feedback: dict
    after_digest: str


class EpisodeTrace:
    """Serialized record of an episode's cycles, one record per line."""

    def __init__(self, episode_id: str):
        self.episode_id = episode_id
        self.records: list[CycleRecord] = []
        self.terminal_status: str = "running"

    def record(self, rec: CycleRecord) -> None:
        self.records.append(rec)

    def finish(self, status: str) -> None:
        self.terminal_status = status

    def _rows(self) -> list[dict]:
        rows: list[dict] = [{"type": "cycle", **rec.__dict__} for rec in self.records]
        rows.append({"type": "terminal", "status": self.terminal_status})
        return rows

    def digest(self) -> str:
        return content_hash(self._rows())

    def serialize(self) -> str:
        return "\n".join(canonical_json(r) for r in self._rows()) + "\n"

    def save(self, directory) -> str:
        """One file per episode; the name embeds a content-hash prefix."""
        name = f"{self.episode_id}-{self.digest()[:12]}.jsonl"
        write_jsonl(f"{directory}/{name}", self._rows())
        return name


def compose_intrinsics(steps: Sequence[IntrinsicStep], state: InternalState, gateway,
                       extra_context: Optional[Mapping[str, str]] = None) -> InternalState:
    """Apply each intrinsic step in order, writing its output to scratch.

    History and step_index are untouched: intrinsic processing refines the
    state without registering an environment interaction.
    """
    if not steps:
        raise ValueError("compose_intrinsics requires at least one step")
    refined = state
    for step in steps:
        output = gateway.complete_template(
            step.prompt_template_id, prompt_context(refined, extra_context))
        refined = refined.with_scratch(step.output_slot, output)
    return refined


def act(state: InternalState, request_kind: str, gateway,
        template_id: Optional[str] = None, parse_spec=None,
        extra_context: Optional[Mapping[str, str]] = None) -> ActionResult:
    """Emit one extrinsic action from the refined state. No state mutation."""
    if request_kind not in ACTION_KINDS:
        raise ValueError(f"unknown action kind {request_kind!r}")
    template_id = template_id or f"action/{request_kind}"
    content, parsed = gateway.complete_action(
        template_id, prompt_context(state, extra_context),
        request_kind, parse_spec=parse_spec)
    return ActionResult(kind=request_kind, content=content, parsed=parsed)


def integrate_feedback(state: InternalState, action: ActionResult, fb: Feedback) -> InternalState:
    """Fold environment feedback into the state: one history entry, one step."""
    entry = HistoryEntry(action_digest=action.digest, action_kind=action.kind, feedback=fb)
    scores = state.validation_scores
    if fb.kind == "validation_score" and fb.score is not None:
        scores = scores + (fb.score,)
    return replace(
        state,
        history=state.history + (entry,),
        step_index=state.step_index + 1,
        validation_scores=scores,
    )


def run_cycle(state: InternalState, steps: Sequence[IntrinsicStep], request_kind: str,
              env_callback: Callable[[ActionResult], Feedback], gateway,
              template_id: Optional[str] = None, parse_spec=None,
              extra_context: Optional[Mapping[str, str]] = None,
              trace: Optional[EpisodeTrace] = None) -> tuple[InternalState, Feedback]:
    """One full cycle: intrinsics, action, feedback, update.

    A callback that raises is converted into failing exec_log feedback so
    the state still advances and the error is available to the next cycle.
    """
    before = state.digest()
    refined = compose_intrinsics(steps, state, gateway, extra_context) if steps else state
    action = act(refined, request_kind, gateway, template_id, parse_spec, extra_context)
    try:
        fb = env_callback(action)
    except EpisodeError:
        raise
    except Exception as exc:  # environment-side failure, not an engine bug
        fb = Feedback.make("exec_log", False, f"{type(exc).__name__}: {exc}")
    updated = integrate_feedback(refined, action, fb)
    if trace is not None:
        new_slots = {k: v for k, v in refined.scratch.items() if state.scratch.get(k) != v}
        trace.record(CycleRecord(
            before_digest=before,
            intrinsic_outputs=new_slots,
            action_kind=action.kind,
            action_digest=action.digest,
            feedback={"kind": fb.kind, "success": fb.success, "body": fb.body, "score": fb.score},
            after_digest=updated.digest(),
        ))
    return updated, fb
