"""The scaffold: an ordered, competency-gated stage graph.

A stage is attempted by looping the learning cycle against its unit test,
up to a retry budget; every failed attempt leaves its error trace in the
agent's state so the next attempt's intrinsic chain can analyse it.
Progress is gated: a stage only becomes eligible once every earlier stage
resolved as success or skipped, and a stage that exhausts its budget ends
the episode.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

from .cycle import (ACTION_KINDS, EpisodeTrace, Feedback, InternalState, IntrinsicStep,
                    run_cycle)
from .errors import StageFailureError
from .gateway import ParseSpec
from .sandbox import Clock, ExecRequest, SystemClock
from .workspace import Workspace, WorkspaceArtifact, run_unit_test

STAGE_KINDS = (
    "Competition understanding",
    "Modality identification",
    "Create Input/Target maps",
    "Select Metric",
    "Create submission formats",
    "Feature Engineering",
    "Create Embedders",
    "Class Imbalance",
    "Create Target Transform",
    "Create Model Head",
    "Create Solution summary",
    "Ensemble",
    "Error Code",
)

DEFAULT_RETRY_BUDGET = 5
DEFAULT_GROUP_RETRY_BUDGET = 2

# Intrinsic chain used on retry attempts: analyse the error, then replan.
ERROR_RETRY_CHAIN = (
    IntrinsicStep("analyse-error", "think", "intrinsic/error_analysis", "error_analysis"),
    IntrinsicStep("replan", "plan", "intrinsic/plan", "plan"),
)

Predicate = Callable[[Mapping[str, bool]], bool]


def always(_modalities: Mapping[str, bool]) -> bool:
    return True


def requires_modality(name: str) -> Predicate:
    def predicate(modalities: Mapping[str, bool]) -> bool:
        return bool(modalities.get(name))
    predicate.__name__ = f"requires_{name}"
    return predicate


@dataclass(frozen=True)
class ArtifactPlan:
    """What a code-emitting stage produces and how.

    ``exec_writes``: run the emitted code, which writes ``filename``; the
    code itself is kept beside it for interpretability. ``code_is``: the
    emitted code is the artifact (metric/transform modules). ``code_exec``:
    the code is the artifact and is also run for its side effects
    (submission formatting).
    """

    kind: str
    filename: str
    mode: str  # exec_writes | code_is | code_exec
    modality: Optional[str] = None
    split: Optional[str] = None


@dataclass(frozen=True)
class StageSpec:
    stage_id: str
    name: str
    goal: str = ""
    phase: str = "workspace"  # workspace | solution
    applicable_when: Predicate = always
    intrinsic_chain: tuple[IntrinsicStep, ...] = ()
    retry_intrinsic_chain: tuple[IntrinsicStep, ...] = ERROR_RETRY_CHAIN
    action_kind: str = "emit_code"
    action_template: Optional[str] = None
    parse_spec: Optional[ParseSpec] = None
    unit_test_id: Optional[str] = None
    retry_budget: int = DEFAULT_RETRY_BUDGET
    group_id: Optional[str] = None
    re_enterable: bool = False
    artifact: Optional[ArtifactPlan] = None
    behavior: str = "artifact"  # artifact | summary | modalities | training | ensemble
    state_update: str = "none"  # none | add_summary | add_validation_score

    def __post_init__(self):
        if self.name not in STAGE_KINDS:
            raise ValueError(f"stage name {self.name!r} is not in the stage catalog")
        if self.action_kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.action_kind!r}")
        if self.action_kind == "emit_code" and not self.unit_test_id:
            raise ValueError(f"stage {self.stage_id!r} emits code but has no unit test")
        if self.retry_budget < 1:
            raise ValueError("retry_budget must be >= 1")


@dataclass(frozen=True)
class StageOutcome:
    stage_id: str
    status: str  # success | failed | not_reached | skipped
    attempts: int = 0
    wall_time: float = 0.0

    def __post_init__(self):
        if self.status not in ("success", "failed", "not_reached", "skipped"):
            raise ValueError(f"unknown stage status {self.status!r}")


class StageGraph:
    """Ordered stages across the two phases, plus meta-test groups."""

    def __init__(self, stages: Sequence[StageSpec],
                 meta_groups: Optional[Mapping[str, str]] = None,
                 group_retry_budget: int = DEFAULT_GROUP_RETRY_BUDGET):
        self.stages = list(stages)
        self.meta_groups = dict(meta_groups or {})
        self.group_retry_budget = group_retry_budget
        self._validate()

    def _validate(self) -> None:
        seen_solution = False
        for stage in self.stages:
            if stage.phase == "solution":
                seen_solution = True
            elif seen_solution:
                raise ValueError(
                    f"workspace stage {stage.stage_id!r} appears after solution stages")
        for group_id in {s.group_id for s in self.stages if s.group_id}:
            indices = [i for i, s in enumerate(self.stages) if s.group_id == group_id]
            contiguous = indices == list(range(indices[0], indices[-1] + 1))
            if not contiguous and not all(self.stages[i].re_enterable for i in indices):
                raise ValueError(
                    f"group {group_id!r} stages are non-contiguous and not re-enterable")

    def phase_stages(self, phase: str) -> list[StageSpec]:
        return [s for s in self.stages if s.phase == phase]

    def group_stages(self, group_id: str) -> list[StageSpec]:
        return [s for s in self.stages if s.group_id == group_id]


@dataclass
class Advance:
    next_stage: Optional[StageSpec]   # None means the phase is complete
    skipped: list[StageOutcome] = field(default_factory=list)

    @property
    def phase_complete(self) -> bool:
        return self.next_stage is None


def advance(graph: StageGraph, outcomes: Mapping[str, StageOutcome],
            modalities: Optional[Mapping[str, bool]] = None,
            phase: str = "workspace") -> Advance:
    """Return the first unresolved applicable stage of the phase.

    Inapplicable stages are reported as skipped; a failed predecessor makes
    the episode terminal. Stages whose predicates read modalities sit after
    the modality-identification stage by construction, so the predicate is
    only consulted once modalities are known.
    """
    skipped: list[StageOutcome] = []
    for stage in graph.phase_stages(phase):
        outcome = outcomes.get(stage.stage_id)
        if outcome is not None:
            if outcome.status == "failed":
                raise StageFailureError(stage.stage_id)
            continue
        if not stage.applicable_when(modalities or {}):
            skipped.append(StageOutcome(stage.stage_id, "skipped"))
            continue
        return Advance(next_stage=stage, skipped=skipped)
    return Advance(next_stage=None, skipped=skipped)


def _register_artifact(workspace: Workspace, plan: ArtifactPlan) -> None:
    path = workspace.root / plan.filename
    if not any(a.path == path for a in workspace.artifacts):
        workspace.add_artifact(WorkspaceArtifact(
            kind=plan.kind, path=path, modality=plan.modality, split=plan.split))


def artifact_callback(stage: StageSpec, workspace: Workspace, executor,
                      exec_time_limit: float = 60.0) -> Callable:
    """Standard environment callback for code-emitting stages.

    Emitted code is always kept in the workspace beside whatever it
    produced, which is what makes a finished workspace inspectable.
    """
    plan = stage.artifact

    def callback(action) -> Feedback:
        code = action.parsed if isinstance(action.parsed, str) else action.content
        if plan is not None and plan.mode == "code_is":
            (workspace.root / plan.filename).write_text(code)
            _register_artifact(workspace, plan)
            fb = run_unit_test(stage.unit_test_id, workspace, executor)
            if not fb.success and workspace.artifacts and \
                    workspace.artifacts[-1].path == workspace.root / plan.filename:
                workspace.artifacts.pop()
            return fb
        if plan is not None and plan.mode == "code_exec":
            (workspace.root / plan.filename).write_text(code)
        elif plan is not None:
            (workspace.root / f"code_{plan.filename.rsplit('.', 1)[0]}.py").write_text(code)
        else:
            (workspace.root / f"code_{stage.stage_id}.py").write_text(code)
        result = executor.execute(ExecRequest(
            code=code, working_dir=workspace.root, time_limit=exec_time_limit))
        if not result.ok:
            return Feedback.make("exec_log", False,
                                 result.stderr_tail or result.stdout_tail or "execution failed")
        if stage.unit_test_id == "exec_ok":
            return Feedback.make("unit_test", True, result.stdout_tail)
        fb = run_unit_test(stage.unit_test_id, workspace, executor)
        if fb.success and plan is not None:
            _register_artifact(workspace, plan)
        return fb

    return callback


def _default_callback(stage: StageSpec, workspace: Workspace, executor,
                      exec_time_limit: float) -> Callable:
    if stage.behavior == "modalities":
        def modality_callback(action) -> Feedback:
            parsed = action.parsed or {}
            flags = {k: bool(parsed.get(k)) for k in ("tabular", "image", "text")}
            if not any(flags.values()):
                return Feedback.make("structured", False,
                                     "no modality detected; at least one must be present")
            workspace.set_modalities(flags)
            return Feedback.make("structured", True, f"modalities: {flags}")
        return modality_callback
    if stage.behavior == "summary":
        def summary_callback(action) -> Feedback:
            if not action.content.strip():
                return Feedback.make("structured", False, "empty summary")
            # keep the emitted text: it is the abstraction worth remembering
            return Feedback.make("structured", True, action.content)
        return summary_callback
    return artifact_callback(stage, workspace, executor, exec_time_limit)


def attempt_stage(stage: StageSpec, state: InternalState, executor, gateway,
                  workspace: Optional[Workspace] = None,
                  env_callback: Optional[Callable] = None,
                  clock: Optional[Clock] = None,
                  trace: Optional[EpisodeTrace] = None,
                  extra_context: Optional[Mapping[str, str]] = None,
                  exec_time_limit: float = 60.0) -> tuple[StageOutcome, InternalState]:
    """Attempt one stage, cycling until the unit test passes or the budget
    is exhausted. Stage-local scratch from earlier stages is cleared."""
    clock = clock or SystemClock()
    callback = env_callback or _default_callback(stage, workspace, executor, exec_time_limit)
    context = {"stage_goal": stage.goal or stage.name}
    if extra_context:
        context.update(extra_context)
    state = state.without_scratch()
    started = clock.now()
    for attempt in range(1, stage.retry_budget + 1):
        chain = stage.intrinsic_chain if attempt == 1 else stage.retry_intrinsic_chain
        state, fb = run_cycle(
            state, chain, stage.action_kind, callback, gateway,
            template_id=stage.action_template, parse_spec=stage.parse_spec,
            extra_context=context, trace=trace)
        if fb.success:
            if stage.state_update == "add_summary":
                state = state.with_abstraction(state.history[-1].feedback.body)
            outcome = StageOutcome(stage.stage_id, "success", attempts=attempt,
                                   wall_time=clock.now() - started)
            return outcome, state
    outcome = StageOutcome(stage.stage_id, "failed", attempts=stage.retry_budget,
                           wall_time=clock.now() - started)
    return outcome, state


def stage_outcome_report(runs: Sequence[Mapping[str, StageOutcome]]) -> dict:
    """Per-stage outcome distribution across runs, plus the overall rate.

    A stage absent from a run counts as not reached. Success rates are
    computed over the runs where the stage was reached (success or failed);
    the overall rate is the fraction of runs that completed every gated
    stage (nothing failed, nothing left unreached).
    """
    if not runs:
        raise ValueError("stage_outcome_report needs at least one run")
    stage_ids: list[str] = []
    for run in runs:
        for stage_id in run:
            if stage_id not in stage_ids:
                stage_ids.append(stage_id)
    stages: dict[str, dict] = {}
    for stage_id in stage_ids:
        counts = {"success": 0, "failed": 0, "not_reached": 0, "skipped": 0}
        for run in runs:
            outcome = run.get(stage_id)
            counts[outcome.status if outcome else "not_reached"] += 1
        reached = counts["success"] + counts["failed"]
        stages[stage_id] = {
            **counts,
            "success_rate": (100.0 * counts["success"] / reached) if reached else None,
        }
    overall = 100.0 * sum(
        1 for run in runs
        if run and not any(o.status in ("failed", "not_reached") for o in run.values())
    ) / len(runs)
    return {"stages": stages, "overall_success_rate": overall, "runs": len(runs)}
