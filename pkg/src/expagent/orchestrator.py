"""The two pipelines (setup, solve), run manifests, evaluation, reporting.

``run_setup`` drives the workspace phase of the stage graph with unit- and
meta-test gating; ``run_solve`` drives the solution phase (scaffold
solutions, blending, then the open-ended tree) inside the phase budgets;
``evaluate_run`` scores exported submissions against the bundle's
leaderboard; ``emit_report`` renders everything reviewers look at.

Every run writes a ``RunManifest`` whose content hash covers the full
configuration and outcome, so two replayed runs can be compared byte for
byte.
"""
from __future__ import annotations

import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .blending import BlendConfig, blend
from .budgets import BudgetPolicy, TrainingBudget, TrialRequest
from .bundles import CompetitionBundle
from .cycle import (ActionResult, EpisodeTrace, Feedback, InternalState, IntrinsicStep,
                    TaskSpec, integrate_feedback)
from .errors import StageFailureError
from .gateway import Gateway, ParseSpec
from .leaderboard import (greedy_select, medal_for, metric_fn, quantile, rank_for_score,
                          score_submission, SubmissionRecord)
from .rating import load_contest_history, rate_history
from .records import canonical_json, content_hash, to_plain, write_jsonl
from .sandbox import Clock, ExecRequest, SystemClock
from .scaffold import (Advance, ArtifactPlan, StageGraph, StageOutcome, StageSpec,
                       advance, attempt_stage, stage_outcome_report)
from .stats import RankMatrix, compare_methods, render_cd_diagram
from .templates import default_templates
from .tree import (AbstractionSeed, SeedEntry, TreePolicy, export_top_submissions,
                   run_search)
from .workspace import Workspace, map_file_name, run_meta_test

VALIDATION_LINE = re.compile(
    r"Validation\s+([A-Za-z0-9_]+)\s*:\s*(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)")

MODALITIES = ("tabular", "image", "text")


@dataclass
class RunConfig:
    run_dir: Path
    seed: int = 0
    scale: float = 1.0
    method: str = "expagent"
    exec_time_limit: float = 60.0
    max_scaffold_solutions: int = 3
    provider_digest: Optional[dict] = None
    tabular_tool_template: str = (
        "import expagent.baseline_tool as tool\n"
        "tool.main({workspace!r}, {metric!r}, '.')\n"
    )

    def __post_init__(self):
        self.run_dir = Path(self.run_dir)


def _intrinsic(name: str, kind: str, slot: str) -> IntrinsicStep:
    return IntrinsicStep(name, kind, f"intrinsic/{kind}", slot)


def build_workspace_graph(bundle: CompetitionBundle) -> StageGraph:
    """The setup-phase stage graph, specialized to the detected modalities
    via per-stage applicability predicates."""
    stages: list[StageSpec] = [
        StageSpec(
            stage_id="understand", name="Competition understanding",
            goal="Understand the competition and produce a focused summary.",
            intrinsic_chain=(_intrinsic("summarise-task", "summarise", "summary"),),
            action_kind="emit_text", behavior="summary", state_update="add_summary"),
        StageSpec(
            stage_id="modalities", name="Modality identification",
            goal="Identify the input modalities (tabular, image, text) of the data.",
            intrinsic_chain=(_intrinsic("think-modalities", "think", "thoughts"),
                             _intrinsic("summarise-modalities", "summarise", "summary")),
            action_kind="emit_structured", behavior="modalities",
            parse_spec=ParseSpec("structured_mapping",
                                 required_keys=("tabular", "image", "text"))),
    ]

    def map_stage(stage_id: str, split: str, role: str, modality: str,
                  group: str, applicable=None) -> StageSpec:
        filename = map_file_name(split, modality, role)
        test_kind = "image_map" if modality == "image" else "map"
        return StageSpec(
            stage_id=stage_id, name="Create Input/Target maps",
            goal=f"Create {filename}: the {split} {modality} {role} map with an "
                 f"'id' first column.",
            applicable_when=applicable or (lambda m, _mod=modality: bool(m.get(_mod))),
            intrinsic_chain=(_intrinsic("plan-map", "plan", "plan"),),
            action_kind="emit_code", unit_test_id=f"{test_kind}/{filename}",
            group_id=group,
            artifact=ArtifactPlan(f"{role}_map", filename, "exec_writes",
                                  modality=modality, split=split))

    for modality in MODALITIES:
        stages.append(map_stage(f"map_train_input_{modality}", "train", "input",
                                modality, "train_maps"))
    stages.append(map_stage("map_train_target_tab", "train", "target", "tabular",
                            "train_maps", applicable=lambda m: True))
    stages.append(StageSpec(
        stage_id="target_transform", name="Create Target Transform",
        goal="Write a module with transform(values) and inverse_transform(values) "
             "for the training targets; the round trip must be exact.",
        intrinsic_chain=(_intrinsic("identify-targets", "identify", "data_properties"),
                         _intrinsic("plan-transform", "plan", "plan")),
        action_kind="emit_code", unit_test_id="transform_roundtrip",
        group_id="train_maps",
        artifact=ArtifactPlan("transform_code", "code_transform_tab_target_train.py",
                              "code_is")))
    for modality in MODALITIES:
        stages.append(map_stage(f"map_test_input_{modality}", "test", "input",
                                modality, "test_maps"))
    stages.append(StageSpec(
        stage_id="submission_format", name="Create submission formats",
        goal="Write code that produces example_submission.csv matching the sample "
             "submission's header and id set.",
        intrinsic_chain=(_intrinsic("plan-submission", "plan", "plan"),),
        action_kind="emit_code", unit_test_id="submission_format",
        artifact=ArtifactPlan("submission_format_code", "code_submission_format.py",
                              "code_exec")))
    stages.append(StageSpec(
        stage_id="metric", name="Select Metric",
        goal=f"Write a module with metric(y_true, y_pred) implementing "
             f"{bundle.metric} ({bundle.direction}).",
        intrinsic_chain=(_intrinsic("plan-metric", "plan", "plan"),),
        action_kind="emit_code", unit_test_id="metric",
        artifact=ArtifactPlan("metric_code", "code_metric.py", "code_is")))
    return StageGraph(stages, meta_groups={"train_maps": "train_maps",
                                           "test_maps": "test_maps"})


def build_solution_stages(iteration: int, task_type: str) -> list[StageSpec]:
    """One scaffold-solution iteration of the solution phase."""
    suffix = f"_s{iteration}"
    stages = [
        StageSpec(
            stage_id=f"feature_engineering{suffix}", name="Feature Engineering",
            goal="Engineer informative features from the tabular inputs.",
            phase="solution",
            applicable_when=lambda m: bool(m.get("tabular")),
            intrinsic_chain=(_intrinsic("plan-features", "plan", "plan"),),
            action_kind="emit_code", unit_test_id="exec_ok"),
    ]
    for modality in ("image", "text", "tabular"):
        stages.append(StageSpec(
            stage_id=f"embedder_{modality}{suffix}", name="Create Embedders",
            goal=f"Create an embedder turning {modality} inputs into model-ready tensors.",
            phase="solution",
            applicable_when=lambda m, _mod=modality: bool(m.get(_mod)),
            intrinsic_chain=(_intrinsic("plan-embedder", "plan", "plan"),),
            action_kind="emit_code", unit_test_id="exec_ok"))
    stages.append(StageSpec(
        stage_id=f"class_imbalance{suffix}", name="Class Imbalance",
        goal="Design a resampling strategy for the observed label frequencies.",
        phase="solution",
        applicable_when=lambda m, _t=task_type: _t == "classification",
        intrinsic_chain=(_intrinsic("identify-imbalance", "identify", "data_properties"),
                         _intrinsic("plan-imbalance", "plan", "plan")),
        action_kind="emit_code", unit_test_id="exec_ok"))
    stages.append(StageSpec(
        stage_id=f"model_head{suffix}", name="Create Model Head",
        goal="Create and train the model head; print the validation score as "
             "'Validation <METRIC>: <value>' and write submission.csv plus "
             "validation_predictions.csv.",
        phase="solution",
        intrinsic_chain=(_intrinsic("plan-head", "plan", "plan"),),
        action_kind="emit_code", unit_test_id="exec_ok",
        behavior="training", state_update="add_validation_score"))
    stages.append(StageSpec(
        stage_id=f"solution_summary{suffix}", name="Create Solution summary",
        goal="Summarise this solution: approach, components, validation logic.",
        phase="solution",
        intrinsic_chain=(_intrinsic("summarise-solution", "summarise", "summary"),),
        action_kind="emit_text", behavior="summary", state_update="add_summary"))
    return stages


def parse_validation_line(text: str) -> Optional[float]:
    match = VALIDATION_LINE.search(text)
    return float(match.group(2)) if match else None


@dataclass
class SetupResult:
    success: bool
    workspace: Workspace
    outcomes: dict[str, StageOutcome]
    state: InternalState
    group_attempts: dict[str, int] = field(default_factory=dict)
    failure: Optional[str] = None
    wall_time: float = 0.0

    @property
    def artifacts(self) -> list:
        return self.workspace.artifacts


def _fill_not_reached(graph: StageGraph, outcomes: dict, phase: str) -> None:
    for stage in graph.phase_stages(phase):
        outcomes.setdefault(stage.stage_id, StageOutcome(stage.stage_id, "not_reached"))


def run_setup(bundle: CompetitionBundle, config: RunConfig, gateway: Gateway,
              executor, clock: Optional[Clock] = None,
              trace: Optional[EpisodeTrace] = None,
              policy: Optional[BudgetPolicy] = None) -> SetupResult:
    """Drive the workspace phase to completion or terminal failure."""
    clock = clock or SystemClock()
    policy = policy or BudgetPolicy.for_competition(bundle.competition_class, config.scale)
    deadline_budget = policy.scaled(policy.scaffold_runtime)
    started = clock.now()
    workspace = Workspace(config.run_dir / "workspace",
                          sample_submission=bundle.sample_submission)
    if not gateway.templates:
        gateway.register_all(default_templates())
    state = InternalState(TaskSpec(bundle.description(), metadata={
        "competition_id": bundle.competition_id, "metric": bundle.metric,
        "direction": bundle.direction}))
    graph = build_workspace_graph(bundle)
    outcomes: dict[str, StageOutcome] = {}
    group_attempts: dict[str, int] = {}

    def terminal(reason: str) -> SetupResult:
        _fill_not_reached(graph, outcomes, "workspace")
        return SetupResult(False, workspace, outcomes, state, group_attempts,
                           failure=reason, wall_time=clock.now() - started)

    while True:
        if clock.now() - started > deadline_budget:
            return terminal("scaffold budget exhausted")
        try:
            step = advance(graph, outcomes, workspace.modalities, phase="workspace")
        except StageFailureError as exc:
            return terminal(f"stage {exc.stage_id} failed")
        for skipped in step.skipped:
            outcomes[skipped.stage_id] = skipped
        if step.phase_complete:
            break
        stage = step.next_stage
        outcome, state = attempt_stage(
            stage, state, executor, gateway, workspace=workspace, clock=clock,
            trace=trace, exec_time_limit=config.exec_time_limit)
        outcomes[stage.stage_id] = outcome
        if outcome.status == "failed":
            return terminal(f"stage {stage.stage_id} failed")
        if stage.group_id:
            group = stage.group_id
            members = graph.group_stages(group)
            resolved = all(
                outcomes.get(s.stage_id) is not None
                and outcomes[s.stage_id].status in ("success", "skipped")
                for s in members)
            if resolved:
                fb = run_meta_test(graph.meta_groups.get(group, group), workspace)
                group_attempts[group] = group_attempts.get(group, 0) + 1
                if not fb.success:
                    if group_attempts[group] > graph.group_retry_budget:
                        return terminal(f"meta test for group {group} failed")
                    state = integrate_feedback(
                        state, ActionResult("emit_text", f"meta-test {group}"), fb)
                    for member in members:
                        outcomes.pop(member.stage_id, None)
    return SetupResult(True, workspace, outcomes, state, group_attempts,
                       wall_time=clock.now() - started)


@dataclass
class SolutionRecord:
    index: int
    score: Optional[float]
    direction: str
    summary: str = ""
    directory: Optional[Path] = None

    @property
    def valid(self) -> bool:
        return self.score is not None


@dataclass
class SolveResult:
    success: bool
    solutions: list[SolutionRecord]
    seeds: AbstractionSeed
    tree_digest: Optional[str]
    exported: list[Path]
    outcomes: dict[str, StageOutcome] = field(default_factory=dict)
    scaffold_wall_time: float = 0.0
    open_ended_wall_time: float = 0.0
    exec_seconds: float = 0.0
    failure: Optional[str] = None


def _training_callback(stage: StageSpec, sol_ws: Workspace, executor,
                       budget: TrainingBudget, bundle: CompetitionBundle,
                       policy: BudgetPolicy):
    def callback(action) -> Feedback:
        code = action.parsed if isinstance(action.parsed, str) else action.content
        (sol_ws.root / "code_model_head.py").write_text(code)
        request = TrialRequest(epochs=policy.max_epochs,
                               time_limit=policy.scaled(policy.max_train_time))
        decision = budget.admit_trial(request)
        if not decision.admitted:
            return Feedback.make("structured", False, decision.reason)
        result = executor.execute(ExecRequest(
            code=code, working_dir=sol_ws.root, time_limit=request.time_limit))
        if not result.ok:
            return Feedback.make(
                "exec_log", False,
                result.stderr_tail or result.stdout_tail or "training failed")
        value = parse_validation_line(result.stdout_tail)
        if value is None:
            return Feedback.make("unit_test", False,
                                 "no 'Validation <METRIC>: <value>' line in the output")
        return Feedback.make("validation_score", True, result.stdout_tail,
                             score=(value, bundle.direction))
    return callback


def _run_solution_iteration(iteration: int, bundle: CompetitionBundle,
                            config: RunConfig, gateway: Gateway, executor,
                            clock: Clock, state: InternalState,
                            workspace: Workspace, budget: TrainingBudget,
                            policy: BudgetPolicy, outcomes: dict,
                            trace: Optional[EpisodeTrace]
                            ) -> tuple[Optional[SolutionRecord], InternalState]:
    sol_dir = config.run_dir / f"solution_{iteration}"
    sol_ws = Workspace(sol_dir, sample_submission=bundle.sample_submission)
    sol_ws.set_modalities(workspace.modalities or {"tabular": True})
    stages = build_solution_stages(iteration, bundle.task_type)
    graph = StageGraph(stages)
    record = SolutionRecord(iteration, None, bundle.direction, directory=sol_dir)
    local: dict[str, StageOutcome] = {}
    while True:
        try:
            step = advance(graph, local, sol_ws.modalities, phase="solution")
        except StageFailureError:
            break
        for skipped in step.skipped:
            local[skipped.stage_id] = skipped
        if step.phase_complete:
            break
        stage = step.next_stage
        env_callback = None
        if stage.behavior == "training":
            env_callback = _training_callback(stage, sol_ws, executor, budget,
                                              bundle, policy)
        outcome, state = attempt_stage(
            stage, state, executor, gateway, workspace=sol_ws, clock=clock,
            trace=trace, env_callback=env_callback,
            exec_time_limit=config.exec_time_limit)
        local[stage.stage_id] = outcome
        if outcome.status == "failed":
            break
        if stage.behavior == "training" and outcome.status == "success":
            record.score = state.validation_scores[-1][0]
        if stage.behavior == "summary" and outcome.status == "success":
            record.summary = state.abstractions[-1]
    outcomes.update(local)
    return (record if record.valid else None), state


def _run_tabular_tool(iteration: int, bundle: CompetitionBundle, config: RunConfig,
                      gateway: Gateway, executor, clock: Clock,
                      state: InternalState, workspace: Workspace,
                      outcomes: dict, trace: Optional[EpisodeTrace],
                      policy: BudgetPolicy
                      ) -> tuple[Optional[SolutionRecord], InternalState]:
    """Tabular route: delegate modelling to the configured tool command."""
    sol_dir = config.run_dir / f"solution_{iteration}"
    sol_dir.mkdir(parents=True, exist_ok=True)
    code = config.tabular_tool_template.format(
        workspace=str(workspace.root), metric=bundle.metric)
    result = executor.execute(ExecRequest(
        code=code, working_dir=sol_dir,
        time_limit=policy.scaled(policy.max_train_time)))
    stage_id = f"tabular_tool_s{iteration}"
    value = parse_validation_line(result.stdout_tail) if result.ok else None
    if value is None:
        outcomes[stage_id] = StageOutcome(stage_id, "failed", attempts=1,
                                          wall_time=result.duration)
        return None, state
    outcomes[stage_id] = StageOutcome(stage_id, "success", attempts=1,
                                      wall_time=result.duration)
    fb = Feedback.make("validation_score", True, result.stdout_tail,
                       score=(value, bundle.direction))
    state = integrate_feedback(state, ActionResult("emit_code", code), fb)
    record = SolutionRecord(iteration, value, bundle.direction, directory=sol_dir)
    summary_stage = build_solution_stages(iteration, bundle.task_type)[-1]
    outcome, state = attempt_stage(
        summary_stage, state, executor, gateway, workspace=workspace, clock=clock,
        trace=trace, exec_time_limit=config.exec_time_limit)
    outcomes[summary_stage.stage_id] = outcome
    if outcome.status == "success":
        record.summary = state.abstractions[-1]
    return record, state


def _ensemble_stage() -> StageSpec:
    return StageSpec(
        stage_id="ensemble", name="Ensemble",
        goal="Select which solutions to blend into a combined submission.",
        phase="solution",
        intrinsic_chain=(_intrinsic("think-ensemble", "think", "thoughts"),),
        action_kind="select_subset", behavior="ensemble")


def _blend_solutions(selected: list[SolutionRecord], bundle: CompetitionBundle,
                     config: RunConfig, workspace: Workspace) -> Optional[SolutionRecord]:
    """Blend the selected solutions' validation predictions; write the
    blended submission next to the others."""
    from .workspace import read_table, write_table
    candidates: dict[str, dict[str, float]] = {}
    submissions: dict[str, dict[str, float]] = {}
    for record in selected:
        val_path = record.directory / "validation_predictions.csv"
        sub_path = record.directory / "submission.csv"
        if not (val_path.exists() and sub_path.exists()):
            continue
        _, val_rows = read_table(val_path)
        candidates[f"solution_{record.index}"] = {
            r["id"]: float(r[[c for c in r if c != "id"][0]]) for r in val_rows}
        _, sub_rows = read_table(sub_path)
        submissions[f"solution_{record.index}"] = {
            r["id"]: float(r[[c for c in r if c != "id"][0]]) for r in sub_rows}
    if len(candidates) < 2:
        return None
    target_map = next((a.path for a in workspace.artifacts if a.kind == "target_map"), None)
    if target_map is None:
        return None
    _, target_rows = read_table(target_map)
    target_column = [c for c in target_rows[0] if c != "id"][0]
    targets = {r["id"]: float(r[target_column]) for r in target_rows}
    fn, _direction = metric_fn(bundle.metric)
    result = blend(BlendConfig(
        method="weighted_fit", candidates=candidates, targets=targets,
        metric=fn, direction=bundle.direction))
    blend_dir = config.run_dir / "solution_blend"
    blend_dir.mkdir(parents=True, exist_ok=True)
    included = [r for r in selected if f"solution_{r.index}" in candidates]
    sub_header, sub_rows = read_table(included[0].directory / "submission.csv")
    names = sorted(candidates)
    blended_rows = []
    for row in sub_rows:
        sid = row["id"]
        value = sum(result.weights[name] * submissions[name][sid] for name in names)
        blended_rows.append([sid, f"{value:.6f}"])
    write_table(blend_dir / "submission.csv", sub_header, blended_rows)
    return SolutionRecord(index=len(selected) + 1, score=result.validation_score,
                          direction=bundle.direction,
                          summary="weighted blend of scaffold solutions",
                          directory=blend_dir)


def run_solve(bundle: CompetitionBundle, workspace: Workspace, config: RunConfig,
              gateway: Gateway, executor, clock: Optional[Clock] = None,
              state: Optional[InternalState] = None,
              trace: Optional[EpisodeTrace] = None,
              policy: Optional[BudgetPolicy] = None,
              scaffold_spent: float = 0.0) -> SolveResult:
    """Solution phase: scaffold solutions, blending, open-ended tree search."""
    clock = clock or SystemClock()
    policy = policy or BudgetPolicy.for_competition(bundle.competition_class, config.scale)
    if not gateway.templates:
        gateway.register_all(default_templates())
    if state is None:
        state = InternalState(TaskSpec(bundle.description()))
    modalities = workspace.modalities or {"tabular": True, "image": False, "text": False}
    tabular_only = modalities.get("tabular") and not (
        modalities.get("image") or modalities.get("text"))
    budget = TrainingBudget(policy, seed=config.seed)
    outcomes: dict[str, StageOutcome] = {}
    solutions: list[SolutionRecord] = []
    scaffold_start = clock.now()
    scaffold_deadline = scaffold_start + max(
        0.0, policy.scaled(policy.scaffold_runtime) - scaffold_spent)

    iteration = 0
    valid = []
    while (len(valid) < policy.blend_after
           and iteration < config.max_scaffold_solutions
           and clock.now() < scaffold_deadline):
        iteration += 1
        if tabular_only:
            record, state = _run_tabular_tool(
                iteration, bundle, config, gateway, executor, clock, state,
                workspace, outcomes, trace, policy)
        else:
            record, state = _run_solution_iteration(
                iteration, bundle, config, gateway, executor, clock, state,
                workspace, budget, policy, outcomes, trace)
        if record is not None:
            solutions.append(record)
        valid = [s for s in solutions if s.valid]

    # blending triggers once, when blend_after distinct solutions exist
    if len(valid) >= policy.blend_after:
        stage = _ensemble_stage()
        candidates_text = "\n".join(
            f"- solution_{s.index}: validation score {s.score}" for s in valid)

        def ensemble_callback(action) -> Feedback:
            names = action.parsed.get("selected", []) if isinstance(action.parsed, dict) else []
            chosen = [s for s in valid if f"solution_{s.index}" in names] or valid
            blended = _blend_solutions(chosen, bundle, config, workspace)
            if blended is None:
                return Feedback.make("structured", False, "blending produced no result")
            solutions.append(blended)
            return Feedback.make("validation_score", True,
                                 f"blend validation score {blended.score}",
                                 score=(blended.score, bundle.direction))

        outcome, state = attempt_stage(
            stage, state, executor, gateway, workspace=workspace, clock=clock,
            trace=trace, env_callback=ensemble_callback,
            extra_context={"candidates": candidates_text})
        outcomes[stage.stage_id] = outcome
    scaffold_wall = clock.now() - scaffold_start

    seeds = AbstractionSeed(tuple(
        SeedEntry(s.summary, s.score) for s in solutions if s.valid and s.summary))

    open_start = clock.now()
    tree_policy = TreePolicy.from_total_runtime(
        policy.scaled(policy.total_runtime), rng_seed=config.seed)
    tree = run_search(
        seeds, tree_policy, gateway, executor, bundle.description(),
        config.run_dir / "tree",
        budget_seconds=policy.scaled(policy.open_ended_runtime))
    open_wall = clock.now() - open_start
    tree.save(config.run_dir / "tree" / "tree.jsonl")

    submissions_dir = config.run_dir / "submissions"
    exported = export_top_submissions(tree, config.run_dir / "tree", submissions_dir)
    for record in solutions:
        if record.directory is None:
            continue
        source = record.directory / "submission.csv"
        if source.exists():
            target = submissions_dir / f"scaffold_{record.directory.name}.csv"
            submissions_dir.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(source, target)
            exported.append(target)

    any_valid = bool([s for s in solutions if s.valid]) or bool(tree.scored_nodes())
    return SolveResult(
        success=any_valid,
        solutions=solutions,
        seeds=seeds,
        tree_digest=tree.digest(),
        exported=sorted(exported),
        outcomes=outcomes,
        scaffold_wall_time=scaffold_wall,
        open_ended_wall_time=open_wall,
        exec_seconds=tree.total_duration,
        failure=None if any_valid else "no valid solution in either phase")


def evaluate_run(bundle: CompetitionBundle, submissions_dir: Path,
                 k_c: Optional[int] = None) -> Optional[dict]:
    """Score every submission, select greedily, and attribute the medal."""
    if not bundle.evaluation_enabled:
        return None
    submissions = sorted(Path(submissions_dir).glob("*.csv"))
    if not submissions:
        return None
    board = bundle.leaderboard()
    records = []
    for path in submissions:
        public, private = score_submission(path, bundle.answers_path, bundle.metric)
        records.append(SubmissionRecord(path.name, public, private))
    selected, final = greedy_select(records, k_c or bundle.k_c, bundle.direction)
    q = quantile(final, board)
    rank = rank_for_score(final, board)
    return {
        "submissions": len(records),
        "selected": [r.submission_id for r in selected],
        "final_private_score": final,
        "quantile": q,
        "rank": rank,
        "teams": board.n,
        "medal": medal_for(rank, board.n),
    }


def build_manifest(bundle: CompetitionBundle, config: RunConfig, policy: BudgetPolicy,
                   setup: SetupResult, solve: Optional[SolveResult] = None,
                   evaluation: Optional[dict] = None) -> dict:
    outcomes = dict(setup.outcomes)
    if solve is not None:
        outcomes.update(solve.outcomes)
    manifest = {
        "run_id": f"{bundle.competition_id}-seed{config.seed}",
        "method": config.method,
        "competition_id": bundle.competition_id,
        "seeds": {"run": config.seed},
        "provider_config_digest": content_hash(config.provider_digest or {}),
        "budgets": policy.to_plain(),
        "setup_success": setup.success,
        "setup_failure": setup.failure,
        "group_attempts": setup.group_attempts,
        "stage_outcomes": {sid: to_plain(o) for sid, o in sorted(outcomes.items())},
        "artifacts": sorted(a.path.name for a in setup.workspace.artifacts),
        "modalities": setup.workspace.modalities,
        "solutions": [] if solve is None else [
            {"index": s.index, "score": s.score, "valid": s.valid}
            for s in solve.solutions],
        "seed_count": 0 if solve is None else len(solve.seeds.entries),
        "tree_digest": None if solve is None else solve.tree_digest,
        "selected_submissions": [] if solve is None else
        [p.name for p in solve.exported],
        "evaluation": evaluation,
        "wall_times": {
            "setup": setup.wall_time,
            "scaffold": 0.0 if solve is None else solve.scaffold_wall_time,
            "open_ended": 0.0 if solve is None else solve.open_ended_wall_time,
        },
    }
    manifest["content_hash"] = content_hash(manifest)
    return manifest


def save_manifest(manifest: dict, run_dir: Path) -> Path:
    path = Path(run_dir) / "run_manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    return path


def _outcomes_from_manifest(manifest: dict) -> dict[str, StageOutcome]:
    return {sid: StageOutcome(sid, plain["status"], plain["attempts"], plain["wall_time"])
            for sid, plain in manifest.get("stage_outcomes", {}).items()}


def emit_report(manifests: Sequence[dict], out_dir: Path,
                history_path: Optional[Path] = None,
                alpha: float = 0.05) -> dict[str, Path]:
    """Render the run table, stage-outcome distribution, rating summary,
    and (when several methods share tasks) the method comparison."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    rows = []
    for manifest in manifests:
        evaluation = manifest.get("evaluation") or {}
        rows.append({
            "run_id": manifest["run_id"], "method": manifest["method"],
            "competition_id": manifest["competition_id"],
            "setup_success": manifest["setup_success"],
            "quantile": evaluation.get("quantile"),
            "medal": evaluation.get("medal"),
            "final_private_score": evaluation.get("final_private_score"),
        })
    written["runs_data"] = write_jsonl(out_dir / "runs.jsonl", rows)
    header = f"{'run':<28} {'method':<12} {'quantile':>9} {'medal':>7}  final"
    lines = [header, "-" * len(header)]
    for row in rows:
        quantile_text = "-" if row["quantile"] is None else f"{row['quantile']:.1f}"
        lines.append(
            f"{row['run_id']:<28} {row['method']:<12} {quantile_text:>9} "
            f"{str(row['medal'] or '-'):>7}  {row['final_private_score']}")
    (out_dir / "runs.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    written["runs_table"] = out_dir / "runs.txt"

    per_run = [_outcomes_from_manifest(m) for m in manifests]
    report = stage_outcome_report(per_run)
    stage_lines = [f"{'stage':<28} {'succ':>5} {'fail':>5} {'n/r':>5} {'skip':>5}  rate"]
    for stage_id, counts in report["stages"].items():
        rate = "-" if counts["success_rate"] is None else f"{counts['success_rate']:.1f}%"
        stage_lines.append(
            f"{stage_id:<28} {counts['success']:>5} {counts['failed']:>5} "
            f"{counts['not_reached']:>5} {counts['skipped']:>5}  {rate}")
    stage_lines.append(f"overall setup success rate: {report['overall_success_rate']:.1f}%")
    (out_dir / "stage_outcomes.txt").write_text("\n".join(stage_lines) + "\n",
                                                encoding="utf-8")
    written["stage_outcomes"] = out_dir / "stage_outcomes.txt"
    write_jsonl(out_dir / "stage_outcomes.jsonl",
                [{"stage": s, **c} for s, c in report["stages"].items()])

    if history_path is not None:
        contests = load_contest_history(history_path)
        if contests:
            history = rate_history(contests)
            entries = sorted(history.final.entries.items(),
                             key=lambda kv: -kv[1].mu)
            rating_lines = [f"{'participant':<24} {'rating':>8} {'sigma':>7} {'contests':>9}"]
            for participant, entry in entries:
                rating_lines.append(f"{participant:<24} {entry.mu:>8.1f} "
                                    f"{entry.sigma:>7.1f} {entry.contests:>9}")
            (out_dir / "ratings.txt").write_text("\n".join(rating_lines) + "\n",
                                                 encoding="utf-8")
            written["ratings"] = out_dir / "ratings.txt"
            write_jsonl(out_dir / "ratings.jsonl",
                        [{"participant": p, "rating": e.mu, "sigma": e.sigma,
                          "contests": e.contests} for p, e in entries])

    methods: dict[str, dict[str, float]] = {}
    for manifest in manifests:
        evaluation = manifest.get("evaluation") or {}
        if evaluation.get("quantile") is not None:
            methods.setdefault(manifest["method"], {})[
                manifest["competition_id"]] = evaluation["quantile"]
    if len(methods) >= 3:
        shared = sorted(set.intersection(*(set(v) for v in methods.values())))
        if len(shared) >= 2:
            matrix = RankMatrix(
                methods=tuple(sorted(methods)),
                tasks=tuple(shared),
                values=tuple(tuple(methods[m][t] for t in shared)
                             for m in sorted(methods)))
            comparison = compare_methods(matrix, alpha)
            (out_dir / "cd_diagram.txt").write_text(render_cd_diagram(comparison),
                                                    encoding="utf-8")
            written["cd_diagram"] = out_dir / "cd_diagram.txt"
            write_jsonl(out_dir / "comparison.jsonl", [comparison.to_plain()])
    return written
