"""Open-ended search over complete solution attempts.

After the scaffold, the agent grows a tree of full solutions: drafts
seeded by the scaffold's abstraction traces, improvements of the current
best node, and bounded debug chains under buggy nodes. Node selection is
stochastic (a coin decides whether to debug) but fully reproducible from
the policy's seed.
"""
from __future__ import annotations

import math
import random
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import FormatError
from .gateway import ParseSpec
from .records import content_hash, write_jsonl
from .sandbox import ExecRequest, ExecResult


@dataclass(frozen=True)
class TreePolicy:
    n_max: int = 5000                 # max iterations over the whole search
    tau_node: float = 32400.0         # max runtime per node, seconds
    n_draft: int = 5                  # max initial drafts
    max_debug_depth: int = 3
    p_debug: float = 0.5
    rng_seed: int = 0
    reserve_factor: float = 2.0       # stop when remaining < reserve_factor * tau_node

    def __post_init__(self):
        if min(self.n_max, self.tau_node, self.n_draft, self.max_debug_depth) <= 0:
            raise ValueError("policy bounds must be positive")
        if not 0.0 <= self.p_debug <= 1.0:
            raise ValueError("p_debug must lie in [0, 1]")

    @classmethod
    def from_total_runtime(cls, total_runtime: float, **overrides) -> "TreePolicy":
        """Per-node limit is 3/16 of the configured total runtime."""
        return cls(tau_node=3.0 * total_runtime / 16.0, **overrides)

    @property
    def reserve(self) -> float:
        return self.reserve_factor * self.tau_node


@dataclass(frozen=True)
class MetricReading:
    value: float
    direction: str  # maximize | minimize
    source: str = ""

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError("metric value must be finite")
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def better_than(self, other: "MetricReading") -> bool:
        if self.direction == "minimize":
            return self.value < other.value
        return self.value > other.value


@dataclass
class SolutionNode:
    node_id: str
    kind: str  # draft | improve | debug
    code: str
    parent: Optional[str] = None
    exec: Optional[ExecResult] = None
    metric: Optional[MetricReading] = None
    status: str = "unevaluated"  # valid | buggy | unevaluated
    debug_depth: int = 0
    created: int = 0

    def __post_init__(self):
        if self.kind not in ("draft", "improve", "debug"):
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.kind == "draft" and (self.parent is not None or self.debug_depth != 0):
            raise ValueError("draft nodes are roots with debug_depth 0")
        if self.kind != "draft" and self.parent is None:
            raise ValueError(f"{self.kind} nodes need a parent")


@dataclass(frozen=True)
class SeedEntry:
    summary: str
    score: Optional[float] = None


@dataclass(frozen=True)
class AbstractionSeed:
    """Scaffold chain-of-thought traces plus their validation scores."""

    entries: tuple[SeedEntry, ...] = ()

    def render(self) -> str:
        if not self.entries:
            return ""
        lines = ["# Summary of Past Submissions"]
        for i, entry in enumerate(self.entries, 1):
            score = f" (validation score {entry.score})" if entry.score is not None else ""
            lines.append(f"## Past solution {i}{score}\n{entry.summary}")
        return "\n".join(lines) + "\n"


class SolutionTree:
    def __init__(self, direction: Optional[str] = None):
        self.nodes: list[SolutionNode] = []
        self.direction = direction
        self.total_duration = 0.0

    def add(self, node: SolutionNode) -> SolutionNode:
        self.nodes.append(node)
        return node

    def node(self, node_id: str) -> SolutionNode:
        return next(n for n in self.nodes if n.node_id == node_id)

    def next_id(self) -> str:
        return f"n{len(self.nodes):04d}"

    @property
    def draft_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "draft")

    def eligible_buggy(self, max_debug_depth: int) -> list[SolutionNode]:
        return [n for n in self.nodes
                if n.status == "buggy" and n.debug_depth < max_debug_depth]

    def scored_nodes(self) -> list[SolutionNode]:
        return [n for n in self.nodes if n.status == "valid" and n.metric is not None]

    def digest(self) -> str:
        return content_hash([{
            "node_id": n.node_id, "kind": n.kind, "parent": n.parent,
            "code": n.code, "status": n.status, "debug_depth": n.debug_depth,
            "metric": None if n.metric is None else
            {"value": n.metric.value, "direction": n.metric.direction},
            "exit": None if n.exec is None else n.exec.exit_status,
        } for n in self.nodes])

    def save(self, path) -> Path:
        rows = [{
            "node_id": n.node_id, "kind": n.kind, "parent": n.parent,
            "code": n.code, "status": n.status, "debug_depth": n.debug_depth,
            "created": n.created,
            "metric": None if n.metric is None else
            {"value": n.metric.value, "direction": n.metric.direction,
             "source": n.metric.source},
            "exec": None if n.exec is None else {
                "exit_status": n.exec.exit_status, "stdout_tail": n.exec.stdout_tail,
                "stderr_tail": n.exec.stderr_tail, "duration": n.exec.duration,
                "timed_out": n.exec.timed_out, "truncated": n.exec.truncated},
        } for n in self.nodes]
        return write_jsonl(path, rows)


def best_node(tree: SolutionTree) -> Optional[SolutionNode]:
    """Best valid node under the stored direction; ties go to the earliest."""
    best: Optional[SolutionNode] = None
    for node in tree.scored_nodes():
        if best is None or node.metric.better_than(best.metric):
            best = node
    return best


@dataclass(frozen=True)
class TreeAction:
    kind: str  # new_draft | debug | improve | stop
    node_id: Optional[str] = None


def select_next_action(tree: SolutionTree, policy: TreePolicy, rng: random.Random,
                       remaining_runtime: float = math.inf) -> TreeAction:
    """Pick the next move: debug with probability p_debug when an eligible
    buggy node exists (the most recent one), else improve the best valid
    node, else draft while the draft budget lasts, else stop."""
    if len(tree.nodes) >= policy.n_max or remaining_runtime < policy.reserve:
        return TreeAction("stop")
    if rng.random() < policy.p_debug:
        buggy = tree.eligible_buggy(policy.max_debug_depth)
        if buggy:
            return TreeAction("debug", buggy[-1].node_id)
    best = best_node(tree)
    if best is not None:
        return TreeAction("improve", best.node_id)
    if tree.draft_count < policy.n_draft:
        return TreeAction("new_draft")
    return TreeAction("stop")


def _draft_prompt_slots(task_text: str, seeds: AbstractionSeed, gateway) -> dict:
    retrieved = gateway.retrieval.retrieve(task_text)
    return {
        "task": task_text,
        "past_submissions": seeds.render(),
        "retrieved": f"# Retrieved exemplar\n{retrieved}\n" if retrieved else "",
    }


def seed_drafts(seeds: AbstractionSeed, policy: TreePolicy, gateway,
                tree: SolutionTree, task_text: str) -> list[SolutionNode]:
    """Generate the initial drafts, each prompt embedding every seed trace.

    With empty seeds the drafts are unseeded (the ablation baseline). A
    format failure marks that draft buggy instead of aborting the search.
    """
    created = []
    while tree.draft_count < policy.n_draft:
        slots = _draft_prompt_slots(task_text, seeds, gateway)
        try:
            content, code = gateway.complete_action(
                "tree/draft", slots, "emit_code", ParseSpec("fenced_code_block"))
            node = SolutionNode(tree.next_id(), "draft", code, created=len(tree.nodes))
        except FormatError as exc:
            node = SolutionNode(tree.next_id(), "draft", "", status="buggy",
                                created=len(tree.nodes))
            node.exec = ExecResult(1, "", f"format error: {exc}", 0.0)
        created.append(tree.add(node))
    return created


def execute_node(node: SolutionNode, tree: SolutionTree, executor, policy: TreePolicy,
                 workdir: Path) -> SolutionNode:
    node_dir = Path(workdir) / node.node_id
    node_dir.mkdir(parents=True, exist_ok=True)
    result = executor.execute(ExecRequest(
        code=node.code, working_dir=node_dir, time_limit=policy.tau_node))
    node.exec = result
    tree.total_duration += result.duration
    if result.timed_out:
        node.status = "buggy"
    return node


def expand_node(action: TreeAction, gateway, executor, policy: TreePolicy,
                tree: SolutionTree, task_text: str, seeds: AbstractionSeed,
                workdir: Path) -> SolutionNode:
    """Generate code with the prompt scheme matching the action, execute it
    under the per-node time limit, and attach the result."""
    if action.kind == "new_draft":
        node = seed_drafts(seeds, replace(policy, n_draft=tree.draft_count + 1),
                           gateway, tree, task_text)[0]
    elif action.kind == "improve":
        parent = tree.node(action.node_id)
        slots = {"task": task_text, "best_code": parent.code,
                 "best_metric": str(parent.metric.value if parent.metric else "unknown")}
        node = _generate_child(gateway, tree, "tree/improve", slots, "improve", parent,
                               debug_depth=0)
    elif action.kind == "debug":
        parent = tree.node(action.node_id)
        error = parent.exec.stderr_tail if parent.exec else "unknown failure"
        slots = {"task": task_text, "buggy_code": parent.code, "error": error}
        node = _generate_child(gateway, tree, "tree/debug", slots, "debug", parent,
                               debug_depth=parent.debug_depth + 1)
    else:
        raise ValueError(f"cannot expand action {action.kind!r}")
    if node.status != "buggy":
        execute_node(node, tree, executor, policy, workdir)
    return node


def _generate_child(gateway, tree: SolutionTree, template_id: str, slots: dict,
                    kind: str, parent: SolutionNode, debug_depth: int) -> SolutionNode:
    try:
        _, code = gateway.complete_action(template_id, slots, "emit_code",
                                          ParseSpec("fenced_code_block"))
        node = SolutionNode(tree.next_id(), kind, code, parent=parent.node_id,
                            debug_depth=debug_depth, created=len(tree.nodes))
    except FormatError as exc:
        node = SolutionNode(tree.next_id(), kind, "", parent=parent.node_id,
                            debug_depth=debug_depth, status="buggy",
                            created=len(tree.nodes))
        node.exec = ExecResult(1, "", f"format error: {exc}", 0.0)
    return tree.add(node)


def record_result(node: SolutionNode, tree: SolutionTree, gateway) -> SolutionTree:
    """Classify the run log and, on success, extract the validation metric.

    A successful run whose metric cannot be parsed stays valid but carries
    no reading, which excludes it from improve selection.
    """
    if node.status == "buggy":
        return tree
    log = ""
    if node.exec is not None:
        log = (node.exec.stdout_tail + "\n" + node.exec.stderr_tail).strip()
    try:
        _, verdict = gateway.complete_action(
            "tree/classify_run", {"log": log or "(no output)"}, "emit_structured",
            ParseSpec("structured_mapping", required_keys=("success",)))
    except FormatError:
        node.status = "buggy"
        return tree
    if not verdict.get("success") or (node.exec is not None and not node.exec.ok):
        node.status = "buggy"
        return tree
    node.status = "valid"
    metric = verdict.get("metric")
    direction = verdict.get("direction")
    if isinstance(metric, (int, float)) and math.isfinite(metric) \
            and direction in ("maximize", "minimize"):
        node.metric = MetricReading(float(metric), direction, source="run-log")
        if tree.direction is None:
            tree.direction = direction
    return tree


def run_search(seeds: AbstractionSeed, policy: TreePolicy, gateway, executor,
               task_text: str, workdir: Path,
               budget_seconds: float = math.inf) -> SolutionTree:
    """The full open-ended loop: seed drafts, then select/expand/record
    until the policy or the remaining budget says stop."""
    rng = random.Random(policy.rng_seed)
    tree = SolutionTree()
    seed_drafts(seeds, policy, gateway, tree, task_text)
    for node in list(tree.nodes):
        if node.status == "unevaluated":
            if budget_seconds - tree.total_duration < policy.reserve:
                break
            execute_node(node, tree, executor, policy, workdir)
            record_result(node, tree, gateway)
    while True:
        action = select_next_action(tree, policy, rng,
                                    remaining_runtime=budget_seconds - tree.total_duration)
        if action.kind == "stop":
            break
        node = expand_node(action, gateway, executor, policy, tree, task_text,
                           seeds, workdir)
        record_result(node, tree, gateway)
    return tree


def export_top_submissions(tree: SolutionTree, workdir: Path, out_dir: Path,
                           top_k: int = 4,
                           submission_name: str = "submission.csv") -> list[Path]:
    """Copy the submission files of the best ``top_k`` nodes by metric."""
    scored = sorted(tree.scored_nodes(),
                    key=lambda n: (n.metric.value if n.metric.direction == "minimize"
                                   else -n.metric.value, n.created))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exported = []
    for rank, node in enumerate(scored[:top_k], 1):
        source = Path(workdir) / node.node_id / submission_name
        if source.exists():
            target = out_dir / f"rank{rank}_{node.node_id}.csv"
            shutil.copyfile(source, target)
            exported.append(target)
    return exported
