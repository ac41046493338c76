"""Experiential-learning agent engine and competition evaluation harness.

The package splits into three layers:

* the learning cycle and its environments: :mod:`expagent.cycle`,
  :mod:`expagent.scaffold`, :mod:`expagent.workspace`,
  :mod:`expagent.tree`, backed by :mod:`expagent.gateway` and
  :mod:`expagent.sandbox`;
* the evaluation stack: :mod:`expagent.leaderboard`,
  :mod:`expagent.blending`, :mod:`expagent.rating`, :mod:`expagent.stats`;
* orchestration: :mod:`expagent.bundles`, :mod:`expagent.budgets`,
  :mod:`expagent.orchestrator`, and the ``expagent`` command line.
"""

__version__ = "0.1.0"

from .cycle import (ActionResult, EpisodeTrace, Feedback, InternalState, IntrinsicStep,
                    TaskSpec, act, compose_intrinsics, integrate_feedback, run_cycle)
from .gateway import (Cassette, Gateway, ParseSpec, PromptTemplate, ProviderConfig,
                      RuleProvider, ScriptedProvider, render_prompt)
from .sandbox import (ExecRequest, ExecResult, LocalExecutor, SimScript,
                      SimulatedExecutor, SystemClock, VirtualClock)
from .scaffold import (Advance, StageGraph, StageOutcome, StageSpec, advance,
                       attempt_stage, stage_outcome_report)
from .workspace import Workspace, WorkspaceArtifact, run_meta_test, run_unit_test
from .tree import (AbstractionSeed, MetricReading, SeedEntry, SolutionNode, SolutionTree,
                   TreeAction, TreePolicy, best_node, expand_node, record_result,
                   run_search, seed_drafts, select_next_action)
from .leaderboard import (LeaderboardSnapshot, MedalRule, SubmissionRecord, greedy_select,
                          load_leaderboard, medal_for, quantile, rank_for_score)
from .blending import BlendConfig, BlendResult, blend
from .rating import (ContestResult, RatingHistory, RatingParams, RatingState,
                     apply_contest, competition_difficulty, rate_history)
from .stats import (ComparisonReport, RankMatrix, compare_methods, friedman_test,
                    render_cd_diagram, welch_t_test, wilcoxon_signed_rank)
