"""Built-in prompt templates.

These are replaceable assets, not contracts: any template with the same
id and slots can be swapped in through the gateway registry. Slot names
match the standard prompt context (task, history, abstractions) plus
scratch slots written by intrinsic steps.
"""
from __future__ import annotations

from .gateway import PromptTemplate


def default_templates() -> list[PromptTemplate]:
    return [
        # intrinsic steps
        PromptTemplate(
            "intrinsic/summarise",
            "Summarise the following task so the important constraints survive "
            "and the noise is dropped.\n\n# Task\n{task}\n\n# Recent history\n{history}\n",
            ("task", "history")),
        PromptTemplate(
            "intrinsic/think",
            "Think step by step about how to accomplish the current goal.\n\n"
            "# Task\n{task}\n\n# Goal\n{stage_goal}\n\n# Recent history\n{history}\n",
            ("task", "stage_goal", "history")),
        PromptTemplate(
            "intrinsic/plan",
            "Write a short plan (at most 3 steps) for the current goal. If a "
            "previous attempt failed, say in one sentence why and how to fix it.\n\n"
            "# Task\n{task}\n\n# Goal\n{stage_goal}\n\n# Recent history\n{history}\n",
            ("task", "stage_goal", "history")),
        PromptTemplate(
            "intrinsic/identify",
            "Identify the relevant properties of the data for the current goal.\n\n"
            "# Task\n{task}\n\n# Goal\n{stage_goal}\n\n# Recent history\n{history}\n",
            ("task", "stage_goal", "history")),
        PromptTemplate(
            "intrinsic/abstract",
            "Abstract the experience so far into a reusable strategy trace.\n\n"
            "# Task\n{task}\n\n# History\n{history}\n\n# Prior abstractions\n{abstractions}\n",
            ("task", "history", "abstractions")),
        PromptTemplate(
            "intrinsic/error_analysis",
            "The previous attempt failed. Analyse the error trace below and state "
            "the likely cause in a couple of sentences.\n\n# Task\n{task}\n\n"
            "# Goal\n{stage_goal}\n\n# Attempts and errors\n{history}\n",
            ("task", "stage_goal", "history")),
        # extrinsic actions
        PromptTemplate(
            "action/emit_code",
            "# Task\n{task}\n\n# Goal\n{stage_goal}\n\n# Plan\n{plan}\n\n"
            "# Recent history\n{history}\n\nYour response should be the code, "
            "as a single fenced code block:\n```python\ncode\n```\n",
            ("task", "stage_goal", "plan", "history")),
        PromptTemplate(
            "action/emit_structured",
            "# Task\n{task}\n\n# Goal\n{stage_goal}\n\n# Recent history\n{history}\n\n"
            "Answer with a single JSON object and nothing else.\n",
            ("task", "stage_goal", "history")),
        PromptTemplate(
            "action/emit_text",
            "# Task\n{task}\n\n# Goal\n{stage_goal}\n\n# Draft\n{summary}\n\n"
            "Output the final text.\n",
            ("task", "stage_goal", "summary")),
        PromptTemplate(
            "action/select_subset",
            "# Task\n{task}\n\n# Goal\n{stage_goal}\n\n# Candidates\n{candidates}\n\n"
            'Answer with a JSON object {"selected": [...]} listing the chosen '
            "candidate ids.\n",
            ("task", "stage_goal", "candidates")),
        # open-ended tree search prompt schemes
        PromptTemplate(
            "tree/draft",
            "You are drafting a complete, self-contained solution for the task "
            "below. It must print the validation metric as "
            "'Validation <METRIC>: <value>' and write a submission file.\n\n"
            "# Task\n{task}\n{past_submissions}\n{retrieved}\n"
            "Respond with a short sketch followed by one fenced code block.\n",
            ("task", "past_submissions", "retrieved")),
        PromptTemplate(
            "tree/improve",
            "Improve the best solution so far for the task below. Keep the "
            "evaluation identical; change the modelling.\n\n# Task\n{task}\n\n"
            "# Best solution so far (metric {best_metric})\n```python\n{best_code}\n```\n\n"
            "Respond with a short sketch followed by one fenced code block.\n",
            ("task", "best_metric", "best_code")),
        PromptTemplate(
            "tree/debug",
            "The implementation below is buggy. Fix it.\n\n# Task\n{task}\n\n"
            "# Buggy implementation\n```python\n{buggy_code}\n```\n\n"
            "# Error message\n{error}\n\n"
            "Respond with a short sketch followed by one fenced code block.\n",
            ("task", "buggy_code", "error")),
        PromptTemplate(
            "tree/classify_run",
            "Below is the console output of a solution run. Decide whether the "
            "run succeeded, and if so extract the validation metric.\n\n"
            "# Output\n{log}\n\n"
            'Answer with a JSON object: {"success": true|false, '
            '"metric": <number or null>, "direction": "maximize"|"minimize"|null}.\n',
            ("log",)),
    ]
