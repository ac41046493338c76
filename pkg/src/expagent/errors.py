"""Exception hierarchy shared across the engine."""
from __future__ import annotations


class ExpagentError(Exception):
    """Base class for every engine-raised error."""


class ConfigurationError(ExpagentError):
    """Bad or missing configuration: unknown template, unbound slot, bad manifest."""


class EpisodeError(ExpagentError):
    """An episode cannot continue (provider failure after retries, terminal stage)."""


class FormatError(EpisodeError):
    """Structured output still malformed after the retry budget.

    Carries one digest per failed attempt so the episode record can show
    what was tried without storing full transcripts.
    """

    def __init__(self, message: str, attempt_digests: list[str]):
        super().__init__(message)
        self.attempt_digests = attempt_digests


class ProviderError(ExpagentError):
    """Transport-level completion failure (retryable by the gateway)."""


class ReplayMissError(ExpagentError):
    """Replay-mode cassette has no recording for the request fingerprint."""

    def __init__(self, fingerprint: str):
        super().__init__(f"cassette replay miss for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


class SandboxSpawnError(ExpagentError):
    """The executor process could not be started (infrastructure, not code)."""


class SimulationGapError(ExpagentError):
    """The simulated executor has no scripted result for a request."""


class BundleError(ConfigurationError):
    """Competition bundle missing or malformed."""


class StageFailureError(EpisodeError):
    """A gating stage exhausted its retry budget; the episode is terminal."""

    def __init__(self, stage_id: str, message: str = ""):
        super().__init__(message or f"stage {stage_id!r} failed after exhausting its retry budget")
        self.stage_id = stage_id
