"""Execute agent-emitted code under wall-clock and output limits.

Two executors share one interface: ``LocalExecutor`` spawns a real
interpreter confined to the request's working directory, and
``SimulatedExecutor`` replays scripted results (and materializes scripted
workspace files) without spawning anything, which keeps full pipeline
tests deterministic and fast.
"""
from __future__ import annotations

import os
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol

from .cycle import truncate_tail
from .errors import SandboxSpawnError, SimulationGapError
from .records import text_hash

STREAM_CAP = 16 * 1024


class Clock(Protocol):
    def now(self) -> float: ...
    def advance(self, seconds: float) -> None: ...


class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def advance(self, seconds: float) -> None:
        pass  # real time flows on its own


class VirtualClock:
    """Deterministic clock advanced only by scripted execution durations."""

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        self._now += seconds


@dataclass(frozen=True)
class ExecRequest:
    code: str
    working_dir: Path
    interpreter_command: tuple[str, ...] = (sys.executable,)
    time_limit: float = 60.0
    env: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")


@dataclass(frozen=True)
class ExecResult:
    exit_status: int
    stdout_tail: str
    stderr_tail: str
    duration: float
    timed_out: bool = False
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return self.exit_status == 0 and not self.timed_out


# Installed into the child interpreter via PYTHONPATH. Blocks writes that
# resolve outside the sandbox root; reads are unrestricted.
_GUARD_SOURCE = '''\
import os, sys

_ROOT = os.path.realpath(os.environ.get("SANDBOX_ROOT", os.getcwd()))
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_TRUNC | os.O_APPEND


def _outside(path):
    try:
        real = os.path.realpath(os.fspath(path))
    except TypeError:
        return False
    return real != _ROOT and not real.startswith(_ROOT + os.sep)


def _hook(event, args):
    if event == "open":
        path, mode, flags = args
        if path is None or isinstance(path, int):
            return
        writing = any(c in mode for c in "wax+") if isinstance(mode, str) \\
            else bool(flags & _WRITE_FLAGS)
        if writing and _outside(path):
            raise PermissionError(f"sandbox: write outside working dir: {path}")
    elif event in ("os.mkdir", "os.remove", "os.rmdir"):
        if _outside(args[0]):
            raise PermissionError(f"sandbox: mutation outside working dir: {args[0]}")
    elif event in ("os.rename", "os.replace"):
        if _outside(args[0]) or _outside(args[1]):
            raise PermissionError("sandbox: rename outside working dir")


sys.addaudithook(_hook)
'''


class LocalExecutor:
    """Runs code as a subprocess scoped to the working directory.

    Containment is working-directory scoping plus a write guard injected
    into Python children; a hard kill enforces the time limit and both
    streams are tail-truncated at the cap.
    """

    def __init__(self, clock: Optional[Clock] = None, stream_cap: int = STREAM_CAP,
                 guard_writes: bool = True):
        self.clock = clock or SystemClock()
        self.stream_cap = stream_cap
        self.guard_writes = guard_writes
        self.spawn_count = 0

    def _prepare_env(self, req: ExecRequest) -> dict:
        env = dict(os.environ)
        env.update(req.env)
        env["PYTHONDONTWRITEBYTECODE"] = "1"
        if self.guard_writes:
            guard_dir = Path(req.working_dir) / ".sandbox_guard"
            guard_dir.mkdir(parents=True, exist_ok=True)
            (guard_dir / "sitecustomize.py").write_text(_GUARD_SOURCE)
            existing = env.get("PYTHONPATH")
            env["PYTHONPATH"] = str(guard_dir) + (os.pathsep + existing if existing else "")
            env["SANDBOX_ROOT"] = str(Path(req.working_dir).resolve())
        return env

    def execute(self, req: ExecRequest) -> ExecResult:
        working_dir = Path(req.working_dir)
        if not working_dir.is_dir():
            raise SandboxSpawnError(f"working directory does not exist: {working_dir}")
        code_path = working_dir / f"run_{text_hash(req.code)[:12]}.py"
        code_path.write_text(req.code)
        argv = list(req.interpreter_command) + [str(code_path)]
        started = time.monotonic()
        try:
            proc = subprocess.Popen(
                argv, cwd=str(working_dir), env=self._prepare_env(req),
                stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        except OSError as exc:
            raise SandboxSpawnError(f"could not spawn {argv[0]!r}: {exc}") from exc
        self.spawn_count += 1
        timed_out = False
        try:
            stdout, stderr = proc.communicate(timeout=req.time_limit)
        except subprocess.TimeoutExpired:
            timed_out = True
            proc.kill()
            stdout, stderr = proc.communicate()
        duration = time.monotonic() - started
        self.clock.advance(duration)
        exit_status = proc.returncode
        if timed_out and exit_status == 0:
            exit_status = -1
        truncated = len(stdout) > self.stream_cap or len(stderr) > self.stream_cap
        return ExecResult(
            exit_status=exit_status,
            stdout_tail=truncate_tail(stdout, self.stream_cap),
            stderr_tail=truncate_tail(stderr, self.stream_cap),
            duration=duration,
            timed_out=timed_out,
            truncated=truncated,
        )


@dataclass
class SimEntry:
    result: ExecResult
    files: Mapping[str, str] = field(default_factory=dict)


class SimScript:
    """Scripted executions keyed by code hash, with an ordinal fallback.

    Entries may carry workspace files to materialize, standing in for the
    side effects the real code would have had.
    """

    def __init__(self):
        self._by_hash: dict[str, list[SimEntry]] = {}
        self._by_ordinal: list[SimEntry] = []

    def on_code(self, code: str, result: ExecResult,
                files: Optional[Mapping[str, str]] = None) -> "SimScript":
        self._by_hash.setdefault(text_hash(code), []).append(SimEntry(result, files or {}))
        return self

    def on_next(self, result: ExecResult,
                files: Optional[Mapping[str, str]] = None) -> "SimScript":
        self._by_ordinal.append(SimEntry(result, files or {}))
        return self

    def lookup(self, code: str, ordinal: int) -> SimEntry:
        queue = self._by_hash.get(text_hash(code))
        if queue:
            return queue.pop(0) if len(queue) > 1 else queue[0]
        if ordinal < len(self._by_ordinal):
            return self._by_ordinal[ordinal]
        raise SimulationGapError(
            f"no scripted result for code hash {text_hash(code)[:12]} (call #{ordinal})")


class SimulatedExecutor:
    """Returns scripted results verbatim; never spawns a process."""

    def __init__(self, script: SimScript, clock: Optional[Clock] = None):
        self.script = script
        self.clock = clock or VirtualClock()
        self.calls = 0

    def execute(self, req: ExecRequest) -> ExecResult:
        entry = self.script.lookup(req.code, self.calls)
        self.calls += 1
        working_dir = Path(req.working_dir)
        for relpath, content in entry.files.items():
            target = working_dir / relpath
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content)
        self.clock.advance(entry.result.duration)
        return entry.result


def ok_result(stdout: str = "", duration: float = 1.0) -> ExecResult:
    return ExecResult(0, stdout, "", duration)


def failed_result(stderr: str, duration: float = 1.0, exit_status: int = 1) -> ExecResult:
    return ExecResult(exit_status, "", stderr, duration)


def timeout_result(limit: float) -> ExecResult:
    return ExecResult(-1, "", f"process killed at the {limit:.0f}s time limit",
                      duration=limit, timed_out=True)
