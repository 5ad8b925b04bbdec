"""Run orchestration: persistent run records and the workflow actions.

A run walks created -> generated -> validated -> optimizing -> done, with
failed reachable from anywhere. Every artifact is durable on disk before
the state change that announces it becomes visible, so a killed process
leaves each run recoverable at its last completed state. Runs live in a
plain directory tree (one directory per run) so every artifact stays
inspectable.
"""
from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

from .adjoint import FomSpec
from .errors import (
    AdjforgeError,
    RunNotFoundError,
    StateConflictError,
    TargetValidationError,
)
from .generator import GeneratorHandle, Library, TargetSpec, generate
from .geometry import Design, design_to_image
from .optimizer import OptimConfig, optimize
from .solver import SimGrid, absorption_spectrum
from .spectra import Spectrum

STATES = ("created", "generated", "validated", "optimizing", "done", "failed")

ACTION_FROM_STATE = {
    "generate": ("created",),
    "validate": ("generated",),
    "optimize": ("validated",),
}


@dataclass
class Run:
    id: str
    created_at: float
    target: TargetSpec
    state: str = "created"
    provenance: dict | None = None
    error: str | None = None
    termination: str | None = None
    initial_fom: float | None = None
    final_fom: float | None = None
    optimize_request: dict | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "state": self.state,
            "target": self.target.to_dict(),
            "provenance": self.provenance,
            "error": self.error,
            "termination": self.termination,
            "initial_fom": self.initial_fom,
            "final_fom": self.final_fom,
            "delta_fom": (
                None if self.final_fom is None or self.initial_fom is None
                else self.final_fom - self.initial_fom
            ),
            "optimize_request": self.optimize_request,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Run":
        return cls(
            id=d["id"],
            created_at=d["created_at"],
            target=TargetSpec.from_dict(d["target"]),
            state=d["state"],
            provenance=d.get("provenance"),
            error=d.get("error"),
            termination=d.get("termination"),
            initial_fom=d.get("initial_fom"),
            final_fom=d.get("final_fom"),
            optimize_request=d.get("optimize_request"),
        )


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


class RunStore:
    """Directory-backed run registry with per-run serialization.

    Background optimization jobs own their run until a terminal state;
    event reads never block writers (append-only event log).
    """

    def __init__(self, runs_dir: str, library: Library | None = None,
                 workers: int = 1):
        self.runs_dir = runs_dir
        os.makedirs(runs_dir, exist_ok=True)
        self.library = library
        self.workers = workers
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._jobs: dict[str, threading.Thread] = {}
        self.recover()

    # -- plumbing ----------------------------------------------------------

    def run_dir(self, run_id: str) -> str:
        return os.path.join(self.runs_dir, run_id)

    def _lock(self, run_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(run_id, threading.Lock())

    def _save(self, run: Run) -> None:
        _atomic_write(
            os.path.join(self.run_dir(run.id), "run.json"),
            json.dumps(run.to_dict(), indent=2),
        )

    def _load(self, run_id: str) -> Run:
        path = os.path.join(self.run_dir(run_id), "run.json")
        if not os.path.exists(path):
            raise RunNotFoundError(f"no run {run_id!r}")
        with open(path) as f:
            return Run.from_dict(json.load(f))

    def _append_event(self, run_id: str, kind: str, payload: dict) -> int:
        path = os.path.join(self.run_dir(run_id), "events.jsonl")
        with self._lock(run_id + "/events"):
            seq = self._event_count(run_id) + 1
            with open(path, "a") as f:
                f.write(json.dumps({"seq": seq, "kind": kind, "payload": payload}) + "\n")
                f.flush()
                os.fsync(f.fileno())
        return seq

    def _event_count(self, run_id: str) -> int:
        path = os.path.join(self.run_dir(run_id), "events.jsonl")
        if not os.path.exists(path):
            return 0
        with open(path) as f:
            return sum(1 for line in f if line.strip())

    def _transition(self, run: Run, state: str) -> None:
        run.state = state
        self._save(run)
        self._append_event(run.id, "state-change", {"state": state})

    # -- recovery ------------------------------------------------------------

    def recover(self) -> None:
        """Reconstruct runs from disk; any run caught mid-optimization by a
        crash is marked failed with its iteration log prefix intact."""
        for rid in self.list_runs():
            try:
                run = self._load(rid)
            except Exception:
                continue
            if run.state == "optimizing" and rid not in self._jobs:
                run.error = "optimization interrupted by service restart"
                run.state = "failed"
                self._save(run)
                self._append_event(rid, "state-change", {"state": "failed"})

    def list_runs(self) -> list[str]:
        return sorted(
            d for d in os.listdir(self.runs_dir)
            if os.path.isdir(os.path.join(self.runs_dir, d))
            and os.path.exists(os.path.join(self.runs_dir, d, "run.json"))
        )

    # -- operations ------------------------------------------------------------

    def create_run(self, target: TargetSpec) -> Run:
        if not isinstance(target, TargetSpec):
            raise TargetValidationError("target must be a TargetSpec")
        run = Run(id=uuid.uuid4().hex[:12], created_at=time.time(), target=target)
        os.makedirs(self.run_dir(run.id), exist_ok=True)
        self._save(run)
        self._append_event(run.id, "state-change", {"state": "created"})
        return run

    def get_run(self, run_id: str) -> Run:
        return self._load(run_id)

    def get_events(self, run_id: str, after_seq: int = 0) -> list[dict]:
        if not os.path.exists(os.path.join(self.run_dir(run_id), "run.json")):
            raise RunNotFoundError(f"no run {run_id!r}")
        path = os.path.join(self.run_dir(run_id), "events.jsonl")
        events = []
        if os.path.exists(path):
            with open(path) as f:
                for line in f:
                    if not line.strip():
                        continue
                    evt = json.loads(line)
                    if evt["seq"] > after_seq:
                        events.append(evt)
        return events

    def design_path(self, run_id: str, which: str) -> str:
        return os.path.join(self.run_dir(run_id), f"design_{which}.json")

    def load_design(self, run_id: str, which: str = "generated") -> Design:
        with open(self.design_path(run_id, which)) as f:
            return Design.from_json(f.read())

    def load_spectrum(self, run_id: str) -> Spectrum:
        with open(os.path.join(self.run_dir(run_id), "spectrum_validated.csv")) as f:
            return Spectrum.from_csv(f.read())

    # Each action is idempotent on a run that already holds its result: the
    # stored artifact is returned without recomputation.

    def advance(self, run_id: str, action: str, *,
                target_wavelengths=None, config: dict | None = None,
                handle: GeneratorHandle | None = None,
                wait: bool = False) -> Run:
        job = None
        with self._lock(run_id):
            run = self._load(run_id)
            if action not in ACTION_FROM_STATE:
                raise StateConflictError(f"unknown action {action!r}")
            legal_from = ACTION_FROM_STATE[action]
            already = (
                (action == "generate" and run.state in ("generated", "validated", "optimizing", "done"))
                or (action == "validate" and run.state in ("validated", "optimizing", "done"))
                or (action == "optimize" and run.state in ("optimizing", "done"))
            )
            if already:
                return run
            if run.state not in legal_from:
                raise StateConflictError(
                    f"cannot {action} a run in state {run.state!r}"
                )
            try:
                if action == "generate":
                    return self._do_generate(run, handle)
                if action == "validate":
                    return self._do_validate(run)
                run, job = self._start_optimize(run, target_wavelengths, config)
            except (StateConflictError, RunNotFoundError, TargetValidationError):
                raise
            except AdjforgeError as exc:
                run.error = str(exc)
                self._transition(run, "failed")
                raise
        if job is not None:
            if wait:
                job()
                return self._load(run_id)
            thread = threading.Thread(target=job, name=f"optimize-{run_id}", daemon=True)
            self._jobs[run_id] = thread
            thread.start()
        return run

    def _do_generate(self, run: Run, handle: GeneratorHandle | None) -> Run:
        if handle is None:
            if self.library is None:
                from .errors import NoGeneratorError

                raise NoGeneratorError("no library configured for generation")
            handle = GeneratorHandle(kind="retrieval", library=self.library)
        design, provenance = generate(run.target, handle)
        with open(self.design_path(run.id, "generated"), "w") as f:
            f.write(design.to_json())
        with open(os.path.join(self.run_dir(run.id), "design.png"), "wb") as f:
            f.write(design_to_image(design).to_png_bytes())
        run.provenance = provenance
        self._transition(run, "generated")
        return run

    def _do_validate(self, run: Run) -> Run:
        design = self.load_design(run.id, "generated")
        grid = SimGrid.for_design(design)
        spectrum = absorption_spectrum(design, grid=grid, workers=self.workers,
                                       canonical=True)
        _atomic_write(
            os.path.join(self.run_dir(run.id), "spectrum_validated.csv"),
            spectrum.to_csv(),
        )
        self._transition(run, "validated")
        return run

    def _start_optimize(self, run: Run, target_wavelengths, config_overrides):
        if not target_wavelengths:
            raise TargetValidationError(
                "optimize needs target_wavelengths", field="target_wavelengths"
            )
        try:
            spec = FomSpec(tuple(float(t) for t in target_wavelengths))
            overrides = dict(config_overrides or {})
            config = OptimConfig(**overrides)
        except (TypeError, ValueError) as exc:
            raise TargetValidationError(str(exc)) from exc
        run.optimize_request = {
            "target_wavelengths": list(spec.target_wavelengths),
            "config": overrides,
        }
        self._transition(run, "optimizing")
        run_id = run.id

        def job():
            try:
                design = self.load_design(run_id, "generated")
                grid = SimGrid.for_design(design)

                def on_event(evt):
                    self._append_event(run_id, "iteration", evt)

                result = optimize(design, spec, config, grid,
                                  workers=self.workers, on_event=on_event)
                out_dir = os.path.join(self.run_dir(run_id), "optimize")
                result.save(out_dir)
                with open(self.design_path(run_id, "final"), "w") as f:
                    f.write(result.final_design.to_json())
                with self._lock(run_id):
                    fresh = self._load(run_id)
                    fresh.initial_fom = result.initial_fom
                    fresh.final_fom = result.final_fom
                    fresh.termination = result.termination
                    self._transition(fresh, "done")
            except Exception as exc:  # background job: record, never raise
                try:
                    with self._lock(run_id):
                        fresh = self._load(run_id)
                        fresh.error = str(exc)
                        self._transition(fresh, "failed")
                except Exception:
                    pass
            finally:
                self._jobs.pop(run_id, None)

        return run, job
