import json
import os
import signal
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest

from adjforge.errors import RunNotFoundError, StateConflictError, TargetValidationError
from adjforge.generator import GeneratorHandle, LorentzPeak, TargetSpec
from adjforge.service import RunStore
from adjforge.spectra import Spectrum

TARGET = TargetSpec(peaks=(LorentzPeak(6.0, 0.75, 1.0),))


@pytest.fixture
def store(tmp_path, ribbon_library):
    return RunStore(str(tmp_path / "runs"), library=ribbon_library)


class TestRunLifecycle:
    def test_create_and_get(self, store):
        run = store.create_run(TARGET)
        assert run.state == "created"
        got = store.get_run(run.id)
        assert got.target.to_dict() == TARGET.to_dict()

    def test_multi_peak_target_stored_verbatim(self, store):
        target = TargetSpec(peaks=(LorentzPeak(6.0), LorentzPeak(7.5, 0.6, 0.8)))
        run = store.create_run(target)
        got = store.get_run(run.id)
        assert got.target.to_dict() == target.to_dict()

    def test_out_of_band_target_rejected(self):
        with pytest.raises(TargetValidationError):
            TargetSpec(peaks=(LorentzPeak(12.0),))

    def test_unknown_run(self, store):
        with pytest.raises(RunNotFoundError):
            store.get_run("nope")

    def test_generate_stores_design(self, store):
        run = store.create_run(TARGET)
        out = store.advance(run.id, "generate")
        assert out.state == "generated"
        design = store.load_design(run.id, "generated")
        assert len(design.resonators) >= 1
        assert out.provenance["method"] == "retrieval"
        assert os.path.exists(os.path.join(store.run_dir(run.id), "design.png"))

    def test_optimize_before_generate_conflicts(self, store):
        run = store.create_run(TARGET)
        with pytest.raises(StateConflictError):
            store.advance(run.id, "optimize", target_wavelengths=[6.0])

    def test_validate_stores_spectrum(self, store):
        run = store.create_run(TARGET)
        store.advance(run.id, "generate")
        out = store.advance(run.id, "validate")
        assert out.state == "validated"
        spec = store.load_spectrum(run.id)
        assert len(spec) == 800

    def test_full_workflow_and_events(self, store):
        run = store.create_run(TARGET)
        store.advance(run.id, "generate")
        store.advance(run.id, "validate")
        out = store.advance(run.id, "optimize", target_wavelengths=[6.0],
                            config={"max_iterations": 3}, wait=True)
        assert out.state == "done"
        assert out.termination in ("converged", "max-iter", "stalled")
        assert out.final_fom is not None and out.final_fom >= out.initial_fom

        events = store.get_events(run.id, 0)
        seqs = [e["seq"] for e in events]
        assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
        # event stream replays the iterations log exactly
        iter_events = [e["payload"] for e in events if e["kind"] == "iteration"]
        log_path = os.path.join(store.run_dir(run.id), "optimize", "iterations.jsonl")
        logged = [json.loads(l) for l in open(log_path) if l.strip()]
        assert [e["index"] for e in iter_events] == [l["index"] for l in logged]
        assert [e["fom"] for e in iter_events] == [l["fom"] for l in logged]

    def test_events_after_cursor(self, store):
        run = store.create_run(TARGET)
        store.advance(run.id, "generate")
        all_events = store.get_events(run.id, 0)
        assert store.get_events(run.id, all_events[-1]["seq"]) == []
        assert len(store.get_events(run.id, all_events[0]["seq"])) == len(all_events) - 1

    def test_idempotent_actions(self, store):
        run = store.create_run(TARGET)
        store.advance(run.id, "generate")
        key1 = store.load_design(run.id, "generated").content_key()
        out = store.advance(run.id, "generate")  # repeat: no recompute
        assert out.state == "generated"
        assert store.load_design(run.id, "generated").content_key() == key1

    def test_generate_without_library_fails_run(self, tmp_path):
        empty = RunStore(str(tmp_path / "r2"), library=None)
        run = empty.create_run(TARGET)
        from adjforge.errors import NoGeneratorError

        with pytest.raises(NoGeneratorError):
            empty.advance(run.id, "generate")
        assert empty.get_run(run.id).state == "failed"


class TestRecovery:
    def test_restart_reconstructs_runs(self, store, ribbon_library):
        r1 = store.create_run(TARGET)
        r2 = store.create_run(TARGET)
        store.advance(r1.id, "generate")
        fresh = RunStore(store.runs_dir, library=ribbon_library)
        assert set(fresh.list_runs()) == {r1.id, r2.id}
        assert fresh.get_run(r1.id).state == "generated"
        assert fresh.get_run(r2.id).state == "created"

    def test_stale_optimizing_marked_failed(self, store):
        run = store.create_run(TARGET)
        store.advance(run.id, "generate")
        store.advance(run.id, "validate")
        # simulate a crash: force the persisted state to optimizing
        raw = json.load(open(os.path.join(store.run_dir(run.id), "run.json")))
        raw["state"] = "optimizing"
        with open(os.path.join(store.run_dir(run.id), "run.json"), "w") as f:
            json.dump(raw, f)
        fresh = RunStore(store.runs_dir)
        got = fresh.get_run(run.id)
        assert got.state == "failed"
        assert "interrupt" in got.error


KILL_SCRIPT = textwrap.dedent("""
    import sys
    from adjforge.generator import Library, LorentzPeak, TargetSpec
    from adjforge.service import RunStore

    runs_dir, library_dir = sys.argv[1], sys.argv[2]
    store = RunStore(runs_dir, library=Library.load(library_dir))
    run = store.create_run(TargetSpec(peaks=(LorentzPeak(6.0),)))
    print(run.id, flush=True)
    store.advance(run.id, "generate")
    store.advance(run.id, "validate")
    store.advance(run.id, "optimize", target_wavelengths=[6.0],
                  config={"max_iterations": 50}, wait=True)
""")


class TestKillRestartDurability:
    def test_sigkill_during_optimize(self, tmp_path, ribbon_library):
        runs_dir = str(tmp_path / "runs")
        proc = subprocess.Popen(
            [sys.executable, "-c", KILL_SCRIPT, runs_dir, ribbon_library.directory],
            stdout=subprocess.PIPE, text=True,
        )
        run_id = proc.stdout.readline().strip()
        assert run_id
        # wait for at least one durable iteration event, then kill hard
        events_path = os.path.join(runs_dir, run_id, "events.jsonl")
        deadline = time.time() + 120
        seen_iteration = False
        while time.time() < deadline:
            if os.path.exists(events_path):
                content = open(events_path).read()
                if '"iteration"' in content:
                    seen_iteration = True
                    break
            if proc.poll() is not None:
                break
            time.sleep(0.2)
        assert seen_iteration, "no iteration event before timeout"
        os.kill(proc.pid, signal.SIGKILL)
        proc.wait()

        # every persisted line must be valid JSON with strictly increasing seq
        lines = [l for l in open(events_path) if l.strip()]
        events = [json.loads(l) for l in lines]
        seqs = [e["seq"] for e in events]
        assert seqs == list(range(1, len(seqs) + 1))

        fresh = RunStore(runs_dir, library=ribbon_library)
        got = fresh.get_run(run_id)
        assert got.state == "failed"
        assert "interrupt" in got.error
        # recoverable: artifacts for every reached state are intact
        assert os.path.exists(os.path.join(runs_dir, run_id, "design_generated.json"))
        spec = Spectrum.from_csv(
            open(os.path.join(runs_dir, run_id, "spectrum_validated.csv")).read())
        assert len(spec) == 800
