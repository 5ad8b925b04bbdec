import base64
import json
import threading
import time

import numpy as np
import pytest

from adjforge.errors import GenerationError, NoGeneratorError, TargetValidationError
from adjforge.generator import (
    GeneratorHandle,
    Library,
    LibraryEntry,
    LorentzPeak,
    TargetSpec,
    build_library,
    compose_multi_target,
    generate,
    lorentzian,
)
from adjforge.spectra import Spectrum, canonical_wavelengths
from adjforge.templates import template_design

from conftest import LIBRARY_WAVELENGTHS, RIBBON_WIDTHS


class TestLorentzian:
    def test_peak_value(self):
        assert lorentzian(6.0, 6.0, 0.75, 0.8) == pytest.approx(0.8)

    def test_half_maximum_at_half_width(self):
        for lam in (6.0 - 0.375, 6.0 + 0.375):
            assert lorentzian(lam, 6.0, 0.75, 1.0) == pytest.approx(0.5)

    def test_canonical_grid_crossings(self):
        lam = canonical_wavelengths()
        vals = lorentzian(lam, 6.0, 0.75, 1.0)
        step = lam[1] - lam[0]
        assert lam[np.argmax(vals)] == pytest.approx(6.0, abs=step)
        above = lam[vals >= 0.5]
        assert above.min() == pytest.approx(5.625, abs=step)
        assert above.max() == pytest.approx(6.375, abs=step)


class TestTargetSpec:
    def test_compose_is_clipped_sum(self):
        t = TargetSpec(peaks=(LorentzPeak(6.0), LorentzPeak(6.3, 0.75, 0.9)))
        lam = canonical_wavelengths()
        expected = np.clip(
            lorentzian(lam, 6.0, 0.75, 1.0) + lorentzian(lam, 6.3, 0.75, 0.9),
            0.0, 1.0,
        )
        assert np.array_equal(t.compose(), expected)

    def test_out_of_band_peak_rejected(self):
        with pytest.raises(TargetValidationError):
            TargetSpec(peaks=(LorentzPeak(12.0),))

    def test_dict_roundtrip(self):
        t = TargetSpec(peaks=(LorentzPeak(6.0, 0.75, 1.0),))
        back = TargetSpec.from_dict(t.to_dict())
        assert np.array_equal(back.compose(), t.compose())

    def test_freehand_shape_checked(self):
        with pytest.raises(TargetValidationError):
            TargetSpec(freehand=tuple(np.zeros(100)))


class TestLibrary:
    def test_build_and_reload(self, ribbon_library):
        assert len(ribbon_library) == len(RIBBON_WIDTHS)
        reloaded = Library.load(ribbon_library.directory)
        assert len(reloaded) == len(ribbon_library)
        keys = {e.key for e in reloaded.entries}
        assert len(keys) == len(ribbon_library)

    def test_entries_have_increasing_peaks(self, ribbon_library):
        by_width = sorted(ribbon_library.entries, key=lambda e: e.params["width"])
        peaks = [e.spectrum.peak()[0] for e in by_width]
        assert all(b > a for a, b in zip(peaks, peaks[1:]))

    def test_rebuild_is_idempotent(self, ribbon_library):
        import adjforge.generator as gen
        import adjforge.solver as sv

        manifest = open(f"{ribbon_library.directory}/manifest.json", "rb").read()
        calls = {"n": 0}
        orig = sv.solve_forward

        def counting(*args, **kwargs):
            calls["n"] += 1
            return orig(*args, **kwargs)

        sv_solve, gen_abs = sv.solve_forward, gen.absorption_spectrum
        try:
            sv.solve_forward = counting
            lib2 = build_library(
                ribbon_library.directory,
                templates=["ribbon"],
                sweep={"ribbon": {"width": RIBBON_WIDTHS, "height": [0.2]}},
                wavelengths=LIBRARY_WAVELENGTHS,
            )
        finally:
            sv.solve_forward = sv_solve
        assert calls["n"] == 0  # every content key already present
        assert open(f"{ribbon_library.directory}/manifest.json", "rb").read() == manifest
        assert len(lib2) == len(ribbon_library)

    def test_single_entry_library(self, tmp_path):
        lib = build_library(
            str(tmp_path), templates=["ribbon"],
            sweep={"ribbon": {"width": [1.6], "height": [0.2]}},
            wavelengths=np.linspace(4, 10, 7),
        )
        assert len(lib) == 1


class TestGenerate:
    def test_exact_match_distance_zero(self, ribbon_library):
        entry = ribbon_library.entries[4]
        target = TargetSpec(freehand=tuple(entry.spectrum.values))
        design, prov = generate(target, GeneratorHandle(library=ribbon_library))
        assert prov["distance"] == pytest.approx(0.0, abs=1e-12)
        assert design.content_key() == entry.design.content_key()

    def test_lorentzian_target_picks_nearest_peak(self, ribbon_library):
        target = TargetSpec(peaks=(LorentzPeak(6.0),))
        design, prov = generate(target, GeneratorHandle(library=ribbon_library))
        # exhaustive oracle over the library
        vec = target.compose()
        dists = [np.linalg.norm(e.spectrum.values - vec) for e in ribbon_library.entries]
        assert prov["entry_index"] == int(np.argmin(dists))
        got_peak = ribbon_library.entries[prov["entry_index"]].spectrum.peak()[0]
        peak_gaps = sorted(abs(e.spectrum.peak()[0] - 6.0) for e in ribbon_library.entries)
        assert abs(got_peak - 6.0) <= peak_gaps[1] + 1e-9

    def test_empty_library_raises(self):
        with pytest.raises(NoGeneratorError):
            generate(TargetSpec(peaks=(LorentzPeak(6.0),)),
                     GeneratorHandle(library=Library([])))

    def test_retrieval_budget_10k_entries(self, ribbon_library):
        base = ribbon_library.entries[0]
        entries = []
        rng = np.random.default_rng(0)
        wl = canonical_wavelengths()
        for i in range(10_000):
            vals = np.clip(lorentzian(wl, 4.5 + (i % 90) * 0.06, 0.6, 0.9)
                           + 0.02 * rng.random(), 0, 1)
            entries.append(LibraryEntry(base.design, Spectrum(wl, vals),
                                        "ribbon", {"i": i}, f"k{i}"))
        lib = Library(entries)
        handle = GeneratorHandle(library=lib)
        target = TargetSpec(peaks=(LorentzPeak(6.0),))
        generate(target, handle)  # warm the cached spectra matrix
        t0 = time.perf_counter()
        generate(target, handle)
        assert time.perf_counter() - t0 < 0.5

    def test_determinism_with_ties(self):
        wl = canonical_wavelengths()
        vals = np.full(800, 0.25)
        d = template_design("ribbon", width=1.6, height=0.2)
        entries = [LibraryEntry(d, Spectrum(wl, vals), "ribbon", {"i": i}, f"k{i}")
                   for i in range(3)]
        lib = Library(entries)
        _, prov = generate(TargetSpec(freehand=tuple(vals)), GeneratorHandle(library=lib))
        assert prov["entry_index"] == 0  # lowest index wins ties


class TestExternalGenerator:
    def _serve_one(self, handler, port):
        from http.server import BaseHTTPRequestHandler, HTTPServer

        class H(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers["Content-Length"])
                body = json.loads(self.rfile.read(n))
                status, payload = handler(body)
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        srv = HTTPServer(("127.0.0.1", port), H)
        threading.Thread(target=srv.handle_request, daemon=True).start()
        return srv

    def test_external_roundtrip(self):
        from adjforge.geometry import design_to_image

        served = template_design("ribbon", width=1.8, height=0.2)
        png_b64 = base64.b64encode(design_to_image(served).to_png_bytes()).decode()

        def handler(body):
            assert len(body["spectrum"]) == 800
            return 200, {"image_png_b64": png_b64, "params": {"note": "test"}}

        srv = self._serve_one(handler, 18731)
        try:
            handle = GeneratorHandle(kind="external", url="http://127.0.0.1:18731/")
            design, prov = generate(TargetSpec(peaks=(LorentzPeak(6.0),)), handle)
            assert prov["method"] == "external"
            assert len(design.resonators) == 1
            got_w = np.ptp(design.resonators[0].vertices[:, 0])
            assert got_w == pytest.approx(1.8, abs=0.08)
        finally:
            srv.server_close()

    def test_external_undecodable_carries_payload(self):
        def handler(body):
            return 200, {"image_png_b64": base64.b64encode(b"not a png").decode()}

        srv = self._serve_one(handler, 18732)
        try:
            handle = GeneratorHandle(kind="external", url="http://127.0.0.1:18732/")
            with pytest.raises(GenerationError) as err:
                generate(TargetSpec(peaks=(LorentzPeak(6.0),)), handle)
            assert err.value.payload is not None
        finally:
            srv.server_close()


class TestComposeMultiTarget:
    def test_two_peaks_supercell(self, ribbon_library):
        handle = GeneratorHandle(library=ribbon_library)
        design, prov = compose_multi_target(
            [LorentzPeak(6.0), LorentzPeak(7.5)], handle)
        assert design.period == pytest.approx(6.4)
        assert len(prov) == 2
        # each cell matches its own single-peak retrieval
        for rec, peak in zip(prov, (6.0, 7.5)):
            single = generate(TargetSpec(peaks=(LorentzPeak(peak),)), handle)[1]
            assert rec["entry_key"] == single["entry_key"]

    def test_one_peak_degenerate(self, ribbon_library):
        handle = GeneratorHandle(library=ribbon_library)
        design, prov = compose_multi_target([LorentzPeak(6.0)], handle)
        assert design.period == pytest.approx(3.2)
        assert len(prov) == 1

    def test_four_peaks(self, ribbon_library):
        handle = GeneratorHandle(library=ribbon_library)
        design, prov = compose_multi_target(
            [LorentzPeak(w) for w in (6.0, 6.5, 7.0, 7.5)], handle)
        assert design.period == pytest.approx(12.8)
        assert len(design.resonators) == 4
