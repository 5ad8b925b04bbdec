import json

import numpy as np
import pytest

from adjforge.adjoint import FomSpec, fom, shape_gradient
from adjforge.errors import InfeasibleDesignError
from adjforge.geometry import Design, LayerStack, Polygon, resample_polygon
from adjforge.optimizer import (
    OptimConfig,
    optimize,
    project_constraints,
    project_design,
    step,
    symmetrize_mirror_x,
)
from adjforge.solver import SimGrid, absorption_spectrum
from adjforge.templates import make_rectangle, template_design

from oracles import hausdorff_distance


class TestProjectConstraints:
    def test_fixed_point_at_grid_min_feature(self):
        poly = resample_polygon(make_rectangle(1.6, 0.2, 1.8, 0.4), 0.1)
        out = project_constraints(poly, OptimConfig(min_feature=0.05), 3.2, 0.4)
        assert hausdorff_distance(out.vertices, poly.vertices) <= 0.05

    def test_sliver_removed(self):
        body = make_rectangle(1.6, 0.2, 1.8, 0.4)
        sliver = make_rectangle(2.55 + 0.05, 0.2, 0.1, 0.4)  # 0.1 um appendage
        merged = Polygon(np.vstack([
            [(0.7, 0.0), (2.65, 0.0), (2.65, 0.4), (0.7, 0.4)]
        ]))
        # appendage: thin 0.1-wide tab sticking out sideways
        tab = Polygon([
            (0.7, 0.0), (2.5, 0.0), (2.5, 0.15), (2.6, 0.15),
            (2.6, 0.25), (2.5, 0.25), (2.5, 0.4), (0.7, 0.4),
        ])
        out = project_constraints(tab, OptimConfig(min_feature=0.25), 3.2, 0.4)
        x_max = out.vertices[:, 0].max()
        assert x_max < 2.56  # tab eroded away
        assert out.area() == pytest.approx(1.8 * 0.4, rel=0.06)

    def test_collapse_raises(self):
        tiny = make_rectangle(1.6, 0.2, 0.12, 0.12)
        with pytest.raises(InfeasibleDesignError):
            project_constraints(tiny, OptimConfig(min_feature=0.25), 3.2, 0.4)

    def test_mirror_projection_idempotent(self):
        poly = resample_polygon(Polygon(
            [(0.9, 0.0), (2.3, 0.0), (2.45, 0.21), (0.9, 0.18)]
        ), 0.1)
        cfg = OptimConfig(min_feature=0.05, symmetry="mirror-x")
        out = project_constraints(poly, cfg, 3.2, 0.4)
        refl = out.mirrored_x(1.6)
        d = np.abs(np.sort(out.vertices, axis=0) - np.sort(refl.vertices, axis=0))
        assert d.max() < 1e-9


class TestSymmetrize:
    def test_output_equals_own_reflection(self):
        poly = resample_polygon(Polygon(
            [(0.8, 0.0), (2.2, 0.0), (2.35, 0.3), (1.1, 0.33)]
        ), 0.1)
        sym = symmetrize_mirror_x(poly, 1.6)
        refl = sym.mirrored_x(1.6)
        # same vertex set within 1e-9 (order may be cyclically shifted)
        from scipy.spatial import cKDTree

        d, _ = cKDTree(refl.vertices).query(sym.vertices)
        assert d.max() < 1e-9


class TestStep:
    def grad_for(self, design, grid, lam=7.0):
        return shape_gradient(design, FomSpec((lam,)), grid)

    def test_zero_gradient_is_identity(self):
        d = template_design("ribbon", width=1.8, height=0.2)
        g = SimGrid.for_design(d)
        sg = self.grad_for(d, g)
        zero = sg.scaled(0.0)
        assert step(d, zero, 0.05) is d

    def test_uniform_gradient_dilates_square(self):
        from adjforge.adjoint import ShapeGradient, vertex_normals

        poly = Polygon([(1.2, 0.1), (2.0, 0.1), (2.0, 0.3), (1.2, 0.3)])
        d = Design(3.2, LayerStack(resonator_thickness=0.4), [poly])
        normals = vertex_normals(poly.vertices)
        sg = ShapeGradient(values=[np.ones(4)], normals=[normals])
        out = step(d, sg, 0.02)
        # every vertex moved outward by exactly step_size along its normal
        assert np.allclose(out.resonators[0].vertices,
                           poly.vertices + 0.02 * normals)

    def test_step_then_negated_step_round_trip(self):
        d = template_design("ribbon", width=1.8, height=0.2)
        g = SimGrid.for_design(d)
        sg = self.grad_for(d, g)
        fwd = step(d, sg, 0.02)
        back = step(fwd, sg.scaled(-1.0), 0.02)
        a = np.sort(back.resonators[0].vertices, axis=0)
        b = np.sort(d.resonators[0].vertices, axis=0)
        # vertices clamped at the bottom stay; free ones return
        assert np.abs(a - b).max() < 5e-3


class TestOptimize:
    def test_monotone_accepted_foms(self):
        d = template_design("ribbon", width=1.6, height=0.2)
        g = SimGrid.for_design(d)
        res = optimize(d, FomSpec((6.5,)), OptimConfig(max_iterations=6), g)
        foms = res.accepted_foms()
        assert all(b >= a for a, b in zip(foms, foms[1:]))
        assert res.delta_fom == pytest.approx(res.final_fom - res.initial_fom)

    def test_stall_at_local_optimum(self):
        # no boundary contrast -> gradient below threshold immediately
        from adjforge.geometry import MaterialParams

        params = MaterialParams(spacer_index=1.0, metal_plasma_freq=1e10,
                                metal_collision_freq=0.0)
        d = template_design("ribbon", width=1.8, height=0.2, material_params=params)
        g = SimGrid.for_design(d)
        res = optimize(d, FomSpec((7.0,)), OptimConfig(max_iterations=5), g)
        assert res.termination == "stalled"
        assert len(res.iterations) <= 1
        assert abs(res.delta_fom) < 1e-6

    def test_width_recovery_toward_oracle(self):
        # target = the peak of a wider ribbon; optimization should grow the
        # start toward it and improve the FOM substantially
        opt = template_design("ribbon", width=2.0, height=0.2)
        g = SimGrid.for_design(opt)
        target = absorption_spectrum(opt, np.linspace(6.5, 9.5, 31), g).peak()[0]
        start = template_design("ribbon", width=1.8, height=0.2)
        res = optimize(start, FomSpec((target,)), OptimConfig(max_iterations=25), g)
        assert res.final_fom > res.initial_fom + 0.2
        opt_fom = fom(opt, FomSpec((target,)), g)
        assert res.final_fom >= opt_fom - 0.1

    def test_determinism(self):
        d = template_design("ribbon", width=1.7, height=0.2)
        g = SimGrid.for_design(d)
        cfg = OptimConfig(max_iterations=3)
        r1 = optimize(d, FomSpec((6.8,)), cfg, g)
        r2 = optimize(d, FomSpec((6.8,)), cfg, g)
        log1 = [rec.to_dict() for rec in r1.iterations]
        log2 = [rec.to_dict() for rec in r2.iterations]
        assert log1 == log2

    def test_events_emitted_per_iteration(self):
        d = template_design("ribbon", width=1.7, height=0.2)
        g = SimGrid.for_design(d)
        events = []
        res = optimize(d, FomSpec((6.8,)), OptimConfig(max_iterations=3), g,
                       on_event=events.append)
        assert len(events) == len(res.iterations)
        assert all(e["kind"] == "iteration" for e in events)

    def test_intermediate_designs_respect_constraints(self):
        d = template_design("ribbon", width=1.8, height=0.2)
        g = SimGrid.for_design(d)
        cfg = OptimConfig(max_iterations=4, symmetry="mirror-x")
        res = optimize(d, FomSpec((7.5,)), cfg, g)
        for rec in res.iterations:
            if not rec.accepted:
                continue
            for vlist in rec.vertices:
                v = np.array(vlist)
                refl = v.copy()
                refl[:, 0] = 3.2 - refl[:, 0]
                from scipy.spatial import cKDTree

                dd, _ = cKDTree(refl).query(v)
                assert dd.max() < 1e-9

    def test_run_dir_persistence(self, tmp_path):
        d = template_design("ribbon", width=1.7, height=0.2)
        g = SimGrid.for_design(d)
        res = optimize(d, FomSpec((6.8,)), OptimConfig(max_iterations=3), g)
        out = tmp_path / "run"
        res.save(str(out))
        assert (out / "config.json").exists()
        assert (out / "design_initial.json").exists()
        assert (out / "design_final.json").exists()
        lines = (out / "iterations.jsonl").read_text().strip().splitlines()
        assert len(lines) == len(res.iterations)
        rec0 = json.loads(lines[0])
        assert set(rec0) >= {"index", "fom", "step_size", "accepted", "vertices"}
        if res.config.dump_gradients and res.gradients:
            assert (out / "gradient_001.json").exists()


class TestStartingDistanceTrend:
    def test_iterations_grow_with_distance_and_far_start_stalls(self):
        # analog of the starting-design distance analysis: ribbon starts at
        # increasing distance from the swept optimum
        opt_w = 2.0
        ref = template_design("ribbon", width=opt_w, height=0.2)
        g = SimGrid.for_design(ref)
        target = absorption_spectrum(ref, np.linspace(6.5, 9.5, 31), g).peak()[0]
        spec = FomSpec((target,))
        cfg = OptimConfig(max_iterations=30)
        iters = []
        for w in (1.9, 1.7, 1.5):
            res = optimize(template_design("ribbon", width=w, height=0.2), spec, cfg, g)
            foms = res.accepted_foms()
            assert all(b >= a for a, b in zip(foms, foms[1:]))
            iters.append(len(res.iterations))
        assert all(b >= a for a, b in zip(iters, iters[1:]))
        far = optimize(template_design("ribbon", width=1.0, height=0.2), spec, cfg, g)
        assert far.termination == "stalled"
        assert far.delta_fom < 0.05
