"""Command line interface: library building, generation, run workflow,
image conversion and the HTTP server."""
from __future__ import annotations

import json
import sys

import click
import numpy as np

from .config import ServiceConfig


@click.group()
def main():
    """Inverse-design workbench for MIM metasurface absorbers."""


@main.group()
def library():
    """Design library operations."""


@library.command("build")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--templates", default=None, help="comma-separated template tags")
@click.option("--sweep", "sweep_file", default=None, type=click.Path(exists=True),
              help="JSON file: {template: {param: [values]}}")
@click.option("--wavelengths", default=61, show_default=True, help="solve points over the band")
@click.option("--workers", default=1, show_default=True)
def library_build(out_dir, templates, sweep_file, wavelengths, workers):
    from .generator import build_library
    from .spectra import default_solve_wavelengths

    sweep = None
    if sweep_file:
        with open(sweep_file) as f:
            sweep = json.load(f)
    tags = templates.split(",") if templates else None
    lib = build_library(
        out_dir, templates=tags, sweep=sweep,
        wavelengths=default_solve_wavelengths(wavelengths), workers=workers,
    )
    click.echo(f"library at {out_dir}: {len(lib)} entries")


@main.command()
@click.option("--target", "target_file", required=True, type=click.Path(exists=True),
              help="JSON target spec (peaks / freehand)")
@click.option("--library", "library_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_file", default=None, type=click.Path())
def generate(target_file, library_dir, out_file):
    """Retrieve the nearest library design for a target spectrum."""
    from .generator import GeneratorHandle, Library, TargetSpec
    from .generator import generate as run_generate

    with open(target_file) as f:
        target = TargetSpec.from_dict(json.load(f))
    lib = Library.load(library_dir)
    design, provenance = run_generate(target, GeneratorHandle(library=lib))
    text = design.to_json()
    if out_file:
        with open(out_file, "w") as f:
            f.write(text)
    else:
        click.echo(text)
    click.echo(json.dumps(provenance, indent=2), err=True)


@main.command()
@click.option("--design", "design_file", required=True, type=click.Path(exists=True))
@click.option("--out", "out_file", default=None, type=click.Path())
@click.option("--points", default=121, show_default=True)
@click.option("--workers", default=1, show_default=True)
def validate(design_file, out_file, points, workers):
    """Solve a design's absorption spectrum and emit CSV."""
    from .geometry import Design
    from .solver import SimGrid, absorption_spectrum
    from .spectra import default_solve_wavelengths

    with open(design_file) as f:
        design = Design.from_json(f.read())
    spectrum = absorption_spectrum(
        design, default_solve_wavelengths(points),
        SimGrid.for_design(design), workers=workers, canonical=True,
    )
    text = spectrum.to_csv()
    if out_file:
        with open(out_file, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


@main.command()
@click.option("--design", "design_file", required=True, type=click.Path(exists=True))
@click.option("--target-wavelengths", required=True,
              help="comma-separated target wavelengths in um")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--max-iterations", default=30, show_default=True)
@click.option("--min-feature-nm", default=50.0, show_default=True)
@click.option("--symmetry", default="none", type=click.Choice(["none", "mirror-x"]))
@click.option("--workers", default=1, show_default=True)
def optimize(design_file, target_wavelengths, out_dir, max_iterations,
             min_feature_nm, symmetry, workers):
    """Run adjoint shape optimization on a design."""
    from .adjoint import FomSpec
    from .geometry import Design
    from .optimizer import OptimConfig, optimize as run_optimize
    from .solver import SimGrid

    with open(design_file) as f:
        design = Design.from_json(f.read())
    spec = FomSpec(tuple(float(t) for t in target_wavelengths.split(",")))
    config = OptimConfig(
        max_iterations=max_iterations,
        min_feature=min_feature_nm / 1000.0,
        symmetry=symmetry,
    )
    result = run_optimize(design, spec, config, SimGrid.for_design(design),
                          workers=workers)
    result.save(out_dir)
    click.echo(
        f"{result.termination}: FOM {result.initial_fom:.4f} -> "
        f"{result.final_fom:.4f} in {len(result.iterations)} iterations"
    )


@main.command()
@click.option("--image", "image_file", required=True, type=click.Path(exists=True),
              help="64x64 RGB PNG design image")
@click.option("--spacing-nm", default=100.0, show_default=True)
@click.option("--min-feature-nm", default=50.0, show_default=True)
@click.option("--canny-low", default=0.1, show_default=True)
@click.option("--canny-high", default=0.3, show_default=True)
def convert(image_file, spacing_nm, min_feature_nm, canny_low, canny_high):
    """Convert a design image into discretized polygon points (JSON)."""
    from .geometry import DesignImage
    from .imagepipe import image_to_polygons

    with open(image_file, "rb") as f:
        image = DesignImage.from_png_bytes(f.read())
    polygons = image_to_polygons(
        image, spacing=spacing_nm / 1000.0, min_feature=min_feature_nm / 1000.0,
        canny_low=canny_low, canny_high=canny_high,
    )
    click.echo(json.dumps([p.vertices.tolist() for p in polygons], indent=2))


@main.group()
def run():
    """Run-record workflow against a runs directory (no server needed)."""


def _store(runs_dir, library_dir=None, workers=1):
    from .generator import Library
    from .service import RunStore

    lib = Library.load(library_dir) if library_dir else None
    return RunStore(runs_dir, library=lib, workers=workers)


@run.command("create")
@click.option("--runs", "runs_dir", default="runs", show_default=True)
@click.option("--target", "target_file", required=True, type=click.Path(exists=True))
def run_create(runs_dir, target_file):
    from .generator import TargetSpec

    with open(target_file) as f:
        target = TargetSpec.from_dict(json.load(f))
    r = _store(runs_dir).create_run(target)
    click.echo(r.id)


@run.command("advance")
@click.argument("run_id")
@click.argument("action", type=click.Choice(["generate", "validate", "optimize"]))
@click.option("--runs", "runs_dir", default="runs", show_default=True)
@click.option("--library", "library_dir", default=None)
@click.option("--target-wavelengths", default=None)
@click.option("--workers", default=1, show_default=True)
def run_advance(run_id, action, runs_dir, library_dir, target_wavelengths, workers):
    store = _store(runs_dir, library_dir, workers)
    targets = (
        [float(t) for t in target_wavelengths.split(",")] if target_wavelengths else None
    )
    r = store.advance(run_id, action, target_wavelengths=targets, wait=True)
    click.echo(json.dumps(r.to_dict(), indent=2))


@run.command("show")
@click.argument("run_id")
@click.option("--runs", "runs_dir", default="runs", show_default=True)
def run_show(run_id, runs_dir):
    click.echo(json.dumps(_store(runs_dir).get_run(run_id).to_dict(), indent=2))


@main.command()
@click.option("--port", default=None, type=int)
@click.option("--host", default=None)
@click.option("--library", "library_dir", default=None, type=click.Path())
@click.option("--runs", "runs_dir", default=None, type=click.Path())
@click.option("--static", "static_dir", default=None, type=click.Path())
@click.option("--config", "config_file", default=None, type=click.Path(exists=True))
@click.option("--workers", default=None, type=int)
def serve(port, host, library_dir, runs_dir, static_dir, config_file, workers):
    """Serve the HTTP API (and the UI bundle when configured)."""
    import uvicorn

    from .api import create_app

    config = ServiceConfig.load(
        config_file,
        port=port, host=host, library_dir=library_dir,
        runs_dir=runs_dir, static_dir=static_dir, workers=workers,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port)


if __name__ == "__main__":
    main()
