"""Command-line client for the optimization service.

`conbo run` executes a configured benchmark run against a service instance
(a remote one via --server, or an in-process instance by default) and
persists the trace, the effective configuration, the final recommendation,
and optionally plot-ready surface grids. `conbo serve` starts the service.

Exit codes: 0 on success, 1 on evaluation failure, 2 on invalid
configuration.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx


def _make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from starlette.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _detail(response) -> str:
    try:
        body = response.json()
    except Exception:
        return response.text
    if isinstance(body, dict) and "detail" in body:
        return json.dumps(body["detail"]) if not isinstance(body["detail"], str) else body["detail"]
    return json.dumps(body)


@click.group()
def main():
    """Constrained Bayesian optimization runner."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int):
    """Start the optimization service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


@main.command()
@click.option("--server", default=None, help="Service URL; default runs the service in process.")
def problems(server: str | None):
    """List the built-in benchmark problems."""
    with _make_client(server) as client:
        response = client.get("/problems")
        if response.status_code != 200:
            _fail(_detail(response), 1)
        for name in response.json()["problems"]:
            click.echo(name)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run config (JSON).")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--iterations", type=int, default=None, help="Overrides the iteration budget.")
@click.option("--mode", type=click.Choice(["coupled", "decoupled"]), default=None)
@click.option("--output", "output_dir", type=click.Path(), default=None, help="Output directory.")
@click.option("--emit-surfaces", "surface_resolution", type=int, default=None,
              help="Also write gridded surface CSVs at this resolution (2D problems).")
@click.option("--server", default=None, help="Service URL; default runs the service in process.")
def run(config_path, seed, iterations, mode, output_dir, surface_resolution, server):
    """Execute one optimization run and persist its outputs."""
    path = Path(config_path)
    if not path.exists():
        _fail(f"config file {path} does not exist", 2)
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        _fail(f"config file {path} is not valid JSON: {exc}", 2)
    if not isinstance(config, dict):
        _fail("config must be a JSON object", 2)

    if seed is not None:
        config["seed"] = seed
    if iterations is not None:
        config["iterations"] = iterations
    if mode is not None:
        config["mode"] = mode
    if output_dir is not None:
        config["output_dir"] = output_dir

    if config.get("external") is not None:
        _fail("external problems are driven through the ask/tell API, not the CLI runner", 2)

    with _make_client(server) as client:
        created = client.post("/runs", json=config)
        if created.status_code in (400, 422):
            _fail(f"invalid config: {_detail(created)}", 2)
        if created.status_code != 200:
            _fail(_detail(created), 1)
        body = created.json()
        run_id = body["run_id"]
        effective = body["config"]

        out_value = effective.get("output_dir")
        if out_value is None:
            _fail("no output directory: set output_dir in the config or pass --output", 2)
        out = Path(out_value)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(effective, indent=2) + "\n")

        initialized = client.post(f"/runs/{run_id}/init")
        if initialized.status_code != 200:
            _fail(f"initialization failed: {_detail(initialized)}", 1)
        (out / "init.json").write_text(json.dumps(initialized.json(), indent=2) + "\n")

        trace_path = out / "trace.jsonl"
        timing_path = out / "timings.jsonl"
        with trace_path.open("w") as trace_file, timing_path.open("w") as timing_file:
            for _ in range(int(effective["iterations"])):
                stepped = client.post(f"/runs/{run_id}/step")
                if stepped.status_code != 200:
                    _fail(f"iteration failed: {_detail(stepped)}", 1)
                record = stepped.json()
                wall_ms = record.pop("wall_ms")
                trace_file.write(json.dumps(record, separators=(",", ":")) + "\n")
                trace_file.flush()
                timing_file.write(
                    json.dumps({"iter": record["iter"], "wall_ms": wall_ms}) + "\n"
                )
                timing_file.flush()

        final = client.get(f"/runs/{run_id}/recommendation")
        if final.status_code != 200:
            _fail(_detail(final), 1)
        recommendation = final.json()
        (out / "recommendation.json").write_text(json.dumps(recommendation, indent=2) + "\n")

        if surface_resolution is not None:
            surfaced = client.get(
                f"/runs/{run_id}/surfaces", params={"resolution": surface_resolution}
            )
            if surfaced.status_code != 200:
                _fail(f"surface emission failed: {_detail(surfaced)}", 2)
            surface_dir = out / "surfaces"
            surface_dir.mkdir(exist_ok=True)
            for name, text in surfaced.json()["files"].items():
                (surface_dir / f"{name}.csv").write_text(text)

    click.echo(
        "recommendation: x={x} expected_objective={v:.6g} feasible={f}".format(
            x=recommendation["x"], v=recommendation["expected_objective"], f=recommendation["feasible"]
        )
    )
    sys.exit(0)


if __name__ == "__main__":
    main()
