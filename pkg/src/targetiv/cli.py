"""Command-line client.

Thin wrapper over the HTTP service: each subcommand builds a JSON request,
drives the FastAPI app in-process, and writes the JSON response.  Exit codes:
1 usage, 2 parse or invalid input, 3 assumption or design violation, 4 weak
identification when --strict-estimands is set.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import warnings

import click

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from .service import app

click.UsageError.exit_code = 1   # usage errors exit 1, parse errors exit 2

EXIT_PARSE = 2
EXIT_ASSUMPTION = 3
EXIT_WEAK = 4

_ERROR_EXIT = {"ParseError": EXIT_PARSE, "InvalidModel": EXIT_PARSE,
               "InvalidInput": EXIT_PARSE,
               "AssumptionViolated": EXIT_ASSUMPTION,
               "DesignViolated": EXIT_ASSUMPTION,
               "WeakIdentification": EXIT_WEAK,
               "RankDeficient": EXIT_ASSUMPTION}


def _client() -> TestClient:
    # drives the service in-process; `targetiv serve` runs the same app over HTTP
    return TestClient(app, raise_server_exceptions=False)


def _call(path: str, payload: dict) -> dict:
    with _client() as client:
        response = client.post(path, json=payload)
    doc = response.json()
    if response.status_code >= 400:
        err = doc.get("error") or {"type": "InvalidInput",
                                   "message": json.dumps(doc.get("detail", doc))}
        click.echo(f"error ({err['type']}): {err['message']}", err=True)
        sys.exit(_ERROR_EXIT.get(err["type"], EXIT_PARSE))
    return doc


def _read_json(path: str) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"error (ParseError): cannot read {path}: {exc}", err=True)
        sys.exit(EXIT_PARSE)


def _write(doc: dict, out: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out == "-":
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)


@click.group()
def main() -> None:
    """Identification and estimation with discrete targeting instruments."""


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--regime", type=click.Choice(["one_to_one", "strict", "strict_one_to_one"]),
              default=None)
@click.option("--out", default="-", show_default=True)
def enumerate(model_path: str, regime: str | None, out: str) -> None:
    """List response classes, verdicts, and excluded groups for a model."""
    doc = _call("/enumerate", {"model": _read_json(model_path), "regime": regime})
    _write(doc, out)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--errors", "errors_path", required=True, type=click.Path(exists=True))
@click.option("--outcomes", "outcomes_path", required=True, type=click.Path(exists=True))
@click.option("--n", required=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--filter", "filtered", is_flag=True,
              help="Also report filtered-treatment moments.")
@click.option("--dump-csv", "dump_csv", type=click.Path(), default=None,
              help="Write realized per-unit rows (y, arm, z) to a CSV file.")
@click.option("--dump-filtered", is_flag=True,
              help="Dump the filtered arm instead of the underlying one.")
@click.option("--out", default="-", show_default=True)
def simulate(model_path: str, errors_path: str, outcomes_path: str, n: int,
             seed: int, filtered: bool, dump_csv: str | None,
             dump_filtered: bool, out: str) -> None:
    """Draw a population and report its exact moment tables."""
    model = _read_json(model_path)
    errors = _read_json(errors_path)
    outcomes = _read_json(outcomes_path)
    doc = _call("/simulate", {"model": model, "errors": errors,
                              "outcomes": outcomes, "n": n, "seed": seed,
                              "filtered": filtered})
    if dump_csv is not None:
        # per-unit data cannot sensibly travel as JSON; regenerate locally
        # from the same seed, which yields the identical population
        from .estimation import dataset_from_population
        from .model import ModelSpec
        from .simulator import ErrorSpec, OutcomeSpec, draw_population
        pop = draw_population(ModelSpec.from_dict(model),
                              ErrorSpec.from_dict(errors),
                              OutcomeSpec.from_dict(outcomes), n, seed=seed)
        dataset_from_population(pop, filtered=dump_filtered).save_csv(dump_csv)
        doc["csv"] = dump_csv
    _write(doc, out)


@main.command()
@click.option("--moments", "moments_path", required=True, type=click.Path(exists=True))
@click.option("--design", required=True, type=click.Choice(["2xT", "3x3"]))
@click.option("--homog", default="", help="Comma-separated: eq1,eq2 (3x3) or any value (2xT).")
@click.option("--tsls", is_flag=True)
@click.option("--targeted", default="1", show_default=True)
@click.option("--z-on", default="1", show_default=True)
@click.option("--z-off", default="0", show_default=True)
@click.option("--strict-estimands", is_flag=True,
              help="Exit 4 if any estimand was suppressed as weak.")
@click.option("--out", default="-", show_default=True)
def identify(moments_path: str, design: str, homog: str, tsls: bool,
             targeted: str, z_on: str, z_off: str, strict_estimands: bool,
             out: str) -> None:
    """Identification report from a moment table."""
    doc = _call("/identify", {
        "moments": _read_json(moments_path), "design": design,
        "homog": [h for h in homog.split(",") if h], "tsls": tsls,
        "targeted": targeted, "z_on": z_on, "z_off": z_off})
    _write(doc, out)
    if strict_estimands and doc.get("weak"):
        click.echo(f"weak estimands: {doc['weak']}", err=True)
        sys.exit(EXIT_WEAK)


@main.command("identify-filtered")
@click.option("--moments", "moments_path", required=True, type=click.Path(exists=True))
@click.option("--design", required=True,
              type=click.Choice(["m1", "m3", "3x2", "factorial", "star"]))
@click.option("--homogeneous", is_flag=True)
@click.option("--strict-estimands", is_flag=True)
@click.option("--out", default="-", show_default=True)
def identify_filtered(moments_path: str, design: str, homogeneous: bool,
                      strict_estimands: bool, out: str) -> None:
    """Identification report for a filtered design."""
    doc = _call("/identify-filtered", {"moments": _read_json(moments_path),
                                       "design": design,
                                       "homogeneous": homogeneous})
    _write(doc, out)
    if strict_estimands and doc.get("weak"):
        click.echo(f"weak estimands: {doc['weak']}", err=True)
        sys.exit(EXIT_WEAK)


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--design", required=True,
              type=click.Choice(["2xT", "3x3", "m1", "m3", "3x2", "factorial", "star"]))
@click.option("--boot", default=999, show_default=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--cluster", is_flag=True, help="Resample whole clusters (needs a cluster column).")
@click.option("--by", is_flag=True, help="Run per covariate cell (needs a cell column).")
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--homog", default="", help="Comma-separated homogeneity declarations.")
@click.option("--homogeneous", is_flag=True, help="Declare homogeneity (filtered designs).")
@click.option("--targeted", default="1", show_default=True)
@click.option("--z-on", default="1", show_default=True)
@click.option("--z-off", default="0", show_default=True)
@click.option("--min-first-stage", default=0.01, show_default=True, type=float,
              help="With --strict-estimands, exit 4 when the smallest relevance "
                   "singular value falls below this.")
@click.option("--strict-estimands", is_flag=True)
@click.option("--out", default="-", show_default=True)
def estimate(data_path: str, design: str, boot: int, seed: int, cluster: bool,
             by: bool, workers: int, homog: str, homogeneous: bool,
             targeted: str, z_on: str, z_off: str, min_first_stage: float,
             strict_estimands: bool, out: str) -> None:
    """Estimate a design from micro-data with bootstrap uncertainty."""
    try:
        data_csv = Path(data_path).read_text()
    except OSError as exc:
        click.echo(f"error (ParseError): {exc}", err=True)
        sys.exit(EXIT_PARSE)
    doc = _call("/estimate", {
        "data_csv": data_csv, "design": design, "boot": boot, "seed": seed,
        "cluster": cluster, "by": by, "workers": workers,
        "homog": [h for h in homog.split(",") if h], "homogeneous": homogeneous,
        "targeted": targeted, "z_on": z_on, "z_off": z_off})
    _write(doc, out)
    if strict_estimands:
        weak = []
        for label, cell in doc["cells"].items():
            weak += [f"{label}:{w}" if label else w
                     for w in cell["report"].get("weak", [])]
            sv = cell["relevance"]["singular_values"]
            if sv and min(sv) < min_first_stage:
                weak.append(f"{label}:first-stage" if label else "first-stage")
        if weak:
            click.echo(f"weak estimands: {weak}", err=True)
            sys.exit(EXIT_WEAK)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--errors", "errors_path", required=True, type=click.Path(exists=True))
@click.option("--outcomes", "outcomes_path", required=True, type=click.Path(exists=True))
@click.option("--n", default=100_000, show_default=True, type=int)
@click.option("--seed", required=True, type=int)
@click.option("--out", default="-", show_default=True)
def validate(model_path: str, errors_path: str, outcomes_path: str, n: int,
             seed: int, out: str) -> None:
    """Run the end-to-end conformance suite against the oracle."""
    doc = _call("/validate", {"model": _read_json(model_path),
                              "errors": _read_json(errors_path),
                              "outcomes": _read_json(outcomes_path),
                              "n": n, "seed": seed})
    _write(doc, out)
    if not doc.get("passed", False):
        failed = [c["name"] for c in doc["checks"] if not c.get("passed", True)]
        click.echo(f"failed checks: {failed}", err=True)
        sys.exit(EXIT_ASSUMPTION)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
