"""Command-line interface: a thin client over the HTTP service.

Every subcommand builds a request, sends it to the service (in-process by
default, remote with ``--server``), and renders the response.  Exit codes:
0 success, 2 configuration error, 3 numeric failure, 1 anything else.
"""

from __future__ import annotations

import json
import sys

import click

from .errors import ConfigError, MipcamError, ValidationError
from .pipeline.config import load_config_file
from .service.client import ServiceClient

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fail(kind: str, message: str) -> None:
    click.echo(f"error ({kind}): {message}", err=True)
    if kind == "config":
        sys.exit(EXIT_CONFIG)
    if kind == "numeric":
        sys.exit(EXIT_NUMERIC)
    sys.exit(1)


def _call(ctx, path: str, payload: dict) -> dict:
    client: ServiceClient = ctx.obj
    try:
        status, body = client.post(path, payload)
    except MipcamError as exc:
        _fail("config" if isinstance(exc, ValidationError) else "internal", str(exc))
    if status == 200:
        return body
    if status == 422:
        _fail("config", json.dumps(body.get("detail", body)))
    error = body.get("error", {})
    _fail(error.get("kind", "internal"), error.get("message", f"HTTP {status}"))


def _train_section(config_path, **overrides) -> dict:
    section = {}
    if config_path:
        section = dict(load_config_file(config_path).get("train", {}))
    for key, value in overrides.items():
        if value is not None:
            section[key] = value
    return section


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Base URL of a running service; by default commands run in-process.")
@click.version_option()
@click.pass_context
def main(ctx, server):
    """Weakly supervised PET tumor localization from two MIP views."""
    ctx.obj = ServiceClient(server)


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="JSON config file.")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--cases", "n_per_class", default=10, show_default=True,
              help="Cases to generate per class.")
@click.option("--seed", type=int, default=None, help="Override the phantom RNG seed.")
@click.pass_context
def phantom(ctx, config_path, out_dir, n_per_class, seed):
    """Generate a synthetic phantom dataset with ground truth."""
    payload: dict = {"out_dir": out_dir, "n_per_class": n_per_class}
    section = {}
    if config_path:
        try:
            section = dict(load_config_file(config_path).get("phantom", {}))
        except ConfigError as exc:
            _fail("config", str(exc))
    if seed is not None:
        section["rng_seed"] = seed
    if section:
        payload["config"] = section
    body = _call(ctx, "/phantom", payload)
    click.echo(f"wrote {body['n_cases']} cases; manifest: {body['manifest']}")


def _common_train_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(), help="JSON config file.")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--lambda", "lam", type=float, default=None,
                      help="Distance-loss weight (0 trains the maps-alone baseline).")(fn)
    fn = click.option("--threshold", "threshold_frac", type=float, default=None,
                      help="Map threshold fraction for 2D masks.")(fn)
    fn = click.option("--suv-frac", type=float, default=None,
                      help="Refinement intensity fraction.")(fn)
    fn = click.option("--epochs", type=int, default=None)(fn)
    return fn


def _train_payload(config_path, seed, lam, threshold_frac, suv_frac, epochs) -> dict:
    try:
        section = _train_section(config_path, seed=seed, threshold_frac=threshold_frac,
                                 suv_frac=suv_frac, epochs=epochs)
    except ConfigError as exc:
        _fail("config", str(exc))
    if lam is not None:
        section["lambda"] = lam
    return section


@main.command()
@click.option("--data", "manifest", required=True, type=click.Path(),
              help="Dataset manifest path.")
@click.option("--out-dir", required=True, type=click.Path())
@_common_train_options
@click.pass_context
def train(ctx, manifest, out_dir, config_path, seed, lam, threshold_frac, suv_frac, epochs):
    """Train one model on a full dataset and save a checkpoint."""
    payload = {"manifest": manifest, "out_dir": out_dir,
               "train": _train_payload(config_path, seed, lam, threshold_frac, suv_frac, epochs)}
    body = _call(ctx, "/train", payload)
    final = body.get("final") or {}
    click.echo(f"trained {body['steps']} steps; checkpoint: {body['checkpoint']}")
    if final:
        click.echo(f"final losses: loss1={final['loss1']:.4f} loss2={final['loss2']:.4f} "
                   f"combined={final['combined']:.4f}")


@main.command()
@click.option("--data", "manifest", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--folds", default=5, show_default=True)
@click.option("--write-masks", is_flag=True, help="Also write predicted masks as .nii.gz.")
@_common_train_options
@click.pass_context
def crossval(ctx, manifest, out_dir, folds, write_masks, config_path, seed, lam,
             threshold_frac, suv_frac, epochs):
    """Run stratified k-fold cross-validation end to end."""
    payload = {"manifest": manifest, "out_dir": out_dir, "folds": folds,
               "write_masks": write_masks,
               "train": _train_payload(config_path, seed, lam, threshold_frac, suv_frac, epochs)}
    body = _call(ctx, "/crossval", payload)
    click.echo(f"dice {body['dice_mean']:.3f}±{body['dice_std']:.3f}  "
               f"accuracy {body['accuracy']:.3f}  ({body['n_cases']} cases, "
               f"{len(body['folds'])} folds)")
    click.echo(f"report: {body['report']}")


@main.command("eval")
@click.option("--data", "manifest", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--no-masks", is_flag=True, help="Skip writing predicted masks.")
@_common_train_options
@click.pass_context
def eval_cmd(ctx, manifest, checkpoint, out_dir, no_masks, config_path, seed, lam,
             threshold_frac, suv_frac, epochs):
    """Evaluate a trained checkpoint on a dataset with ground truth."""
    payload = {"manifest": manifest, "checkpoint": checkpoint, "out_dir": out_dir,
               "write_masks": not no_masks,
               "train": _train_payload(config_path, seed, lam, threshold_frac, suv_frac, epochs)}
    body = _call(ctx, "/eval", payload)
    click.echo(f"dice {body['dice_mean']:.3f}  accuracy {body['accuracy']:.3f}  "
               f"({body['n_cases']} cases, {body['skipped']} skipped)")
    click.echo(f"records: {body['records']}")


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--instances", type=int, default=5, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.pass_context
def gradcheck(ctx, seed, instances, tolerance, lam):
    """Check loss gradients against central finite differences."""
    body = _call(ctx, "/gradcheck", {"seed": seed, "instances": instances,
                                     "tolerance": tolerance, "lambda": lam})
    status = "PASS" if body["passed"] else "FAIL"
    click.echo(f"{status}: max relative error {body['max_rel_error']:.3e} "
               f"(tolerance {body['tolerance']:.0e}, {body['elapsed_seconds']:.1f}s)")
    for line in body["failures"]:
        click.echo(f"  {line}")
    if not body["passed"]:
        sys.exit(EXIT_NUMERIC)


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.pass_context
def report(ctx, reports, out_dir):
    """Render plots and a summary table from one or more run reports."""
    body = _call(ctx, "/report", {"reports": list(reports), "out_dir": out_dir})
    click.echo(f"wrote {len(body['files'])} files to {out_dir}")
    for f in body["files"]:
        click.echo(f"  {f}")


@main.command()
@click.option("--volume", required=True, type=click.Path(), help="Input .nii.gz volume.")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output path for the detection mask (.nii.gz).")
@_common_train_options
@click.pass_context
def localize(ctx, volume, checkpoint, out_path, config_path, seed, lam, threshold_frac,
             suv_frac, epochs):
    """Localize the lesion in a single PET volume."""
    payload = {"volume": volume, "checkpoint": checkpoint, "out_path": out_path,
               "train": _train_payload(config_path, seed, lam, threshold_frac, suv_frac, epochs)}
    body = _call(ctx, "/localize", payload)
    click.echo(f"class {body['pred_label']} (p={max(body['probabilities']):.3f}), "
               f"{body['detected_voxels']} voxels detected")
    click.echo(f"mask: {body['mask']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
