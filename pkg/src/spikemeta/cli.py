"""Command-line front-end: run experiments, encode datasets, check gradients,
inspect checkpoints.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or input.
"""

import csv
import logging
import os
import sys

import click
import numpy as np

from . import exact
from .datasets import Example, encode_label, rate_encode, save_spike_dataset
from .experiment import ConfigError, ExperimentConfig, run_experiment
from .network import load_checkpoint

log = logging.getLogger("spikemeta")

OUTPUT_DIR_ENV = "SPIKEMETA_OUTPUT_DIR"


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("run")
@click.argument("config_path", type=click.Path())
@click.option(
    "--set", "overrides", multiple=True, metavar="KEY=VALUE",
    help="Override a config key, e.g. --set meta.mu=0.1",
)
@click.option(
    "--output-dir", default=None,
    help=f"Output directory (default: config value or ${OUTPUT_DIR_ENV}).",
)
def cmd_run(config_path, overrides, output_dir):
    """Run a configured experiment and write metrics and checkpoints."""
    try:
        config = ExperimentConfig.from_file(config_path, list(overrides))
    except ConfigError as e:
        click.echo(f"invalid config: {e}", err=True)
        sys.exit(2)
    if output_dir is None:
        output_dir = os.environ.get(OUTPUT_DIR_ENV)
    try:
        out = run_experiment(config, output_dir)
    except Exception as e:  # noqa: BLE001 -- CLI boundary
        log.exception("experiment failed")
        click.echo(f"experiment failed: {e}", err=True)
        sys.exit(1)
    click.echo(f"artifacts written to {out}")


@main.command("encode")
@click.argument("input_csv", type=click.Path())
@click.argument("output_file", type=click.Path())
@click.option("--horizon", default=40, show_default=True)
@click.option("--max-rate", default=1.0, show_default=True)
@click.option("--active-rate", default=0.9, show_default=True)
@click.option("--inactive-rate", default=0.05, show_default=True)
@click.option("--num-classes", default=None, type=int,
              help="Default: max label + 1.")
@click.option("--seed", default=0, show_default=True)
def cmd_encode(input_csv, output_file, horizon, max_rate, active_rate,
               inactive_rate, num_classes, seed):
    """Rate-encode a CSV of intensity patterns into a spike dataset file.

    Each input row is: label, intensity_0, intensity_1, ... with intensities
    in [0, 1].
    """
    try:
        rows = []
        with open(input_csv, newline="") as f:
            for lineno, row in enumerate(csv.reader(f), start=1):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    label = int(row[0])
                    pattern = np.array([float(c) for c in row[1:]])
                except ValueError as e:
                    raise ValueError(f"line {lineno}: {e}") from e
                if label < 0:
                    raise ValueError(f"line {lineno}: negative label")
                rows.append((label, pattern))
        widths = {p.size for _, p in rows}
        if len(widths) > 1:
            raise ValueError(f"inconsistent channel counts {sorted(widths)}")
    except (OSError, ValueError) as e:
        click.echo(f"invalid input: {e}", err=True)
        sys.exit(2)

    if num_classes is None:
        num_classes = max((label for label, _ in rows), default=0) + 1
    rng = np.random.default_rng(seed)
    try:
        examples = [
            Example(
                x=rate_encode(pattern, horizon, max_rate, rng),
                y=encode_label(label, num_classes, horizon, rng,
                               active_rate, inactive_rate),
                label=label,
            )
            for label, pattern in rows
        ]
        channels = widths.pop() if rows else 0
        save_spike_dataset(
            examples, output_file,
            in_channels=channels, out_channels=num_classes, horizon=horizon,
        )
    except ValueError as e:
        click.echo(f"encoding failed: {e}", err=True)
        sys.exit(2)
    click.echo(f"wrote {len(examples)} examples to {output_file}")


@main.command("gradcheck")
@click.option("--seed", default=0, show_default=True)
@click.option("--instances", default=5, show_default=True)
@click.option("--hidden", default=2, show_default=True)
@click.option("--visible", default=1, show_default=True)
@click.option("--inputs", default=2, show_default=True)
@click.option("--horizon", default=4, show_default=True)
@click.option("--step", default=1e-4, show_default=True,
              help="Finite-difference step size.")
@click.option("--tolerance", default=1e-5, show_default=True)
@click.option("--corrupt", is_flag=True,
              help="Deliberately bias the analytic gradient (negative control).")
def cmd_gradcheck(seed, instances, hidden, visible, inputs, horizon, step,
                  tolerance, corrupt):
    """Check analytic gradients against central finite differences."""
    try:
        worst = exact.gradcheck(
            seed=seed, n_instances=instances, h=step, corrupt=corrupt,
            n_hidden=hidden, n_visible=visible, n_inputs=inputs,
            horizon=horizon,
        )
    except ValueError as e:
        click.echo(f"invalid sizes: {e}", err=True)
        sys.exit(2)
    ok = True
    for group, err in worst.items():
        status = "ok" if err < tolerance else "FAIL"
        ok &= err < tolerance
        click.echo(f"{group:8s} max relative error {err:.3e}  {status}")
    sys.exit(0 if ok else 1)


@main.command("inspect-checkpoint")
@click.argument("path", type=click.Path())
def cmd_inspect_checkpoint(path):
    """Print a summary of a parameter checkpoint."""
    try:
        spec, params = load_checkpoint(path)
    except (OSError, ValueError) as e:
        click.echo(f"cannot read checkpoint: {e}", err=True)
        sys.exit(2)
    click.echo(f"spec hash     {spec.content_hash()}")
    click.echo(f"visible       {len(spec.visible)}")
    click.echo(f"hidden        {len(spec.hidden)}")
    click.echo(f"inputs        {len(spec.inputs)}")
    click.echo(f"synapses      {len(spec.synapses)}")
    click.echo(f"window_len    {spec.window_len}")
    click.echo(f"max |param|   {params.max_abs():.6g}")


if __name__ == "__main__":
    main()
