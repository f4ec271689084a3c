"""Command line front door: serve the hub, run trials, prune models.

Logging level comes from the DESKBOT_LOG environment variable (DEBUG, INFO,
WARNING, ...); the default keeps the console quiet except for warnings.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
from pathlib import Path

import click

from . import __version__, harness, nlu, pruning
from .hub import Hub, HubConfig, NluService

_TASK_DEFAULTS = {
    "door": ("Door", "Open the door"),
    "switch": ("Switch", "Switch off the light"),
    "cup": ("Cup", "Please hand me the water cup"),
}


@click.group()
@click.version_option(__version__)
def main():
    level = os.environ.get("DESKBOT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


@main.command()
@click.option("--arm", default="arm_table1", show_default=True)
@click.option("--scene", default="office", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--tcp", default=7462, show_default=True)
@click.option("--ws", default=7463, show_default=True)
@click.option("--telemetry-hz", default=20.0, show_default=True)
@click.option("--tick-hz", default=50.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def serve(arm, scene, host, tcp, ws, telemetry_hz, tick_hz, seed):
    """Run the control hub (TCP frames + WebSocket relay)."""
    config = HubConfig(arm=arm, scene=scene, host=host, tcp_port=tcp,
                       ws_port=ws, telemetry_hz=telemetry_hz,
                       tick_hz=tick_hz, seed=seed)
    hub = Hub(config)

    async def _run():
        await hub.start()
        click.echo(f"hub listening: tcp={hub.tcp_port} ws={hub.ws_port} (path /ws)")
        try:
            await asyncio.Event().wait()
        finally:
            await hub.stop()

    try:
        asyncio.run(_run())
    except KeyboardInterrupt:
        pass


@main.command("nlu-serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--tcp", default=7464, show_default=True)
def nlu_serve(host, tcp):
    """Run the standalone intent service (INTENT_TEXT only)."""
    service = NluService(host=host, port=tcp)

    async def _run():
        await service.start()
        click.echo(f"nlu service listening: tcp={service.port}")
        try:
            await asyncio.Event().wait()
        finally:
            await service.stop()

    try:
        asyncio.run(_run())
    except KeyboardInterrupt:
        pass


@main.command("run-task")
@click.argument("task", type=click.Choice(sorted(_TASK_DEFAULTS)))
@click.option("--command", "command_text", default=None,
              help="Spoken command; defaults to the task's canonical phrase.")
@click.option("--trials", default=500, show_default=True)
@click.option("--wer", default=0.0, show_default=True)
@click.option("--lighting", type=click.Choice(["Bright", "Dim"]),
              default="Bright", show_default=True)
@click.option("--clutter", default=0.0, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the table as CSV (.csv) or markdown (.md).")
def run_task(task, command_text, trials, wer, lighting, clutter, seed, out):
    """Run one trial cell and print its CSR/CP counts."""
    task_name, default_cmd = _TASK_DEFAULTS[task]
    spec = harness.TrialSpec(
        task=task_name, command_text=command_text or default_cmd,
        lighting=lighting, clutter_fraction=clutter, wer=wer,
        trials=trials, seed=seed, label=task_name)
    try:
        table = harness.run_trials(spec)
    except ValueError as e:
        raise click.ClickException(str(e))
    n = table.n
    click.echo(f"{task_name}: CSR {table.csr_count}/{n} "
               f"({harness.render_rate(table.csr_count, n)})  "
               f"CP {table.cp_count}/{n} "
               f"({harness.render_rate(table.cp_count, n)})")
    if out:
        fmt = "markdown" if out.endswith(".md") else "csv"
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(harness.emit_report([table], fmt), encoding="utf-8")
        click.echo(f"wrote {out}")


@main.command()
@click.argument("config")
@click.option("--out-dir", type=click.Path(file_okay=False), default="out",
              show_default=True)
@click.option("--trials", default=None, type=int,
              help="Override the per-cell trial count.")
@click.option("--master-seed", default=None, type=int)
def campaign(config, out_dir, trials, master_seed):
    """Run a campaign config (bundled name or JSON path)."""
    def progress(block, spec):
        click.echo(f"[{block}] {spec.label}: {spec.trials} trials ...")

    try:
        result = harness.campaign(config, out_dir=out_dir, trials=trials,
                                  master_seed=master_seed, progress=progress)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as e:
        raise click.ClickException(str(e))
    click.echo(f"{len(result.tables)} cells; documents in {out_dir}:")
    for fname in result.documents:
        click.echo(f"  {fname}")


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Model JSON; defaults to the bundled intent model.")
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="text<TAB>intent corpus; defaults to the bundled one.")
@click.option("--k", default=5, show_default=True, help="Permutation repeats.")
@click.option("--fraction", default=0.3, show_default=True)
@click.option("--bits", type=click.Choice(["4", "8", "16"]), default="8",
              show_default=True)
@click.option("--seed", default=7, show_default=True)
@click.option("--kind", type=click.Choice(list(pruning.KINDS)),
              default="feature", show_default=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False),
              default="report.json", show_default=True)
@click.option("--save-model", "save_path", type=click.Path(dir_okay=False),
              default=None, help="Write the pruned model JSON here.")
def prune(model_path, data_path, k, fraction, bits, seed, kind,
          report_path, save_path):
    """Score importances, prune, quantize, and write a JSON report.

    Report schema: {"kind", "baseline", "repeats", "seed", "rows",
    "importances", "fraction", "pruned_indices", "accuracy_before",
    "accuracy_after", "bits", "quant_agreement"}.
    """
    model = nlu.load_model(model_path) if model_path else nlu.default_model()
    if data_path:
        corpus = nlu.load_corpus(data_path)
    else:
        from importlib import resources
        bundled = resources.files("deskbot").joinpath("data", "corpus_desk.tsv")
        corpus = nlu.load_corpus(str(bundled))

    imp = pruning.permutation_importance(model, corpus, repeats=k,
                                         seed=seed, kind=kind)
    pruned = pruning.prune(model, imp, fraction)
    qm = pruning.quantize(pruned, int(bits))
    report = imp.to_dict()
    report.update({
        "fraction": fraction,
        "pruned_indices": [int(i) for i in
                           pruning.selected_for_pruning(imp, fraction)],
        "accuracy_before": pruning.evaluate(model, corpus),
        "accuracy_after": pruning.evaluate(pruned, corpus),
        "bits": int(bits),
        "quant_agreement": pruning.argmax_agreement(pruned, qm, corpus),
    })
    Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True),
                                 encoding="utf-8")
    click.echo(f"baseline {report['accuracy_before']:.4f} -> "
               f"pruned {report['accuracy_after']:.4f}; "
               f"{int(bits)}-bit agreement {report['quant_agreement']:.4f}")
    click.echo(f"wrote {report_path}")
    if save_path:
        nlu.save_model(pruned, save_path)
        click.echo(f"wrote {save_path}")


if __name__ == "__main__":
    main()
