"""Command-line interface.

Subcommand map:

  conformal fit / predict     calibration threshold and prediction sets
  ood fit / score             energy detector calibration and scoring
  longtail splits / recompose class diagnosis and head surgery
  eval                        metrics report for a labeled logit table
  synth                       synthetic feature/head generation
  ingest plan / run / verify  dataset download pipeline
  predict                     one-shot pipeline over a bundle directory
  serve                       HTTP service over a bundle directory

Every command exits 1 with a one-line message on a trustgate error; stack
traces are reserved for genuine bugs.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import backend, conformal, formats, ingest, longtail, metrics, ood, service
from .core import Rank
from .errors import TrustgateError


def _trustgate_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TrustgateError as exc:
            raise click.ClickException(str(exc)) from exc
    return wrapper


@click.group()
def main() -> None:
    """Trustworthy classification toolkit: conformal sets, OOD gating,
    long-tail repair, and a serving pipeline."""


# ---------------------------------------------------------------------------
# conformal

@main.group(name="conformal")
def conformal_group() -> None:
    """Split conformal calibration and prediction sets."""


@conformal_group.command("fit")
@click.option("--alpha", type=float, default=conformal.DEFAULT_ALPHA, show_default=True,
              help="Target miscoverage rate.")
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True),
              help="Nonconformity scores, one float per line.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Where to write the calibration artifact (JSON).")
@click.option("--split-seed", type=int, default=None,
              help="Seed of the split that produced the scores, recorded as metadata.")
@_trustgate_errors
def conformal_fit(alpha: float, scores_path: str, out_path: str,
                  split_seed: int | None) -> None:
    """Calibrate the conformal threshold from a score file."""
    scores = formats.read_scores(scores_path)
    cal = conformal.calibrate(conformal.NonconformityScores(scores), alpha,
                              split_seed=split_seed)
    conformal.save_calibration(cal, out_path)
    click.echo(f"qhat={cal.qhat!r} n={cal.n} alpha={cal.alpha} -> {out_path}")


@conformal_group.command("predict")
@click.option("--cal", "cal_path", required=True, type=click.Path(exists=True),
              help="Calibration artifact from 'conformal fit'.")
@click.option("--logits", "logits_path", required=True, type=click.Path(exists=True),
              help="Logit table (CSV or binary).")
@_trustgate_errors
def conformal_predict(cal_path: str, logits_path: str) -> None:
    """Print one JSON line per row: item id and its prediction set."""
    cal = conformal.load_calibration(cal_path)
    table = formats.read_logits(logits_path)
    from .core import softmax

    for i in range(len(table)):
        probs = softmax(table.logits[i])
        members = sorted(conformal.predict_set(probs, cal))
        click.echo(json.dumps({"item_id": table.item_ids[i], "set": members},
                              sort_keys=True))


# ---------------------------------------------------------------------------
# ood

@main.group(name="ood")
def ood_group() -> None:
    """Energy-based out-of-distribution detection."""


@ood_group.command("fit")
@click.option("--id", "id_path", required=True, type=click.Path(exists=True),
              help="In-distribution logit table.")
@click.option("--ood", "ood_path", required=True, type=click.Path(exists=True),
              help="Out-of-distribution logit table.")
@click.option("--folds", type=int, default=ood.DEFAULT_FOLDS, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--temperature", type=float, default=ood.DEFAULT_TEMPERATURE,
              show_default=True)
@click.option("--objective", type=click.Choice([ood.OBJECTIVE_BALANCED, ood.OBJECTIVE_PLAIN]),
              default=ood.OBJECTIVE_BALANCED, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Where to write the energy config artifact (JSON).")
@_trustgate_errors
def ood_fit(id_path: str, ood_path: str, folds: int, seed: int, temperature: float,
            objective: str, out_path: str) -> None:
    """Calibrate the energy threshold from two logit tables."""
    id_table = formats.read_logits(id_path)
    ood_table = formats.read_logits(ood_path)
    config, accuracy = ood.fit_config(
        id_table.logits, ood_table.logits, temperature=temperature,
        folds=folds, seed=seed, objective=objective)
    ood.save_config(config, out_path)
    click.echo(f"threshold={config.threshold!r} accuracy={accuracy:.4f} -> {out_path}")


@ood_group.command("score")
@click.option("--logits", "logits_path", required=True, type=click.Path(exists=True),
              help="Logit table to score.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Optional fitted config; adds is_ood verdicts.")
@click.option("--temperature", type=float, default=None,
              help="Temperature when no config is given.")
@_trustgate_errors
def ood_score(logits_path: str, config_path: str | None,
              temperature: float | None) -> None:
    """Print one JSON line per row: item id, energy, and verdict if configured."""
    table = formats.read_logits(logits_path)
    config = ood.load_config(config_path) if config_path else None
    if config is not None and temperature is not None:
        raise click.UsageError("give either --config or --temperature, not both")
    t = config.temperature if config is not None else (
        temperature if temperature is not None else ood.DEFAULT_TEMPERATURE)
    energies = ood.energy_matrix(table.logits, t)
    for i in range(len(table)):
        doc: dict = {"item_id": table.item_ids[i], "energy": float(energies[i])}
        if config is not None:
            verdict = ood.detect(table.logits[i], config)
            doc["is_ood"] = verdict.is_ood
        click.echo(json.dumps(doc, sort_keys=True))


# ---------------------------------------------------------------------------
# longtail

@main.group(name="longtail")
def longtail_group() -> None:
    """Per-class diagnosis and post-hoc head recomposition."""


def _read_int_lines(path: str) -> np.ndarray:
    values = []
    with open(path) as fh:
        for line in fh:
            text = line.strip()
            if text:
                values.append(int(text))
    return np.asarray(values, dtype=np.int64)


@longtail_group.command("splits")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True),
              help="Predicted class indices, one integer per line.")
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True),
              help="True class indices, one integer per line.")
@click.option("--classes", "class_count", type=int, default=None,
              help="Class count K; defaults to max index + 1.")
@_trustgate_errors
def longtail_splits(preds_path: str, labels_path: str, class_count: int | None) -> None:
    """Assign few/medium/many splits from per-class accuracy."""
    preds = _read_int_lines(preds_path)
    labels = _read_int_lines(labels_path)
    k = class_count if class_count is not None else int(max(preds.max(), labels.max())) + 1
    acc = longtail.per_class_accuracy(preds, labels, k)
    assignment = longtail.assign_splits(acc)
    doc = {
        "class_count": k,
        "few": list(assignment.few),
        "medium": list(assignment.medium),
        "many": list(assignment.many),
        "accuracy": [None if np.isnan(a) else float(a) for a in acc],
    }
    click.echo(json.dumps(doc, sort_keys=True))


@longtail_group.command("recompose")
@click.option("--head", "head_path", required=True, type=click.Path(exists=True),
              help="Input head (TGHD binary).")
@click.option("--cal", "cal_path", required=True, type=click.Path(exists=True),
              help="Calibration features (TGFT binary); also drives the split diagnosis.")
@click.option("--k", "k_neighbors", type=int, default=longtail.DEFAULT_K_NEIGHBORS,
              show_default=True, help="Donor count per weak class.")
@click.option("--steps", type=int, default=longtail.DEFAULT_STEPS, show_default=True)
@click.option("--step-size", type=float, default=longtail.DEFAULT_STEP_SIZE,
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Where to write the recomposed head (TGHD binary).")
@_trustgate_errors
def longtail_recompose(head_path: str, cal_path: str, k_neighbors: int, steps: int,
                       step_size: float, seed: int, out_path: str) -> None:
    """Diagnose splits on the calibration table and rewrite weak head rows.

    The fit parameters are recorded next to the output head in
    '<out>.meta.json' so the recomposition is reproducible.
    """
    head = formats.read_head(head_path)
    cal = formats.read_features(cal_path)
    assignment = longtail.diagnose_splits(head, cal)
    new_head = longtail.recompose_head(head, assignment, cal, k_neighbors=k_neighbors,
                                       steps=steps, step_size=step_size, seed=seed)
    formats.write_head(new_head, out_path)
    from .core import RNG_ALGORITHM

    meta = {
        "k_neighbors": k_neighbors,
        "steps": steps,
        "step_size": step_size,
        "seed": seed,
        "rng": RNG_ALGORITHM,
        "few_classes": list(assignment.few),
        "source_head": str(head_path),
    }
    meta_path = f"{out_path}.meta.json"
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"recomposed {len(assignment.few)} weak class(es) -> {out_path}")


# ---------------------------------------------------------------------------
# metrics

@main.command("eval")
@click.option("--logits", "logits_path", required=True, type=click.Path(exists=True),
              help="Labeled logit table.")
@click.option("--out-report", "report_path", type=click.Path(), default=None,
              help="Optional JSON report destination.")
@click.option("--per-class-csv", "csv_path", type=click.Path(), default=None,
              help="Optional per-class CSV destination.")
@_trustgate_errors
def eval_command(logits_path: str, report_path: str | None, csv_path: str | None) -> None:
    """Evaluate a labeled logit table and print the report."""
    table = formats.read_logits(logits_path)
    report = metrics.evaluate(table)
    doc = {
        "top1": report.top1,
        "top5": report.top5,
        "mean_per_class": report.mean_per_class,
        "histogram": list(report.histogram),
        "class_count_evaluated": report.class_count_evaluated,
        "below_80_fraction": report.below_80_fraction,
    }
    click.echo(json.dumps(doc, sort_keys=True))
    if report_path:
        metrics.save_report(report, report_path)
    if csv_path:
        metrics.write_per_class_csv(csv_path, table)


# ---------------------------------------------------------------------------
# backend

@main.command("synth")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="Synthetic spec (JSON).")
@click.option("--out-features", "features_path", required=True, type=click.Path(),
              help="Feature table destination (TGFT binary).")
@click.option("--out-head", "head_path", required=True, type=click.Path(),
              help="Head destination (TGHD binary).")
@_trustgate_errors
def synth(spec_path: str, features_path: str, head_path: str) -> None:
    """Generate the synthetic fixture described by a spec file."""
    spec = backend.load_synthetic_spec(spec_path)
    table, head = backend.generate_synthetic(spec)
    formats.write_features(table, features_path)
    formats.write_head(head, head_path)
    click.echo(f"{len(table)} rows, {spec.class_count} classes -> "
               f"{features_path}, {head_path}")


# ---------------------------------------------------------------------------
# ingest

@main.group(name="ingest")
def ingest_group() -> None:
    """Dataset download pipeline: plan, run, verify."""


@ingest_group.command("plan")
@click.option("--taxa", "taxa_path", required=True, type=click.Path(exists=True),
              help="Taxonomy CSV.")
@click.option("--photos", "photos_path", required=True, type=click.Path(exists=True),
              help="Photo listing CSV.")
@click.option("--clade", "clade_root", required=True, type=int,
              help="Root taxon id of the clade to keep.")
@click.option("--rank", type=click.Choice([r.value for r in Rank]), default="species",
              show_default=True, help="Taxonomic rank to select.")
@click.option("--quality", type=click.Choice([g.value for g in ingest.QualityGrade]),
              default="research", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Manifest destination.")
@_trustgate_errors
def ingest_plan(taxa_path: str, photos_path: str, clade_root: int, rank: str,
                quality: str, out_path: str) -> None:
    """Build and persist a filtered, deduplicated download manifest."""
    taxonomy = formats.read_taxonomy_csv(taxa_path)
    photos = ingest.read_photos_csv(photos_path)
    taxa_filter = ingest.filter_taxa(taxonomy, clade_root, Rank.parse(rank))
    manifest = ingest.build_manifest(
        photos, taxa_filter, ingest.QualityGrade.parse(quality),
        filter_description={"clade_root": clade_root, "rank": rank, "quality": [quality]})
    ingest.write_manifest(manifest, out_path)
    click.echo(f"{len(manifest)} record(s) across "
               f"{len({r.taxon_id for r in manifest.records})} taxa -> {out_path}")


@ingest_group.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--dest", "dest_root", required=True, type=click.Path())
@click.option("--concurrency", type=int, default=ingest.DEFAULT_CONCURRENCY,
              show_default=True)
@click.option("--rate", "rate_limit", type=float, default=ingest.DEFAULT_RATE_LIMIT,
              show_default=True, help="Request rate limit per second.")
@click.option("--base-url", default=None,
              help=f"Override the download host (or set ${ingest.BASE_URL_ENV_VAR}).")
@click.option("--max-attempts", type=int, default=ingest.DEFAULT_MAX_ATTEMPTS,
              show_default=True)
@_trustgate_errors
def ingest_run(manifest_path: str, dest_root: str, concurrency: int, rate_limit: float,
               base_url: str | None, max_attempts: int) -> None:
    """Download everything still pending in the manifest, resumably."""
    manifest = ingest.load_manifest(manifest_path)
    ingest.download(manifest, dest_root, base_url=base_url, concurrency=concurrency,
                    rate_limit=rate_limit, max_attempts=max_attempts,
                    journal_path=ingest.journal_path_for(manifest_path))
    counts = manifest.state_counts()
    click.echo(json.dumps(counts, sort_keys=True))
    if counts["failed"]:
        sys.exit(1)


@ingest_group.command("verify")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--dest", "dest_root", required=True, type=click.Path(exists=True))
@_trustgate_errors
def ingest_verify(manifest_path: str, dest_root: str) -> None:
    """Re-hash downloaded files against the recorded checksums."""
    manifest = ingest.load_manifest(manifest_path)
    report = ingest.verify(manifest, dest_root)
    click.echo(json.dumps({"ok": report.ok, "corrupt": report.corrupt,
                           "missing": report.missing}, sort_keys=True))
    if not report.clean:
        sys.exit(1)


# ---------------------------------------------------------------------------
# service

def _read_logit_row(path: str) -> np.ndarray:
    with open(path) as fh:
        text = fh.read()
    values = [float(v) for v in text.split()]
    return np.asarray(values, dtype=np.float64)


@main.command("predict")
@click.option("--bundle", "bundle_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--logits-row", "row_path", required=True, type=click.Path(exists=True),
              help="One logit vector as whitespace-separated floats.")
@_trustgate_errors
def predict_command(bundle_dir: str, row_path: str) -> None:
    """Run the full pipeline on one logit vector and print the report."""
    bundle = service.load_bundle(bundle_dir)
    report = service.predict_pipeline(_read_logit_row(row_path), bundle)
    click.echo(service.report_json(report))


@main.command("serve")
@click.option("--bundle", "bundle_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--infer-command", default=None,
              help="External image-to-logits executable enabling /v1/predict-image.")
@_trustgate_errors
def serve_command(bundle_dir: str, host: str, port: int,
                  infer_command: str | None) -> None:
    """Serve the bundle over HTTP."""
    service.serve(bundle_dir, host=host, port=port, infer_command=infer_command)


if __name__ == "__main__":
    main()
