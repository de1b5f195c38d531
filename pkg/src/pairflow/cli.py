"""Command-line entry point: compile, featurize, train, classify, report, synth, registry.

Exit codes: 0 success, 1 usage error, 2 data error. All randomness flows from
--seed; every output embeds the active config hash.
"""

from __future__ import annotations

import csv as csv_mod
import json
import statistics
import sys
from pathlib import Path

import click
import numpy as np

from . import synth as synth_mod
from .errors import PairflowError
from .features import mask_table
from .forest import ModelArtifact, PairForestClassifier
from .metrics import evaluate, feature_report, group_split
from .pipeline import (PipelineConfig, compile_captures, featurize_flows,
                       load_features_csv, write_features_csv)
from .summary import Blacklist, SummaryRegistry
from .variants import VARIANT_FILENAMES, VARIANTS, export_variant, read_http_variant


@click.group()
def cli():
    """Contextual pair-flow compiler and C&C traffic classifier."""


def _read_labels_csv(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    out = {}
    with open(path) as fh:
        for row in csv_mod.DictReader(fh):
            out[row["capture_name"]] = row["label"]
    return out


@cli.command("compile")
@click.argument("captures", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              envvar="PAIRFLOW_OUT")
@click.option("--window-seconds", default=600.0, show_default=True)
@click.option("--label", default=None,
              type=click.Choice(["apt", "botnet", "legitimate", "unlabeled"]))
@click.option("--labels", "labels_csv", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="labels.csv mapping capture_name to class")
@click.option("--capture-name", default=None,
              help="Override the capture name for a single input file.")
@click.option("--whois-ages", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--emit", default="fqdn,planes,http,https", show_default=True,
              help="Comma-separated variant list.")
@click.option("--registry", "registry_dir", default=None, envvar="PAIRFLOW_REGISTRY",
              type=click.Path(file_okay=False))
def cmd_compile(captures, out_dir, window_seconds, label, labels_csv,
                capture_name, whois_ages, emit, registry_dir):
    """Compile capture files into PairFlows and export variant files."""
    variants = [v.strip() for v in emit.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise click.UsageError(f"unknown variant {v!r} (choose from {VARIANTS})")
    if capture_name and len(captures) > 1:
        raise click.UsageError("--capture-name only applies to a single capture")
    config = PipelineConfig(window_t=window_seconds, whois_ages_path=whois_ages,
                            registry_dir=registry_dir)
    labels = _read_labels_csv(labels_csv)
    if label:
        for path in captures:
            labels.setdefault(Path(path).stem, label)
    registry = SummaryRegistry(registry_dir) if registry_dir else SummaryRegistry()
    if capture_name:
        # stage the file under the requested stem so PairKeys carry it
        staged = Path(out_dir) / f"{capture_name}{Path(captures[0]).suffix}"
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        staged.write_bytes(Path(captures[0]).read_bytes())
        captures = [str(staged)]
        if label:
            labels.setdefault(capture_name, label)
    result = compile_captures(list(captures), config, labels, registry)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .records import dump_pairflow_line
    with open(out / "pairflows.jsonl", "w") as fh:
        fh.write(json.dumps({"schema": "pairflow.record.v1",
                             "config_hash": config.config_hash()},
                            sort_keys=True) + "\n")
        for flow in result.flows:
            fh.write(dump_pairflow_line(flow) + "\n")
    for v in variants:
        export_variant(result.flows, v, out / VARIANT_FILENAMES[v],
                       config_hash=config.config_hash())
    for (stem, window), count in sorted(result.window_counts.items()):
        click.echo(f"{stem} window {window}: {count} flows")
    click.echo(f"kept {len(result.flows)} flows; removed {result.removed}")


@cli.command("featurize")
@click.argument("http_variant", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              envvar="PAIRFLOW_OUT")
@click.option("--window-seconds", default=600.0, show_default=True)
@click.option("--recompute-seconds", default=900.0, show_default=True)
@click.option("--sma-rate", default=1.0, show_default=True)
@click.option("--sma-k", default=None, type=int)
@click.option("--registry", "registry_dir", default=None, envvar="PAIRFLOW_REGISTRY",
              type=click.Path(file_okay=False))
@click.option("--dump-profiles", is_flag=True, default=False)
def cmd_featurize(http_variant, out_dir, window_seconds, recompute_seconds,
                  sma_rate, sma_k, registry_dir, dump_profiles):
    """Extract the 102-slot vectors from an http.jsonl variant file."""
    config = PipelineConfig(window_t=window_seconds, recompute_t=recompute_seconds,
                            sma_rate=sma_rate, sma_k=sma_k,
                            registry_dir=registry_dir)
    flows = read_http_variant(http_variant)
    registry = SummaryRegistry(registry_dir) if registry_dir else SummaryRegistry()
    featurize_flows(flows, config, registry)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = write_features_csv(registry, out / "features.csv",
                           config_hash=config.config_hash())
    with open(out / "mask_table.json", "w") as fh:
        json.dump({"schema": "pairflow.mask.v1",
                   "config_hash": config.config_hash(),
                   "slots": mask_table()}, fh, indent=1, sort_keys=True)
    if dump_profiles:
        from .profiles import pivot_profiles
        hosts, dests, urls = pivot_profiles(flows)
        blob = {
            "hosts": {f"{k[0]}!{k[1]}": len(p.flows) for k, p in hosts.items()},
            "destinations": {k: len(p.flows) for k, p in dests.items()},
            "urls": {k: len(p.urls) for k, p in urls.items()},
        }
        with open(out / "profiles.json", "w") as fh:
            json.dump(blob, fh, indent=1, sort_keys=True)
    click.echo(f"wrote {n} summaries to {out / 'features.csv'}")


def _repeat_eval(table, task, mode, seed, n_trees, repeats, test_fraction,
                 class_weight):
    X, y, groups = table.task_rows(task)
    if len(set(y)) < 2:
        raise PairflowError(f"task {task!r} leaves fewer than two classes")
    masked = X.copy()
    from .features import masked_slots
    for fid in masked_slots(mode):
        masked[:, fid - 1] = 0.0
    runs = []
    for r in range(repeats):
        train_mask, test_mask = group_split(groups, test_fraction, seed + r)
        if len(set(np.array(y)[train_mask])) < 2 or not test_mask.any():
            continue
        clf = PairForestClassifier(n_trees=n_trees, mode=mode, seed=seed + r,
                                   class_weight=class_weight)
        clf.fit(masked[train_mask], [y[i] for i in np.nonzero(train_mask)[0]])
        rep = evaluate(clf.artifact_, masked[test_mask],
                       [y[i] for i in np.nonzero(test_mask)[0]])
        runs.append(rep)
    return runs


@cli.command("train")
@click.argument("features_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", default="http", type=click.Choice(["http", "https"]),
              show_default=True)
@click.option("--task", default="malicious",
              type=click.Choice(["apt", "botnet", "malicious", "multiclass"]),
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--trees", default=100, show_default=True)
@click.option("--repeats", default=10, show_default=True,
              help="Randomized split repeats for eval.json.")
@click.option("--test-fraction", default=0.3, show_default=True)
@click.option("--class-weight", default=None, type=click.Choice(["balanced"]))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              envvar="PAIRFLOW_MODELS")
@click.option("--stamp-date", default=None, help="Optional date string for metadata.")
def cmd_train(features_csv, mode, task, seed, trees, repeats, test_fraction,
              class_weight, out_dir, stamp_date):
    """Train the ensemble, run the repeated group-split evaluation, save both."""
    table = load_features_csv(features_csv)
    runs = _repeat_eval(table, task, mode, seed, trees, repeats, test_fraction,
                        class_weight)
    X, y, _ = table.task_rows(task)
    from .features import masked_slots
    masked = X.copy()
    for fid in masked_slots(mode):
        masked[:, fid - 1] = 0.0
    clf = PairForestClassifier(n_trees=trees, mode=mode, seed=seed,
                               class_weight=class_weight)
    clf.fit(masked, y)
    artifact = clf.artifact_
    artifact.training_meta["task"] = task
    artifact.training_meta["config_hash"] = table.config_hash
    if stamp_date:
        artifact.training_meta["date"] = stamp_date
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / f"model-{task}-{mode}.json"
    artifact.save(model_path)
    eval_obj = {
        "schema": "pairflow.eval.v1",
        "config_hash": table.config_hash,
        "task": task,
        "mode": mode,
        "seed": seed,
        "repeats": [r.to_obj() for r in runs],
        "mean": {
            "macro_f1": statistics.fmean(r.macro_f1 for r in runs) if runs else 0.0,
            "macro_precision": statistics.fmean(r.macro_precision for r in runs)
            if runs else 0.0,
            "macro_recall": statistics.fmean(r.macro_recall for r in runs)
            if runs else 0.0,
            "weighted_f1": statistics.fmean(r.weighted_f1 for r in runs)
            if runs else 0.0,
            "accuracy": statistics.fmean(r.accuracy for r in runs) if runs else 0.0,
            "fpr": statistics.fmean(r.fpr for r in runs) if runs else 0.0,
        },
    }
    with open(out / f"eval-{task}-{mode}.json", "w") as fh:
        json.dump(eval_obj, fh, indent=1, sort_keys=True)
    click.echo(f"model: {model_path}")
    click.echo(f"mean macro-F1 over {len(runs)} repeats: "
               f"{eval_obj['mean']['macro_f1']:.4f}")


@cli.command("classify")
@click.argument("features_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--blacklist", "blacklist_path", default=None,
              type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def cmd_classify(features_csv, model_path, blacklist_path, out_path):
    """Score summaries; blacklisted indicators block before the model runs."""
    artifact = ModelArtifact.load(model_path)
    clf = PairForestClassifier.from_artifact(artifact)
    table = load_features_csv(features_csv)
    bl = Blacklist.load(blacklist_path) if blacklist_path and \
        Path(blacklist_path).exists() else Blacklist()
    from .features import masked_slots
    masked = table.X.copy()
    for fid in masked_slots(artifact.mode):
        masked[:, fid - 1] = 0.0
    positive = [c for c in artifact.class_set if c != "legitimate"]
    n_blocked = 0
    model_hash = artifact.training_meta.get("config_hash", "")
    with open(out_path, "w") as fh:
        fh.write(f"# pairflow.predictions.v1 config_hash={model_hash}\n")
        fh.write("cs_id,capture,source,destination,verdict,label,score\n")
        for i, meta in enumerate(table.meta):
            fqdns = [f for f in meta.get("fqdns", "").split("|") if f]
            if bl.check(meta["destination"], fqdns) == "BLOCKED":
                fh.write(f"{meta['cs_id']},{meta['capture']},{meta['source']},"
                         f"{meta['destination']},BLOCKED,,\n")
                n_blocked += 1
                continue
            proba = clf.predict_proba(masked[i:i + 1])[0]
            label = artifact.class_set[int(np.argmax(proba))]
            score = float(np.max(proba))
            fh.write(f"{meta['cs_id']},{meta['capture']},{meta['source']},"
                     f"{meta['destination']},SCORED,{label},{score!r}\n")
            if label in positive:
                bl.add(meta["destination"], "ip", int(meta["cs_id"]))
                for f in fqdns:
                    bl.add(f, "fqdn", int(meta["cs_id"]))
    if blacklist_path:
        bl.save(blacklist_path)
    click.echo(f"classified {len(table.meta)} summaries "
               f"({n_blocked} blocked by blacklist)")


@cli.command("report")
@click.argument("features_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--labels", "labels_csv", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Synth labels.csv with TTP indicator columns.")
@click.option("--importances/--no-importances", default=True)
@click.option("--correlations/--no-correlations", default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def cmd_report(features_csv, model_path, labels_csv, importances, correlations,
               out_dir):
    """Emit feature importances and feature-vs-TTP correlations (analysis only)."""
    artifact = ModelArtifact.load(model_path)
    table = load_features_csv(features_csv)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ttp_columns: dict[str, np.ndarray] = {}
    if labels_csv:
        by_capture: dict[str, dict] = {}
        with open(labels_csv) as fh:
            for row in csv_mod.DictReader(fh):
                by_capture[row["capture_name"]] = row
        names = [k for k in next(iter(by_capture.values())) if k.startswith("ttp_")]
        for name in names:
            ttp_columns[name] = np.array(
                [float(by_capture.get(m["capture"], {}).get(name, 0) or 0)
                 for m in table.meta])
        for cls in ("apt", "botnet", "legitimate"):
            ttp_columns[f"class_{cls}"] = np.array(
                [1.0 if lab == cls else 0.0 for lab in table.labels])
    imps, corr = feature_report(artifact, table.X, ttp_columns)
    model_hash = artifact.training_meta.get("config_hash", "")
    if importances:
        with open(out / "importances.csv", "w") as fh:
            fh.write(f"# pairflow.importances.v1 config_hash={model_hash}\n")
            fh.write("feature_id,feature_name,importance\n")
            for fid, name, imp in imps:
                fh.write(f"{fid},{name},{imp!r}\n")
    if correlations and ttp_columns:
        from .features import N_FEATURES
        with open(out / "correlations.csv", "w") as fh:
            fh.write(f"# pairflow.correlations.v1 analysis-only "
                     f"config_hash={model_hash}\n")
            cols = sorted(corr)
            fh.write("feature_id," + ",".join(cols) + "\n")
            for fid in range(1, N_FEATURES + 1):
                fh.write(str(fid) + "," +
                         ",".join(repr(corr[c][fid]) for c in cols) + "\n")
    click.echo(f"reports in {out}")


@cli.command("synth")
@click.option("--spec", "spec_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON list of scenario specs; otherwise the default corpus.")
@click.option("--seed", default=7, show_default=True)
@click.option("--per-class", default=40, show_default=True)
@click.option("--overlap", default=0.2, show_default=True,
              help="Fraction of legitimate scenarios with C&C-like timing.")
@click.option("--hygiene-rate", default=0.0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def cmd_synth(spec_path, seed, per_class, overlap, hygiene_rate, out_dir):
    """Generate a labeled synthetic corpus plus its plant ledger."""
    if spec_path:
        with open(spec_path) as fh:
            raw = json.load(fh)
        specs = [synth_mod.ScenarioSpec(
            name=o["name"], cls=o["cls"], seed=int(o.get("seed", seed)),
            ttps=set(o.get("ttps", [])), duration=float(o.get("duration", 900.0)),
            confound=bool(o.get("confound", False)),
            plant_hygiene=o.get("plant_hygiene"),
            shared_dests=[tuple(d) for d in o.get("shared_dests", [])],
        ) for o in raw]
    else:
        specs = synth_mod.default_corpus_specs(per_class, seed=seed,
                                               overlap_rate=overlap,
                                               hygiene_rate=hygiene_rate)
    result = synth_mod.generate_corpus(specs, out_dir)
    click.echo(f"{len(result.capture_paths)} captures, "
               f"{len(result.ledger)} ledger rows -> {out_dir}")


@cli.group("registry")
def cmd_registry():
    """Inspect and maintain the ContextualSummary registry."""


@cmd_registry.command("show")
@click.option("--registry", "registry_dir", required=True, envvar="PAIRFLOW_REGISTRY",
              type=click.Path(exists=True, file_okay=False))
def registry_show(registry_dir):
    reg = SummaryRegistry(registry_dir)
    for s in reg.summaries():
        click.echo(f"cs {s.cs_id}: {s.pair.capture_name} {s.pair.source} -> "
                   f"{s.pair.destination} flows={s.last_pf_id + 1} "
                   f"span={s.window_span} label={s.label.value}")
    click.echo(f"{len(reg.summaries())} summaries")


@cmd_registry.command("compact")
@click.option("--registry", "registry_dir", required=True, envvar="PAIRFLOW_REGISTRY",
              type=click.Path(exists=True, file_okay=False))
def registry_compact(registry_dir):
    reg = SummaryRegistry(registry_dir)
    reg.compact()
    click.echo("compacted")


@cmd_registry.command("import-blacklist")
@click.argument("indicator_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--blacklist", "blacklist_path", required=True,
              type=click.Path(dir_okay=False))
def registry_import_blacklist(indicator_file, blacklist_path):
    bl = Blacklist.load(blacklist_path) if Path(blacklist_path).exists() \
        else Blacklist()
    added = Blacklist.load(indicator_file)
    for ip in added.ips:
        bl.add(ip, "ip")
    for fqdn in added.fqdns:
        bl.add(fqdn, "fqdn")
    bl.save(blacklist_path)
    click.echo(f"blacklist now has {len(bl.ips)} ips, {len(bl.fqdns)} fqdns")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except (PairflowError, FileNotFoundError, ValueError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
