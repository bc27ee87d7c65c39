"""Command-line orchestrator: run, sweep, explain, features, synth.

Exit codes: 0 on success, 1 on pipeline errors (stage-tagged message), 2 on
configuration or input-format errors. Outputs are byte-identical across runs
for a fixed config and seed, independent of the worker count.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import CorpusRecipe, generate_synthetic_corpus, load_csv, write_csv
from .errors import ConfigError, CorpusFormatError, PipelineError, StressCastError
from .explain import summary_export, tree_shap
from .features import FEATURE_NAMES, FeatureMatrix, extract_matrix, impute_missing
from .gbt import GradientBoostedEnsemble, TrainConfig
from .meta import (
    DEFAULT_PERCENTILES,
    MetaDataset,
    PipelineConfig,
    ThresholdSpec,
    run_pipeline_full,
)

logger = logging.getLogger(__name__)

_HIST_BINS = 30


# ---------------------------------------------------------------------------
# configuration plumbing

_SEMANTIC_KEYS = (
    "data", "synthetic", "h", "p", "s", "threshold_mode", "threshold_value",
    "k", "target_ratio", "beta", "seed", "scaling", "recompute_test_threshold",
    "percentiles", "forecaster_grid", "metamodel_grid",
)

_DEFAULTS = {
    "data": None,
    "synthetic": None,
    "h": 12, "p": 12, "s": 12,
    "threshold_mode": "percentile",
    "threshold_value": 90.0,
    "k": 5, "target_ratio": 1.0, "beta": 1.0,
    "seed": 0,
    "scaling": "none",
    "workers": 1,
    "recompute_test_threshold": False,
    "percentiles": list(DEFAULT_PERCENTILES),
    "forecaster_grid": None,
    "metamodel_grid": None,
    "out": "stresscast_out",
    "svg": True,
}


def _parse_synthetic_spec(text) -> dict:
    if isinstance(text, dict):
        return text
    spec = {"length": 120}
    for part in text.split(","):
        key, _, val = part.partition("=")
        key = key.strip()
        if key not in ("easy", "hard", "length") or not val:
            raise ConfigError(f"bad synthetic spec {text!r}; expected easy=N,hard=N[,length=N]")
        spec[key] = int(val)
    if "easy" not in spec or "hard" not in spec:
        raise ConfigError(f"synthetic spec {text!r} needs both easy= and hard= counts")
    return spec


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    unknown = set(cfg) - set(_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _merge_settings(args: argparse.Namespace) -> dict:
    """defaults < config file < command-line flags."""
    settings = dict(_DEFAULTS)
    settings.update(_load_config_file(getattr(args, "config", None)))
    for key in settings:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            settings[key] = flag_val
    if settings["synthetic"] is not None:
        settings["synthetic"] = _parse_synthetic_spec(settings["synthetic"])
    return settings


def _config_hash(settings: dict) -> str:
    semantic = {k: settings.get(k) for k in _SEMANTIC_KEYS}
    blob = json.dumps(semantic, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _grid_from_dicts(dicts, loss: str, seed: int):
    if dicts is None:
        return None
    out = []
    for d in dicts:
        if not isinstance(d, dict):
            raise ConfigError(f"grid entries must be objects, got {d!r}")
        out.append(TrainConfig(**{**d, "loss": loss, "seed": d.get("seed", seed)}))
    return tuple(out)


def _pipeline_config(settings: dict) -> PipelineConfig:
    return PipelineConfig(
        h=settings["h"], p=settings["p"], s=settings["s"],
        threshold=ThresholdSpec(settings["threshold_mode"], float(settings["threshold_value"])),
        k_neighbors=settings["k"],
        target_ratio=float(settings["target_ratio"]),
        beta=float(settings["beta"]),
        forecaster_grid=_grid_from_dicts(settings["forecaster_grid"], "squared", settings["seed"]),
        metamodel_grid=_grid_from_dicts(settings["metamodel_grid"], "logistic", settings["seed"]),
        seed=settings["seed"],
        scaling=settings["scaling"],
        workers=settings["workers"],
        recompute_test_threshold=settings["recompute_test_threshold"],
    )


def _load_collection(settings: dict):
    if (settings["data"] is None) == (settings["synthetic"] is None):
        raise ConfigError("exactly one of --data and --synthetic is required")
    if settings["data"] is not None:
        return load_csv(settings["data"]), None
    spec = settings["synthetic"]
    recipe = CorpusRecipe(n_easy=spec["easy"], n_hard=spec["hard"], length=spec.get("length", 120))
    collection, difficulty = generate_synthetic_corpus(recipe, settings["seed"])
    return collection, difficulty


# ---------------------------------------------------------------------------
# artifact writers

def _meta_line(settings: dict) -> str:
    return f"stresscast={__version__} config_hash={_config_hash(settings)} seed={settings['seed']}"


def _write_csv_rows(path: Path, header: list[str], rows, comment: str) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v: float) -> str:
    return repr(float(v))


def _svg_header(width: int, height: int, comment: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<!-- {comment} -->",
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def _write_histogram_svg(path: Path, edges, counts, title: str, comment: str) -> None:
    w, h, pad = 640, 360, 40
    top = max(int(max(counts)), 1)
    parts = _svg_header(w, h, comment)
    parts.append(f'<text x="{w // 2}" y="18" text-anchor="middle" font-size="13">{title}</text>')
    n = len(counts)
    for i, c in enumerate(counts):
        bar_h = (h - 2 * pad) * c / top
        x = pad + (w - 2 * pad) * i / n
        bw = (w - 2 * pad) / n
        parts.append(
            f'<rect x="{x:.2f}" y="{h - pad - bar_h:.2f}" width="{bw:.2f}" '
            f'height="{bar_h:.2f}" fill="steelblue" stroke="white" stroke-width="0.5"/>'
        )
    parts.append(f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>')
    parts.append(f'<text x="{pad}" y="{h - pad + 16}" font-size="11">{edges[0]:.1f}</text>')
    parts.append(f'<text x="{w - pad}" y="{h - pad + 16}" text-anchor="end" font-size="11">{edges[-1]:.1f}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


_METHOD_COLORS = {"none": "gray", "smote": "darkorange", "adasyn": "steelblue"}


def _write_sweep_svg(path: Path, cells, title: str, comment: str) -> None:
    w, h, pad = 640, 360, 48
    pts = [(c.percentile, c.auc, c.method) for c in cells if c.auc is not None]
    parts = _svg_header(w, h, comment)
    parts.append(f'<text x="{w // 2}" y="18" text-anchor="middle" font-size="13">{title}</text>')
    if pts:
        xs = sorted({p for p, _, _ in pts})
        lo_x, hi_x = min(xs), max(xs)
        lo_y, hi_y = 0.0, 1.0
        span_x = (hi_x - lo_x) or 1.0

        def sx(x):
            return pad + (w - 2 * pad) * (x - lo_x) / span_x

        def sy(y):
            return h - pad - (h - 2 * pad) * (y - lo_y) / (hi_y - lo_y)

        methods = sorted({m for _, _, m in pts})
        for mi, method in enumerate(methods):
            line = sorted((p, a) for p, a, m in pts if m == method)
            coords = " ".join(f"{sx(p):.2f},{sy(a):.2f}" for p, a in line)
            color = _METHOD_COLORS.get(method, "black")
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            for p, a in line:
                parts.append(f'<circle cx="{sx(p):.2f}" cy="{sy(a):.2f}" r="3" fill="{color}"/>')
            parts.append(f'<text x="{pad}" y="{pad + 14 * mi}" font-size="11" fill="{color}">{method}</text>')
        parts.append(f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>')
        parts.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>')
        parts.append(f'<text x="{pad}" y="{h - pad + 16}" font-size="11">{lo_x:g}</text>')
        parts.append(f'<text x="{w - pad}" y="{h - pad + 16}" text-anchor="end" font-size="11">{hi_x:g}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def _write_run_artifacts(out: Path, settings: dict, config: PipelineConfig, report,
                         meta_original: MetaDataset, dev_features: FeatureMatrix,
                         train_features: FeatureMatrix, forecaster, metamodels: dict,
                         difficulty: dict | None) -> None:
    comment = _meta_line(settings)
    out.mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)

    payload = {
        "meta": {"tool": "stresscast", "version": __version__,
                 "config_hash": _config_hash(settings), "seed": settings["seed"]},
        "config": {k: settings.get(k) for k in _SEMANTIC_KEYS},
        "report": report.to_json_dict(),
    }
    (out / "report.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                                     encoding="utf-8")

    report.validation_errors.to_csv(out / "errors_validation.csv", comment)
    report.test_errors.to_csv(out / "errors_test.csv", comment)
    report.naive_validation_errors.to_csv(out / "errors_validation_naive.csv", comment)
    report.naive_test_errors.to_csv(out / "errors_test_naive.csv", comment)
    dev_features.to_csv(out / "features.csv", comment)
    train_features.to_csv(out / "features_train.csv", comment)
    meta_original.to_csv(out / "metadataset.csv", comment)

    from .augment import augment_metadataset

    for method in config.methods:
        if method == "none":
            continue
        try:
            augmented = augment_metadataset(meta_original, config.plan_for(method))
            augmented.to_csv(out / f"metadataset_{method}.csv", comment)
        except StressCastError as exc:
            logger.warning("skipping metadataset_%s.csv: %s", method, exc)

    best_method = max(sorted(report.auc_by_method), key=lambda m: report.auc_by_method[m])
    for method, probs in sorted(report.probabilities.items()):
        rows = [(sid, _fmt(probs[sid]), report.test_labels[sid]) for sid in sorted(probs)]
        _write_csv_rows(out / f"probabilities_{method}.csv",
                        ["unique_id", "probability", "label"], rows, comment)
    best_rows = [(sid, _fmt(report.probabilities[best_method][sid]), report.test_labels[sid])
                 for sid in sorted(report.probabilities[best_method])]
    _write_csv_rows(out / "probabilities.csv", ["unique_id", "probability", "label"],
                    best_rows, f"{comment} method={best_method}")

    (out / "models" / "forecaster.json").write_text(
        json.dumps(forecaster.to_json_dict(), sort_keys=True) + "\n", encoding="utf-8")
    for method, model in sorted(metamodels.items()):
        (out / "models" / f"metamodel_{method}.json").write_text(
            json.dumps(model.to_json_dict(), sort_keys=True) + "\n", encoding="utf-8")

    errs = report.test_errors.values()
    hi = float(errs.max()) if errs.size else 1.0
    hi = hi if hi > 0 else 1.0
    counts, edges = np.histogram(errs, bins=_HIST_BINS, range=(0.0, hi))
    hist_rows = [(_fmt(edges[i]), _fmt(edges[i + 1]), int(counts[i])) for i in range(len(counts))]
    _write_csv_rows(out / "histogram_test_smape.csv",
                    ["bin_left", "bin_right", "count"], hist_rows, comment)
    if settings["svg"]:
        _write_histogram_svg(out / "histogram_test_smape.svg", edges, counts,
                             "Per-series test SMAPE distribution", comment)

    if difficulty is not None:
        (out / "corpus_labels.json").write_text(
            json.dumps(difficulty, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    if report.sweep is not None:
        sweep_rows = [(f"{c.percentile:g}", c.method,
                       _fmt(c.auc) if c.auc is not None else "", c.note)
                      for c in report.sweep]
        _write_csv_rows(out / "sweep.csv", ["percentile", "method", "auc", "note"],
                        sweep_rows, comment)
        if settings["svg"]:
            _write_sweep_svg(out / "sweep.svg", report.sweep,
                             "Metamodel AUC by large-error percentile", comment)


# ---------------------------------------------------------------------------
# commands

def _run_common(args: argparse.Namespace, with_sweep: bool) -> int:
    settings = _merge_settings(args)
    config = _pipeline_config(settings)
    collection, difficulty = _load_collection(settings)
    percentiles = settings["percentiles"] if with_sweep else None
    result = run_pipeline_full(collection, config, percentiles=percentiles)
    _write_run_artifacts(Path(settings["out"]), settings, config, result.report,
                         result.meta_dataset, result.dev_features, result.train_features,
                         result.forecaster, result.metamodels, difficulty)
    report = result.report
    print(f"wrote artifacts to {settings['out']}: "
          f"AUC {', '.join(f'{m}={v:.3f}' for m, v in sorted(report.auc_by_method.items()))}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    return _run_common(args, with_sweep=False)


def cmd_sweep(args: argparse.Namespace) -> int:
    if getattr(args, "percentiles", None) is not None:
        args.percentiles = [float(x) for x in args.percentiles.split(",")]
    return _run_common(args, with_sweep=True)


def cmd_explain(args: argparse.Namespace) -> int:
    settings = _merge_settings(args)
    model_path = Path(args.model)
    meta_path = Path(args.metadataset)
    for p in (model_path, meta_path):
        if not p.exists():
            raise ConfigError(f"artifact not found: {p}")
    model = GradientBoostedEnsemble.from_json(model_path.read_text(encoding="utf-8"))
    meta = MetaDataset.from_csv(meta_path)
    if model.n_features != meta.X.shape[1]:
        raise ConfigError(f"model expects {model.n_features} features, metadataset has {meta.X.shape[1]}")
    result = tree_shap(model, meta.X)
    ranking, top_rows = summary_export(result, meta.X, meta.ids, args.top_k)

    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    comment = _meta_line(settings)
    all_rows = []
    for j, name in enumerate(FEATURE_NAMES):
        for i, sid in enumerate(meta.ids):
            all_rows.append((sid, name, _fmt(meta.X[i, j]), _fmt(result.phi[i, j])))
    _write_csv_rows(out / "attributions.csv",
                    ["unique_id", "feature", "feature_value", "shap_value"], all_rows, comment)
    _write_csv_rows(out / "shap_summary.csv",
                    ["unique_id", "feature", "feature_value", "shap_value"],
                    [(sid, name, _fmt(v), _fmt(s)) for sid, name, v, s in top_rows], comment)
    _write_csv_rows(out / "shap_ranking.csv", ["feature", "mean_abs_shap"],
                    [(name, _fmt(v)) for name, v in ranking], comment)
    print(f"wrote attributions for {len(meta.ids)} rows to {out}")
    return 0


def cmd_features(args: argparse.Namespace) -> int:
    settings = _merge_settings(args)
    if settings["data"] is None:
        raise ConfigError("features command requires --data")
    collection = load_csv(settings["data"])
    raw = extract_matrix(collection, settings["s"], settings["workers"])
    imputed, _ = impute_missing(raw)
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    imputed.to_csv(out / "features.csv", _meta_line(settings))
    print(f"wrote {len(imputed.ids)} feature vectors to {out / 'features.csv'}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    settings = _merge_settings(args)
    recipe = CorpusRecipe(n_easy=args.easy, n_hard=args.hard, length=args.length)
    collection, difficulty = generate_synthetic_corpus(recipe, settings["seed"])
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(collection, out / "corpus.csv", _meta_line(settings))
    (out / "corpus_labels.json").write_text(
        json.dumps(difficulty, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(collection)} series to {out / 'corpus.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="long-format CSV (unique_id,ds,y)")
    p.add_argument("--synthetic", default=None, help="easy=N,hard=N[,length=N]")
    p.add_argument("--h", type=int, default=None, help="forecast horizon")
    p.add_argument("--p", type=int, default=None, help="lag count")
    p.add_argument("--s", type=int, default=None, help="seasonal period")
    p.add_argument("--threshold-percentile", dest="threshold_value_pct", type=float, default=None)
    p.add_argument("--threshold-absolute", dest="threshold_value_abs", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="oversampling neighbor count")
    p.add_argument("--target-ratio", dest="target_ratio", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--scaling", choices=["none", "window_mean"], default=None)
    p.add_argument("--recompute-test-threshold", dest="recompute_test_threshold",
                   action="store_true", default=None)
    p.add_argument("--no-svg", dest="svg", action="store_false", default=None)


def _apply_threshold_flags(args: argparse.Namespace) -> None:
    pct = getattr(args, "threshold_value_pct", None)
    absolute = getattr(args, "threshold_value_abs", None)
    if pct is not None and absolute is not None:
        raise ConfigError("--threshold-percentile and --threshold-absolute are mutually exclusive")
    if pct is not None:
        args.threshold_mode, args.threshold_value = "percentile", pct
    elif absolute is not None:
        args.threshold_mode, args.threshold_value = "absolute", absolute


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stresscast",
        description="Stress-test a global forecasting model: find the series "
                    "features that predict its large errors.")
    parser.add_argument("--version", action="version", version=f"stresscast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full pipeline; writes report and artifacts")
    _add_common(p_run)
    _add_data_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="pipeline plus threshold sensitivity sweep")
    _add_common(p_sweep)
    _add_data_flags(p_sweep)
    p_sweep.add_argument("--percentiles", default=None, help="comma-separated, e.g. 75,80,85,90,95")
    p_sweep.set_defaults(func=cmd_sweep)

    p_explain = sub.add_parser("explain", help="tree-Shapley attributions for a saved metamodel")
    _add_common(p_explain)
    p_explain.add_argument("--model", required=True, help="metamodel JSON from a prior run")
    p_explain.add_argument("--metadataset", required=True, help="metadataset.csv from a prior run")
    p_explain.add_argument("--top-k", dest="top_k", type=int, default=5)
    p_explain.set_defaults(func=cmd_explain)

    p_features = sub.add_parser("features", help="feature vectors for every series in a CSV")
    _add_common(p_features)
    p_features.add_argument("--data", required=True)
    p_features.add_argument("--s", type=int, default=None, help="seasonal period")
    p_features.set_defaults(func=cmd_features)

    p_synth = sub.add_parser("synth", help="generate a planted-difficulty synthetic corpus")
    _add_common(p_synth)
    p_synth.add_argument("--easy", type=int, required=True)
    p_synth.add_argument("--hard", type=int, required=True)
    p_synth.add_argument("--length", type=int, default=120)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threshold_flags(args)
        return args.func(args)
    except (ConfigError, CorpusFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StressCastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
