"""Command-line surface: train, predict, evaluate, index, query,
preprocess-fit, preprocess-apply, plans.

Exit codes: 0 success, 2 usage or input error, 3 internal failure.
All output files are written atomically (temp + rename) and are
byte-deterministic for identical inputs, flags, and seed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings

import numpy as np

from . import augment, metrics, retrieval, svm
from .errors import DimMismatch, FeatkitError, SkippedClassWarning
from .extractors import (
    ExternalProcessExtractor,
    FileBackedExtractor,
    ToyPixelExtractor,
)
from .features import (
    FeatureMatrix,
    fmt_float,
    load_features,
    load_labels,
    load_pgm,
    save_features,
    single_labels,
)
from .preprocess import (
    PipelineConfig,
    load_pca_model,
    retrieval_pipeline_apply,
    retrieval_pipeline_fit,
    save_pca_model,
)

# Nominal canvas for plan construction when only plan indices matter
# (file-backed augmentation never evaluates the geometry).
_NOMINAL_CANVAS = (300, 300)


def _atomic_write(path, write_fn) -> None:
    tmp = f"{path}.tmp~"
    write_fn(tmp)
    os.replace(tmp, path)


def _write_text(path, text: str) -> None:
    def _w(p):
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    _atomic_write(path, _w)


def _load_manifest(path):
    rows = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 4) or not parts[0]:
                raise ValueError(
                    f"{path}:{lineno}: expected 'id<TAB>path"
                    "[<TAB>width<TAB>height]'"
                )
            if parts[0] in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {parts[0]!r}")
            seen.add(parts[0])
            if len(parts) == 4:
                rows.append(
                    (parts[0], parts[1], int(parts[2]), int(parts[3]))
                )
            else:
                rows.append((parts[0], parts[1], None, None))
    if not rows:
        raise ValueError(f"{path}: empty manifest")
    return rows


def _resolve_c(args) -> float:
    if args.preset is not None and args.C is not None:
        raise ValueError("give either --C or --preset, not both")
    if args.preset is not None:
        return svm.C_PRESETS[args.preset]
    if args.C is not None:
        if args.C <= 0:
            raise ValueError("--C must be positive")
        return args.C
    raise ValueError("one of --C or --preset is required")


def _cmd_train(args) -> int:
    matrix = load_features(args.features, args.format)
    labels = load_labels(args.labels)
    c = _resolve_c(args)
    cfg = svm.SolverConfig(
        C=c,
        tol=args.tol,
        max_epochs=args.max_epochs,
        bias=not args.no_bias,
        seed=args.seed,
    )
    report_lines = [f"strategy\t{args.strategy}"]

    if args.augment:
        plans = augment.augmentation_plans(*_NOMINAL_CANVAS)
        binding = FileBackedExtractor(matrix)
        samples = [(bid, None) for bid in labels]
        matrix, labels = augment.augment_training_set(
            binding, samples, plans, labels
        )
        report_lines.append(f"augmented_per_source\t{len(plans)}")

    skipped = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if args.strategy == "ova":
            model = svm.train_one_vs_all(matrix, labels, cfg)
        else:
            model = svm.train_one_vs_one(matrix, single_labels(labels), cfg)
    for w in caught:
        if issubclass(w.category, SkippedClassWarning):
            skipped.append(str(w.message))

    report_lines.append(f"classes\t{len(model.classes)}")
    report_lines.append(f"rows\t{matrix.n}")
    report_lines.append(f"C\t{fmt_float(c)}")
    for key in sorted(model.models):
        m = model.models[key]
        key_s = svm.format_model_key(model.strategy, key)
        report_lines.append(
            f"objective\t{key_s}\t{fmt_float(m.objective_value)}"
        )
    for msg in skipped:
        report_lines.append(f"skipped\t{msg}")

    _atomic_write(args.model_out, lambda p: svm.save_model(model, p))
    if args.report:
        _write_text(args.report, "\n".join(report_lines) + "\n")
    return 0


def _group_rows(matrix: FeatureMatrix):
    """Group representation rows (``base#index``) under their base id."""
    groups: dict = {}
    for i, fid in enumerate(matrix.ids):
        base, sep, suffix = fid.rpartition("#")
        key = base if sep and suffix.isdigit() else fid
        groups.setdefault(key, []).append(i)
    return groups


def _cmd_predict(args) -> int:
    model = svm.load_model(args.model)
    matrix = load_features(args.features, args.format)
    if matrix.dim != model.input_dim:
        raise DimMismatch(
            f"feature dim {matrix.dim} does not match model dim "
            f"{model.input_dim}"
        )
    groups = _group_rows(matrix)
    lines = []
    if model.strategy == "ovo":
        for base, rows in groups.items():
            scores = {
                key: augment.pool_responses(
                    [svm.decision(m, matrix.values[i]) for i in rows],
                    args.pooling,
                )
                for key, m in model.models.items()
            }
            label = svm.predict_ovo_from_scores(model, scores)
            lines.append(f"{base}\t{label}")
    else:
        kept = sorted(model.models)
        header = ["id"] + [model.classes[ci] for ci in kept]
        lines.append("\t".join(header))
        for base, rows in groups.items():
            vals = [
                augment.pool_responses(
                    [svm.decision(model.models[ci], matrix.values[i])
                     for i in rows],
                    args.pooling,
                )
                for ci in kept
            ]
            lines.append(base + "\t" + "\t".join(fmt_float(v) for v in vals))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _read_scores(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty score file")
    header = lines[0].split("\t")
    if header[0] != "id" or len(header) < 2:
        raise ValueError(f"{path}: expected 'id<TAB>class...' header")
    classes = header[1:]
    ids, rows = [], []
    for line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != len(header):
            raise ValueError(f"{path}: ragged score row")
        ids.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    if not ids:
        raise ValueError(f"{path}: no score rows")
    return classes, ids, np.asarray(rows)


def _read_predictions(path):
    preds = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>label'")
            if parts[0] in preds:
                raise ValueError(f"{path}:{lineno}: duplicate id")
            preds[parts[0]] = parts[1]
    if not preds:
        raise ValueError(f"{path}: empty prediction file")
    return preds


def _require_same_ids(a, b, what: str) -> None:
    if set(a) != set(b):
        off = sorted(set(a) ^ set(b))[0]
        raise ValueError(f"{what} ids do not align (first mismatch {off!r})")


def _cmd_evaluate(args) -> int:
    class_rows, summary_rows = [], []
    if args.metric == "ap":
        classes, ids, scores = _read_scores(args.scores)
        truth = load_labels(args.truth)
        _require_same_ids(ids, truth, "score/truth")
        aps = []
        for j, cls in enumerate(classes):
            labels = [cls in truth[i] for i in ids]
            if not any(labels):
                print(
                    f"featkit: class {cls!r} has no positives; skipped",
                    file=sys.stderr,
                )
                continue
            ap = metrics.average_precision(scores[:, j], labels, args.mode)
            class_rows.append((cls, ap))
            aps.append(ap)
        summary_rows.append(("mAP", metrics.mean_ap(aps)))
    elif args.metric == "accuracy":
        preds = _read_predictions(args.predictions)
        truth = single_labels(load_labels(args.truth))
        _require_same_ids(preds, truth, "prediction/truth")
        ids = sorted(truth)
        classes = sorted(set(truth.values()))
        m = metrics.confusion(
            [preds[i] for i in ids], [truth[i] for i in ids], classes
        )
        row_sums = m.sum(axis=1)
        for ci, cls in enumerate(classes):
            class_rows.append((cls, m[ci, ci] / row_sums[ci]))
        summary_rows.append(("accuracy", metrics.mean_diag_accuracy(m)))
    else:
        rankings = _read_ranking(args.ranking)
        relevant = _read_relevant(args.relevant)
        _require_same_ids(rankings, relevant, "ranking/relevant")
        vals = []
        for qid in rankings:
            r = metrics.recall_at_k(
                rankings[qid],
                relevant[qid],
                args.k,
                query_id=qid,
                exclude_query=not args.include_self,
            )
            class_rows.append((qid, r))
            vals.append(r)
        summary_rows.append(
            (f"recall@{args.k}", float(np.mean(vals)))
        )
    _write_text(
        args.out, metrics.render_report(class_rows, summary_rows)
    )
    return 0


def _read_ranking(path):
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(
                    f"{path}:{lineno}: expected "
                    "'query<TAB>rank<TAB>ref<TAB>distance'"
                )
            out.setdefault(parts[0], []).append((int(parts[1]), parts[2]))
    if not out:
        raise ValueError(f"{path}: empty ranking file")
    return {
        q: [ref for _, ref in sorted(rows)] for q, rows in out.items()
    }


def _read_relevant(path):
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(
                    f"{path}:{lineno}: expected 'query<TAB>relevant_id'"
                )
            out.setdefault(parts[0], set()).add(parts[1])
    if not out:
        raise ValueError(f"{path}: empty relevant file")
    return out


def _make_binding(args, need_dim: int | None = None):
    if args.extractor == "toy":
        grid = args.grid
        if grid is None:
            if need_dim is None:
                raise ValueError("--grid is required for the toy extractor")
            grid = math.isqrt(need_dim)
            if grid * grid != need_dim:
                raise ValueError(
                    f"cannot infer --grid from dimension {need_dim}"
                )
        return ToyPixelExtractor(grid)
    if args.extractor == "external":
        if not args.command:
            raise ValueError("--command is required for external extraction")
        return ExternalProcessExtractor(args.command)
    if not args.features:
        raise ValueError("--features is required for file-backed extraction")
    return FileBackedExtractor(load_features(args.features, args.format))


def _manifest_images(manifest, binding):
    refs = []
    for rid, path, w, h in manifest:
        if isinstance(binding, ToyPixelExtractor):
            refs.append((rid, load_pgm(path)))
        elif isinstance(binding, ExternalProcessExtractor):
            if w is None or h is None:
                raise ValueError(
                    f"manifest entry {rid!r} needs width/height columns "
                    "for external extraction"
                )
            refs.append((rid, (path, w, h)))
        else:
            refs.append((rid, None))
    return refs


def _cmd_index(args) -> int:
    config = retrieval.SpatialSearchConfig(
        h_r=args.h_r,
        h_q=args.h_q,
        pipeline=PipelineConfig(args.pca_dim, args.power, args.epsilon),
    )
    binding = _make_binding(args)
    refs = _manifest_images(_load_manifest(args.images), binding)
    index = retrieval.build_index(refs, config, binding)
    _atomic_write(args.out, lambda p: retrieval.save_index(index, p))
    return 0


def _cmd_query(args) -> int:
    index = retrieval.load_index(args.index)
    binding = _make_binding(args, need_dim=index.model.dim_in)
    queries = _manifest_images(_load_manifest(args.queries), binding)
    lines = []
    for qid, image in queries:
        if isinstance(binding, FileBackedExtractor):
            n = retrieval.patch_count(
                args.h_q if args.h_q else index.config.h_q
            )
            raw = np.stack(
                [binding.extract(f"{qid}#{k}") for k in range(n)]
            )
            ranked = retrieval.search(
                index, raw, binding, h_q=args.h_q, top_k=args.top_k
            )
        else:
            ranked = retrieval.search(
                index, image, binding, h_q=args.h_q, top_k=args.top_k
            )
        for rank, (ref_id, dist) in enumerate(ranked, 1):
            lines.append(f"{qid}\t{rank}\t{ref_id}\t{fmt_float(dist)}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_preprocess_fit(args) -> int:
    matrix = load_features(args.features, args.format)
    cfg = PipelineConfig(args.pca_dim, 2.0, args.epsilon)
    model = retrieval_pipeline_fit(matrix, cfg)
    _atomic_write(args.out, lambda p: save_pca_model(model, p))
    return 0


def _cmd_preprocess_apply(args) -> int:
    model = load_pca_model(args.model)
    matrix = load_features(args.features, args.format)
    cfg = PipelineConfig(model.k, args.power, model.epsilon)
    rows = np.stack(
        [retrieval_pipeline_apply(model, cfg, row) for row in matrix.values]
    )
    out = FeatureMatrix(matrix.ids, rows)
    _atomic_write(
        args.out, lambda p: save_features(out, p, args.out_format)
    )
    return 0


def _cmd_plans(args) -> int:
    w, h = args.width, args.height
    if args.kind == "augment":
        cfg = augment.AugmentConfig(
            rotation_angles=tuple(args.angles),
            crop_area_fraction=args.fraction,
        )
        plans = augment.augmentation_plans(w, h, cfg)
    elif args.kind == "positive":
        plans = augment.positive_mirror_plans()
    elif args.kind == "negative":
        plans = augment.negative_expansion_plans(w, h)
    elif args.kind == "crops":
        plans = [
            augment.TransformPlan(crop=r)
            for r in augment.crop_rects(w, h, args.fraction)
        ]
    else:
        plans = [
            augment.TransformPlan(crop=r)
            for r in retrieval.patch_grid(w, h, args.level)
        ]
    lines = [
        f"{k}\t{augment.serialize_plan(p, w, h)}"
        for k, p in enumerate(plans)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _add_feature_args(p, with_format: bool = True) -> None:
    p.add_argument("--features", required=True, help="feature file")
    if with_format:
        p.add_argument(
            "--format", choices=("tsv", "binary"), default="tsv",
            help="feature file format",
        )


def _add_extractor_args(p) -> None:
    p.add_argument(
        "--extractor", choices=("toy", "external", "file"), default="toy"
    )
    p.add_argument("--grid", type=int, help="toy extractor cells per axis")
    p.add_argument("--command", help="external extractor command line")
    p.add_argument("--features", help="file-backed patch features")
    p.add_argument(
        "--format", choices=("tsv", "binary"), default="tsv"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featkit",
        description="Feature-vector classification and retrieval toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a multiclass linear SVM")
    _add_feature_args(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--strategy", choices=("ova", "ovo"), required=True)
    p.add_argument("--C", type=float, dest="C")
    p.add_argument("--preset", choices=sorted(svm.C_PRESETS))
    p.add_argument(
        "--augment", action="store_true",
        help="features hold id#0..id#15 representation rows",
    )
    p.add_argument("--no-bias", action="store_true")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-epochs", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="classify feature rows")
    p.add_argument("--model", required=True)
    _add_feature_args(p)
    p.add_argument("--pooling", choices=("sum", "max"), default="sum")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions or rankings")
    p.add_argument("metric", choices=("ap", "accuracy", "recall"))
    p.add_argument("--scores")
    p.add_argument("--predictions")
    p.add_argument("--ranking")
    p.add_argument("--relevant")
    p.add_argument("--truth")
    p.add_argument(
        "--mode", choices=("all_points", "eleven_point"),
        default="all_points",
    )
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--include-self", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("index", help="build a retrieval index")
    p.add_argument("--images", required=True, help="reference manifest TSV")
    _add_extractor_args(p)
    p.add_argument("--h-r", type=int, default=4)
    p.add_argument("--h-q", type=int, default=3)
    p.add_argument("--pca-dim", type=int, default=500)
    p.add_argument("--power", type=float, default=2.0)
    p.add_argument("--epsilon", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("query", help="rank references for query images")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True, help="query manifest TSV")
    _add_extractor_args(p)
    p.add_argument("--h-q", type=int, help="override query levels")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser(
        "preprocess-fit", help="fit the feature-processing chain"
    )
    _add_feature_args(p)
    p.add_argument("--pca-dim", type=int, default=500)
    p.add_argument("--epsilon", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preprocess_fit)

    p = sub.add_parser(
        "preprocess-apply", help="run vectors through a fitted chain"
    )
    p.add_argument("--model", required=True)
    _add_feature_args(p)
    p.add_argument("--power", type=float, default=2.0)
    p.add_argument(
        "--out-format", choices=("tsv", "binary"), default="tsv"
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preprocess_apply)

    p = sub.add_parser("plans", help="dump augmentation geometry as TSV")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument(
        "--kind",
        choices=("augment", "positive", "negative", "crops", "patches"),
        default="augment",
    )
    p.add_argument("--fraction", type=float, default=4.0 / 9.0)
    p.add_argument(
        "--angles", type=float, nargs=2, default=[20.0, -20.0],
        metavar=("A1", "A2"),
    )
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_plans)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FeatkitError, OSError, ValueError, KeyError) as exc:
        print(f"featkit: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"featkit: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
