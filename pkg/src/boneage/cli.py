"""Command line interface.

Subcommands: synth, transform, train-stage, classify, train-age,
predict-age, evaluate. Exit codes: 0 success, 2 usage error, 3 data error,
4 numeric failure. Outputs are deterministic: rerunning a command with the
same inputs and seed writes byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import elastic as elastic_mod
from . import evalkit, learners, outline, regress, shapelets, synth
from .core import BONES, STAGES, load_dataset, save_dataset
from .errors import BoneAgeError, DataFormatError
from .features import FEATURE_NAMES, extract_features, features_to_csv

CLASSIFIER_CHOICES = learners.CLASSIFIER_KINDS
REPRESENTATIONS = ("radial", "features", "shapelet")


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc.msg})") from None


def _labeled_records(ds):
    recs = [r for r in ds if r.tw_stage is not None]
    if not recs:
        raise DataFormatError("no labeled records in the input dataset")
    return recs


def cmd_synth(args) -> int:
    cfg = synth.config_from_dict(_load_json(args.config)) if args.config else None
    ds = synth.generate(args.n, args.seed, cfg)
    save_dataset(ds, args.output)
    _say(args, f"wrote {args.output} ({len(ds)} records)")
    if args.json:
        print(json.dumps({"records": len(ds), "seed": args.seed}))
    return 0


def cmd_transform(args) -> int:
    ds = load_dataset(args.input)
    if args.mode == "radial":
        rows = [outline.to_radial_series(r) for r in ds]
        outline.series_to_csv(rows, args.output)
    else:
        feats = [extract_features(r) for r in ds]
        features_to_csv(feats, args.output)
    _say(args, f"wrote {args.output} ({len(ds)} rows)")
    if args.json:
        print(json.dumps({"rows": len(ds), "mode": args.mode}))
    return 0


def _feature_matrix(feats):
    return np.vstack([f.values for f in feats])


def _cv_report(task_labels, fold_preds, folds, seed, config) -> evalkit.EvaluationReport:
    metrics = evalkit.classification_metrics(task_labels, fold_preds)
    return evalkit.EvaluationReport(
        task="classification",
        metrics={k: v for k, v in metrics.items() if k != "confusion"},
        confusion=metrics["confusion"],
        folds=folds,
        seed=seed,
        config=config,
    )


def _classifier_cv(X, labels, kind, hyper, folds, seed):
    """Per-fold refit; returns (pooled predictions, fold traces)."""
    fold_list = evalkit.stratified_kfold(labels, folds, seed)
    preds = [None] * len(labels)
    traces = []
    for fi, fold in enumerate(fold_list):
        mask = np.ones(len(labels), dtype=bool)
        mask[fold] = False
        train_idx = np.where(mask)[0]
        clf = learners.make_classifier(kind, **hyper)
        clf.fit(X[train_idx], [labels[i] for i in train_idx], seed=seed)
        fold_pred = clf.predict(X[fold])
        correct = 0
        for i, p in zip(fold, fold_pred):
            preds[i] = p
            if p == labels[i]:
                correct += 1
        traces.append({"fold": fi, "test_size": int(len(fold)), "correct": int(correct)})
    return preds, traces


def cmd_train_stage(args) -> int:
    cfg = _load_json(args.config) if args.config else {}
    ds = load_dataset(args.input)
    recs = _labeled_records(ds)
    labels = [r.tw_stage for r in recs]
    hyper = cfg.get("classifier", {})
    envelope: dict = {"representation": args.representation}

    if args.representation == "radial":
        series = [outline.to_radial_series(r) for r in recs]
        grids = cfg.get("grids")
        model = elastic_mod.train_elastic_ensemble(
            series, folds=args.folds, grids=grids, seed=args.seed
        )
        series_path = _sibling(args.output, ".series.csv")
        elastic_mod.save_elastic(model, args.output, series_path)
        cv_preds = elastic_mod.ensemble_cv_predictions(
            model, folds=args.folds, seed=args.seed
        )
        metrics = evalkit.classification_metrics(
            [r.tw_stage for r in model.references], cv_preds
        )
        metrics["member_weights"] = {m.kind: m.weight for m in model.members}
        report = evalkit.EvaluationReport(
            task="classification",
            metrics={k: v for k, v in metrics.items() if k != "confusion"},
            confusion=metrics["confusion"],
            seed=args.seed,
            config={"representation": "radial", "folds": args.folds},
        )
    else:
        if args.representation == "features":
            feats = [extract_features(r) for r in recs]
            X = _feature_matrix(feats)
            envelope["feature_names"] = list(FEATURE_NAMES)
        else:
            series = [outline.to_radial_series(r) for r in recs]
            sh_cfg = cfg.get("shapelets", {})
            sh_model = shapelets.discover_shapelets(
                [s.values for s in series],
                labels,
                min_len=int(sh_cfg.get("min_len", shapelets.DEFAULT_MIN_LEN)),
                max_len=int(sh_cfg.get("max_len", shapelets.DEFAULT_MAX_LEN)),
                k=sh_cfg.get("k"),
                offset_stride=int(sh_cfg.get("offset_stride", 1)),
                length_stride=int(sh_cfg.get("length_stride", 1)),
            )
            X = shapelets.shapelet_transform(sh_model, [s.values for s in series])
            envelope["shapelets"] = shapelets.shapelet_model_to_dict(sh_model)
        preds, traces = _classifier_cv(X, labels, args.classifier, hyper, args.folds, args.seed)
        clf = learners.make_classifier(args.classifier, **hyper)
        clf.fit(X, labels, seed=args.seed)
        envelope["classifier"] = clf.to_dict()
        report = _cv_report(
            labels,
            preds,
            traces,
            args.seed,
            {"representation": args.representation, "classifier": args.classifier,
             "folds": args.folds},
        )
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(envelope, fh, indent=2)
            fh.write("\n")

    report_dir = _sibling(args.output, "_cv")
    paths = evalkit.emit_report(report, report_dir)
    _say(args, f"wrote {args.output}")
    _say(args, f"wrote {paths['json']}")
    if args.json:
        print(json.dumps(evalkit.report_to_dict(report), sort_keys=True))
    return 0


def _sibling(path, suffix: str) -> str:
    base = str(path)
    stem, ext = os.path.splitext(base)
    return stem + suffix


def cmd_classify(args) -> int:
    with open(args.model, encoding="utf-8") as fh:
        envelope = json.load(fh)
    rep = envelope.get("representation")
    ds = load_dataset(args.input)
    recs = list(ds)
    if not recs:
        raise DataFormatError("input dataset is empty")

    if rep == "radial":
        model = elastic_mod.load_elastic(args.model)
        series = [outline.to_radial_series(r) for r in recs]
        pairs = [elastic_mod.predict_elastic(model, s) for s in series]
        classes = model.classes
        preds = [p[0] for p in pairs]
        scores = np.vstack([p[1] for p in pairs])
    elif rep == "shapelet":
        sh_model = shapelets.shapelets_from_dict(envelope["shapelets"])
        clf = learners.classifier_from_dict(envelope["classifier"])
        series = [outline.to_radial_series(r) for r in recs]
        X = shapelets.shapelet_transform(sh_model, [s.values for s in series])
        classes = clf.classes_
        scores = clf.predict_scores(X)
        preds = clf.predict(X)
    elif rep == "features":
        clf = learners.classifier_from_dict(envelope["classifier"])
        feats = [extract_features(r) for r in recs]
        X = _feature_matrix(feats)
        classes = clf.classes_
        scores = clf.predict_scores(X)
        preds = clf.predict(X)
    else:
        raise DataFormatError(f"{args.model}: unknown representation {rep!r}")

    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["subject_id", "bone", "tw_stage", "pred_stage"]
            + [f"score_{c}" for c in classes]
        )
        for rec, p, srow in zip(recs, preds, scores):
            w.writerow(
                [rec.subject.subject_id, rec.bone, rec.tw_stage or "", p]
                + [repr(float(s)) for s in srow]
            )
    _say(args, f"wrote {args.output}")

    truth = [r.tw_stage for r in recs]
    if all(t is not None for t in truth):
        metrics = evalkit.classification_metrics(truth, preds)
        report = evalkit.EvaluationReport(
            task="classification",
            metrics={k: v for k, v in metrics.items() if k != "confusion"},
            confusion=metrics["confusion"],
            config={"model": os.path.basename(str(args.model))},
        )
        paths = evalkit.emit_report(report, _sibling(args.output, "_report"))
        _say(args, f"wrote {paths['json']}")
        if args.json:
            print(json.dumps(evalkit.report_to_dict(report), sort_keys=True))
    elif args.json:
        print(json.dumps({"rows": len(recs)}))
    return 0


def cmd_train_age(args) -> int:
    ds = load_dataset(args.input)
    recs = list(ds)
    if not recs:
        raise DataFormatError("input dataset is empty")
    feats = [extract_features(r) for r in recs]
    bank = regress.train_bone_bank(feats, use_factors=args.factors)
    regress.save_bank(bank, args.output)
    _say(args, f"wrote {args.output}")

    diagnostics = {}
    for key, model in bank.models.items():
        het = regress.heteroscedasticity_check(model)
        norm = (
            regress.normality_tests(model.std_residuals)
            if model.n >= 8
            else None
        )
        name = f"{key[0]}_{'epiphysis' if key[1] else 'fused'}"
        diagnostics[name] = {
            "n": model.n,
            "terms": model.names[1:],
            "r2": model.r2,
            "aic": model.aic,
            "heteroscedasticity_r": het.r,
            "heteroscedasticity_p": het.p_value,
            "normality": None
            if norm is None
            else {
                "shapiro_w": norm.shapiro_w,
                "shapiro_p": norm.shapiro_p,
                "dagostino_z": norm.dagostino_z,
                "dagostino_p": norm.dagostino_p,
                "jarque_bera": norm.jarque_bera,
                "jarque_bera_p": norm.jarque_bera_p,
            },
            "influential_points": model.flagged_points(),
        }
    diag_path = _sibling(args.output, "_diagnostics.json")
    with open(diag_path, "w", encoding="utf-8") as fh:
        json.dump(diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    md_path = _sibling(args.output, "_diagnostics.md")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write("# Age model diagnostics\n\n")
        fh.write("| model | n | terms | r2 | hetero p | flagged |\n")
        fh.write("| --- | --- | --- | --- | --- | --- |\n")
        for name in sorted(diagnostics):
            d = diagnostics[name]
            fh.write(
                f"| {name} | {d['n']} | {len(d['terms'])} | {d['r2']:.4f} | "
                f"{d['heteroscedasticity_p']:.4f} | {len(d['influential_points'])} |\n"
            )
    _say(args, f"wrote {diag_path}")
    if args.json:
        print(json.dumps(diagnostics, sort_keys=True))
    return 0


def cmd_predict_age(args) -> int:
    bank = regress.load_bank(args.model)
    ds = load_dataset(args.input)
    recs = list(ds)
    if not recs:
        raise DataFormatError("input dataset is empty")
    by_subject: dict[str, dict] = {}
    order = []
    for rec in recs:
        sid = rec.subject.subject_id
        if sid not in by_subject:
            by_subject[sid] = {}
            order.append(sid)
        by_subject[sid][rec.bone] = extract_features(rec)
    header = (
        ["subject_id", "pred_distal", "pred_middle", "pred_proximal", "fused", "flags"]
        + [f"{side}_{b}" for b in BONES for side in ("lo", "hi")]
    )
    rows_out = []
    for sid in order:
        pred = regress.predict_age(bank, by_subject[sid], level=args.level)
        row = [sid]
        for bone in BONES:
            row.append("" if bone not in pred.per_bone else repr(pred.per_bone[bone]))
        row.append(repr(pred.fused))
        row.append(";".join(pred.flags))
        for bone in BONES:
            itv = pred.intervals.get(bone)
            row.append("" if itv is None else repr(itv.lo))
            row.append("" if itv is None else repr(itv.hi))
        rows_out.append(row)
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows_out)
    _say(args, f"wrote {args.output} ({len(rows_out)} subjects)")
    if args.json:
        print(json.dumps({"subjects": len(rows_out)}))
    return 0


def _read_column(path, preferred: tuple[str, ...]):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file")
        col = None
        for name in preferred:
            if name in header:
                col = header.index(name)
                break
        if col is None:
            raise DataFormatError(
                f"{path}: none of the columns {preferred} found in header {header}"
            )
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: ragged row")
            out.append(row[col])
    if not out:
        raise DataFormatError(f"{path}: no data rows")
    return out


def cmd_evaluate(args) -> int:
    if args.task == "classification":
        truth = _read_column(args.truth, ("label", "tw_stage", "pred_stage"))
        pred = _read_column(args.pred, ("label", "pred_stage", "tw_stage"))
        if len(truth) != len(pred):
            raise DataFormatError(
                f"truth has {len(truth)} rows but predictions have {len(pred)}"
            )
        bad = [v for v in truth + pred if v not in STAGES]
        if bad:
            raise DataFormatError(f"unknown stage labels: {sorted(set(bad))[:5]}")
        metrics = evalkit.classification_metrics(truth, pred)
        report = evalkit.EvaluationReport(
            task="classification",
            metrics={k: v for k, v in metrics.items() if k != "confusion"},
            confusion=metrics["confusion"],
        )
        paths = evalkit.emit_report(report, args.output)
    else:
        truth_raw = _read_column(args.truth, ("value", "age_years", "fused"))
        pred_raw = _read_column(args.pred, ("value", "fused", "pred", "age_years"))
        if len(truth_raw) != len(pred_raw):
            raise DataFormatError(
                f"truth has {len(truth_raw)} rows but predictions have {len(pred_raw)}"
            )
        try:
            truth = [float(v) for v in truth_raw]
            pred = [float(v) for v in pred_raw]
        except ValueError:
            raise DataFormatError("regression evaluation needs numeric columns") from None
        metrics = evalkit.regression_metrics(truth, pred)
        report = evalkit.EvaluationReport(task="regression", metrics=metrics)
        paths = evalkit.emit_report(report, args.output)
        paths.update(evalkit.emit_scatter(truth, pred, os.path.join(args.output, "scatter.svg")))
    for p in sorted(paths.values()):
        _say(args, f"wrote {p}")
    if args.json:
        print(json.dumps(evalkit.report_to_dict(report), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boneage",
        description="Bone ossification staging and age estimation from outline data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true", help="print a JSON summary to stdout")
        p.add_argument("--quiet", action="store_true", help="suppress status messages")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="number of subjects")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="generator config JSON")
    p.add_argument("--output", required=True)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("transform", help="convert a dataset to a delimited representation")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=("radial", "features"), default="radial")
    common(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("train-stage", help="train an ossification stage classifier")
    p.add_argument("--input", required=True)
    p.add_argument("--representation", choices=REPRESENTATIONS, default="features")
    p.add_argument("--classifier", choices=CLASSIFIER_CHOICES, default="svm_quadratic")
    p.add_argument("--output", required=True, help="model file (JSON)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="hyperparameter JSON")
    common(p)
    p.set_defaults(func=cmd_train_stage)

    p = sub.add_parser("classify", help="apply a stage model to a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="predictions CSV")
    common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("train-age", help="train the six-model age bank")
    p.add_argument("--input", required=True)
    p.add_argument("--factors", choices=("none", "sex", "sex+ethnicity"), default="none")
    p.add_argument("--output", required=True, help="model bank file (JSON)")
    common(p)
    p.set_defaults(func=cmd_train_age)

    p = sub.add_parser("predict-age", help="predict ages with a trained bank")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="predictions CSV")
    p.add_argument("--level", type=float, default=0.95)
    common(p)
    p.set_defaults(func=cmd_predict_age)

    p = sub.add_parser("evaluate", help="score predictions against truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--task", choices=("classification", "regression"), required=True)
    p.add_argument("--output", required=True, help="report directory")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BoneAgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
