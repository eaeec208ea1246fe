"""Command-line entry points: train, encode, query, eval-pr.

Every command prints machine-parseable key=value lines on stdout and maps
errors onto fixed exit codes: 0 success, 1 usage/config, 2 data, 3 numeric
divergence. All randomness comes from the config's seed; re-running a
command with identical inputs produces byte-identical outputs.

HDH_THREADS (default 1) caps the worker count. The numeric kernels here are
vectorized single-process code whose results do not depend on that cap; the
variable is validated and honored as an upper bound.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import pipeline, search
from .codes import HashCode
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    DomainError,
    HdhError,
)
from .features import load_features, normalize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


@dataclass(frozen=True)
class CommandOutcome:
    exit_code: int
    message: str
    summary: str
    lines: tuple[str, ...] = ()


def _ok(summary: str, lines=()) -> CommandOutcome:
    return CommandOutcome(EXIT_OK, "ok", summary, tuple(lines) + (summary,))


def _fail(exit_code: int, message: str) -> CommandOutcome:
    return CommandOutcome(exit_code, message, f"status=error exit={exit_code}")


def worker_cap() -> int:
    """Validated HDH_THREADS value (default 1)."""
    raw = os.environ.get("HDH_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"HDH_THREADS must be a positive integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"HDH_THREADS must be >= 1, got {cap}")
    return cap


def _guard(fn) -> CommandOutcome:
    try:
        return fn()
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except DivergenceError as exc:
        return _fail(EXIT_DIVERGED, str(exc))
    except HdhError as exc:
        return _fail(EXIT_DATA, str(exc))


def _load_features_auto(path, label_col):
    """Pick the feature format from the file's leading magic bytes."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise DataError(f"cannot read features file: {exc}") from None
    fmt = "packed-binary" if magic == b"HDH1" else "csv"
    return load_features(path, fmt, label_col)


def cmd_train(config_path, features_path, model_out, label_col=None) -> CommandOutcome:
    def run():
        worker_cap()
        try:
            config = pipeline.parse_config_file(config_path)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        data = normalize(_load_features_auto(features_path, label_col))
        model, history = pipeline.train(config, data)
        pipeline.save_model(model, model_out)
        lines = [
            f"iter={rec.iteration} R={rec.sae_objective:.17g} "
            f"J={rec.rbm_objective:.17g} sae_repeats={rec.sae_repeats} "
            f"rbm_repeats={rec.rbm_repeats}"
            for rec in history
        ]
        summary = (f"status=ok model={model_out} iterations={len(history)} "
                   f"code_bits={model.code_bits}")
        return _ok(summary, lines)

    return _guard(run)


def cmd_encode(model_path, features_path, codes_out, label_col=None) -> CommandOutcome:
    def run():
        worker_cap()
        try:
            model = pipeline.load_model(model_path)
        except OSError as exc:
            raise DataError(f"cannot read model file: {exc}") from None
        data = _load_features_auto(features_path, label_col)
        if data.dim != model.input_dim:
            raise DataError(
                f"feature dimension mismatch: model expects {model.input_dim}, "
                f"features have {data.dim}"
            )
        words = pipeline.encode_matrix(model, data.values)
        search.write_codes_file(codes_out, words, model.code_bits)
        return _ok(f"status=ok codes={codes_out} count={data.rows} "
                   f"bits={model.code_bits}")

    return _guard(run)


def cmd_query(codes_path, query_hex, k_results) -> CommandOutcome:
    def run():
        worker_cap()
        try:
            words, n_bits = search.read_codes_file(codes_path)
        except OSError as exc:
            raise DataError(f"cannot read codes file: {exc}") from None
        try:
            query = HashCode.from_hex(query_hex, n_bits)
        except DomainError as exc:
            # A bad query string on the command line is a usage error.
            raise ConfigError(str(exc)) from None
        index = search.HammingIndex(words, n_bits, np.arange(words.shape[0]))
        hits = search.topk(index, query, k_results)
        lines = [f"id={i} distance={d}" for i, d in hits]
        return _ok(f"status=ok results={len(hits)} bits={n_bits}", lines)

    return _guard(run)


def cmd_eval_pr(codes_path, features_path, mode, gt_n, out_csv,
                label_col=None) -> CommandOutcome:
    def run():
        worker_cap()
        try:
            words, n_bits = search.read_codes_file(codes_path)
        except OSError as exc:
            raise DataError(f"cannot read codes file: {exc}") from None
        data = _load_features_auto(features_path, label_col)
        if words.shape[0] != data.rows:
            raise DataError(
                f"codes/features mismatch: {words.shape[0]} codes for "
                f"{data.rows} rows"
            )
        if mode == "label" and data.labels is None:
            raise DataError("label ground truth requires labeled features "
                            "(declare --label-col last or use a labeled file)")
        rows = np.arange(data.rows)
        truth = search.ground_truth(data, rows, mode, gt_n)
        index = search.HammingIndex(words, n_bits, rows, data.labels)
        queries = [index.code(i) for i in range(index.size)]
        table = search.pr_table(index, queries, truth, exclude_ids=rows)
        search.write_pr_csv(out_csv, table)
        curve = search.precision_recall(index, queries, truth, exclude_ids=rows)
        area = search.auc(curve)
        return _ok(f"status=ok pr_csv={out_csv} auc={area:.17g} mode={mode} "
                   f"queries={data.rows}")

    return _guard(run)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdhash",
        description="Train deep hash models, emit binary codes, and evaluate "
                    "Hamming-space retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config and features")
    p.add_argument("--config", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label-col", choices=["last"], default=None)

    p = sub.add_parser("encode", help="hash feature rows with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label-col", choices=["last"], default=None)

    p = sub.add_parser("query", help="rank indexed codes against a hex query")
    p.add_argument("--codes", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--k", type=int, required=True)

    p = sub.add_parser("eval-pr", help="precision-recall over a radius sweep")
    p.add_argument("--codes", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--mode", choices=["label", "euclidean"], required=True)
    p.add_argument("--gt-n", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--label-col", choices=["last"], default=None)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage problems; our contract is 1.
        return EXIT_OK if not exc.code else EXIT_USAGE

    if args.command == "train":
        outcome = cmd_train(args.config, args.features, args.out, args.label_col)
    elif args.command == "encode":
        outcome = cmd_encode(args.model, args.features, args.out, args.label_col)
    elif args.command == "query":
        outcome = cmd_query(args.codes, args.q, args.k)
    else:
        outcome = cmd_eval_pr(args.codes, args.features, args.mode, args.gt_n,
                              args.out, args.label_col)

    for line in outcome.lines:
        print(line)
    if outcome.exit_code != EXIT_OK:
        print(f"hdhash: {outcome.message}", file=sys.stderr)
        print(outcome.summary)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
