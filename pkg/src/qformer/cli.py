"""``qformer`` command line.

Exit codes: 0 success, 1 a stage check failed, 2 usage error, 3 I/O error,
4 numeric failure (post-selection, scale or unitarity violations).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import fixedpoint as fp
from . import statevector
from .block_encoding import block_encode_dense, verify_block_encoding
from .encoding import prepare_psi_x
from .attention_oracle import AttentionOracle
from .exceptions import (
    CapacityError,
    NonUnitaryError,
    PostSelectionError,
    QformerError,
    ScaleError,
    ShapeError,
)
from .pretraining import TrainConfig, generate, load_model, save_model, train
from .reference import PROFILES, ModelDims, ModelParams, random_input, random_params, ref_mask
from .report import RunReport, load_matrix, save_matrix
from .transformer import MODES, run_block, state_fidelity
from .verification import score_tolerance, verify_profile

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
DEFAULT_MODES = {"train": "shortcut", "generate": "ideal"}


class UsageError(Exception):
    pass


class InputFileError(Exception):
    """An input file exists but cannot be parsed."""


def _load_params(path) -> ModelParams:
    try:
        return ModelParams.load(path)
    except ShapeError as exc:
        raise InputFileError(f"{path}: {exc}") from exc


def _dims(args) -> ModelDims:
    try:
        return ModelDims.parse(args.dims)
    except (ShapeError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _params(args, dims: ModelDims) -> ModelParams:
    path = getattr(args, "params", None)
    if path:
        params = _load_params(path)
        if args.dims_given and params.dims != dims:
            raise UsageError(f"--dims {args.dims} disagrees with {path}")
        return params
    return random_params(dims, args.seed)


def _input(args, dims: ModelDims) -> np.ndarray:
    if getattr(args, "input", None):
        X = load_matrix(args.input)
        if X.shape != (dims.d, dims.n):
            raise UsageError(f"input must be d x n = {dims.d} x {dims.n}, got {X.shape}")
        return X
    return random_input(dims, args.seed)


def cmd_verify(args) -> RunReport:
    if args.profile not in PROFILES and "=" not in args.profile:
        raise UsageError(f"unknown profile {args.profile!r}; known: {', '.join(sorted(PROFILES))}")
    try:
        dims = ModelDims.parse(args.profile)
    except (ShapeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    params = _load_params(args.params) if args.params else None
    return verify_profile(dims, args.seed, params, command="verify")


def cmd_encode(args) -> RunReport:
    dims = _dims(args)
    X = _input(args, dims)
    report = RunReport("encode", dims.to_dict(), args.seed)
    t0 = time.perf_counter()
    enc = prepare_psi_x(X)
    f = state_fidelity(enc.state, X)
    report.add("encode", fidelity=f, postselect_prob=1.0, seconds=time.perf_counter() - t0,
               passed=f >= 1 - 1e-9, frobenius_norm=enc.frobenius_norm)
    return report


def cmd_attend(args) -> RunReport:
    dims = _dims(args)
    params = _params(args, dims)
    X = _input(args, dims)
    report = RunReport("attend", dims.to_dict(), args.seed)
    scores = []
    for h in range(dims.H):
        t0 = time.perf_counter()
        o = AttentionOracle(X, params.W_Q[h], params.W_K[h], t=dims.t, b=dims.b,
                            variant=args.variant, mask=args.mask)
        if args.mode == "full":
            stored = o.stored_scores()
        else:
            words = o.nearest_codeword_words() if args.mode == "shortcut" else o.ideal_words()
            stored = o.lam_hat * fp.decode(words, o.b)
        err = float(np.abs(stored - o.matrix()).max())
        tol = score_tolerance(o)
        report.add(f"oracle_head_{h}", max_abs_error=err, seconds=time.perf_counter() - t0,
                   passed=err <= tol, tolerance=tol, lam_hat=o.lam_hat)
        scores.append({"head": h, "lam_hat": o.lam_hat, "stored": stored.T.tolist(),
                       "reference": o.attention_matrix().tolist()})
    if args.dump_scores:
        Path(args.dump_scores).write_text(json.dumps(scores, sort_keys=True, indent=2))
    return report


def cmd_verify_blockenc(args) -> RunReport:
    dims = _dims(args)
    params = _params(args, dims)
    X = _input(args, dims)
    report = RunReport("verify-blockenc", dims.to_dict(), args.seed)
    for mask in (["none", "lower"] if args.mask == "both" else [args.mask]):
        t0 = time.perf_counter()
        o = AttentionOracle(X, params.W_Q[0], params.W_K[0], t=dims.t, b=dims.b,
                            variant=args.variant, mask=mask)
        be = block_encode_dense(o)
        err = verify_block_encoding(be, ref_mask(o.attention_matrix(), mask).T)
        report.add(f"block_encoding_{mask}", max_abs_error=err, seconds=time.perf_counter() - t0,
                   passed=err <= be.epsilon, alpha=be.alpha, epsilon=be.epsilon,
                   ancilla_qubits=be.ancilla_qubits, total_qubits=be.total_qubits)
    return report


def cmd_block(args) -> RunReport:
    dims = _dims(args)
    params = _params(args, dims)
    X = _input(args, dims)
    report = RunReport("block", dims.to_dict(), args.seed)
    gamma = args.gamma if args.gamma in ("clean", "residual") else float(args.gamma)
    res = run_block(X, params, args.mode, mask=args.mask, relu=not args.no_relu,
                    variant=args.variant, gamma=gamma,
                    tomography_delta=args.tomography_delta,
                    tomography_sampling=args.tomography_delta > 0,
                    rng=np.random.default_rng(args.seed))
    report.extend(res.records)
    report.extra["mode"] = args.mode
    report.extra["degenerate"] = res.degenerate
    if args.out:
        save_matrix(args.out, res.F)
    return report


def cmd_train(args) -> RunReport:
    dims = _dims(args)
    text = Path(args.corpus).read_text(encoding="utf-8")
    config = TrainConfig(learning_rate=args.lr, iterations=args.iters, seed=args.seed,
                         optimizer=args.optimizer, mode=args.mode, positions=args.positions)
    params = _load_params(args.params) if args.params else None
    t0 = time.perf_counter()
    result = train(text, config, params=params, dims=dims)
    report = RunReport("train", result.params.dims.to_dict(), args.seed)
    trace = result.loss_trace
    report.add("train", seconds=time.perf_counter() - t0, initial_loss=trace[0],
               final_loss=trace[-1], iterations=args.iters)
    report.extra["loss_trace"] = list(trace)
    if args.out:
        save_model(args.out, result)
    return report


def cmd_generate(args) -> RunReport:
    try:
        params, corpus, E = load_model(args.params)
    except ShapeError as exc:
        raise InputFileError(f"{args.params}: {exc}") from exc
    report = RunReport("generate", params.dims.to_dict(), args.seed)
    unknown = sorted(set(args.prompt) - set(corpus.vocab))
    if unknown:
        raise UsageError(f"prompt characters not in the vocabulary: {unknown}")
    mode = "ideal" if args.mode in ("ideal", "shortcut") else args.mode
    t0 = time.perf_counter()
    text = generate(args.prompt, args.steps, params, corpus, E, mode)
    report.add("generate", seconds=time.perf_counter() - t0, prompt=args.prompt, text=text)
    return report


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="seed for weights, inputs and sampling")
    common.add_argument("--dims", default=None,
                        help="profile with optional overrides, e.g. D0 or 'D0,t=6,b=8'")
    common.add_argument("--mode", choices=MODES, default=None,
                        help="full gate-level circuits, shortcut codeword emulation, or ideal "
                             "values (default: full; shortcut for train, ideal for generate)")
    common.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    common.add_argument("--max-qubits", type=int, default=None, help="statevector size budget")

    parser = argparse.ArgumentParser(prog="qformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run every stage check for a profile")
    p.add_argument("profile", nargs="?", default="D0")
    p.add_argument("--params", help="weights JSON to verify instead of seeded weights")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("encode", parents=[common], help="amplitude-encode an input matrix")
    p.add_argument("--input", help="d x n matrix as JSON (columns are tokens)")
    p.set_defaults(func=cmd_encode)

    for name, func, help_text in (("attend", cmd_attend, "store attention scores with the oracle"),
                                  ("verify-blockenc", cmd_verify_blockenc,
                                   "check the dense block-encoding of the scores")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--input")
        p.add_argument("--params")
        p.add_argument("--variant", choices=("hadamard", "swap"), default="hadamard")
        if name == "attend":
            p.add_argument("--mask", choices=("none", "lower", "causal"), default="none")
            p.add_argument("--dump-scores", help="write stored and reference scores as JSON")
        else:
            p.add_argument("--mask", choices=("none", "lower", "causal", "both"), default="both")
        p.set_defaults(func=func)

    p = sub.add_parser("block", parents=[common], help="run one transformer block")
    p.add_argument("--input")
    p.add_argument("--params")
    p.add_argument("--mask", choices=("none", "lower", "causal"), default="none")
    p.add_argument("--variant", choices=("hadamard", "swap"), default="hadamard")
    p.add_argument("--gamma", default="clean", help="clean, residual, or a number in (0, 1]")
    p.add_argument("--tomography-delta", type=float, default=0.0,
                   help="per-entry readout precision; 0 reads amplitudes exactly")
    p.add_argument("--no-relu", action="store_true", help="bypass the ReLU (linear regime)")
    p.add_argument("--out", help="write the read-out matrix as JSON")
    p.set_defaults(func=cmd_block)

    p = sub.add_parser("train", parents=[common], help="pre-train on a character corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--optimizer", choices=("finite-diff", "spsa"), default="finite-diff")
    p.add_argument("--positions", choices=("all", "last"), default="all")
    p.add_argument("--params", help="initial weights JSON")
    p.add_argument("--out", help="write the trained model JSON here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="greedy generation from a trained model")
    p.add_argument("--params", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.set_defaults(func=cmd_generate)
    return parser


def _emit(report: RunReport, path) -> None:
    text = report.to_json()
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.dims_given = args.dims is not None
    if args.dims is None:
        args.dims = "D0"
    if args.mode is None:
        args.mode = DEFAULT_MODES.get(args.command, "full")
    threads = os.environ.get("QFORMER_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"qformer: QFORMER_THREADS must be a positive integer, got {threads!r}", file=sys.stderr)
        return EXIT_USAGE
    previous = statevector.get_max_qubits()
    try:
        if args.max_qubits is not None:
            statevector.set_max_qubits(args.max_qubits)
        with threadpool_limits(limits=limit):
            report = args.func(args)
        _emit(report, args.report)
    except UsageError as exc:
        print(f"qformer: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, UnicodeDecodeError, InputFileError) as exc:
        print(f"qformer: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PostSelectionError, ScaleError, NonUnitaryError, CapacityError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"qformer: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (QformerError, ValueError) as exc:
        print(f"qformer: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        statevector.set_max_qubits(previous)
    failed = report.failures()
    if failed:
        print(f"qformer: failed stages: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
