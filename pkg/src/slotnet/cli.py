"""Operator entry point.

Subcommands: ``approx-gen`` (write approximation polynomials),
``bootfail-table`` (boundary/failure-probability table),
``boot-precision`` (refresh-pipeline precision), ``infer`` (single-image
run), ``agree`` (agreement study over an image set).

Options may come from a flat ``key=value`` config file (``--config``);
explicit command-line flags override it, unknown keys are rejected.
Stochastic commands require ``--seed`` and rerunning any command with
the same configuration produces byte-identical outputs (reports carry no
timestamps or timings).

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import approx, bootfail, bootpipe, resnet
from .heslots import SimConfig, SimulationError
from .polyeval import explain, plan_for_poly

USAGE_ERROR = 1
NUMERICAL_ERROR = 2
IO_ERROR = 3


class UsageError(RuntimeError):
    pass


def _outdir(value: str | None) -> Path:
    if value:
        return Path(value)
    return Path(os.environ.get("SLOTNET_OUTDIR", "."))


def _comma_ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError as exc:
        raise UsageError(f"bad integer list {text!r}") from exc


# ---------------------------------------------------------------------------
# config file handling


def _load_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    text = Path(path).read_text()
    out: dict[str, str] = {}
    for i, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _merge_config(args: argparse.Namespace, config: dict[str, str],
                  parser: argparse.ArgumentParser) -> None:
    dests = {a.dest: a for a in parser._actions if a.dest != "help"}
    unknown = set(config) - set(dests)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key, raw in config.items():
        if getattr(args, key) is not None:
            continue  # explicit flag wins
        action = dests[key]
        if action.type is not None:
            value = action.type(raw)
        elif isinstance(action, (argparse._StoreTrueAction,)):
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = raw
        setattr(args, key, value)


def _resolve(args, name, default):
    v = getattr(args, name)
    return default if v is None else v


# ---------------------------------------------------------------------------
# approx-gen


def cmd_approx_gen(args) -> int:
    out = _outdir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_lines = []
    files = []
    target = args.target
    if target == "sign":
        alpha = int(_resolve(args, "alpha", 13))
        comp = approx.compose_sign(alpha)
        for i, st in enumerate(comp.stages, 1):
            path = out / f"sign_alpha{alpha}_stage{i}.poly"
            path.write_text(approx.dump_poly(st))
            files.append(path)
            report_lines.append(
                f"stage {i}: degree {st.degree}, max error {st.achieved_error:.6e}"
            )
        report_lines.append(
            f"composed max error {comp.achieved_error:.6e} on "
            f"+-[{comp.gap:.6g}, 1] (target 2^-{alpha})"
        )
    elif target == "cos":
        params = _boot_params(args)
        red = bootpipe.build_mod_reducer(params)
        path = out / f"cos_K{params.K}_eps{params.eps_exp}_deg{params.cos_degree}.poly"
        path.write_text(approx.dump_poly(red.p_cos))
        files.append(path)
        report_lines.append(
            f"cosine degree {params.cos_degree}: max error {red.p_cos.achieved_error:.6e}"
        )
    elif target == "exp":
        degree = int(_resolve(args, "exp_degree", resnet.EXP_DEGREE))
        p = approx.least_squares_poly(np.exp, (-1.0, 1.0), degree)
        path = out / f"exp_deg{degree}.poly"
        path.write_text(approx.dump_poly(p))
        files.append(path)
        report_lines.append(f"exp degree {degree}: max error {p.achieved_error:.6e}")
    else:
        raise UsageError(f"unknown target {target!r}")
    report = out / f"approx_{target}_report.txt"
    report.write_text("\n".join(report_lines) + "\n")
    for f in files:
        print(f)
    print(report)
    return 0


# ---------------------------------------------------------------------------
# bootfail-table


def cmd_bootfail_table(args) -> int:
    hamming = _comma_ints(_resolve(args, "hamming", "64,128,192"))
    targets = _comma_ints(_resolve(args, "targets", "23,30,40"))
    convention = _resolve(args, "convention", "round")
    network = None
    if args.network:
        parts = _comma_ints(args.network)
        if len(parts) != 2:
            raise UsageError("--network expects N_BOOT,N_SLOTS")
        network = (parts[0], parts[1])
    text = bootfail.format_boundary_table(hamming, targets, convention, network)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# boot-precision


def _boot_params(args) -> bootpipe.BootParams:
    return bootpipe.BootParams(
        K=int(_resolve(args, "K", 17)),
        eps_exp=int(_resolve(args, "eps_exp", 6)),
        h=int(_resolve(args, "hamming_weight", 64)),
        cos_degree=int(_resolve(args, "cos_degree", 54)),
        asin_degree=int(_resolve(args, "asin_degree", 5)),
        double_angles=int(_resolve(args, "double_angles", 2)),
        n_coeff=int(_resolve(args, "n_coeff", 2048)),
    )


def cmd_boot_precision(args) -> int:
    seed = args.seed
    trials = int(_resolve(args, "trials", 100))
    lines = []
    if args.sweep_cos_degrees:
        degrees = _comma_ints(args.sweep_cos_degrees)
        lines.append(f"{'cos degree':>12} {'mean bits':>12} {'worst bits':>12}")
        for d in degrees:
            params = bootpipe.BootParams(
                K=int(_resolve(args, "K", 17)),
                eps_exp=int(_resolve(args, "eps_exp", 6)),
                h=int(_resolve(args, "hamming_weight", 64)),
                cos_degree=d,
                asin_degree=int(_resolve(args, "asin_degree", 5)),
                double_angles=int(_resolve(args, "double_angles", 2)),
                n_coeff=int(_resolve(args, "n_coeff", 2048)),
            )
            rep = bootpipe.bootstrap_precision(params, trials, seed)
            lines.append(f"{d:>12} {rep.mean_bits:>12.2f} {rep.worst_bits:>12.2f}")
        text = "\n".join(lines) + "\n"
    else:
        params = _boot_params(args)
        rep = bootpipe.bootstrap_precision(params, trials, seed)
        text = rep.text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# infer / agree


def _sim_config(args) -> SimConfig:
    return SimConfig(
        n_slots=int(_resolve(args, "n_slots", 1 << 15)),
        sparse_block=int(_resolve(args, "sparse_block", 1 << 10)),
        fidelity=_resolve(args, "fidelity", "exact"),
        quantize_bits=int(_resolve(args, "quantize_bits", 30)),
        bootstrap_noise_bits=int(_resolve(args, "bootstrap_noise_bits", 19)),
    )


def _load_images(args, rng: np.random.Generator) -> list[tuple[int | None, np.ndarray]]:
    if args.random_images:
        n = int(args.random_images)
        return [(None, rng.uniform(-0.5, 0.5, (3, resnet.GRID, resnet.GRID)))
                for _ in range(n)]
    if args.image:
        path = Path(args.image)
        if path.suffix == ".bin":
            return resnet.load_cifar10(path)
        return [(None, resnet.load_text_image(path))]
    if args.images:
        root = Path(args.images)
        if root.is_file():
            if root.suffix == ".bin":
                return resnet.load_cifar10(root)
            return [(None, resnet.load_text_image(root))]
        out = []
        for p in sorted(root.iterdir()):
            if p.suffix == ".bin":
                out.extend(resnet.load_cifar10(p))
            elif p.suffix == ".txt":
                out.append((None, resnet.load_text_image(p)))
        return out
    raise UsageError("no image source: use --image/--images/--random-images")


def _load_weightset(args, seed: int) -> resnet.WeightSet:
    if args.weights:
        return resnet.load_weights(args.weights)
    if args.random_weights:
        bound = float(_resolve(args, "bound", resnet.DEFAULT_BOUND))
        return resnet.random_weights(seed, bound)
    raise UsageError("no weights: use --weights MANIFEST or --random-weights")


def _make_runner(args, ws) -> resnet.Runner:
    return resnet.Runner(
        ws,
        _sim_config(args),
        bound=float(_resolve(args, "bound", resnet.DEFAULT_BOUND)),
        threads=int(_resolve(args, "threads", 1)),
    )


def _explain_text(runner: resnet.Runner) -> str:
    parts = []
    for i, st in enumerate(runner.relu_eval.stages, 1):
        parts.append(f"sign stage {i}:\n{explain(plan_for_poly(st))}")
    parts.append(f"softmax exponential:\n{explain(plan_for_poly(runner.softmax_eval.exp_poly))}")
    return "\n\n".join(parts) + "\n"


def cmd_infer(args) -> int:
    seed = args.seed
    rng = np.random.default_rng(seed)
    ws = _load_weightset(args, seed)
    if args.random_image:
        images = [(None, rng.uniform(-0.5, 0.5, (3, resnet.GRID, resnet.GRID)))]
    else:
        images = _load_images(args, rng)
    if not images:
        raise UsageError("image source is empty")
    out = _outdir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runner = _make_runner(args, ws)
    threads = int(_resolve(args, "threads", 1))
    trace_lines: list[str] = []
    trace = trace_lines.append if args.trace else None
    if args.trace and threads > 1:
        raise UsageError("--trace requires --threads 1")
    label, image = images[0]
    rep = runner.infer(image, seed=seed, trace=trace)
    record = rep.to_record()
    if label is not None:
        record["true_label"] = label
    (out / "records.jsonl").write_text(json.dumps(record, sort_keys=True) + "\n")
    text = [
        f"label {rep.label} (reference {rep.float_label}, agreement {rep.agreement})",
        "logits " + " ".join(f"{v:.6g}" for v in rep.logits),
        "softmax " + " ".join(f"{v:.6g}" for v in rep.softmax),
        f"bootstraps {rep.counters['bootstraps']} "
        f"rotations {rep.counters['rotations']} "
        f"mults {rep.counters['mults_cipher']}+{rep.counters['mults_plain']}",
        f"warnings {len(rep.warnings)}",
    ]
    (out / "report.txt").write_text("\n".join(text) + "\n")
    if args.trace:
        (out / "trace.log").write_text("\n".join(trace_lines) + "\n")
    if args.explain:
        (out / "plans.txt").write_text(_explain_text(runner))
    print("\n".join(text))
    return 0


def _wilson(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 0.0
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return center - half, center + half


def cmd_agree(args) -> int:
    seed = args.seed
    rng = np.random.default_rng(seed)
    ws = _load_weightset(args, seed)
    images = _load_images(args, rng)
    if not images:
        raise UsageError("image source is empty")
    out = _outdir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runner = _make_runner(args, ws)
    records = []
    agreements = 0
    counters_total: dict[str, int] = {}
    warn_total = 0
    max_dev = 0.0
    for idx, (label, image) in enumerate(images):
        rep = runner.infer(image, seed=seed + idx)
        rec = rep.to_record()
        rec["index"] = idx
        if label is not None:
            rec["true_label"] = label
        records.append(rec)
        agreements += int(rep.agreement)
        warn_total += len(rep.warnings)
        max_dev = max(max_dev, float(np.max(np.abs(
            np.asarray(rep.logits) - np.asarray(rep.float_logits)))))
        for k, v in rep.counters.items():
            counters_total[k] = counters_total.get(k, 0) + v
    n = len(images)
    lo, hi = _wilson(agreements, n)
    ratio = agreements / n
    text = [
        f"images {n}",
        f"agreement {agreements}/{n} = {100 * ratio:.2f}% "
        f"(95% Wilson {100 * lo:.2f}%..{100 * hi:.2f}%)",
        f"max |cipher logit - reference logit| {max_dev:.6g}",
        "counters " + " ".join(f"{k}={v}" for k, v in sorted(counters_total.items())),
        f"range warnings {warn_total}",
    ]
    (out / "aggregate.txt").write_text("\n".join(text) + "\n")
    with open(out / "records.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print("\n".join(text))
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="slotnet", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output directory or file")

    p = sub.add_parser("approx-gen", help="write approximation polynomial files")
    common(p)
    p.add_argument("--target", required=True, choices=("sign", "cos", "exp"))
    p.add_argument("--alpha", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--eps-exp", type=int)
    p.add_argument("--cos-degree", type=int)
    p.add_argument("--asin-degree", type=int)
    p.add_argument("--double-angles", type=int)
    p.add_argument("--hamming-weight", type=int)
    p.add_argument("--n-coeff", type=int)
    p.add_argument("--exp-degree", type=int)
    p.set_defaults(fn=cmd_approx_gen)

    p = sub.add_parser("bootfail-table", help="boundary and failure probability table")
    common(p)
    p.add_argument("--hamming")
    p.add_argument("--targets")
    p.add_argument("--convention", choices=bootfail.CONVENTIONS)
    p.add_argument("--network", help="N_BOOT,N_SLOTS appends the linear estimate")
    p.set_defaults(fn=cmd_bootfail_table)

    p = sub.add_parser("boot-precision", help="refresh-pipeline precision report")
    common(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--eps-exp", type=int)
    p.add_argument("--cos-degree", type=int)
    p.add_argument("--asin-degree", type=int)
    p.add_argument("--double-angles", type=int)
    p.add_argument("--hamming-weight", type=int)
    p.add_argument("--n-coeff", type=int)
    p.add_argument("--sweep-cos-degrees")
    p.set_defaults(fn=cmd_boot_precision)

    def infer_common(p):
        common(p)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--weights", help="weights manifest JSON")
        p.add_argument("--random-weights", action="store_true", default=None)
        p.add_argument("--threads", type=int)
        p.add_argument("--fidelity", choices=("exact", "quantized"))
        p.add_argument("--n-slots", type=int)
        p.add_argument("--sparse-block", type=int)
        p.add_argument("--quantize-bits", type=int)
        p.add_argument("--bootstrap-noise-bits", type=int)
        p.add_argument("--bound", type=float)

    p = sub.add_parser("infer", help="single-image inference report")
    infer_common(p)
    p.add_argument("--image", help="CIFAR-10 .bin record file or .txt image")
    p.add_argument("--images")
    p.add_argument("--random-image", action="store_true", default=None)
    p.add_argument("--random-images", type=int)
    p.add_argument("--trace", action="store_true", default=None)
    p.add_argument("--explain", action="store_true", default=None)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("agree", help="agreement study over an image set")
    infer_common(p)
    p.add_argument("--images", help="directory or file of images")
    p.add_argument("--image")
    p.add_argument("--random-images", type=int)
    p.set_defaults(fn=cmd_agree)
    return top


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        sub = next(
            sp for a in parser._subparsers._group_actions
            for name, sp in a.choices.items() if name == args.command
        )
        _merge_config(args, _load_config(args.config), sub)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (approx.RemezError, approx.CompositionError, SimulationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR
    except (OSError, json.JSONDecodeError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return IO_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
