"""Command-line entry point: ``subgns <command> [options]``.

Commands: generate, fit-pca, pca-report, train, rollout, eval, plot. Each
writes a JSON run manifest next to its outputs. Exit codes: 0 success,
1 file or format error, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, container, dataio, pca, plotting, rollout, training
from .nn import NonFiniteError

log = logging.getLogger("subgns")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_SWEEP = (1, 2, 4, 8, 16, 32, 64, 128, 256)


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    tool_version: str
    command: list
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)  # phase -> seconds

    def input(self, path) -> None:
        self.inputs[str(path)] = container.fingerprint(path)

    def output(self, path) -> None:
        self.outputs.append(str(path))

    def phase(self, name):
        return _Timer(self.timings, name)

    def write(self, path) -> None:
        text = json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
        container.atomic_write_text(path, text)


class _Timer:
    def __init__(self, sink, name):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] = round(time.perf_counter() - self.t0, 6)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _write_csv(path, header, rows, manifest) -> None:
    container.atomic_write_text(path, _csv_text(header, rows))
    manifest.output(path)


def _read_numeric_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed CSV ({exc})") from None
    data = data.reshape(-1, len(header))
    if any(len(r) != len(header) for r in rows[1:]):
        raise ValueError(f"{path}: ragged rows")
    return header, data


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, man: RunManifest) -> None:
    man.seeds["generator"] = args.seed
    with man.phase("generate"):
        ds = dataio.generate_dataset(args.scenario, args.particles, args.frames, args.examples,
                                     args.seed, args.train_fraction,
                                     settle_frames=args.settle_frames)
    with man.phase("write"):
        dataio.save_dataset(ds, args.out)
    man.output(args.out)


def cmd_fit_pca(args, man: RunManifest) -> None:
    man.input(args.dataset)
    ds = dataio.load_dataset(args.dataset)
    train = ds.train
    if not train:
        raise UsageError("dataset has no training examples")
    with man.phase("fit"):
        basis = pca.fit([e.S for e in train], args.modes)
    pca.save_basis(basis, args.out)
    man.output(args.out)
    print(f"modes={basis.r} energy={pca.energy(basis, basis.r):.6f}")


def cmd_pca_report(args, man: RunManifest) -> None:
    man.input(args.basis)
    man.input(args.dataset)
    basis = pca.load_basis(args.basis)
    ds = dataio.load_dataset(args.dataset)
    exs = ds.subset(args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve = pca.energy_curve(basis)
    _write_csv(out / "energy.csv", ("modes", "energy"),
               [(i + 1, float(e)) for i, e in enumerate(curve)], man)
    counts = [r for r in args.sweep if r <= basis.modes.shape[1]]
    with man.phase("sweep"):
        sweep = pca.reconstruction_sweep([e.S for e in exs], basis, counts) if exs else []
    _write_csv(out / "sweep.csv", ("modes", "mse_mean", "mse_std"), sweep, man)
    plotting.energy_plot(out / "energy.svg", curve, sweep)
    man.output(out / "energy.svg")
    print(f"energy(r={basis.r})={pca.energy(basis, basis.r):.6f}; "
          f"smallest r with energy>0.99: {pca.select_modes(basis, 0.99)}")


def cmd_train(args, man: RunManifest) -> None:
    for p in (args.dataset, args.basis):
        man.input(p)
    cfg = training.TrainingConfig()
    if args.config:
        man.input(args.config)
        cfg = training.TrainingConfig.from_file(args.config)
    man.seeds["training"] = cfg.seed
    ds = dataio.load_dataset(args.dataset)
    basis = pca.load_basis(args.basis)
    out = Path(args.out)
    with man.phase("train"):
        res = training.train(ds, basis, cfg, out_dir=out, steps=args.steps,
                             log_every=args.log_every)
    container.atomic_write_text(out / "config.txt", cfg.to_text())
    man.output(out / "config.txt")
    for p in res.checkpoints:
        man.output(p)
    man.output(out / "loss.csv")
    if res.status != "ok":
        raise NonFiniteError(f"training diverged after {len(res.history)} steps; "
                             f"last good parameters in {res.checkpoints[-1]}")


def _load_model(args, man):
    man.input(args.checkpoint)
    ck = training.load_checkpoint(args.checkpoint)
    basis = ck.basis
    if getattr(args, "basis", None):
        man.input(args.basis)
        basis = pca.load_basis(args.basis)
    if basis is None:
        raise UsageError("checkpoint holds no basis; pass --basis")
    return ck, basis


def _dtype(args):
    return np.float32 if args.float32 else np.float64


def cmd_rollout(args, man: RunManifest) -> None:
    ck, basis = _load_model(args, man)
    man.input(args.dataset)
    ds = dataio.load_dataset(args.dataset)
    if not 0 <= args.example < len(ds.examples):
        raise UsageError(f"--example must be in 0..{len(ds.examples) - 1}")
    ex = ds.examples[args.example]
    d = ck.model.config.d
    horizon = args.horizon if args.horizon is not None else ex.m - args.start - d
    with man.phase("rollout"):
        res = rollout.rollout_example(ck.model, basis, ex, horizon, args.start, args.rigid,
                                      _dtype(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rollout.save_result(out / "rollout.sgns", res, {"example": args.example,
                                                   "rigid": args.rigid})
    man.output(out / "rollout.sgns")
    m = res.metrics
    F_ref = m["force_ref"]
    rows = [(res.start + d + k, *F_ref[k], *res.F_hat[k]) for k in range(res.F_hat.shape[0])]
    _write_csv(out / "forces.csv", ("frame", "ref_x", "ref_y", "ref_z", "pred_x", "pred_y",
                                    "pred_z"), rows, man)
    _write_csv(out / "errors.csv", ("particle", "pca_error", "gns_error"),
               [(i, float(a), float(b)) for i, (a, b) in enumerate(zip(m["pca_error"],
                                                                       m["gns_error"]))], man)
    _write_csv(out / "subspace_error.csv", ("frame", "subspace_mse"),
               [(res.start + k, float(v)) for k, v in enumerate(m["subspace_mse_per_frame"])],
               man)
    summary = {"position_mse": m["position_mse"], "subspace_mse": m["subspace_mse"],
               "force_mpe": m["force_mpe"], "failed_at": res.failed_at,
               "frames": res.frames}
    container.atomic_write_text(out / "metrics.json",
                                json.dumps(summary, indent=2, sort_keys=True) + "\n")
    man.output(out / "metrics.json")
    if res.failed_at is not None:
        raise FloatingPointError(f"rollout became non-finite at frame {res.failed_at}")


def cmd_eval(args, man: RunManifest) -> None:
    ck, basis = _load_model(args, man)
    man.input(args.dataset)
    ds = dataio.load_dataset(args.dataset)
    idx = ds.indices(args.split)
    if not idx:
        raise UsageError(f"dataset has no {args.split!r} examples")
    with man.phase("eval"):
        results = rollout.evaluate(ck.model, basis, [ds.examples[i] for i in idx],
                                   args.horizon, args.rigid, dtype=_dtype(args))
    rows = rollout.table_rows(results, [str(i) for i in idx])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    container.atomic_write_text(out / "table.csv", rollout.format_table(rows))
    man.output(out / "table.csv")
    sys.stdout.write(rollout.format_table(rows))


def cmd_plot(args, man: RunManifest) -> None:
    man.input(args.input)
    header, data = _read_numeric_csv(args.input)
    kind = args.kind or _infer_kind(header)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if kind == "energy":
            sweep = None
            if args.sweep:
                man.input(args.sweep)
                sweep = _read_numeric_csv(args.sweep)[1]
            plotting.energy_plot(args.out, data[:, 1] if data.size else np.empty(0), sweep)
        elif kind == "loss":
            plotting.loss_plot(args.out, data, args.force_weight)
        elif kind == "forces":
            plotting.force_plot(args.out, data[:, 1:4], data[:, 4:7])
        elif kind == "errors":
            plotting.error_histogram(args.out, data[:, 1], data[:, 2])
        else:
            raise UsageError(f"cannot plot {kind!r}")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    man.output(args.out)


def _infer_kind(header) -> str:
    h = tuple(header)
    if h == ("modes", "energy"):
        return "energy"
    if h == training.LOSS_COLUMNS:
        return "loss"
    if h[:2] == ("frame", "ref_x"):
        return "forces"
    if h == ("particle", "pca_error", "gns_error"):
        return "errors"
    raise ValueError(f"unrecognised CSV header {','.join(h)}")


# ---------------------------------------------------------------------------
# parser


def _int_list(text: str) -> list[int]:
    try:
        vals = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or vals[0] < 1:
        raise argparse.ArgumentTypeError("mode counts must be >= 1")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subgns", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"subgns {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate oracle episodes into a dataset file")
    g.add_argument("--scenario", choices=("excavation", "wheel"), default="excavation")
    g.add_argument("--particles", type=int, default=500)
    g.add_argument("--frames", type=int, default=120)
    g.add_argument("--examples", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train-fraction", type=float, default=0.9)
    g.add_argument("--settle-frames", type=int, default=30)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit-pca", help="fit the PCA basis on the training split")
    f.add_argument("--dataset", required=True)
    f.add_argument("--modes", type=int, default=pca.DEFAULT_MODES)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit_pca)

    r = sub.add_parser("pca-report", help="energy curve and reconstruction sweep as CSV")
    r.add_argument("--basis", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--sweep", type=_int_list, default=list(DEFAULT_SWEEP))
    r.add_argument("--split", choices=("train", "test"), default="test")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_pca_report)

    t = sub.add_parser("train", help="train the graph network")
    t.add_argument("--dataset", required=True)
    t.add_argument("--basis", required=True)
    t.add_argument("--config")
    t.add_argument("--steps", type=int, help="stop after this many steps")
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    ro = sub.add_parser("rollout", help="closed-loop prediction of one example")
    ro.add_argument("--checkpoint", required=True)
    ro.add_argument("--dataset", required=True)
    ro.add_argument("--example", type=int, default=0)
    ro.add_argument("--horizon", type=int)
    ro.add_argument("--start", type=int, default=0)
    ro.add_argument("--rigid", choices=("scripted", "predicted"), default="scripted")
    ro.add_argument("--basis", help="override the basis stored in the checkpoint")
    ro.add_argument("--float32", action="store_true", help="single-precision network pass")
    ro.add_argument("--out", required=True)
    ro.set_defaults(func=cmd_rollout)

    e = sub.add_parser("eval", help="roll out a split and write a summary table")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--horizon", type=int)
    e.add_argument("--rigid", choices=("scripted", "predicted"), default="scripted")
    e.add_argument("--basis")
    e.add_argument("--float32", action="store_true", help="single-precision network pass")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="SVG figure from a CSV written by another command")
    pl.add_argument("--input", required=True)
    pl.add_argument("--kind", choices=("energy", "loss", "forces", "errors"))
    pl.add_argument("--sweep", help="sweep.csv drawn as the energy-plot inset")
    pl.add_argument("--force-weight", type=float, default=1.0)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def _manifest_path(args) -> Path:
    out = Path(args.out)
    if args.command in ("pca-report", "train", "rollout", "eval"):
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    man = RunManifest(tool_version=__version__, command=["subgns", *argv])
    try:
        with man.phase("total"):
            args.func(args, man)
        man.write(_manifest_path(args))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, dataio.OracleError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, container.FormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
