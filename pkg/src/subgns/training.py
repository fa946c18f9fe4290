"""Training of the graph network on windows of reduced system states.

The loss of one window is the mean squared acceleration error over the
nodes in scope plus a weighted squared error of the total force, both in
normalized units. A batch loss is the mean of its window losses.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container, gns, pca
from .dataio import FLOW, RIGID, Dataset, WindowSample, make_windows
from .nn import NORM_EPS, AdamState, FeatureStats, NonFiniteError, NormStats, adam_step

log = logging.getLogger(__name__)

RIGID_MODES = ("scripted", "predicted")
NOISE_UNITS = ("normalized", "raw")
LOSS_COLUMNS = ("step", "acceleration", "force", "lr")


@dataclass(frozen=True)
class TrainingConfig:
    d: int = 6
    batch_size: int = 2
    max_steps: int = 20_000
    base_lr: float = 1e-4
    final_lr: float = 1e-6
    noise_std: float = 3e-4
    noise_units: str = "normalized"
    seed: int = 0
    rigid_mode: str = "scripted"
    force_weight: float = 1.0
    checkpoint_every: int = 5_000
    condition_keys: tuple = ()
    latent: int = 128
    hidden: int = 128
    n_hidden: int = 2
    mask_rigid_force: bool = False

    def __post_init__(self):
        object.__setattr__(self, "condition_keys", tuple(self.condition_keys))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.noise_units not in NOISE_UNITS:
            raise ValueError(f"noise_units must be one of {NOISE_UNITS}")
        if self.rigid_mode not in RIGID_MODES:
            raise ValueError(f"rigid_mode must be one of {RIGID_MODES}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if not self.base_lr >= self.final_lr > 0:
            raise ValueError("need base_lr >= final_lr > 0")

    @property
    def rigid_scripted(self) -> bool:
        return self.rigid_mode == "scripted"

    def gns_config(self) -> gns.GnsConfig:
        return gns.GnsConfig(d=self.d, latent=self.latent, hidden=self.hidden,
                             n_hidden=self.n_hidden, condition_keys=self.condition_keys,
                             mask_rigid_force=self.mask_rigid_force)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["condition_keys"] = list(self.condition_keys)
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**values)

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainingConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(types[key], val, lineno)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        return cls.from_text(Path(path).read_text())


def _parse_value(kind: str, val: str, lineno: int):
    try:
        if kind == "int":
            return int(val.replace("_", ""))
        if kind == "float":
            return float(val)
        if kind == "bool":
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return low in ("true", "1", "yes")
        if kind == "tuple":
            return tuple(s.strip() for s in val.split(",") if s.strip())
        return val
    except ValueError:
        raise ValueError(f"line {lineno}: bad {kind} value {val!r}") from None


@dataclass(frozen=True)
class LossBreakdown:
    acceleration: float
    force: float
    total: float


# ---------------------------------------------------------------------------
# targets and noise


def target_acceleration(z_prev, z_t, z_next) -> np.ndarray:
    """Second-order central difference with unit time step."""
    return np.asarray(z_prev) - 2.0 * np.asarray(z_t) + np.asarray(z_next)


def window_target(window: WindowSample) -> np.ndarray:
    p = window.positions
    return target_acceleration(p[-3], p[-2], p[-1])


def noise_offsets(d: int, n_nodes: int, std: float, rng: np.random.Generator) -> np.ndarray:
    """Random-walk position offsets for ``d`` history frames, shape ``(d, N, 3)``.

    Each of the ``d - 1`` velocities gets an increment with standard
    deviation ``std / sqrt(d - 1)``; increments accumulate into a velocity
    walk whose last value has variance ``std**2``, and positions integrate
    the velocity walk from a zero offset on the oldest frame.
    """
    step = std / math.sqrt(d - 1)
    dv = rng.normal(0.0, step, size=(d - 1, n_nodes, 3))
    vel = np.cumsum(dv, axis=0)
    out = np.zeros((d, n_nodes, 3))
    out[1:] = np.cumsum(vel, axis=0)
    return out


def inject_noise(window: WindowSample, std: float, rng: np.random.Generator,
                 scale: np.ndarray | None = None) -> WindowSample:
    """Copy of ``window`` with random-walk noise on its input frames.

    The label frame is left clean, so the target acceleration computed from
    the noisy frames points back to the true next state. Scripted rigid
    nodes are not perturbed. ``scale`` (broadcastable to ``(N, 3)``)
    multiplies the offsets, e.g. to express ``std`` in normalized velocity
    units.
    """
    if std < 0:
        raise ValueError("std must be >= 0")
    if std == 0:
        return window
    d = window.d
    offs = noise_offsets(d, window.n_nodes, std, rng)
    if scale is not None:
        offs *= scale
    if window.rigid_scripted:
        offs[:, window.node_types == RIGID] = 0.0
    pos = np.array(window.positions, copy=True)
    pos[:d] += offs
    pos.setflags(write=False)
    return dataclasses.replace(window, positions=pos)


# ---------------------------------------------------------------------------
# normalization statistics


class _Moments:
    """Running column sums for a mean / variance, shifted for stability."""

    def __init__(self):
        self.n = 0
        self.shift = None
        self.s = None
        self.ss = None

    def add(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, np.shape(x)[-1])
        if x.shape[0] == 0:
            return
        if self.shift is None:
            self.shift = x.mean(axis=0)
            self.s = np.zeros(x.shape[1])
            self.ss = np.zeros(x.shape[1])
        y = x - self.shift
        self.n += x.shape[0]
        self.s += y.sum(axis=0)
        self.ss += (y * y).sum(axis=0)

    def stats(self, extra_std=0.0, extra_rel=0.0) -> FeatureStats | None:
        if self.n == 0:
            return None
        mu = self.s / self.n
        var = np.maximum(self.ss / self.n - mu * mu, 0.0)
        std = np.sqrt(var * (1.0 + extra_rel**2) + extra_std**2)
        return FeatureStats(self.shift + mu, np.maximum(std, NORM_EPS))


def fit_norm_stats(windows: list[WindowSample], config: TrainingConfig,
                   dataset_name: str = "") -> NormStats:
    """Feature statistics from clean training windows.

    Velocities and accelerations are pooled per node type over all nodes
    and history steps (three columns). Flow-node statistics have the
    injected noise scale added in quadrature. Edge features, total force
    and condition values are pooled over everything.
    """
    if not windows:
        raise ValueError("no training windows")
    d = config.d
    mom = {k: _Moments() for k in ("velocity/flow", "velocity/rigid", "accel/flow",
                                   "accel/rigid", "edge", "force", "conditions")}
    senders, receivers = gns.complete_edges(windows[0].n_nodes)
    edge_norm = config.gns_config().edge_norm
    for w in windows:
        types = w.node_types
        vel = gns.raw_node_velocities(w.positions[:d])
        acc = window_target(w)
        for t, suffix in ((FLOW, "flow"), (RIGID, "rigid")):
            sel = types == t
            mom["velocity/" + suffix].add(vel[sel].reshape(-1, 3))
            mom["accel/" + suffix].add(acc[sel])
        mom["force"].add(w.target_force[None, :])
        if config.condition_keys:
            mom["conditions"].add(
                np.array([[float(w.conditions.get(k, 0.0)) for k in config.condition_keys]]))
        mom["edge"].add(gns.raw_edge_features(w.positions[d - 1], senders, receivers,
                                              edge_norm))
    kinds = ("flow",) if config.rigid_scripted else ("flow", "rigid")
    entries = {k: s for k, s in ((k, m.stats()) for k, m in mom.items()) if s is not None}
    ns = config.noise_std
    for kind in kinds:
        vk, ak = "velocity/" + kind, "accel/" + kind
        if vk not in entries:
            continue
        if config.noise_units == "raw":
            entries[vk] = mom[vk].stats(extra_std=ns)
            entries[ak] = mom[ak].stats(extra_std=ns)
        else:
            # offsets scale with the clean velocity std per column
            entries[ak] = mom[ak].stats(extra_std=ns * entries[vk].std)
            entries[vk] = mom[vk].stats(extra_rel=ns)
    return NormStats(entries, source="train", dataset=dataset_name)


# ---------------------------------------------------------------------------
# loss


def noise_scale(stats: NormStats, node_types: np.ndarray, config: TrainingConfig):
    """Per-node, per-axis multiplier of the injected noise, or ``None`` when
    ``noise_std`` is already in raw subspace units."""
    if config.noise_units == "raw":
        return None
    out = np.ones((node_types.shape[0], 3))
    for t, suffix in ((FLOW, "flow"), (RIGID, "rigid")):
        fs = stats.entries.get("velocity/" + suffix)
        if fs is not None:
            out[node_types == t] = fs.std
    return out


def _scope(types: np.ndarray, rigid_scripted: bool) -> np.ndarray:
    if rigid_scripted:
        return types == FLOW
    return np.ones(types.shape[0], dtype=bool)


def _batch_targets(model: gns.GnsModel, windows: list[WindowSample]):
    graphs, accs, forces, scopes = [], [], [], []
    for w in windows:
        graphs.append(gns.window_graph(w, model))
        accs.append(gns.normalize_acceleration(window_target(w), w.node_types, model.stats))
        forces.append(gns.normalize_force(w.target_force, model.stats))
        scopes.append(_scope(w.node_types, w.rigid_scripted))
    return (gns.batch_graphs(graphs), np.vstack(accs), np.vstack(forces),
            np.concatenate(scopes))


def batch_loss_and_grads(model: gns.GnsModel, windows: list[WindowSample],
                         force_weight: float = 1.0, need_grads: bool = True):
    """Batch-mean loss and (optionally) its gradient w.r.t. all parameters."""
    graph, acc_t, force_t, scope = _batch_targets(model, windows)
    B = len(windows)
    if need_grads:
        out, cache = gns.forward(model, graph, cache=True)
    else:
        out = gns.forward(model, graph)
    gi = graph.graph_index
    n_scope = np.bincount(gi, weights=scope.astype(np.float64), minlength=B)
    n_scope = np.maximum(n_scope, 1.0)
    r_acc = (out.acceleration - acc_t) * scope[:, None]
    per_acc = np.bincount(gi, weights=(r_acc**2).sum(axis=1), minlength=B) / n_scope
    r_f = out.total_force - force_t
    per_force = (r_f**2).sum(axis=1)
    acc_term = float(per_acc.mean())
    force_term = float(per_force.mean())
    bd = LossBreakdown(acc_term, force_term, acc_term + force_weight * force_term)
    if not need_grads:
        return bd, None
    d_acc = 2.0 * r_acc / (n_scope[gi][:, None] * B)
    d_total = 2.0 * force_weight * r_f / B
    return bd, gns.backward(model, cache, d_acc, d_total)


def loss(window: WindowSample, model: gns.GnsModel, force_weight: float = 1.0) -> LossBreakdown:
    """Loss of a single window."""
    return batch_loss_and_grads(model, [window], force_weight, need_grads=False)[0]


def reference_loss(window: WindowSample, model: gns.GnsModel,
                   force_weight: float = 1.0) -> LossBreakdown:
    """Same quantity as :func:`loss`, evaluated node by node through the
    literal encode / process / decode path."""
    graph = gns.window_graph(window, model)
    out = gns.decode(gns.process(gns.encode(graph, model), model), model)
    target = gns.normalize_acceleration(window_target(window), window.node_types, model.stats)
    scope = _scope(window.node_types, window.rigid_scripted)
    acc = 0.0
    count = 0
    for i in range(graph.n_nodes):
        if scope[i]:
            acc += float(np.dot(out.acceleration[i] - target[i], out.acceleration[i] - target[i]))
            count += 1
    acc /= max(count, 1)
    f_t = gns.normalize_force(window.target_force, model.stats)
    df = out.total_force[0] - f_t
    force = float(np.dot(df, df))
    return LossBreakdown(acc, force, acc + force_weight * force)


# ---------------------------------------------------------------------------
# data preparation


def training_windows(dataset: Dataset, basis: pca.PcaBasis, config: TrainingConfig,
                     split: str = "train") -> list[WindowSample]:
    """Windows of reduced states ``Z = [Sp R]`` from one split."""
    out = []
    for ex in dataset.subset(split):
        red = pca.reduce_example(ex, basis)
        out.extend(make_windows(red["Z"], ex.F, config.d, n_flow=basis.r,
                                rigid_scripted=config.rigid_scripted,
                                conditions=ex.conditions))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: gns.GnsModel, adam: AdamState, config: TrainingConfig,
                    step: int, status: str = "ok", basis: pca.PcaBasis | None = None) -> str:
    """Parameters, statistics, optimizer state and (optionally) the PCA
    basis the model was trained with."""
    blocks = {}
    if basis is not None:
        if model.basis_fingerprint and basis.fingerprint() != model.basis_fingerprint:
            raise ValueError("basis does not match the model's basis fingerprint")
        blocks["basis/modes"] = basis.U
        blocks["basis/mean_row"] = basis.mean_row
        blocks["basis/eigenvalues"] = basis.eigenvalues
    for k, v in model.params().items():
        blocks[f"param/{k}"] = v
    if model.stats is not None:
        for k, v in model.stats.arrays().items():
            blocks[f"stats/{k}"] = v
    for k, v in adam.m.items():
        blocks[f"adam_m/{k}"] = v
    for k, v in adam.v.items():
        blocks[f"adam_v/{k}"] = v
    meta = {
        "kind": "checkpoint",
        "step": int(step),
        "status": status,
        "training": config.to_dict(),
        "basis_fingerprint": model.basis_fingerprint,
        "basis_rows": basis.rows if basis is not None else None,
        "stats_source": model.stats.source if model.stats is not None else None,
        "stats_dataset": model.stats.dataset if model.stats is not None else None,
        "adam": {"step": adam.step, "base_lr": adam.base_lr, "final_lr": adam.final_lr,
                 "max_steps": adam.max_steps, "beta1": adam.beta1, "beta2": adam.beta2,
                 "eps": adam.eps},
    }
    return container.write(path, meta, blocks)


@dataclass
class Checkpoint:
    model: gns.GnsModel
    adam: AdamState
    config: TrainingConfig
    step: int
    status: str
    meta: dict
    basis: pca.PcaBasis | None = None


def load_checkpoint(path) -> Checkpoint:
    meta, blocks = container.read(path)
    if meta.get("kind") != "checkpoint":
        raise container.FormatError(f"{path} is not a checkpoint (kind={meta.get('kind')!r})")
    cfg = TrainingConfig.from_dict(meta["training"])

    def group(prefix):
        n = len(prefix)
        return {k[n:]: v for k, v in blocks.items() if k.startswith(prefix)}

    stats_arrays = group("stats/")
    stats = (NormStats.from_arrays(stats_arrays, meta.get("stats_source") or "train",
                                   meta.get("stats_dataset") or "")
             if stats_arrays else None)
    model = gns.init_model(cfg.gns_config(), 0, stats, meta.get("basis_fingerprint", ""))
    model = model.with_params(group("param/"))
    a = meta["adam"]
    adam = AdamState(group("adam_m/"), group("adam_v/"), a["step"], a["base_lr"],
                     a["final_lr"], a["max_steps"], a["beta1"], a["beta2"], a["eps"])
    basis = None
    if "basis/modes" in blocks:
        modes = blocks["basis/modes"]
        basis = pca.PcaBasis(modes, blocks["basis/mean_row"], blocks["basis/eigenvalues"],
                             modes.shape[1], meta.get("basis_rows") or 0)
        if model.basis_fingerprint and basis.fingerprint() != model.basis_fingerprint:
            raise container.FormatError(f"{path}: embedded basis does not match its fingerprint")
    return Checkpoint(model, adam, cfg, int(meta["step"]), meta.get("status", "ok"), meta,
                      basis)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: gns.GnsModel
    history: np.ndarray  # (steps, 4): step, acceleration, force, lr
    adam: AdamState
    status: str = "ok"
    checkpoints: list = field(default_factory=list)
    force_weight: float = 1.0

    @property
    def total_loss(self) -> np.ndarray:
        return self.history[:, 1] + self.force_weight * self.history[:, 2]


def write_loss_csv(path, history: np.ndarray) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_COLUMNS)
    for row in history:
        w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])
    container.atomic_write_text(path, buf.getvalue())


def read_loss_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != LOSS_COLUMNS:
        raise ValueError(f"{path}: expected header {','.join(LOSS_COLUMNS)}")
    try:
        data = [[float(x) for x in r] for r in rows[1:] if r]
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if any(len(r) != len(LOSS_COLUMNS) for r in data):
        raise ValueError(f"{path}: wrong number of columns")
    return np.array(data, dtype=np.float64).reshape(-1, len(LOSS_COLUMNS))


class WindowSampler:
    """Uniform sampling without replacement within an epoch; a fresh
    permutation starts each epoch."""

    def __init__(self, n: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("no windows to sample")
        self.n = n
        self.rng = rng
        self.order = np.empty(0, dtype=np.int64)
        self.pos = 0

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if self.pos >= self.order.size:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out


def train(dataset: Dataset, basis: pca.PcaBasis, config: TrainingConfig,
          out_dir=None, windows: list[WindowSample] | None = None,
          log_every: int = 0, steps: int | None = None) -> TrainResult:
    """Fit a model with Adam on the training split.

    ``windows`` overrides the windows derived from ``dataset`` (used for
    overfitting tests). ``steps`` stops early without changing the
    learning-rate schedule, which is always laid out over
    ``config.max_steps``. With ``out_dir``, checkpoints ``ckpt_<step>.sgns``
    and ``final.sgns`` plus ``loss.csv`` are written there. A non-finite
    loss or update stops training; the last finite parameters are kept and
    checkpointed with status ``diverged``.
    """
    if windows is None:
        if not dataset.indices("train"):
            raise ValueError("dataset has no training split")
        windows = training_windows(dataset, basis, config)
    name = dataset.metadata.get("name", "") if dataset is not None else ""
    stats = fit_norm_stats(windows, config, name)
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_seed = int(seeds[0].generate_state(1)[0])
    model = gns.init_model(config.gns_config(), init_seed, stats,
                           basis.fingerprint() if basis is not None else "")
    sampler = WindowSampler(len(windows), np.random.default_rng(seeds[1]))
    noise_rng = np.random.default_rng(seeds[2])
    scales = {}
    adam = AdamState(base_lr=config.base_lr, final_lr=config.final_lr,
                     max_steps=config.max_steps)
    params = model.params()
    n_steps = config.max_steps if steps is None else min(int(steps), config.max_steps)
    history = np.zeros((n_steps, 4))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    checkpoints = []
    status = "ok"
    for step in range(n_steps):
        batch = []
        for i in sampler.take(config.batch_size):
            w = windows[i]
            key = w.node_types.tobytes()
            if key not in scales:
                scales[key] = noise_scale(stats, w.node_types, config)
            batch.append(inject_noise(w, config.noise_std, noise_rng, scales[key]))
        lr = adam.rate()
        bd, grads = batch_loss_and_grads(model, batch, config.force_weight)
        history[step] = (step, bd.acceleration, bd.force, lr)
        try:
            if not math.isfinite(bd.total):
                raise NonFiniteError("non-finite loss")
            params = adam_step(adam, params, grads)
        except NonFiniteError as exc:
            log.error("training diverged at step %d: %s", step, exc)
            status = "diverged"
            history = history[: step + 1]
            break
        model = model.with_params(params)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.6g (acc %.6g, force %.6g) lr %.3g", step, bd.total,
                     bd.acceleration, bd.force, lr)
        done = step + 1
        if out is not None and config.checkpoint_every and done % config.checkpoint_every == 0 \
                and done < n_steps:
            p = out / f"ckpt_{done:08d}.sgns"
            save_checkpoint(p, model, adam, config, done, basis=basis)
            write_loss_csv(out / "loss.csv", history[:done])
            checkpoints.append(str(p))
    if out is not None:
        p = out / "final.sgns"
        save_checkpoint(p, model, adam, config, adam.step, status, basis=basis)
        write_loss_csv(out / "loss.csv", history)
        checkpoints.append(str(p))
    return TrainResult(model, history, adam, status, checkpoints, config.force_weight)


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < window:
        return np.array([x.mean()]) if x.size else x
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[window:] - c[:-window]) / window


def env_threads(default: int = 1) -> int:
    """Worker cap from ``SGNS_THREADS``."""
    try:
        return max(1, int(os.environ.get("SGNS_THREADS", default)))
    except ValueError:
        return default
