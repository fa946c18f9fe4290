"""Closed-loop prediction with a trained model and evaluation against
reference trajectories."""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import container, gns, pca
from .dataio import RIGID, TrajectoryExample, build_state_matrix, node_types, state_frames
from .training import env_threads

AXES = {"x": 0, "y": 1, "z": 2}
MPE_EPS = 1e-9


class BasisMismatchError(ValueError):
    """The basis differs from the one the model was trained with."""


@dataclass
class RolloutResult:
    """Predicted trajectory of one rollout.

    ``Z_hat`` holds the ``d`` initial frames followed by the predicted ones,
    as a ``(3m, r + n_r)`` state matrix. ``F_hat[k]`` is the force at frame
    ``d + k`` of the rollout (the frame produced by step ``k``).
    """

    Z_hat: np.ndarray
    S_hat: np.ndarray
    F_hat: np.ndarray
    r: int
    d: int
    start: int = 0
    failed_at: int | None = None
    metrics: dict = field(default_factory=dict)

    @property
    def Sp_hat(self) -> np.ndarray:
        return self.Z_hat[:, : self.r]

    @property
    def R_hat(self) -> np.ndarray:
        return self.Z_hat[:, self.r :]

    @property
    def frames(self) -> int:
        return self.Z_hat.shape[0] // 3

    @property
    def horizon(self) -> int:
        return self.frames - self.d


def check_basis(model: gns.GnsModel, basis: pca.PcaBasis) -> None:
    fp = basis.fingerprint()
    if model.basis_fingerprint and model.basis_fingerprint != fp:
        raise BasisMismatchError(
            f"basis fingerprint {fp[:12]} does not match the model's "
            f"{model.basis_fingerprint[:12]}")


def rollout(model: gns.GnsModel, basis: pca.PcaBasis, initial: np.ndarray, horizon: int,
            rigid_series: np.ndarray | None = None, conditions: dict | None = None,
            dtype=np.float64, start: int = 0) -> RolloutResult:
    """Step the model ``horizon`` times from ``d`` initial frames.

    ``initial`` is ``(d, r + n_r, 3)`` node positions (flow modes first).
    With ``rigid_series`` of shape ``(d + horizon, n_r, 3)`` the rigid nodes
    follow that script; without it their motion is predicted too.
    """
    check_basis(model, basis)
    d = model.config.d
    initial = np.asarray(initial, dtype=np.float64)
    r = basis.r
    if initial.ndim != 3 or initial.shape[0] != d or initial.shape[2] != 3:
        raise ValueError(f"initial must be ({d}, N, 3), got {initial.shape}")
    if initial.shape[1] < r:
        raise ValueError(f"initial has {initial.shape[1]} nodes, fewer than r={r}")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    N = initial.shape[1]
    n_r = N - r
    types = node_types(r, n_r)
    scripted = rigid_series is not None
    if scripted:
        rigid_series = np.asarray(rigid_series, dtype=np.float64)
        if rigid_series.shape != (d + horizon, n_r, 3):
            raise ValueError(f"rigid_series must be ({d + horizon}, {n_r}, 3), "
                             f"got {rigid_series.shape}")
    step = gns.FastStep(model, dtype=dtype)
    edges = gns.complete_edges(N)
    frames = np.empty((d + horizon, N, 3))
    frames[:d] = initial
    forces = np.empty((horizon, 3))
    failed_at = None
    done = 0
    for k in range(horizon):
        hist = frames[k : k + d]
        graph = gns.build_graph(hist, types, model.config, model.stats, conditions, edges)
        out = step(graph)
        acc = gns.denormalize_acceleration(out.acceleration, types, model.stats)
        nxt = gns.integrate(hist[-1], hist[-2], acc)
        if scripted:
            nxt[r:] = rigid_series[d + k]
        force = gns.denormalize_force(out.total_force[0], model.stats)
        if not (np.all(np.isfinite(nxt)) and np.all(np.isfinite(force))):
            failed_at = start + d + k
            break
        frames[d + k] = nxt
        forces[k] = force
        done = k + 1
    frames = frames[: d + done]
    Z_hat = build_state_matrix(frames)
    S_hat = pca.inverse_transform(Z_hat[:, :r], basis)
    return RolloutResult(Z_hat, S_hat, forces[:done], r, d, start, failed_at)


def rollout_example(model: gns.GnsModel, basis: pca.PcaBasis, example: TrajectoryExample,
                    horizon: int | None = None, start: int = 0, rigid: str = "scripted",
                    dtype=np.float64) -> RolloutResult:
    """Roll out from frames ``start .. start+d-1`` of ``example`` and score
    the prediction against it."""
    if rigid not in ("scripted", "predicted"):
        raise ValueError("rigid must be 'scripted' or 'predicted'")
    d = model.config.d
    red = pca.reduce_example(example, basis)
    Z = state_frames(red["Z"])
    m = Z.shape[0]
    if horizon is None:
        horizon = m - start - d
    if start < 0 or start + d + horizon > m:
        raise ValueError(f"start={start}, horizon={horizon} exceed {m} frames")
    R = Z[start : start + d + horizon, basis.r :] if rigid == "scripted" else None
    res = rollout(model, basis, Z[start : start + d], horizon, R, example.conditions, dtype,
                  start)
    res.metrics = score(res, example, basis)
    return res


# ---------------------------------------------------------------------------
# metrics


def position_mse(S_hat: np.ndarray, S_ref: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-particle mean over frames of squared 3-D error, and its mean."""
    per = pca.position_error(S_hat, S_ref)
    return per, float(per.mean())


def error_decomposition(S_pred_sub: np.ndarray, S_ref: np.ndarray,
                        basis: pca.PcaBasis) -> dict[str, np.ndarray]:
    """Per-particle PCA and GNS errors.

    PCA error compares the reference to its reduce / map-back round trip.
    GNS error compares the mapped-back prediction ``S_pred_sub`` (reduced
    states, ``(3m, r)``) with that round trip.
    """
    mapped = pca.inverse_transform(pca.transform(S_ref, basis), basis)
    return {
        "pca": pca.position_error(mapped, S_ref),
        "gns": pca.position_error(pca.inverse_transform(S_pred_sub, basis), mapped),
    }


def subspace_mse(Sp_hat: np.ndarray, Sp_ref: np.ndarray, n: int = 1) -> np.ndarray:
    """Per-frame subspace position error in box units.

    The squared 3-D error summed over modes is divided by the particle
    count ``n``. Since the modes are orthonormal this equals the mean
    squared particle displacement the subspace error causes after mapping
    back, independent of how many particles the basis spans.
    """
    a = state_frames(np.asarray(Sp_hat, dtype=np.float64))
    b = state_frames(np.asarray(Sp_ref, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if n < 1:
        raise ValueError("n must be >= 1")
    return ((a - b) ** 2).sum(axis=(1, 2)) / n


def force_mpe(F_hat: np.ndarray, F_ref: np.ndarray, axis) -> float:
    """Signed mean percentage error on one axis.

    Mean over frames of ``F_hat - F_ref`` divided by the mean reference
    magnitude on that axis, times 100. Returns NaN (with a warning) when
    the reference magnitude is near zero.
    """
    ax = AXES[axis] if isinstance(axis, str) else int(axis)
    F_hat = np.asarray(F_hat, dtype=np.float64)
    F_ref = np.asarray(F_ref, dtype=np.float64)
    if F_hat.shape != F_ref.shape:
        raise ValueError(f"shape mismatch {F_hat.shape} vs {F_ref.shape}")
    if F_hat.shape[0] == 0:
        return math.nan
    denom = float(np.mean(np.abs(F_ref[:, ax])))
    scale = float(np.max(np.abs(F_ref))) if F_ref.size else 0.0
    if denom <= MPE_EPS * max(scale, 1.0):
        warnings.warn(f"reference force on axis {axis} is ~0; MPE undefined", RuntimeWarning)
        return math.nan
    return float(100.0 * np.mean(F_hat[:, ax] - F_ref[:, ax]) / denom)


def score(res: RolloutResult, example: TrajectoryExample, basis: pca.PcaBasis) -> dict:
    lo, hi = res.start, res.start + res.frames
    S_ref = example.S[3 * lo : 3 * hi]
    Sp_ref = pca.transform(S_ref, basis)
    per, mean = position_mse(res.S_hat, S_ref)
    dec = error_decomposition(res.Sp_hat, S_ref, basis)
    sub = subspace_mse(res.Sp_hat, Sp_ref, basis.n)
    F_ref = example.F[lo + res.d : hi]
    return {
        "position_mse": mean,
        "position_mse_per_particle": per,
        "pca_error": dec["pca"],
        "gns_error": dec["gns"],
        "subspace_mse_per_frame": sub,
        "subspace_mse": float(sub[res.d :].mean()) if res.horizon else 0.0,
        "force_ref": F_ref,
        "force_mpe": {a: force_mpe(res.F_hat, F_ref, a) for a in AXES},
    }


def teacher_forced_errors(model: gns.GnsModel, basis: pca.PcaBasis,
                          example: TrajectoryExample, rigid: str = "scripted") -> np.ndarray:
    """One-step errors with every input window taken from the reference.

    Row ``k`` holds the acceleration term and force term (normalized
    units, as in the training loss) for the window starting at frame ``k``.
    """
    from .dataio import make_windows
    from .training import batch_loss_and_grads

    check_basis(model, basis)
    red = pca.reduce_example(example, basis)
    wins = make_windows(red["Z"], example.F, model.config.d, n_flow=basis.r,
                        rigid_scripted=rigid == "scripted", conditions=example.conditions)
    out = np.empty((len(wins), 2))
    for k, w in enumerate(wins):
        bd, _ = batch_loss_and_grads(model, [w], need_grads=False)
        out[k] = bd.acceleration, bd.force
    return out


def one_step_errors(model: gns.GnsModel, basis: pca.PcaBasis, example: TrajectoryExample,
                    rigid: str = "scripted") -> np.ndarray:
    """Teacher-forced one-step errors computed by stepping the rollout
    machinery with the reference frame substituted after every step."""
    check_basis(model, basis)
    d = model.config.d
    r = basis.r
    Z = state_frames(pca.reduce_example(example, basis)["Z"])
    N = Z.shape[1]
    types = node_types(r, N - r)
    scope = types != RIGID if rigid == "scripted" else np.ones(N, dtype=bool)
    step = gns.FastStep(model)
    edges = gns.complete_edges(N)
    out = np.empty((Z.shape[0] - d, 2))
    for k in range(Z.shape[0] - d):
        hist = Z[k : k + d]
        graph = gns.build_graph(hist, types, model.config, model.stats, example.conditions,
                                edges)
        dec = step(graph)
        acc = gns.denormalize_acceleration(dec.acceleration, types, model.stats)
        nxt = gns.integrate(hist[-1], hist[-2], acc)
        # error of the predicted frame, expressed as a normalized acceleration error
        true_acc = Z[k + d] - 2 * hist[-1] + hist[-2]
        e = gns.normalize_acceleration(nxt - hist[-1] - (hist[-1] - hist[-2]), types,
                                       model.stats) - gns.normalize_acceleration(
            true_acc, types, model.stats)
        f = dec.total_force[0] - gns.normalize_force(example.F[k + d], model.stats)
        out[k] = (e[scope] ** 2).sum() / max(scope.sum(), 1), float(f @ f)
    return out


# ---------------------------------------------------------------------------
# evaluation over a split


def evaluate(model: gns.GnsModel, basis: pca.PcaBasis, examples, horizon: int | None = None,
             rigid: str = "scripted", threads: int | None = None,
             dtype=np.float64) -> list[RolloutResult]:
    """Roll out every example; runs up to ``threads`` (default
    ``SGNS_THREADS``) rollouts at once."""
    threads = env_threads() if threads is None else max(1, int(threads))
    exs = list(examples)

    def one(ex):
        h = horizon
        if h is not None:
            h = min(h, ex.m - model.config.d)
        return rollout_example(model, basis, ex, h, rigid=rigid, dtype=dtype)

    if threads == 1 or len(exs) <= 1:
        return [one(ex) for ex in exs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, exs))


# force axis reported as the headline MPE: forward for the blade, vertical
# for the wheel
HEADLINE_AXIS = {"excavation": "x", "wheel": "z"}


def headline_mpe(metrics: dict, scenario: str) -> float:
    """Force MPE on the scenario's reported axis."""
    if scenario not in HEADLINE_AXIS:
        raise ValueError(f"unknown scenario {scenario!r}")
    return metrics["force_mpe"][HEADLINE_AXIS[scenario]]


TABLE_COLUMNS = ("example", "position_mse", "subspace_mse", "mpe_x", "mpe_y", "mpe_z",
                 "failed_at")


def table_rows(results: list[RolloutResult], labels=None) -> list[dict]:
    labels = labels if labels is not None else [str(i) for i in range(len(results))]
    rows = []
    for lab, res in zip(labels, results):
        m = res.metrics
        rows.append({
            "example": lab,
            "position_mse": m["position_mse"],
            "subspace_mse": m["subspace_mse"],
            "mpe_x": m["force_mpe"]["x"],
            "mpe_y": m["force_mpe"]["y"],
            "mpe_z": m["force_mpe"]["z"],
            "failed_at": "" if res.failed_at is None else res.failed_at,
        })
    return rows


def format_table(rows: list[dict]) -> str:
    """CSV with one row per example and a final ``mean`` row of the
    position errors."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)

    def fmt(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else repr(v)
        return str(v)

    for row in rows:
        w.writerow([fmt(row[c]) for c in TABLE_COLUMNS])
    if rows:
        mean = {c: "" for c in TABLE_COLUMNS}
        mean["example"] = "mean"
        mean["position_mse"] = repr(float(np.mean([r["position_mse"] for r in rows])))
        mean["subspace_mse"] = repr(float(np.mean([r["subspace_mse"] for r in rows])))
        w.writerow([mean[c] for c in TABLE_COLUMNS])
    return buf.getvalue()


def save_result(path, res: RolloutResult, extra_meta: dict | None = None) -> str:
    meta = {"kind": "rollout", "r": res.r, "d": res.d, "start": res.start,
            "failed_at": res.failed_at}
    blocks = {"Z_hat": res.Z_hat, "S_hat": res.S_hat, "F_hat": res.F_hat}
    if res.metrics:
        meta["position_mse"] = res.metrics["position_mse"]
        meta["subspace_mse"] = res.metrics["subspace_mse"]
        meta["force_mpe"] = res.metrics["force_mpe"]
        for k in ("position_mse_per_particle", "pca_error", "gns_error",
                  "subspace_mse_per_frame", "force_ref"):
            blocks[k] = res.metrics[k]
    meta.update(extra_meta or {})
    return container.write(path, meta, blocks)


def load_result(path) -> RolloutResult:
    meta, blocks = container.read(path)
    if meta.get("kind") != "rollout":
        raise container.FormatError(f"{path} is not a rollout file (kind={meta.get('kind')!r})")
    metrics = {}
    if "position_mse" in meta:
        metrics = {k: meta[k] for k in ("position_mse", "subspace_mse", "force_mpe")}
        for k in ("position_mse_per_particle", "pca_error", "gns_error",
                  "subspace_mse_per_frame", "force_ref"):
            metrics[k] = blocks[k]
    return RolloutResult(blocks["Z_hat"], blocks["S_hat"], blocks["F_hat"], meta["r"],
                         meta["d"], meta["start"], meta["failed_at"], metrics)
