"""Trajectory datasets: the reference particle simulator, matrix layout,
train/test splitting, windowing and the on-disk format.

State matrices follow the column-per-particle layout: for ``m`` frames and
``n`` particles the matrix has shape ``(3m, n)`` and row block ``t`` holds the
``x, y, z`` coordinates of every particle at frame ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import container, kernels

FLOW = 0
RIGID = 1

DEFAULT_DT = 1.0 / 60.0
DEFAULT_HISTORY = 6

# Variable grids of the two reference datasets (units as labelled).
EXCAVATION_VARIABLES = {
    "angle": (0.0, 4.0, 10.0, 31.0, 45.0),  # deg
    "depth": (2.0, 4.0, 5.0, 8.0, 10.0),  # cm
    "speed": (1.0, 4.0, 8.0, 10.0, 15.0),  # cm/s
    "motion": (1.0, 2.0),
}
WHEEL_VARIABLES = {
    "gravity": (1.62, 3.72, 9.81),  # m/s^2
    "friction": (30.0, 37.0, 43.0),  # deg
    "load": (100.0, 164.0, 225.0),  # N
    "diameter": (5.0, 15.0, 30.0),  # cm
    "slip": (20.0, 40.0, 70.0),  # %
}


class OracleError(RuntimeError):
    """The reference simulator produced a non-finite state or got no particles."""

    def __init__(self, message, frame=None, particle=None):
        super().__init__(message)
        self.frame = frame
        self.particle = particle


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrajectoryExample:
    """One simulated episode.

    ``S`` is ``(3m, n)`` flow positions, ``R`` is ``(3m, n_r)`` rigid
    positions, ``F`` is ``(m, 3)`` total interaction force on the rigid body.
    """

    S: np.ndarray
    R: np.ndarray
    F: np.ndarray
    conditions: dict = field(default_factory=dict)
    dt_physical: float = DEFAULT_DT

    def __post_init__(self):
        object.__setattr__(self, "S", _frozen(self.S))
        object.__setattr__(self, "R", _frozen(self.R))
        object.__setattr__(self, "F", _frozen(self.F))
        object.__setattr__(self, "conditions", {k: float(v) for k, v in self.conditions.items()})
        S, R, F = self.S, self.R, self.F
        if S.ndim != 2 or R.ndim != 2 or F.ndim != 2 or F.shape[1] != 3:
            raise ValueError("S, R must be 2-D and F must be (m, 3)")
        if S.shape[0] % 3 or R.shape[0] != S.shape[0] or F.shape[0] * 3 != S.shape[0]:
            raise ValueError(
                f"frame counts disagree: S {S.shape}, R {R.shape}, F {F.shape}"
            )
        if S.shape[1] < 1 or R.shape[1] < 1:
            raise ValueError("need at least one flow and one rigid particle")
        for name, a in (("S", S), ("R", R), ("F", F)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def m(self) -> int:
        return self.F.shape[0]

    @property
    def n(self) -> int:
        return self.S.shape[1]

    @property
    def n_r(self) -> int:
        return self.R.shape[1]


@dataclass(frozen=True)
class Dataset:
    examples: tuple
    split: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "split", tuple(self.split))
        if len(self.split) != len(self.examples):
            raise ValueError("split must tag every example")
        bad = set(self.split) - {"train", "test"}
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")
        if self.examples:
            e0 = self.examples[0]
            for e in self.examples:
                if (e.n, e.n_r, e.m) != (e0.n, e0.n_r, e0.m):
                    raise ValueError("all examples must share n, n_r and m")

    def indices(self, tag: str) -> list[int]:
        return [i for i, t in enumerate(self.split) if t == tag]

    def subset(self, tag: str) -> list[TrajectoryExample]:
        return [self.examples[i] for i in self.indices(tag)]

    @property
    def train(self) -> list[TrajectoryExample]:
        return self.subset("train")

    @property
    def test(self) -> list[TrajectoryExample]:
        return self.subset("test")


@dataclass(frozen=True)
class WindowSample:
    """``d + 1`` consecutive frames of node positions, shape ``(d+1, N, 3)``.

    The last frame is the label; ``target_force`` is the force at that frame.
    """

    positions: np.ndarray
    node_types: np.ndarray
    target_force: np.ndarray
    rigid_scripted: bool = True
    start: int = 0
    conditions: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.positions.shape[0] - 1

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[1]


# ---------------------------------------------------------------------------
# state matrix layout


def build_state_matrix(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Stack per-frame ``(n, 3)`` position arrays into a ``(3m, n)`` matrix."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not frames:
        raise ValueError("no frames given")
    n = frames[0].shape[0]
    for t, f in enumerate(frames):
        if f.ndim != 2 or f.shape != (n, 3):
            raise ValueError(f"frame {t} has shape {f.shape}, expected ({n}, 3)")
    stacked = np.stack(frames)  # (m, n, 3)
    return np.ascontiguousarray(stacked.transpose(0, 2, 1).reshape(3 * len(frames), n))


def state_frames(M: np.ndarray) -> np.ndarray:
    """Inverse of :func:`build_state_matrix`: ``(3m, n)`` -> ``(m, n, 3)``."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] % 3:
        raise ValueError(f"state matrix must be (3m, n), got {M.shape}")
    m = M.shape[0] // 3
    return np.ascontiguousarray(M.reshape(m, 3, M.shape[1]).transpose(0, 2, 1))


# ---------------------------------------------------------------------------
# reference simulator


def _smoothstep(x):
    x = min(max(x, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class RigidPath:
    """Kinematic rigid body: body-frame particle offsets moved along a path.

    ``kind`` is one of ``stationary``, ``blade`` or ``wheel``. The pose at time
    ``t`` is a translation of the reference point plus a rotation about the
    y axis.
    """

    kind: str
    offsets: tuple  # ((x, y, z), ...)
    start: tuple = (0.0, 0.0, 0.0)
    speed: float = 0.0  # forward speed along +x
    drop: float = 0.0  # vertical travel into the bed
    ramp_time: float = 0.0
    motion: int = 1
    duration: float = 1.0
    angle: float = 0.0  # static tilt, rad
    spin: float = 0.0  # angular speed about +y, rad/s
    radius: float = 0.02

    def center(self, t: float) -> np.ndarray:
        x0, y0, z0 = self.start
        if self.kind == "stationary":
            return np.array([x0, y0, z0])
        x = x0 + self.speed * t
        if self.kind == "blade":
            if self.motion == 2:
                s = math.sin(math.pi * min(max(t / self.duration, 0.0), 1.0))
            else:
                tr = max(self.ramp_time, 1e-12)
                s = _smoothstep(t / tr) if t < 0.5 * self.duration else _smoothstep(
                    (self.duration - t) / tr
                )
            return np.array([x, y0, z0 - self.drop * s])
        tr = max(self.ramp_time, 1e-12)
        return np.array([x, y0, z0 - self.drop * _smoothstep(t / tr)])

    def theta(self, t: float) -> float:
        return self.angle + self.spin * t

    def pose(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Particle positions and velocities at time ``t``."""
        offs = np.asarray(self.offsets, dtype=np.float64)
        th = self.theta(t)
        c, s = math.cos(th), math.sin(th)
        arm = np.empty_like(offs)
        arm[:, 0] = c * offs[:, 0] + s * offs[:, 2]
        arm[:, 1] = offs[:, 1]
        arm[:, 2] = c * offs[:, 2] - s * offs[:, 0]
        pos = self.center(t) + arm
        eps = 1e-6
        vel = np.empty_like(arm)
        vel[:] = (self.center(t + eps) - self.center(t - eps)) / (2 * eps)
        # spin about +y: omega x arm
        vel[:, 0] += self.spin * arm[:, 2]
        vel[:, 2] -= self.spin * arm[:, 0]
        return pos, vel


@dataclass(frozen=True)
class OracleConfig:
    """Settings of the penalty-contact particle simulator.

    Lengths are in box units (the box is one unit long in x), time in
    seconds, particle mass is 1.
    """

    grid: tuple = (25, 5, 4)
    n_particles: int | None = None  # truncate the lattice to this many
    spacing: float = 0.04
    box_lo: tuple = (0.0, 0.0, 0.0)
    box_hi: tuple = (1.0, 0.2, 0.5)
    gravity: tuple = (0.0, 0.0, -9.81)
    stiffness: float = 2.0e4
    damping: float = 40.0
    wall_stiffness: float = 2.0e4
    wall_damping: float = 40.0
    rigid_stiffness: float = 2.0e4
    rigid_damping: float = 40.0
    rigid: RigidPath | None = None
    frames: int = 120
    substeps: int = 10
    dt_physical: float = DEFAULT_DT
    settle_frames: int = 30
    jitter: float = 0.05  # fraction of spacing
    initial_positions: tuple | None = None  # overrides the lattice
    bed_seed: int | None = None  # jitter seed shared by examples; None uses the example seed
    conditions: dict = field(default_factory=dict)

    @property
    def radius(self) -> float:
        return 0.5 * self.spacing


def _lattice(cfg: OracleConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.initial_positions is not None:
        pts = np.asarray(cfg.initial_positions, dtype=np.float64).reshape(-1, 3)
        return pts.copy()
    nx, ny, nz = cfg.grid
    s = cfg.spacing
    lo = np.asarray(cfg.box_lo, dtype=np.float64)
    iz, iy, ix = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    idx = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1).astype(np.float64)
    pts = lo + s * (idx + 0.5)
    if cfg.n_particles is not None:
        pts = pts[: cfg.n_particles]
    if cfg.jitter > 0:
        if cfg.bed_seed is not None:
            rng = np.random.default_rng(cfg.bed_seed)
        pts = pts + rng.uniform(-1.0, 1.0, size=pts.shape) * cfg.jitter * s
    return pts


def _wall_forces(pos, vel, cfg: OracleConfig) -> np.ndarray:
    r = cfg.radius
    lo = np.asarray(cfg.box_lo) + r
    hi = np.asarray(cfg.box_hi) - r
    pen = np.minimum(pos - lo, 0.0)
    # no lid: only the side walls bound from above
    pen[:, :2] += np.maximum(pos[:, :2] - hi[:2], 0.0)
    return -cfg.wall_stiffness * pen - cfg.wall_damping * (pen != 0.0) * vel


def rigid_contact_forces(pos, vel, rpos, rvel, cfg: OracleConfig) -> tuple[np.ndarray, np.ndarray]:
    """Forces on flow particles from the rigid body and the reaction on the body.

    Returns ``(per_flow_particle (n, 3), total_on_rigid (3,))``.
    """
    contact = cfg.radius + (cfg.rigid.radius if cfg.rigid is not None else cfg.radius)
    f = kernels.rigid_forces(pos, vel, rpos, rvel, contact, cfg.rigid_stiffness, cfg.rigid_damping)
    return f, -f.sum(axis=0)


def _accelerations(pos, vel, rpos, rvel, cfg: OracleConfig, g):
    f_pair = kernels.pair_forces(pos, vel, cfg.radius, cfg.stiffness, cfg.damping)
    f_rigid, reaction = rigid_contact_forces(pos, vel, rpos, rvel, cfg)
    return f_pair + f_rigid + _wall_forces(pos, vel, cfg) + g, reaction


def generate_synthetic(config: OracleConfig, seed: int) -> TrajectoryExample:
    """Run the reference simulator and return one trajectory example.

    Flow particles feel pairwise linear repulsion with viscous damping,
    gravity, penalty box walls, and contact with the kinematic rigid body.
    Integration is semi-implicit Euler with ``config.substeps`` substeps per
    frame. ``F[k]`` is the reaction on the rigid body averaged over the
    substeps of the interval ending at frame ``k``.
    """
    rng = np.random.default_rng(seed)
    pos = _lattice(config, rng)
    if pos.shape[0] == 0:
        raise OracleError("empty particle set")
    vel = np.zeros_like(pos)
    rigid = config.rigid
    if rigid is None:
        far = np.asarray(config.box_hi, dtype=np.float64) + 10.0
        rigid = RigidPath(kind="stationary", offsets=((0.0, 0.0, 0.0),), start=tuple(far))
        config = replace(config, rigid=rigid)
    g = np.asarray(config.gravity, dtype=np.float64)
    h = config.dt_physical / config.substeps

    def advance(t0, hold):
        nonlocal pos, vel
        acc_force = np.zeros(3)
        for k in range(config.substeps):
            t = 0.0 if hold else t0 + k * h
            rpos, rvel = rigid.pose(t)
            if hold:
                rvel = np.zeros_like(rvel)
            acc, reaction = _accelerations(pos, vel, rpos, rvel, config, g)
            acc_force += reaction
            vel = vel + h * acc
            pos = pos + h * vel
        return acc_force / config.substeps

    def check(frame):
        bad = ~np.all(np.isfinite(pos) & np.isfinite(vel), axis=1)
        if bad.any():
            p = int(np.flatnonzero(bad)[0])
            raise OracleError(
                f"non-finite state at frame {frame}, particle {p}: unstable configuration",
                frame=frame,
                particle=p,
            )

    last_force = None
    for f in range(config.settle_frames):
        last_force = advance(0.0, hold=True)
        check(-config.settle_frames + f)
    if last_force is None:
        rpos, rvel = rigid.pose(0.0)
        _, last_force = rigid_contact_forces(pos, vel, rpos, rvel, config)

    flow_frames, rigid_frames, forces = [], [], []
    for k in range(config.frames):
        t = k * config.dt_physical
        flow_frames.append(pos.copy())
        rigid_frames.append(rigid.pose(t)[0])
        forces.append(last_force)
        if k + 1 < config.frames:
            last_force = advance(t, hold=False)
            check(k + 1)

    return TrajectoryExample(
        S=build_state_matrix(flow_frames),
        R=build_state_matrix(rigid_frames),
        F=np.asarray(forces),
        conditions=dict(config.conditions),
        dt_physical=config.dt_physical,
    )


def _bed_geometry(n_particles: int):
    """Lattice dims, spacing and box for a bed of about ``n_particles``."""
    q = (n_particles / 500.0) ** (1.0 / 3.0)
    nx, ny, nz = max(2, round(25 * q)), max(2, round(5 * q)), max(2, round(4 * q))
    while nx * ny * nz < n_particles:
        nx += 1
    spacing = 1.0 / nx
    box_hi = (1.0, ny * spacing, 0.5)
    return (nx, ny, nz), spacing, box_hi


def scenario_config(scenario: str, conditions: dict, n_particles: int = 500,
                    frames: int = 120, substeps: int | None = None,
                    settle_frames: int = 30, bed_seed: int | None = 0) -> OracleConfig:
    """Oracle settings for one excavation (blade) or wheel example.

    ``conditions`` uses the variable names of :data:`EXCAVATION_VARIABLES`
    or :data:`WHEEL_VARIABLES`; lengths in cm, speeds in cm/s, angles in deg.
    """
    grid, s, box_hi = _bed_geometry(n_particles)
    nz = grid[2]
    # keep relative overlap under self-weight close to the 500-particle bed
    kscale = (nz / 4.0) * (0.04 / s)
    if substeps is None:
        substeps = int(math.ceil(20 * math.sqrt(kscale)))
    width = box_hi[1]
    bed_top = nz * s
    duration = (frames - 1) * DEFAULT_DT
    cond = {k: float(v) for k, v in conditions.items()}
    damping_scale = 1.0

    if scenario == "excavation":
        gravity = cond.setdefault("gravity", 9.81)
        ny_b, nz_b = 5, 4
        ys = (np.arange(ny_b) + 0.5) * width / ny_b - 0.5 * width
        zs = np.arange(nz_b) * s
        offsets = tuple((0.0, float(y), float(z)) for z in zs for y in ys)
        clearance = s
        rigid = RigidPath(
            kind="blade",
            offsets=offsets,
            start=(0.25, 0.5 * width, bed_top + clearance + 0.5 * s),
            speed=cond["speed"] / 100.0,
            drop=clearance + cond["depth"] / 100.0,
            ramp_time=0.25 * duration,
            motion=int(cond["motion"]),
            duration=duration,
            angle=math.radians(cond["angle"]),
            radius=0.5 * s,
        )
    elif scenario == "wheel":
        gravity = cond["gravity"]
        radius = cond["diameter"] / 200.0
        n_ring = 10
        phis = 2 * math.pi * np.arange(n_ring) / n_ring
        ring_y = (0.3 * width, 0.7 * width)
        offsets = tuple(
            (float(radius * math.cos(p)), float(y - 0.5 * width), float(radius * math.sin(p)))
            for y in ring_y
            for p in phis
        )
        speed = 0.1
        slip = cond["slip"] / 100.0
        sinkage = s * (0.75 + 0.5 * cond["load"] / 164.0)
        clearance = s
        rigid = RigidPath(
            kind="wheel",
            offsets=offsets,
            start=(0.25, 0.5 * width, bed_top + radius + clearance + 0.5 * s),
            speed=speed,
            drop=clearance + sinkage,
            ramp_time=0.2 * duration,
            duration=duration,
            spin=speed / (radius * (1.0 - slip)),
            radius=0.5 * s,
        )
        damping_scale = math.tan(math.radians(cond["friction"])) / math.tan(math.radians(37.0))
    else:
        raise ValueError(f"unknown scenario {scenario!r}")

    k = 2.0e4 * kscale
    # heavy contact damping suppresses grain-scale chatter, keeping the
    # flow closer to a smooth continuum response
    c = 160.0 * math.sqrt(kscale)
    return OracleConfig(
        grid=grid,
        n_particles=n_particles,
        spacing=s,
        box_hi=box_hi,
        gravity=(0.0, 0.0, -float(gravity)),
        stiffness=k,
        damping=c * damping_scale,
        wall_stiffness=k,
        wall_damping=c,
        rigid_stiffness=k,
        rigid_damping=c,
        rigid=rigid,
        frames=frames,
        substeps=substeps,
        settle_frames=settle_frames,
        bed_seed=bed_seed,
        conditions=cond,
    )


def sample_conditions(scenario: str, rng: np.random.Generator) -> dict:
    grid = EXCAVATION_VARIABLES if scenario == "excavation" else WHEEL_VARIABLES
    if scenario not in ("excavation", "wheel"):
        raise ValueError(f"unknown scenario {scenario!r}")
    return {k: float(v[int(rng.integers(len(v)))]) for k, v in grid.items()}


def generate_dataset(scenario: str = "excavation", n_particles: int = 500, frames: int = 120,
                     examples: int = 20, seed: int = 0, train_fraction: float = 0.9,
                     name: str | None = None, settle_frames: int = 30) -> Dataset:
    """Generate ``examples`` oracle episodes with conditions drawn from the
    variable grid of ``scenario`` and split them train/test."""
    rng = np.random.default_rng(seed)
    # one soil bed per dataset, as in a lab series
    bed_seed = int(rng.integers(2**31 - 1))
    exs = []
    for _ in range(examples):
        cond = sample_conditions(scenario, rng)
        ex_seed = int(rng.integers(2**31 - 1))
        cfg = scenario_config(scenario, cond, n_particles=n_particles, frames=frames,
                              settle_frames=settle_frames, bed_seed=bed_seed)
        exs.append(generate_synthetic(cfg, ex_seed))
    meta = {
        "name": name or f"{scenario}-{n_particles}p-{frames}f-{examples}x-s{seed}",
        "scenario": scenario,
        "rigid_scripted": True,
        "generator_seed": int(seed),
    }
    ds = Dataset(examples=exs, split=["train"] * len(exs), metadata=meta)
    if len(exs) >= 2:
        ds = split_dataset(ds, train_fraction, seed)
    return ds


# ---------------------------------------------------------------------------
# splitting and windows


def split_dataset(ds: Dataset, train_fraction: float = 0.9, seed: int = 0) -> Dataset:
    """Deterministically tag examples train/test.

    The train count is ``floor(train_fraction * c)`` capped so at least one
    example is left for testing.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    c = len(ds.examples)
    if c < 2:
        raise ValueError("need at least 2 examples to split")
    n_train = min(max(int(math.floor(train_fraction * c)), 1), c - 1)
    perm = np.random.default_rng(seed).permutation(c)
    tags = ["test"] * c
    for i in perm[:n_train]:
        tags[int(i)] = "train"
    meta = dict(ds.metadata)
    meta.update(split_seed=int(seed), train_fraction=float(train_fraction))
    return Dataset(examples=ds.examples, split=tags, metadata=meta)


def node_types(n_flow: int, n_rigid: int) -> np.ndarray:
    return np.concatenate([np.full(n_flow, FLOW), np.full(n_rigid, RIGID)]).astype(np.int64)


def make_windows(Z: np.ndarray, F: np.ndarray, d: int = DEFAULT_HISTORY, n_flow: int | None = None,
                 rigid_scripted: bool = True, conditions: dict | None = None) -> list[WindowSample]:
    """Slice a system-state matrix ``Z`` (3m x N) into ``m - d`` windows of
    ``d + 1`` frames. Window ``k`` covers frames ``k .. k+d``; its label force
    is ``F[k + d]``.

    ``n_flow`` is the number of leading flow columns (the rest are rigid);
    default treats every column as flow.
    """
    frames = state_frames(Z)
    m, N, _ = frames.shape
    F = np.asarray(F, dtype=np.float64)
    if F.shape != (m, 3):
        raise ValueError(f"F must be ({m}, 3), got {F.shape}")
    if m < d + 1:
        raise ValueError(f"need at least d+1 = {d + 1} frames, got {m}")
    types = node_types(N if n_flow is None else n_flow, 0 if n_flow is None else N - n_flow)
    types.setflags(write=False)
    cond = dict(conditions or {})
    out = []
    for k in range(m - d):
        pos = frames[k : k + d + 1].copy()
        pos.setflags(write=False)
        out.append(
            WindowSample(
                positions=pos,
                node_types=types,
                target_force=F[k + d].copy(),
                rigid_scripted=rigid_scripted,
                start=k,
                conditions=cond,
            )
        )
    return out


# ---------------------------------------------------------------------------
# persistence


def save_dataset(ds: Dataset, path) -> str:
    """Write ``ds`` to ``path``; returns the file's SHA-256 fingerprint."""
    e0 = ds.examples[0] if ds.examples else None
    meta = {
        "kind": "dataset",
        "name": ds.metadata.get("name", ""),
        "n": e0.n if e0 else 0,
        "n_r": e0.n_r if e0 else 0,
        "m": e0.m if e0 else 0,
        "dt_physical": e0.dt_physical if e0 else DEFAULT_DT,
        "metadata": ds.metadata,
        "examples": [
            {"conditions": e.conditions, "dt_physical": e.dt_physical, "split": tag}
            for e, tag in zip(ds.examples, ds.split)
        ],
    }
    blocks = {}
    for i, e in enumerate(ds.examples):
        blocks[f"S{i}"] = e.S
        blocks[f"R{i}"] = e.R
        blocks[f"F{i}"] = e.F
    return container.write(path, meta, blocks)


def load_dataset(path) -> Dataset:
    meta, blocks = container.read(path)
    if meta.get("kind") != "dataset":
        raise container.FormatError(f"{path} is not a dataset file (kind={meta.get('kind')!r})")
    exs, tags = [], []
    for i, info in enumerate(meta["examples"]):
        try:
            S, R, F = blocks[f"S{i}"], blocks[f"R{i}"], blocks[f"F{i}"]
        except KeyError as exc:
            raise container.FormatError(f"example {i} is missing block {exc}") from exc
        exs.append(TrajectoryExample(S=S, R=R, F=F, conditions=info["conditions"],
                                     dt_physical=info["dt_physical"]))
        tags.append(info["split"])
    return Dataset(examples=exs, split=tags, metadata=meta.get("metadata", {}))
