"""Lorenz-63 map data, gradient-descent training and size validation runs."""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import polysys
from .circuit import NeuralCircuit, forward, make_cn, vjp
from .steppers import DivergenceError, rk4_step

__all__ = [
    "L63_REGION",
    "L63_BOUNDS",
    "MapDataset",
    "generate_dataset",
    "subsample_region",
    "TrainingRun",
    "train",
    "free_run",
    "largest_lyapunov",
    "l63_map",
    "validate",
]

# initial-condition box for trajectories
L63_REGION = ((-20.0, 20.0), (-20.0, 20.0), (0.0, 50.0))
# fixed normalization box; y swings to about +-27 on the attractor
L63_BOUNDS = ((-20.0, 20.0), (-30.0, 30.0), (0.0, 50.0))

DESK = dict(n_traj=10, total_steps=2100, discard=2000, keep=100)
FULL = dict(n_traj=1000, total_steps=2500, discard=2000, keep=500)


def l63_map(dt: float = 0.01) -> Callable:
    """One RK4 step of the Lorenz-63 vector field."""
    return lambda x: rk4_step(polysys.l63_rhs, dt, x)


@dataclass(frozen=True, eq=False)
class MapDataset:
    """Consecutive state pairs ``(x, x')`` of a discrete map, in physical units."""

    X: np.ndarray
    Y: np.ndarray
    dt: float
    lo: np.ndarray
    hi: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.X.shape[0]

    def normalize(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo) - 1.0

    def denormalize(self, z):
        return self.lo + 0.5 * (np.asarray(z, dtype=float) + 1.0) * (self.hi - self.lo)

    @property
    def Xn(self):
        return self.normalize(self.X)

    @property
    def Yn(self):
        return self.normalize(self.Y)

    def take(self, idx, **extra) -> "MapDataset":
        prov = dict(self.provenance, **extra)
        return MapDataset(self.X[idx], self.Y[idx], self.dt, self.lo, self.hi, prov)

    def split(self, holdout: float = 0.2, seed: int = 0):
        """Random train/holdout partition."""
        perm = np.random.default_rng(seed).permutation(len(self))
        k = int(round(holdout * len(self)))
        return self.take(np.sort(perm[k:])), self.take(np.sort(perm[:k]))

    def to_csv(self, path, normalized: bool = False) -> None:
        X, Y = (self.Xn, self.Yn) if normalized else (self.X, self.Y)
        with open(path, "w", newline="") as fh:
            fh.write(f"# normalized={str(normalized).lower()}\n")
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "x'", "y'", "z'"])
            for a, b in zip(X, Y):
                w.writerow([repr(float(v)) for v in (*a, *b)])


def generate_dataset(
    n_traj: int = 1000,
    total_steps: int = 2500,
    discard: int = 2000,
    keep: int = 500,
    dt: float = 0.01,
    region=L63_REGION,
    seed: int = 0,
    bounds=L63_BOUNDS,
) -> MapDataset:
    """Integrate L63 trajectories with RK4 and keep consecutive post-transient pairs.

    Trajectory ``i`` starts from a point drawn uniformly in ``region`` with
    its own stream keyed by ``(seed, i)``.  Trajectories that leave the
    finite numbers are dropped with a warning.
    """
    if min(n_traj, total_steps, discard, keep) < 0:
        raise ValueError("counts must be non-negative")
    if discard + keep > total_steps:
        raise ValueError("discard + keep exceeds total_steps")
    lo_r, hi_r = np.array(region, dtype=float).T
    x0 = np.array([
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,))).uniform(lo_r, hi_r)
        for i in range(n_traj)
    ]).reshape(n_traj, 3)
    lo, hi = np.array(bounds, dtype=float).T
    prov = dict(seed=seed, n_traj=n_traj, total_steps=total_steps, discard=discard, keep=keep, excluded=0)
    if keep == 0 or n_traj == 0:
        empty = np.empty((0, 3))
        return MapDataset(empty, empty.copy(), dt, lo, hi, prov)

    f = polysys.l63_rhs
    x = x0
    ok = np.ones(n_traj, dtype=bool)
    states = np.empty((keep + 1, n_traj, 3))
    with np.errstate(all="ignore"):
        for k in range(discard + keep):
            if k >= discard:
                states[k - discard] = x
            k1 = dt * f(x)
            k2 = dt * f(x + 0.5 * k1)
            k3 = dt * f(x + 0.5 * k2)
            k4 = dt * f(x + k3)
            x = x + (1.0 / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = ~np.isfinite(x).all(axis=1)
            if bad.any():
                ok &= ~bad
                x = np.where(bad[:, None], 0.0, x)
    states[keep] = x
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} divergent trajectories excluded", RuntimeWarning, stacklevel=2)
        prov["excluded"] = int((~ok).sum())
    # pairs ordered trajectory-major
    S = states[:, ok].transpose(1, 0, 2)
    X = S[:, :-1].reshape(-1, 3)
    Y = S[:, 1:].reshape(-1, 3)
    return MapDataset(X, Y, dt, lo, hi, prov)


def subsample_region(ds: MapDataset, predicate: Callable, count: int | None = None, seed: int = 0) -> MapDataset:
    """Uniform subsample of the pairs whose (physical) state satisfies ``predicate``.

    ``predicate`` maps an ``(N, 3)`` array to a boolean mask.
    """
    idx = np.flatnonzero(np.asarray(predicate(ds.X), dtype=bool))
    if count is None:
        count = idx.size
    if idx.size < count or idx.size == 0:
        raise ValueError(f"only {idx.size} pairs match the region, {count} requested")
    if count < idx.size:
        idx = np.sort(np.random.default_rng(seed).choice(idx, size=count, replace=False))
    return ds.take(idx, subsample_seed=seed, subsample_count=int(count))


@dataclass(frozen=True, eq=False)
class TrainingRun:
    circuit: NeuralCircuit
    lr: float
    epochs: int
    lam: float
    seed: int
    loss: np.ndarray
    rmse_train: float
    rmse_holdout: float | None

    def to_dict(self) -> dict:
        return dict(
            lr=self.lr,
            epochs=self.epochs,
            lam=self.lam,
            seed=self.seed,
            final_loss=float(self.loss[-1]),
            rmse_train=self.rmse_train,
            rmse_holdout=self.rmse_holdout,
        )


def rmse(circuit: NeuralCircuit, ds: MapDataset, params=None) -> float:
    """One-step RMSE on normalized states."""
    if len(ds) == 0:
        return float("nan")
    E = ds.Yn - forward(circuit, ds.Xn, params=params)[0]
    return float(np.sqrt(np.mean(E * E)))


def train(
    circuit: NeuralCircuit,
    ds: MapDataset,
    lr: float = 0.5,
    epochs: int = 1000,
    lam: float = 1e-4,
    seed: int | None = 0,
    holdout: MapDataset | None = None,
    init_scale: float = 0.5,
    blowup: float = 1e6,
) -> TrainingRun:
    """Full-batch gradient descent on ``(1/2S) sum |x' - f(x; w)|^2 + lam |w|^2``.

    Training runs on normalized states.  With ``seed`` set the parameters
    start from ``N(0, init_scale^2)``; ``seed=None`` starts from the
    circuit's own parameters.  Divergence is declared when the data misfit
    exceeds ``blowup``.
    """
    if circuit.has_delays:
        raise ValueError("training needs a single-pass circuit")
    if circuit.n_in != 3 or circuit.n_out != 3:
        raise ValueError("circuit must map 3 inputs to 3 outputs")
    if len(ds) == 0:
        raise ValueError("empty dataset")
    X, Y = ds.Xn, ds.Yn
    S = X.shape[0]
    if seed is None:
        w = circuit.params.copy()
    else:
        w = np.random.default_rng(seed).normal(0.0, init_scale, circuit.params.size)
    loss = np.empty(epochs + 1)
    for ep in range(epochs + 1):
        try:
            E = Y - forward(circuit, X, params=w)[0]
        except FloatingPointError as exc:
            raise DivergenceError(ep, "training diverged") from exc
        misfit = 0.5 * np.sum(E * E) / S
        loss[ep] = misfit + lam * np.dot(w, w)
        if not misfit <= blowup:
            raise DivergenceError(ep, "training loss diverged")
        if ep == epochs:
            break
        grad = vjp(circuit, X, -E / S, params=w) + 2.0 * lam * w
        w = w - lr * grad
    trained = circuit.with_params(w)
    return TrainingRun(
        trained,
        lr,
        epochs,
        lam,
        seed,
        loss,
        rmse(trained, ds),
        None if holdout is None else rmse(trained, holdout),
    )


def free_run(model, x0, steps: int, ds: MapDataset | None = None) -> np.ndarray:
    """Closed-loop iterates of a one-step map; shape ``(steps+1, n)`` in physical units.

    ``model`` is a circuit or a callable.  With ``ds`` given the map acts
    on normalized states and the output is de-normalized.
    """
    if isinstance(model, NeuralCircuit):
        f = lambda z: forward(model, z)[0]
    else:
        f = model
    z = np.array(x0, dtype=float) if ds is None else ds.normalize(x0)
    traj = np.empty((steps + 1,) + z.shape)
    traj[0] = z
    for k in range(1, steps + 1):
        try:
            z = f(z)
        except FloatingPointError as exc:
            raise DivergenceError(k, str(exc)) from exc
        if not np.all(np.isfinite(z)):
            raise DivergenceError(k)
        traj[k] = z
    return traj if ds is None else ds.denormalize(traj)


def largest_lyapunov(
    fmap: Callable,
    x0,
    steps: int,
    renorm: int = 1,
    dt: float = 1.0,
    eps: float = 1e-8,
    seed: int = 0,
    transient: int = 0,
) -> float:
    """Benettin estimate of the largest Lyapunov exponent of a map.

    A perturbed point at distance ``eps * max(1, |x|)`` is advanced with the
    base point (both as one batch of two) and pulled back to that distance
    every ``renorm`` steps; the mean log growth is divided by ``dt``.
    """
    if steps < 1 or renorm < 1:
        raise ValueError("steps and renorm must be positive")
    x = np.array(x0, dtype=float)
    for k in range(transient):
        x = fmap(x)
    v = np.random.default_rng(seed).standard_normal(x.shape)
    # perturbation size relative to the state so it never falls below an ulp
    delta = eps * max(1.0, float(np.linalg.norm(x)))
    pair = np.stack([x, x + delta * v / np.linalg.norm(v)])
    total = 0.0
    count = 0
    for k in range(1, steps + 1):
        pair = np.asarray(fmap(pair), dtype=float)
        if not np.all(np.isfinite(pair)):
            raise DivergenceError(k)
        if k % renorm == 0 or k == steps:
            dvec = pair[1] - pair[0]
            dist = np.linalg.norm(dvec)
            if dist == 0.0:
                raise ArithmeticError("perturbation collapsed to zero")
            total += np.log(dist / delta)
            count = k
            delta = eps * max(1.0, float(np.linalg.norm(pair[0])))
            pair[1] = pair[0] + (delta / dist) * dvec
    return float(total / (count * dt))


def _bounded(traj_n, factor: float = 2.0) -> bool:
    return bool(np.all(np.abs(traj_n) <= factor))


def _one_run(h, seed, train_ds, hold_ds, lr, epochs, lam, free_steps):
    run = train(make_cn(3, h), train_ds, lr=lr, epochs=epochs, lam=lam, seed=seed, holdout=hold_ds)
    x0 = hold_ds.X[0]
    try:
        traj = free_run(run.circuit, x0, free_steps, train_ds)
        bounded = _bounded(train_ds.normalize(traj))
        lyap = largest_lyapunov(lambda z: forward(run.circuit, z)[0], train_ds.normalize(x0), 2000, dt=train_ds.dt)
    except DivergenceError:
        bounded, lyap = False, float("nan")
    return run, bounded, lyap


def validate(
    sizes=(2, 4, 6, 8),
    seeds: int = 3,
    full_scale: bool = False,
    lr: float = 0.5,
    epochs: int = 1000,
    lam: float = 1e-4,
    seed: int = 0,
    free_steps: int = 500,
    lyapunov_steps: int = 20000,
    threads: int | None = None,
) -> dict:
    """Train tanh networks of several sizes on L63 map data and summarize.

    Reports per size the median train/holdout one-step RMSE over ``seeds``
    initializations, free-run boundedness (within twice the normalization
    box) and the Lyapunov exponent of the learned map, together with the
    exponent of the reference map.
    """
    ds = generate_dataset(**(FULL if full_scale else DESK), seed=seed)
    train_ds, hold_ds = ds.split(0.2, seed)
    jobs = [(h, seed + s) for h in sizes for s in range(seeds)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda j: _one_run(j[0], j[1], train_ds, hold_ds, lr, epochs, lam, free_steps), jobs))
    per_size = []
    for h in sizes:
        rs = [r for (hh, _), r in zip(jobs, results) if hh == h]
        per_size.append(
            dict(
                h=int(h),
                rmse_train=[r[0].rmse_train for r in rs],
                rmse_holdout=[r[0].rmse_holdout for r in rs],
                median_rmse_train=float(np.median([r[0].rmse_train for r in rs])),
                median_rmse_holdout=float(np.median([r[0].rmse_holdout for r in rs])),
                free_run_bounded=[r[1] for r in rs],
                lyapunov=[r[2] for r in rs],
            )
        )
    lyap_ref = largest_lyapunov(l63_map(ds.dt), hold_ds.X[0], lyapunov_steps, dt=ds.dt)
    return dict(
        dataset=dict(ds.provenance, pairs=len(ds), train=len(train_ds), holdout=len(hold_ds), dt=ds.dt),
        training=dict(lr=lr, epochs=epochs, lam=lam, seeds=seeds, init_scale=0.5),
        free_steps=free_steps,
        sizes=per_size,
        lyapunov_reference=lyap_ref,
        lyapunov_reference_positive=bool(lyap_ref > 0),
    )
