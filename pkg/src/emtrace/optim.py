"""Gradient-based calibration and orientation optimization.

Two experiment drivers sit on top of the differentiable coefficient
pipeline: learning radio material parameters from channel frequency
responses (NMSE loss, projected gradient descent) and steering a
transmitter to maximize mean received power over a map region (gradient
ascent). Both freeze path topology and refresh it periodically; materials
never move geometry, so the refresh matters only for moving devices.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import DiffComplex, DiffScalar, Tape
from .autodiff import log as ad_log
from .bvh import build
from .channel import GridSpec, point_path_gain, probe_receiver, subcarrier_frequencies
from .em import EvalContext, geometry_from_path, path_materials, transfer
from .tracer import compute_paths_between


class OptimError(ValueError):
    pass


@dataclass
class OptimConfig:
    lr: float = 0.05  # eps_r-scale leaves
    lr_sigma: float = 0.005
    lr_angle: float = 0.2  # radians-scale leaves
    iterations: int = 500
    line_search: bool = True
    topology_refresh: int = 10
    rel_tol: float = 1e-6
    tol_window: int = 10
    max_depth: int = 2
    method: str = "exhaustive"
    num_rays: int = 4096


@dataclass
class DatasetRecord:
    position: np.ndarray
    h: np.ndarray  # complex frequency response [N]


@dataclass
class Dataset:
    frequency_hz: float
    num_subcarriers: int
    subcarrier_spacing_hz: float
    records: list

    def save(self, path: str):
        payload = {
            "frequency_hz": self.frequency_hz,
            "num_subcarriers": self.num_subcarriers,
            "subcarrier_spacing_hz": self.subcarrier_spacing_hz,
            "records": [{"position_m": [float(x) for x in r.position],
                         "h_re": [float(v) for v in r.h.real],
                         "h_im": [float(v) for v in r.h.imag]}
                        for r in self.records],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "Dataset":
        with open(path) as fh:
            d = json.load(fh)
        recs = [DatasetRecord(position=np.asarray(r["position_m"], dtype=np.float64),
                              h=np.asarray(r["h_re"]) + 1j * np.asarray(r["h_im"]))
                for r in d["records"]]
        return Dataset(frequency_hz=d["frequency_hz"],
                       num_subcarriers=d["num_subcarriers"],
                       subcarrier_spacing_hz=d["subcarrier_spacing_hz"],
                       records=recs)


class TrainLog:
    """Per-iteration loss and leaf values; serializes to CSV."""

    def __init__(self, leaf_names):
        self.leaf_names = list(leaf_names)
        self.rows = []  # (iteration, loss, {leaf: value})
        self.final_values = {}

    def append(self, iteration: int, loss: float, values: dict):
        self.rows.append((iteration, loss, dict(values)))

    @property
    def losses(self):
        return [r[1] for r in self.rows]

    def to_csv(self) -> str:
        head = ",".join(["iteration", "loss"] + self.leaf_names)
        lines = [head]
        for it, loss, vals in self.rows:
            lines.append(",".join([str(it), repr(loss)]
                                  + [repr(vals[n]) for n in self.leaf_names]))
        return "\n".join(lines) + "\n"

    def save(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.to_csv())


# -- losses -------------------------------------------------------------------

def nmse_loss(h_pred, h_true):
    """Normalized mean squared error ||pred - true||^2 / ||true||^2.

    ``h_pred`` may be a complex numpy vector or a list of DiffComplex
    entries; the latter yields a tape-tracked scalar.
    """
    h_true = np.asarray(h_true, dtype=np.complex128)
    norm2 = float(np.vdot(h_true, h_true).real)
    if norm2 <= 0.0:
        raise OptimError("NMSE target has zero norm")
    if isinstance(h_pred, (list, tuple)) and h_pred and isinstance(h_pred[0], DiffComplex):
        if len(h_pred) != len(h_true):
            raise OptimError("prediction/target length mismatch")
        tape = _find_tape(h_pred)
        pred = np.array([z.to_complex() for z in h_pred])
        err = pred - h_true
        val = float(np.vdot(err, err).real)
        if tape is None:
            return val / norm2
        inputs, partials = [], []
        for i, z in enumerate(h_pred):
            inputs.append(z.re)
            partials.append(2.0 * err[i].real)
            inputs.append(z.im)
            partials.append(2.0 * err[i].imag)
        return tape.record_custom(val, inputs, partials) / norm2
    h_pred = np.asarray(h_pred, dtype=np.complex128)
    if h_pred.shape != h_true.shape:
        raise OptimError("prediction/target shape mismatch")
    err = h_pred - h_true
    return float(np.vdot(err, err).real) / norm2


def _find_tape(values):
    for z in values:
        for comp in (z.re, z.im):
            if isinstance(comp, DiffScalar) and comp.tape is not None:
                return comp.tape
    return None


def _projected_sq_error(tape, a_list, basis, target):
    """||basis @ a - target||^2 as one fused tape node.

    ``basis`` [N, P] holds the fixed delay phasors of the subcarrier grid,
    ``a_list`` the P path gains. Gradients w.r.t. the gain components are
    accumulated through the fixed basis in closed form.
    """
    avals = np.array([z.to_complex() for z in a_list]) if a_list else np.zeros(0, complex)
    e = (basis @ avals if len(a_list) else np.zeros(len(target), complex)) - target
    val = float(np.vdot(e, e).real)
    if tape is None or not a_list:
        return val
    g = basis.conj().T @ e
    inputs, partials = [], []
    for i, z in enumerate(a_list):
        inputs.append(z.re)
        partials.append(2.0 * g[i].real)
        inputs.append(z.im)
        partials.append(2.0 * g[i].imag)
    return tape.record_custom(val, inputs, partials)


# -- trainable parameter bookkeeping -------------------------------------------

_EPS_KEY = "mat:{}:eps_r"
_SIG_KEY = "mat:{}:sigma"
_ANGLE_KEYS = ("yaw", "pitch", "roll")


def _lr_for(leaf: str, config: OptimConfig) -> float:
    if leaf.endswith(":sigma"):
        return config.lr_sigma
    if leaf.split(":")[-1] in _ANGLE_KEYS:
        return config.lr_angle
    return config.lr


def _project_materials(values: dict):
    for k in values:
        if k.endswith(":eps_r") and values[k] < 1.0:
            values[k] = 1.0
        elif k.endswith(":sigma") and values[k] < 0.0:
            values[k] = 0.0


def _descend(values, loss0, grads, loss_fn, config, sign: float,
             scale: float = 1.0):
    """One (optionally line-searched) step; sign=-1 descends, +1 ascends.

    Returns (new values, next scale). With line search the trial step is
    halved until the Armijo condition holds — so descent never increases
    the loss (and ascent never decreases the objective) — and a cleanly
    accepted step doubles the scale for the next iteration, adapting the
    effective step size to the local curvature.
    """
    direction = {k: _lr_for(k, config) * grads.get(k, 0.0) for k in values}
    slope = sum(direction[k] * grads.get(k, 0.0) for k in values)
    if slope == 0.0:
        return dict(values), scale

    def stepped(s):
        new = {k: values[k] + sign * s * direction[k] for k in values}
        _project_materials(new)
        return new

    if not config.line_search:
        return stepped(1.0), scale
    first = True
    while scale > 1e-10:
        cand = stepped(scale)
        f = loss_fn(cand)
        f = f.value if isinstance(f, DiffScalar) else float(f)
        if sign * (f - loss0) >= 1e-4 * scale * slope:
            return cand, min(scale * 2.0, 1e9) if first else scale
        scale *= 0.5
        first = False
    return dict(values), 1.0  # no productive step found; stay put


def _converged(losses, config: OptimConfig) -> bool:
    w = config.tol_window
    if len(losses) <= w:
        return False
    ref = abs(losses[-w - 1])
    if ref == 0.0:
        return abs(losses[-1]) == 0.0
    return abs(losses[-1] - losses[-w - 1]) / ref < config.rel_tol


# -- dataset generation ---------------------------------------------------------

def _central_gains(scene, bvh, ctx, tx_dev, probe, paths):
    """Per-path complex gain between the central tx and rx array elements."""
    out = []
    for path in paths:
        mats = path_materials(scene, bvh, path)
        geom = geometry_from_path(path)
        out.append(transfer(ctx, geom, mats, tx_dev, probe,
                            scene.tx_array.pattern, scene.rx_array.pattern,
                            scene.tx_array.slants[0], scene.rx_array.slants[0]))
    return out


def generate_dataset(scene, positions=None, num_subcarriers: int = 128,
                     subcarrier_spacing_hz: float = 30e3, max_depth: int = 2,
                     method: str = "exhaustive", num_rays: int = 4096,
                     bvh=None) -> Dataset:
    """Frequency responses at probe positions using the scene's materials.

    Defaults to the positions of the scene's receivers. Responses connect
    the central tx array element to the central rx element. Bit-identical
    across reruns for identical inputs.
    """
    if bvh is None:
        bvh = build(scene)
    txs = scene.transmitters
    if not txs:
        raise OptimError("scene has no transmitter")
    tx_dev = txs[0]
    if positions is None:
        positions = [d.position for d in scene.receivers]
    if not len(positions):
        raise OptimError("no probe positions to generate data for")
    f = subcarrier_frequencies(num_subcarriers, subcarrier_spacing_hz)
    ctx = EvalContext(scene)
    records = []
    for pos in positions:
        probe = probe_receiver(pos)
        paths = compute_paths_between(scene, bvh, tx_dev, probe, max_depth,
                                      method, num_rays)
        gains = _central_gains(scene, bvh, ctx, tx_dev, probe, paths)
        h = np.zeros(num_subcarriers, dtype=np.complex128)
        for path, g in zip(paths, gains):
            h += g.to_complex() * np.exp(-2j * np.pi * f * path.delay_s)
        records.append(DatasetRecord(position=np.asarray(pos, dtype=np.float64), h=h))
    return Dataset(frequency_hz=scene.frequency_hz,
                   num_subcarriers=num_subcarriers,
                   subcarrier_spacing_hz=subcarrier_spacing_hz,
                   records=records)


# -- experiment A: learning radio materials ------------------------------------

def trainable_material_names(scene) -> list:
    return sorted(name for name, m in scene.materials.items() if m.trainable)


def learn_materials(scene, dataset: Dataset, config: OptimConfig | None = None,
                    bvh=None) -> TrainLog:
    """Projected gradient descent on the dataset NMSE over trainable materials.

    Path topology per record is refreshed every ``config.topology_refresh``
    iterations. Materials whose parameters no path touches receive exact
    zero gradients and stay bit-identical.
    """
    config = config or OptimConfig()
    if bvh is None:
        bvh = build(scene)
    names = trainable_material_names(scene)
    if not names:
        raise OptimError("scene has no trainable materials")
    if abs(dataset.frequency_hz - scene.frequency_hz) > 1e-6 * scene.frequency_hz:
        raise OptimError("dataset and scene carrier frequencies differ")
    tx_dev = scene.transmitters[0]
    f = subcarrier_frequencies(dataset.num_subcarriers, dataset.subcarrier_spacing_hz)

    values = {}
    for n in names:
        m = scene.materials[n]
        values[_EPS_KEY.format(n)] = float(m.eps_r)
        values[_SIG_KEY.format(n)] = float(m.sigma)
    leaf_names = sorted(values)

    frozen = []  # per record: (probe, paths, materials per path, basis, target, norm2)

    def refresh_topology():
        frozen.clear()
        for rec in dataset.records:
            probe = probe_receiver(rec.position)
            paths = compute_paths_between(scene, bvh, tx_dev, probe,
                                          config.max_depth, config.method,
                                          config.num_rays)
            basis = np.exp(-2j * np.pi * f[:, None]
                           * np.array([p.delay_s for p in paths])[None, :]) \
                if paths else np.zeros((len(f), 0), dtype=np.complex128)
            norm2 = float(np.vdot(rec.h, rec.h).real)
            if norm2 <= 0.0:
                raise OptimError("dataset record has zero-norm target response")
            frozen.append((probe, paths, basis, rec.h, norm2))

    def loss_fn(vals, tape=None):
        if tape is not None:
            leaves = {k: tape.leaf(vals[k], k) for k in leaf_names}
        else:
            leaves = vals
        overrides = {n: (leaves[_EPS_KEY.format(n)], leaves[_SIG_KEY.format(n)])
                     for n in names}
        ctx = EvalContext(scene, material_values=overrides)
        total = 0.0
        for probe, paths, basis, target, norm2 in frozen:
            gains = _central_gains(scene, bvh, ctx, tx_dev, probe, paths)
            total = total + _projected_sq_error(tape, gains, basis, target) / norm2
        return total / len(frozen)

    log = TrainLog(leaf_names)
    scale = 1.0
    for it in range(config.iterations):
        if it % config.topology_refresh == 0:
            refresh_topology()
        tape = Tape()
        loss = loss_fn(values, tape)
        loss_val = loss.value if isinstance(loss, DiffScalar) else float(loss)
        if not math.isfinite(loss_val):
            raise OptimError(f"loss diverged (non-finite) at iteration {it}: "
                             f"values {values}")
        grads = tape.gradient(loss) if isinstance(loss, DiffScalar) else {}
        log.append(it, loss_val, values)
        values, scale = _descend(values, loss_val, grads, loss_fn, config,
                                 sign=-1.0, scale=scale)
        if _converged(log.losses, config):
            break
    log.final_values = dict(values)
    return log


# -- experiment B: transmitter orientation -------------------------------------

def optimize_orientation(scene, region: GridSpec, config: OptimConfig | None = None,
                         tx_name: str | None = None, bvh=None,
                         tx_mode: str = "central") -> TrainLog:
    """Gradient ascent of mean region path gain over tx yaw/pitch/roll.

    The objective is the linear-domain mean of per-cell path gains. When no
    path reaches the region the orientation gradient is zero everywhere;
    a warning is emitted and the orientation is returned unchanged.
    """
    config = config or OptimConfig()
    if bvh is None:
        bvh = build(scene)
    tx_dev = scene.device(tx_name) if tx_name else scene.transmitters[0]
    cells = [region.cell_center(ix, iy)
             for iy in range(region.ny) for ix in range(region.nx)]
    if not cells:
        raise OptimError("empty region")
    keys = [f"dev:{tx_dev.name}:{k}" for k in _ANGLE_KEYS]
    values = dict(zip(keys, (float(a) for a in tx_dev.orientation)))

    frozen_cells = []

    def refresh_topology():
        frozen_cells.clear()
        for c in cells:
            _, paths = point_path_gain(scene, bvh, tx_dev, c, config.max_depth,
                                       config.method, config.num_rays,
                                       tx_mode=tx_mode)
            frozen_cells.append((c, paths))

    def objective_fn(vals, tape=None):
        if tape is not None:
            leaves = [tape.leaf(vals[k], k) for k in keys]
        else:
            leaves = [vals[k] for k in keys]
        ctx = EvalContext(scene, orientations={tx_dev.name: tuple(leaves)})
        total = 0.0
        for c, paths in frozen_cells:
            g, _ = point_path_gain(scene, bvh, tx_dev, c, config.max_depth,
                                   config.method, config.num_rays, ctx=ctx,
                                   frozen_paths=paths, tx_mode=tx_mode)
            total = total + g
        return total / len(frozen_cells)

    # Path gains are tiny in linear units; ascending log(objective) makes
    # the step size scale-free while keeping the optimum and monotonicity.
    def log_objective_fn(vals, tape=None):
        return ad_log(objective_fn(vals, tape))

    log = TrainLog(keys)
    refresh_topology()
    if all(len(p) == 0 for _, p in frozen_cells):
        warnings.warn("no propagation path reaches the target region; "
                      "orientation left unchanged")
        log.append(0, 0.0, values)
        log.final_values = dict(values)
        return log

    scale = 1.0
    for it in range(config.iterations):
        if it and it % config.topology_refresh == 0:
            refresh_topology()
        tape = Tape()
        obj = objective_fn(values, tape)
        obj_val = obj.value if isinstance(obj, DiffScalar) else float(obj)
        if not math.isfinite(obj_val) or obj_val <= 0.0:
            raise OptimError(f"objective degenerated at iteration {it}")
        log_obj = ad_log(obj)
        grads = tape.gradient(log_obj) if isinstance(log_obj, DiffScalar) else {}
        log.append(it, obj_val, values)
        values, scale = _descend(values, math.log(obj_val), grads,
                                 log_objective_fn, config, sign=+1.0, scale=scale)
        if _converged(log.losses, config):
            break
    log.final_values = dict(values)
    return log
