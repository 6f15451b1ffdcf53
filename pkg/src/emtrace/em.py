"""Polarized channel coefficients along traced paths.

Converts path geometry into complex gains: antenna pattern evaluation in
the rotated device frame, Fresnel reflection in the per-segment TE/TM basis
with explicit basis rotations between segments, free-space spreading,
plane-wave array phase shifts, and Doppler time evolution.

All field math runs on scalar-generic tuples, so the same code produces
plain floats for forward simulation and tape-recorded scalars when material
parameters, device orientations or positions are registered as leaves.

Conventions (frozen project-wide): time dependence e^{+j 2 pi f t}, hence
propagation phase e^{-j 2 pi f_c tau}; the reflected parallel basis vector
is e_perp x k_out, which makes r_TM equal r_TE at normal incidence.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import DiffComplex, DiffScalar, cos, csqrt_posreal, exp, minimum, sin, sqrt
from .geometry import (SPEED_OF_LIGHT, mat_t_vec, mat_vec, rotation_entries,
                       spherical_angles, t_cross, t_dot, t_norm, t_normalize,
                       t_scale, t_sub)
from .scene import material_eval
from .tracer import image_solve, path_from_points, solve_points

TWO_PI = 2.0 * math.pi
_LN10_OVER_20 = math.log(10.0) / 20.0


class EmError(ValueError):
    pass


# -- antenna patterns --------------------------------------------------------

def _pattern_iso(theta, phi):
    """Isotropic: unit gain, theta-polarized."""
    return 1.0, 0.0


def _pattern_dipole(theta, phi):
    """Half-wave dipole along the local z axis; peak gain 1.643 (2.15 dBi)."""
    s = sin(theta)
    if (s.value if isinstance(s, DiffScalar) else s) < 1e-9:
        return 0.0, 0.0
    return sqrt(1.643) * cos(1.5707963267948966 * cos(theta)) / s, 0.0


def _pattern_tr38901(theta, phi):
    """3GPP TR 38.901 single element: 8 dBi peak, 65 deg 3 dB beamwidths.

    Vertical and horizontal cuts are quadratic in degrees, each floored at
    30 dB attenuation, as is their sum.
    """
    deg = 180.0 / math.pi
    tilt = theta * deg - 90.0
    pan = phi * deg
    att_v = minimum(12.0 * (tilt / 65.0) * (tilt / 65.0), 30.0)
    att_h = minimum(12.0 * (pan / 65.0) * (pan / 65.0), 30.0)
    gain_db = 8.0 - minimum(att_v + att_h, 30.0)
    return exp(gain_db * _LN10_OVER_20), 0.0


def _probe_theta(theta, phi):
    return 1.0, 0.0


def _probe_phi(theta, phi):
    return 0.0, 1.0


_PATTERNS = {"iso": _pattern_iso, "dipole": _pattern_dipole,
             "tr38901": _pattern_tr38901,
             # internal coverage probes: orthonormal polarization basis of
             # the arrival direction, so their gains sum to the full
             # transverse field power
             "_probe_theta": _probe_theta, "_probe_phi": _probe_phi}


def get_pattern(name: str):
    try:
        return _PATTERNS[name]
    except KeyError:
        raise EmError(f"unknown antenna pattern {name!r}") from None


def pattern_eval(name: str, theta, phi):
    """(E_theta, E_phi) of a named pattern; gain is |E_theta|^2 + |E_phi|^2."""
    return get_pattern(name)(theta, phi)


def element_field(pattern_name: str, slant: float, rotation_rows, k_world):
    """Polarized field vector radiated toward ``k_world``, in world frame.

    ``slant`` rotates the element about its boresight (+x body axis); this
    is how H/VH/cross polarizations are realized from the base pattern.
    Returns a real scalar-like 3-tuple.
    """
    pattern = get_pattern(pattern_name)
    k_body = mat_t_vec(rotation_rows, k_world)
    cz, sz = math.cos(slant), math.sin(slant)
    k_el = (k_body[0], cz * k_body[1] + sz * k_body[2],
            -sz * k_body[1] + cz * k_body[2])
    theta, phi = spherical_angles(k_el)
    e_th, e_ph = pattern(theta, phi)
    ct, st = cos(theta), sin(theta)
    cp, sp = cos(phi), sin(phi)
    e_el = (e_th * (ct * cp) + e_ph * (-sp),
            e_th * (ct * sp) + e_ph * cp,
            e_th * (-st))
    e_body = (e_el[0], cz * e_el[1] - sz * e_el[2], sz * e_el[1] + cz * e_el[2])
    return mat_vec(rotation_rows, e_body)


# -- reflection --------------------------------------------------------------

def fresnel(eta, cos_theta_i):
    """(r_TE, r_TM) for reflection off an air-medium interface.

    ``eta`` is the complex relative permittivity (Im <= 0 for lossy media),
    ``cos_theta_i`` the cosine of the incidence angle from the normal.
    The square root takes the Re >= 0 branch so transmitted fields decay
    into the medium. The parallel coefficient is measured against the
    e_perp x k_out basis: r_TM(0) == r_TE(0) == (1 - sqrt(eta))/(1 + sqrt(eta)).
    """
    if isinstance(eta, complex):
        eta = DiffComplex(eta.real, eta.imag)
    elif not isinstance(eta, DiffComplex):
        eta = DiffComplex(eta, 0.0)
    sin2 = 1.0 - cos_theta_i * cos_theta_i
    w = csqrt_posreal(eta - sin2)
    r_te = (cos_theta_i - w) / (cos_theta_i + w)
    ec = eta * cos_theta_i
    r_tm = (w - ec) / (w + ec)
    return r_te, r_tm


def _perp_axis(k_in, n):
    """Unit TE axis for an interaction; deterministic at normal incidence."""
    e = t_cross(k_in, n)
    n2 = t_dot(e, e)
    n2v = n2.value if isinstance(n2, DiffScalar) else n2
    if n2v < 1e-16:
        # normal incidence: any transverse axis works; pick the world axis
        # least aligned with the ray for stability
        kv = [abs(k_in[i].value if isinstance(k_in[i], DiffScalar) else k_in[i])
              for i in range(3)]
        axis = (0.0, 0.0, 0.0)
        axis = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))[kv.index(min(kv))]
        e = t_cross(k_in, axis)
    return t_normalize(e)


def reflect_field(field, k_in, k_out, normal, r_te, r_tm):
    """Transport a complex field 3-tuple through one specular reflection."""
    e_perp = _perp_axis(k_in, normal)
    e_par_i = t_cross(k_in, e_perp)
    e_par_r = t_cross(e_perp, k_out)
    f_perp = field[0] * e_perp[0] + field[1] * e_perp[1] + field[2] * e_perp[2]
    f_par = field[0] * e_par_i[0] + field[1] * e_par_i[1] + field[2] * e_par_i[2]
    g_perp = r_te * f_perp
    g_par = r_tm * f_par
    return (g_perp * e_perp[0] + g_par * e_par_r[0],
            g_perp * e_perp[1] + g_par * e_par_r[1],
            g_perp * e_perp[2] + g_par * e_par_r[2])


def synthetic_phase(direction, offset, wavelength) -> DiffComplex:
    """Plane-wave phasor e^{+j 2 pi (direction . offset) / lambda}.

    Call with the departure direction for tx elements and with the negated
    arrival direction for rx elements, so an element displaced toward the
    other end of the link leads in phase.
    """
    return DiffComplex.expj(TWO_PI * t_dot(direction, offset) / wavelength)


# -- evaluation context ------------------------------------------------------

class EvalContext:
    """Per-evaluation parameter values, possibly wired to tape leaves.

    Holds (eps_r, sigma) per material and orientation/position per device;
    anything not overridden falls back to the scene's stored floats. All
    derived quantities (eta, rotation rows) are cached per context.
    """

    def __init__(self, scene, material_values=None, orientations=None, positions=None):
        self.scene = scene
        self.material_values = material_values or {}
        self.orientations = orientations or {}
        self.positions = positions or {}
        self._eta_cache = {}
        self._rot_cache = {}

    def eta(self, material_name: str) -> DiffComplex:
        if material_name not in self._eta_cache:
            m = self.scene.materials[material_name]
            over = self.material_values.get(material_name)
            ev = material_eval(m, self.scene.frequency_hz,
                               eps_override=over[0] if over else None,
                               sigma_override=over[1] if over else None)
            self._eta_cache[material_name] = ev.eta
        return self._eta_cache[material_name]

    def rotation_rows(self, device):
        if device.name not in self._rot_cache:
            ypr = self.orientations.get(device.name, device.orientation)
            self._rot_cache[device.name] = rotation_entries(*ypr)
        return self._rot_cache[device.name]

    def position(self, device):
        p = self.positions.get(device.name)
        if p is not None:
            return p
        return (float(device.position[0]), float(device.position[1]),
                float(device.position[2]))

    def has_tracked_position(self, device) -> bool:
        p = self.positions.get(device.name)
        return p is not None and any(isinstance(x, DiffScalar) for x in p)


# -- per-path transfer -------------------------------------------------------

@dataclass
class PathGeometry:
    """Scalar-generic geometry of one path, ready for field transport."""

    vertices: list
    seg_dirs: list
    length: object
    delay: object
    k_dep: tuple
    k_arr: tuple
    normals: list  # float tuples; plane orientation does not move with devices
    cos_incidence: list


def geometry_from_path(path) -> PathGeometry:
    verts = [tuple(float(x) for x in v) for v in path.vertices]
    dirs = [t_normalize(t_sub(b, a)) for a, b in zip(verts[:-1], verts[1:])]
    return PathGeometry(
        vertices=verts, seg_dirs=dirs,
        length=path.length_m, delay=path.delay_s,
        k_dep=dirs[0], k_arr=dirs[-1],
        normals=[tuple(float(x) for x in n) for n in path.normals],
        cos_incidence=list(path.cos_incidence),
    )


def geometry_for_positions(path, tx_pos, rx_pos) -> PathGeometry:
    """Re-derive the path geometry for moved endpoints (same topology).

    Interaction points are recomputed by closed-form mirroring across the
    frozen primitive planes, so every output is a smooth function of the
    endpoint coordinates. Validity is not re-checked.
    """
    normals = [tuple(float(x) for x in n) for n in path.normals]
    planes = [(n, t_dot(n, tuple(float(x) for x in path.vertices[k + 1])))
              for k, n in enumerate(normals)]
    points, _ = solve_points(tx_pos, rx_pos, planes)
    if points is None:
        raise EmError("path geometry degenerated while differentiating positions")
    verts = [tx_pos] + points + [rx_pos]
    dirs = [t_normalize(t_sub(b, a)) for a, b in zip(verts[:-1], verts[1:])]
    length = 0.0
    for a, b in zip(verts[:-1], verts[1:]):
        length = length + t_norm(t_sub(b, a))
    cosines = [-t_dot(dirs[k], normals[k]) for k in range(len(normals))]
    return PathGeometry(
        vertices=verts, seg_dirs=dirs,
        length=length, delay=length / SPEED_OF_LIGHT,
        k_dep=dirs[0], k_arr=dirs[-1],
        normals=normals, cos_incidence=cosines,
    )


def path_geometry(ctx: EvalContext, path, tx_dev, rx_dev) -> PathGeometry:
    if ctx.has_tracked_position(tx_dev) or ctx.has_tracked_position(rx_dev):
        return geometry_for_positions(path, ctx.position(tx_dev), ctx.position(rx_dev))
    return geometry_from_path(path)


def transfer(ctx: EvalContext, geom: PathGeometry, materials,
             tx_dev, rx_dev, tx_pattern: str, rx_pattern: str,
             tx_slant: float, rx_slant: float) -> DiffComplex:
    """Complex gain of one path for one antenna-element pair.

    a = (lambda / 4 pi d) * <rx field | product of reflections | tx field>
        * e^{-j 2 pi f_c tau}
    """
    scene = ctx.scene
    field = element_field(tx_pattern, tx_slant, ctx.rotation_rows(tx_dev), geom.k_dep)
    field = (DiffComplex(field[0]), DiffComplex(field[1]), DiffComplex(field[2]))
    for k, mat_name in enumerate(materials):
        r_te, r_tm = fresnel(ctx.eta(mat_name), geom.cos_incidence[k])
        field = reflect_field(field, geom.seg_dirs[k], geom.seg_dirs[k + 1],
                              geom.normals[k], r_te, r_tm)
    rx_field = element_field(rx_pattern, rx_slant, ctx.rotation_rows(rx_dev),
                             t_scale(geom.k_arr, -1.0))
    coupling = (field[0] * rx_field[0] + field[1] * rx_field[1]
                + field[2] * rx_field[2])
    amp = scene.wavelength / (2.0 * TWO_PI * geom.length)
    phase = -TWO_PI * scene.frequency_hz * geom.delay
    return coupling * amp * DiffComplex.expj(phase)


def path_materials(scene, bvh, path) -> tuple:
    """Material name per interaction of a path."""
    return tuple(scene.objects[bvh.prim_object[p]].material for p in path.seq)


# -- channel gains for full arrays -------------------------------------------

@dataclass
class PathGain:
    """Per-element-pair complex gains of one logical path."""

    tx: str
    rx: str
    kind: str
    seq: tuple
    delay: float
    a: np.ndarray  # [rx_el, tx_el, time]
    delays: np.ndarray  # [rx_el, tx_el] per-pair delays
    k_dep: np.ndarray  # [rx_el, tx_el, 3]
    k_arr: np.ndarray


@dataclass
class ChannelGains:
    scene: object
    entries: list
    sample_times: np.ndarray  # [T], seconds


def _fraunhofer_check(scene, tx_dev, rx_dev, offsets_tx, offsets_rx, length):
    aperture = 0.0
    for off in (offsets_tx, offsets_rx):
        if len(off) > 1:
            span = np.linalg.norm(off.max(axis=0) - off.min(axis=0))
            aperture = max(aperture, float(span))
    if aperture > 0.0:
        fraunhofer = 2.0 * aperture * aperture / scene.wavelength
        if length < fraunhofer:
            warnings.warn(
                f"path {tx_dev.name}->{rx_dev.name} at {length:.1f} m is inside "
                f"the Fraunhofer distance {fraunhofer:.1f} m; the plane-wave "
                "synthetic-array assumption degrades here", stacklevel=2)


def compute_gains(scene, bvh, pathset, ctx: EvalContext | None = None) -> ChannelGains:
    """Complex gains for every path and antenna element pair.

    With ``scene.synthetic_array`` the per-element response is the center
    path times plane-wave phase shifts; otherwise the image solve is re-run
    for every element pair (and LOS visibility re-checked per pair).
    """
    if ctx is None:
        ctx = EvalContext(scene)
    lam = scene.wavelength
    entries = []
    for tx_dev in scene.transmitters:
        tx_arr = scene.tx_array
        off_tx, slants_tx = tx_arr.element_layout(lam)
        r_tx = np.array(ctx.rotation_rows(tx_dev), dtype=np.float64)
        off_tx_w = off_tx @ r_tx.T
        for rx_dev in scene.receivers:
            rx_arr = scene.rx_array
            off_rx, slants_rx = rx_arr.element_layout(lam)
            r_rx = np.array(ctx.rotation_rows(rx_dev), dtype=np.float64)
            off_rx_w = off_rx @ r_rx.T
            paths = pathset.between(tx_dev.name, rx_dev.name)
            if paths and scene.synthetic_array:
                _fraunhofer_check(scene, tx_dev, rx_dev, off_tx_w, off_rx_w,
                                  min(p.length_m for p in paths))
            for path in paths:
                mats = path_materials(scene, bvh, path)
                if scene.synthetic_array:
                    entries.append(_gain_synthetic(
                        ctx, path, mats, tx_dev, rx_dev, tx_arr, rx_arr,
                        off_tx_w, slants_tx, off_rx_w, slants_rx, lam))
                else:
                    entries.append(_gain_explicit(
                        ctx, bvh, path, mats, tx_dev, rx_dev, tx_arr, rx_arr,
                        off_tx_w, slants_tx, off_rx_w, slants_rx))
    return ChannelGains(scene=scene, entries=entries, sample_times=np.zeros(1))


def _gain_synthetic(ctx, path, mats, tx_dev, rx_dev, tx_arr, rx_arr,
                    off_tx_w, slants_tx, off_rx_w, slants_rx, lam):
    geom = geometry_from_path(path)
    base = {}
    for st in sorted(set(float(s) for s in slants_tx)):
        for sr in sorted(set(float(s) for s in slants_rx)):
            base[(st, sr)] = transfer(ctx, geom, mats, tx_dev, rx_dev,
                                      tx_arr.pattern, rx_arr.pattern,
                                      st, sr).to_complex()
    k_dep = np.asarray(path.k_dep)
    k_arr = np.asarray(path.k_arr)
    ph_tx = np.exp(1j * TWO_PI * (off_tx_w @ k_dep) / lam)
    ph_rx = np.exp(1j * TWO_PI * (off_rx_w @ -k_arr) / lam)
    n_rx, n_tx = len(off_rx_w), len(off_tx_w)
    a = np.empty((n_rx, n_tx), dtype=np.complex128)
    for i in range(n_rx):
        for j in range(n_tx):
            a[i, j] = (base[(float(slants_tx[j]), float(slants_rx[i]))]
                       * ph_rx[i] * ph_tx[j])
    return PathGain(
        tx=tx_dev.name, rx=rx_dev.name, kind=path.kind, seq=path.seq,
        delay=path.delay_s, a=a[:, :, None],
        delays=np.full((n_rx, n_tx), path.delay_s),
        k_dep=np.broadcast_to(k_dep, (n_rx, n_tx, 3)).copy(),
        k_arr=np.broadcast_to(k_arr, (n_rx, n_tx, 3)).copy(),
    )


def _gain_explicit(ctx, bvh, path, mats, tx_dev, rx_dev, tx_arr, rx_arr,
                   off_tx_w, slants_tx, off_rx_w, slants_rx):
    n_rx, n_tx = len(off_rx_w), len(off_tx_w)
    a = np.zeros((n_rx, n_tx), dtype=np.complex128)
    delays = np.zeros((n_rx, n_tx))
    k_dep = np.zeros((n_rx, n_tx, 3))
    k_arr = np.zeros((n_rx, n_tx, 3))
    valid = []
    for i in range(n_rx):
        rx_pos = rx_dev.position + off_rx_w[i]
        for j in range(n_tx):
            tx_pos = tx_dev.position + off_tx_w[j]
            if path.kind == "los":
                if bvh.num_prims and bvh.occluded(tx_pos, rx_pos):
                    continue
                sub = path_from_points(tx_dev.name, rx_dev.name, (), tx_pos,
                                       rx_pos, [], bvh)
            else:
                sub = image_solve(tx_dev.name, rx_dev.name, tx_pos, rx_pos,
                                  path.seq, bvh)
                if sub is None:
                    continue
            geom = geometry_from_path(sub)
            g = transfer(ctx, geom, mats, tx_dev, rx_dev,
                         tx_arr.pattern, rx_arr.pattern,
                         float(slants_tx[j]), float(slants_rx[i]))
            a[i, j] = g.to_complex()
            delays[i, j] = sub.delay_s
            k_dep[i, j] = sub.k_dep
            k_arr[i, j] = sub.k_arr
            valid.append(sub.delay_s)
    delay = float(np.mean(valid)) if valid else path.delay_s
    return PathGain(tx=tx_dev.name, rx=rx_dev.name, kind=path.kind, seq=path.seq,
                    delay=delay, a=a[:, :, None], delays=delays,
                    k_dep=k_dep, k_arr=k_arr)


def apply_doppler(gains: ChannelGains, sampling_frequency: float,
                  num_time_steps: int, tx_velocities=None,
                  rx_velocities=None) -> ChannelGains:
    """Time-evolve gains: a_i(t_n) = a_i e^{j 2 pi f_D_i t_n}.

    f_D = (f_c/c) * (k_dep . v_tx + (-k_arr) . v_rx). Velocities are world
    frame, either one 3-vector applied to every device of that side or a
    dict keyed by device name. Doppler is phase-only: |a| is constant in n.
    """
    if num_time_steps < 1 or sampling_frequency <= 0:
        raise EmError("need num_time_steps >= 1 and a positive sampling frequency")
    if gains.entries and gains.entries[0].a.shape[-1] != 1:
        raise EmError("doppler already applied to these gains")

    def vel_for(side, name):
        if side is None:
            return np.zeros(3)
        if isinstance(side, dict):
            return np.asarray(side.get(name, np.zeros(3)), dtype=np.float64)
        return np.asarray(side, dtype=np.float64)

    t = np.arange(num_time_steps) / sampling_frequency
    f_over_c = gains.scene.frequency_hz / SPEED_OF_LIGHT
    out = []
    for e in gains.entries:
        v_tx = vel_for(tx_velocities, e.tx)
        v_rx = vel_for(rx_velocities, e.rx)
        f_d = f_over_c * (e.k_dep @ v_tx - e.k_arr @ v_rx)  # [rx_el, tx_el]
        phasors = np.exp(1j * TWO_PI * f_d[:, :, None] * t[None, None, :])
        out.append(PathGain(tx=e.tx, rx=e.rx, kind=e.kind, seq=e.seq,
                            delay=e.delay, a=e.a[:, :, 0:1] * phasors,
                            delays=e.delays, k_dep=e.k_dep, k_arr=e.k_arr))
    return ChannelGains(scene=gains.scene, entries=out, sample_times=t)
