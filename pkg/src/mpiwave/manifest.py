"""Declarative run manifests (TOML) and their validation.

A manifest fully determines a run: trajectories, strengths, initial
data, time grid, optional k-grid and solver options, outputs.  Unknown
keys are rejected everywhere so that typos in physics parameters fail
loudly instead of silently running defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ManifestError
from .initial_data import GaussianPacket, InitialDatum
from .kernels import KernelOptions
from .trajectories import TrajectorySet, make_trajectory
from .volterra import TimeGrid
from .wavefunction import KGrid

__all__ = ["RunManifest", "load_manifest", "parse_manifest"]

_MODES = ("forward", "backward", "roundtrip-adjoint")

_TOP_KEYS = {
    "mode", "separation", "alphas", "trajectories", "packets",
    "backward_packets", "grid", "kgrid", "solver", "outputs",
    "reconstruct", "sweep", "converge",
}
_TRAJ_KEYS = {
    "static": {"kind", "point"},
    "uniform": {"kind", "origin", "velocity"},
    "circular": {"kind", "center", "radius", "omega", "phase", "normal"},
    "polynomial": {"kind", "coefficients"},
    "spline": {"kind", "times", "points", "start_velocity", "end_velocity"},
}
_PACKET_KEYS = {"center", "sigma", "momentum", "weight"}
_GRID_KEYS = {"s", "t_max", "n_steps"}
_KGRID_KEYS = {"extent", "points"}
_SOLVER_KEYS = {"inner_nodes", "filon_panels", "diag_series_threshold"}
_OUTPUT_KEYS = {"directory", "artifacts"}
_RECON_KEYS = {"times"}
_SWEEP_KEYS = {"parameter", "values"}
_CONVERGE_KEYS = {"n_list"}


def _reject_unknown(table: dict, allowed: set, where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ManifestError(f"unknown keys in {where}: {sorted(unknown)}")


def _vec(value, where: str):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: expected a 3-vector") from exc
    if arr.shape != (3,):
        raise ManifestError(f"{where}: expected a 3-vector, got shape {arr.shape}")
    return arr


@dataclass
class RunManifest:
    """Parsed and validated run description."""

    mode: str
    tset: TrajectorySet
    alphas: np.ndarray
    data: InitialDatum
    backward_data: InitialDatum | None
    grid: TimeGrid
    kgrid: KGrid | None
    options: KernelOptions
    out_dir: str
    artifacts: tuple
    reconstruct_times: tuple
    sweep: dict | None
    converge_n: tuple
    raw: dict = field(default_factory=dict, repr=False)

    def kgrid_or_default(self) -> KGrid:
        """Explicit k-grid, or one sized from the packet spectra."""
        if self.kgrid is not None:
            return self.kgrid
        packets = list(self.data.packets)
        if self.backward_data is not None:
            packets += list(self.backward_data.packets)
        if not packets:
            return KGrid(12.0, 48)
        kmax = max(float(np.linalg.norm(p.momentum)) for p in packets)
        smin = min(p.sigma for p in packets)
        return KGrid(kmax + 4.5 / smin + 2.0, 48)


def _parse_trajectory(tbl: dict, idx: int):
    if "kind" not in tbl:
        raise ManifestError(f"trajectories[{idx}]: missing 'kind'")
    kind = tbl["kind"]
    if kind not in _TRAJ_KEYS:
        raise ManifestError(
            f"trajectories[{idx}]: unknown kind {kind!r}; expected one of {sorted(_TRAJ_KEYS)}")
    _reject_unknown(tbl, _TRAJ_KEYS[kind], f"trajectories[{idx}]")
    where = f"trajectories[{idx}]"
    try:
        if kind == "static":
            return make_trajectory("static", point=_vec(tbl["point"], where))
        if kind == "uniform":
            return make_trajectory("uniform", origin=_vec(tbl["origin"], where),
                                   velocity_vector=_vec(tbl["velocity"], where))
        if kind == "circular":
            kwargs = {
                "center": _vec(tbl["center"], where),
                "radius": float(tbl["radius"]),
                "omega": float(tbl["omega"]),
            }
            if "phase" in tbl:
                kwargs["phase"] = float(tbl["phase"])
            if "normal" in tbl:
                kwargs["normal"] = _vec(tbl["normal"], where)
            return make_trajectory("circular", **kwargs)
        if kind == "polynomial":
            return make_trajectory("polynomial",
                                   coefficients=np.asarray(tbl["coefficients"], dtype=float))
        kwargs = {
            "times": np.asarray(tbl["times"], dtype=float),
            "points": np.asarray(tbl["points"], dtype=float),
        }
        if "start_velocity" in tbl:
            kwargs["start_velocity"] = _vec(tbl["start_velocity"], where)
        if "end_velocity" in tbl:
            kwargs["end_velocity"] = _vec(tbl["end_velocity"], where)
        return make_trajectory("spline", **kwargs)
    except ManifestError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: {exc}") from exc


def _parse_packets(tables, where: str) -> InitialDatum:
    packets = []
    for i, tbl in enumerate(tables):
        _reject_unknown(tbl, _PACKET_KEYS, f"{where}[{i}]")
        try:
            weight = tbl.get("weight", [1.0, 0.0])
            if isinstance(weight, (int, float)):
                wt = complex(weight)
            else:
                wt = complex(float(weight[0]), float(weight[1]))
            packets.append(GaussianPacket(
                center=_vec(tbl["center"], f"{where}[{i}]"),
                sigma=float(tbl["sigma"]),
                momentum=_vec(tbl.get("momentum", [0.0, 0.0, 0.0]), f"{where}[{i}]"),
                weight=wt,
            ))
        except ManifestError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ManifestError(f"{where}[{i}]: {exc}") from exc
    return InitialDatum(packets)


def parse_manifest(doc: dict) -> RunManifest:
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a table")
    _reject_unknown(doc, _TOP_KEYS, "manifest")

    mode = doc.get("mode", "forward")
    if mode not in _MODES:
        raise ManifestError(f"mode must be one of {_MODES}, got {mode!r}")

    traj_tables = doc.get("trajectories", [])
    curves = [_parse_trajectory(t, i) for i, t in enumerate(traj_tables)]
    separation = float(doc.get("separation", 0.0))
    if len(curves) >= 2 and not separation > 0:
        raise ManifestError("separation > 0 is required for two or more trajectories")
    try:
        tset = TrajectorySet(curves, separation)
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc

    alphas = np.asarray(doc.get("alphas", []), dtype=float).reshape(-1)
    if alphas.size != tset.n:
        raise ManifestError(
            f"alphas has {alphas.size} entries for {tset.n} trajectories")
    if not np.all(np.isfinite(alphas)):
        raise ManifestError("alphas must be finite")

    data = _parse_packets(doc.get("packets", []), "packets")
    if not len(data):
        raise ManifestError("at least one packet is required")
    backward_data = None
    if "backward_packets" in doc:
        backward_data = _parse_packets(doc["backward_packets"], "backward_packets")
    if mode in ("backward", "roundtrip-adjoint") and backward_data is None:
        raise ManifestError(f"mode {mode!r} requires [[backward_packets]]")

    if "grid" not in doc:
        raise ManifestError("missing [grid] table")
    gt = doc["grid"]
    _reject_unknown(gt, _GRID_KEYS, "[grid]")
    try:
        grid = TimeGrid(float(gt["s"]), float(gt["t_max"]), int(gt["n_steps"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"[grid]: {exc}") from exc

    kgrid = None
    if "kgrid" in doc:
        kt = doc["kgrid"]
        _reject_unknown(kt, _KGRID_KEYS, "[kgrid]")
        try:
            kgrid = KGrid(float(kt["extent"]), int(kt["points"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"[kgrid]: {exc}") from exc

    st = doc.get("solver", {})
    _reject_unknown(st, _SOLVER_KEYS, "[solver]")
    try:
        options = KernelOptions(
            inner_nodes=int(st.get("inner_nodes", 32)),
            filon_panels=int(st.get("filon_panels", 24)),
            diag_series_threshold=float(st.get("diag_series_threshold", 1e-3)),
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"[solver]: {exc}") from exc

    ot = doc.get("outputs", {})
    _reject_unknown(ot, _OUTPUT_KEYS, "[outputs]")
    out_dir = str(ot.get("directory", "out"))
    artifacts = tuple(ot.get("artifacts", ("charges", "report")))

    rt = doc.get("reconstruct", {})
    _reject_unknown(rt, _RECON_KEYS, "[reconstruct]")
    times = tuple(float(t) for t in rt.get("times", ()))
    for t in times:
        if not grid.s <= t <= grid.t_max:
            raise ManifestError(f"[reconstruct]: time {t} outside the grid")

    sweep = None
    if "sweep" in doc:
        swt = doc["sweep"]
        _reject_unknown(swt, _SWEEP_KEYS, "[sweep]")
        if "parameter" not in swt or "values" not in swt:
            raise ManifestError("[sweep] needs 'parameter' and 'values'")
        values = list(swt["values"])
        if not values:
            raise ManifestError("[sweep]: empty values axis")
        sweep = {"parameter": str(swt["parameter"]), "values": values}

    ct = doc.get("converge", {})
    _reject_unknown(ct, _CONVERGE_KEYS, "[converge]")
    converge_n = tuple(int(n) for n in ct.get("n_list", ()))

    if not math.isfinite(grid.h):
        raise ManifestError("invalid grid")

    return RunManifest(
        mode=mode, tset=tset, alphas=alphas, data=data,
        backward_data=backward_data, grid=grid, kgrid=kgrid,
        options=options, out_dir=out_dir, artifacts=artifacts,
        reconstruct_times=times, sweep=sweep, converge_n=converge_n,
        raw=doc,
    )


def load_manifest(path) -> RunManifest:
    try:
        with open(str(path), "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ManifestError(f"manifest not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ManifestError(f"invalid TOML in {path}: {exc}") from exc
    return parse_manifest(doc)
