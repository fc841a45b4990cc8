"""Log, configuration and profile file formats.

All logs are comma-separated text with a fixed header line. Numbers are
written with 17 significant digits, which round-trips IEEE doubles exactly.
``docs/formats.md`` documents every schema and key.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .earth import EarthModel, GeodeticCoord
from .ekf import GATE_QUANTILE, GpsFix, InitPriors
from .error_model import NoiseParams
from .errors import ConfigError, IngestionError, OutputError, SpecError
from .mechanization import DT_GATE, DT_NOMINAL, FORMS, ImuSample, NavState
from .simulator import KINDS, ProfileSpec, Segment, SimulationSpec

IMU_COLUMNS = ("t", "wx", "wy", "wz", "fx", "fy", "fz")
GPS_COLUMNS = ("t", "px", "py", "pz", "vx", "vy", "vz")
STATE_COLUMNS = (
    "t", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "px", "py", "pz",
    "bwx", "bwy", "bwz", "bfx", "bfy", "bfz",
)
COV_COLUMNS = tuple(
    f"P_{slot}{ax}" for slot in ("ds", "ds1", "ds2", "bw", "bf") for ax in "xyz"
)
INNOVATION_COLUMNS = ("dy_px", "dy_py", "dy_pz", "dy_vx", "dy_vy", "dy_vz")
# NIS is appended so analysis does not need the innovation covariance
NAV_COLUMNS = STATE_COLUMNS + COV_COLUMNS + INNOVATION_COLUMNS + ("nis",)
TRUTH_COLUMNS = STATE_COLUMNS

_FMT = ".17g"


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, _FMT)


# --------------------------------------------------------------------------
# CSV core
# --------------------------------------------------------------------------


def _read_table(path, columns, allow_empty_cols=()):
    """Parse a fixed-schema CSV; returns ``(N, len(columns))`` with NaN for blanks.

    Only columns listed in ``allow_empty_cols`` may be blank; every other value
    must parse as a finite float.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc.strerror or exc}", path=str(path)) from exc
    lines = text.splitlines()
    if not lines:
        raise IngestionError(f"{path}: missing header", location=1, path=str(path))
    header = tuple(c.strip() for c in lines[0].split(","))
    if header != tuple(columns):
        missing = [c for c in columns if c not in header]
        what = f"missing column(s) {', '.join(missing)}" if missing else "unexpected header"
        raise IngestionError(
            f"{path}:1: {what}; expected '{','.join(columns)}'", location=1, path=str(path)
        )
    ncol = len(columns)
    blank_ok = np.array([c in allow_empty_cols for c in columns])
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncol:
            raise IngestionError(
                f"{path}:{lineno}: expected {ncol} fields, found {len(parts)}",
                location=lineno, path=str(path),
            )
        row = np.empty(ncol)
        for i, tok in enumerate(parts):
            tok = tok.strip()
            if tok == "" and blank_ok[i]:
                row[i] = math.nan
                continue
            try:
                val = float(tok)
            except ValueError:
                raise IngestionError(
                    f"{path}:{lineno}: column {columns[i]}: cannot parse {tok!r}",
                    location=lineno, path=str(path),
                ) from None
            if not math.isfinite(val):
                raise IngestionError(
                    f"{path}:{lineno}: column {columns[i]}: non-finite value {tok!r}",
                    location=lineno, path=str(path),
                )
            row[i] = val
        rows.append((lineno, row))
    data = np.array([r for _, r in rows]).reshape(len(rows), ncol)
    if data.shape[0] > 1:
        bad = np.flatnonzero(~(np.diff(data[:, 0]) > 0.0))
        if bad.size:
            lineno = rows[int(bad[0]) + 1][0]
            raise IngestionError(
                f"{path}:{lineno}: time not strictly increasing", location=lineno, path=str(path)
            )
    return data


def _write_table(path, columns, data):
    path = Path(path)
    data = np.asarray(data, dtype=float).reshape(-1, len(columns))
    out = [",".join(columns)]
    out.extend(",".join(_fmt(v) for v in row) for row in data)
    try:
        with open(path, "w", newline="") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}", path=str(path)) from exc


# --------------------------------------------------------------------------
# IMU / GPS / truth / nav
# --------------------------------------------------------------------------


def read_imu_array(path) -> np.ndarray:
    return _read_table(path, IMU_COLUMNS)


def read_imu_csv(path):
    """IMU samples from ``path``; rows are ``t,wx,wy,wz,fx,fy,fz``."""
    return [ImuSample(r[0], r[1:4], r[4:7]) for r in read_imu_array(path)]


def write_imu_csv(path, samples):
    if isinstance(samples, np.ndarray):
        data = samples
    else:
        data = [[s.t, *s.w_ib_b, *s.f_b] for s in samples]
    _write_table(path, IMU_COLUMNS, data)


def read_gps_array(path) -> np.ndarray:
    return _read_table(path, GPS_COLUMNS)


def read_gps_csv(path, r_p=2.0, r_v=0.2):
    """GPS fixes from ``path``; the file carries no accuracies, so the
    per-axis standard deviations are supplied by the caller."""
    return [GpsFix(r[0], r[1:4], r[4:7], r_p, r_v) for r in read_gps_array(path)]


def write_gps_csv(path, fixes):
    if isinstance(fixes, np.ndarray):
        data = fixes
    else:
        data = [[f.t, *f.p_e, *f.v_e] for f in fixes]
    _write_table(path, GPS_COLUMNS, data)


def _state_rows(states):
    if isinstance(states, np.ndarray):
        return np.asarray(states, float).reshape(-1, len(STATE_COLUMNS))
    return np.array([[s.t, *s.to_array()] for s in states]).reshape(-1, len(STATE_COLUMNS))


def write_truth_csv(path, table):
    """Truth rows ``[t, q, v, p, b_w, b_f]`` (same columns as the nav state)."""
    _write_table(path, TRUTH_COLUMNS, _state_rows(table))


def read_truth_array(path) -> np.ndarray:
    return _read_table(path, TRUTH_COLUMNS)


def write_nav_csv(path, states, pdiag=None, innovations=None):
    """Write filter output, one row per state.

    Parameters
    ----------
    states : sequence of NavState or ndarray (N, 17)
        Array rows are ``[t, q, v, p, b_w, b_f]``.
    pdiag : ndarray (N, 15), optional
        Covariance diagonal; blank when omitted.
    innovations : ndarray (N, 7) or mapping, optional
        Rows ``[dy (6), nis]`` with NaN where no fix was processed, or a
        mapping from row index to :class:`~tridentnav.ekf.InnovationRecord`.
    """
    st = _state_rows(states)
    n = st.shape[0]
    pd = np.full((n, 15), np.nan) if pdiag is None else np.asarray(pdiag, float).reshape(n, 15)
    inn = np.full((n, 7), np.nan)
    if isinstance(innovations, dict):
        for k, rec in innovations.items():
            inn[k, 0:6] = rec.dy
            inn[k, 6] = rec.nis
    elif innovations is not None:
        inn[:] = np.asarray(innovations, float).reshape(n, 7)
    _write_table(path, NAV_COLUMNS, np.hstack([st, pd, inn]))


@dataclass(eq=False)
class NavLog:
    t: np.ndarray
    states: np.ndarray
    pdiag: np.ndarray
    dy: np.ndarray
    nis: np.ndarray

    @property
    def fix_rows(self) -> np.ndarray:
        return np.flatnonzero(np.all(np.isfinite(self.dy), axis=1))

    def nav_states(self):
        return [NavState.from_array(x, t) for t, x in zip(self.t, self.states)]


def read_nav_csv(path) -> NavLog:
    blank = COV_COLUMNS + INNOVATION_COLUMNS + ("nis",)
    d = _read_table(path, NAV_COLUMNS, allow_empty_cols=blank)
    ns = len(STATE_COLUMNS)
    return NavLog(d[:, 0], d[:, 1:ns], d[:, ns:ns + 15], d[:, ns + 15:ns + 21], d[:, ns + 21])


# --------------------------------------------------------------------------
# key = value files
# --------------------------------------------------------------------------


def _parse_kv(text, source):
    """Yield ``(lineno, key, value)``; ``#`` starts a comment."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        yield lineno, key, value


def _read_text(path, err):
    path = Path(path)
    try:
        return path.read_text()
    except OSError as exc:
        raise err(f"cannot read {path}: {exc.strerror or exc}") from exc


def _to_bool(value, where):
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {value!r}")


def _to_float(value, where, allow_none=False):
    if allow_none and value.lower() in ("", "none", "auto"):
        return None
    try:
        x = float(value)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{where}: value must be finite")
    return x


@dataclass(frozen=True)
class RunConfig:
    """Fusion settings; every field has a default.

    Keys in a config file are ``earth.<field>``, ``noise.<field>``,
    ``init.<field>`` and the top-level names below.
    """

    earth: EarthModel = EarthModel()
    noise: NoiseParams = NoiseParams()
    init: InitPriors = InitPriors()
    dt_nominal: float = DT_NOMINAL
    dt_gate: float = DT_GATE
    gate_quantile: float = GATE_QUANTILE
    form: str = "trident"
    seed: int = 0

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigError(f"form must be one of {sorted(FORMS)}, got {self.form!r}")
        if not self.dt_nominal > 0.0:
            raise ConfigError("dt_nominal must be positive")
        if not self.dt_gate >= 0.0:
            raise ConfigError("dt_gate must be nonnegative")
        if not 0.0 < self.gate_quantile <= 1.0:
            raise ConfigError("gate_quantile must lie in (0, 1]; 1 disables gating")
        if self.init.window <= 0.0:
            raise ConfigError("init.window must be positive")

    @classmethod
    def from_text(cls, text, source="<config>") -> RunConfig:
        groups = {"earth": {}, "noise": {}, "init": {}}
        top = {}
        group_types = {"earth": EarthModel, "noise": NoiseParams, "init": InitPriors}
        top_names = {f.name for f in fields(cls)} - set(groups)
        seen = set()
        for lineno, key, value in _parse_kv(text, source):
            where = f"{source}:{lineno}: {key}"
            if key in seen:
                raise ConfigError(f"{where}: duplicate key")
            seen.add(key)
            head, _, tail = key.partition(".")
            if tail and head in groups:
                names = {f.name for f in fields(group_types[head])}
                if tail not in names:
                    raise ConfigError(f"{where}: unknown key")
                if head == "earth" and tail == "use_j2":
                    groups[head][tail] = _to_bool(value, where)
                elif head == "init" and tail in ("sigma_p", "sigma_v"):
                    groups[head][tail] = _to_float(value, where, allow_none=True)
                else:
                    groups[head][tail] = _to_float(value, where)
            elif not tail and key in top_names:
                if key == "form":
                    top[key] = value
                elif key == "seed":
                    try:
                        top[key] = int(value)
                    except ValueError:
                        raise ConfigError(f"{where}: expected an integer") from None
                else:
                    top[key] = _to_float(value, where)
            else:
                raise ConfigError(f"{where}: unknown key")
        try:
            return cls(
                earth=EarthModel(**groups["earth"]),
                noise=NoiseParams(**groups["noise"]),
                init=InitPriors(**groups["init"]),
                **top,
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> RunConfig:
        return cls.from_text(_read_text(path, ConfigError), str(path))

    def to_text(self) -> str:
        lines = []
        for group in ("earth", "noise", "init"):
            obj = getattr(self, group)
            for f in fields(obj):
                v = getattr(obj, f.name)
                if isinstance(v, bool):
                    v = "true" if v else "false"
                elif v is None:
                    v = "auto"
                else:
                    v = _fmt(v)
                lines.append(f"{group}.{f.name} = {v}")
        for name in ("dt_nominal", "dt_gate", "gate_quantile"):
            lines.append(f"{name} = {_fmt(getattr(self, name))}")
        lines.append(f"form = {self.form}")
        lines.append(f"seed = {self.seed}")
        return "\n".join(lines) + "\n"

    def replace(self, **kw) -> RunConfig:
        return replace(self, **kw)


# --------------------------------------------------------------------------
# simulation profiles
# --------------------------------------------------------------------------

_SEGMENT_PARAMS = {"hover": (), "constant-accel": ("accel",),
                   "coordinated-turn": ("rate",), "climb": ("accel",)}


def _parse_segment(value, where, index):
    toks = value.split()
    if not toks:
        raise SpecError(f"{where}: empty segment", segment=index)
    kind = toks[0]
    if kind not in KINDS:
        raise SpecError(f"{where}: segment {index}: unknown kind {kind!r}", segment=index)
    kw = {}
    for tok in toks[1:]:
        name, sep, val = tok.partition("=")
        if not sep or name not in ("duration",) + _SEGMENT_PARAMS[kind]:
            raise SpecError(f"{where}: segment {index}: unexpected parameter {tok!r}",
                            segment=index)
        try:
            kw[name] = float(val)
        except ValueError:
            raise SpecError(f"{where}: segment {index}: bad number {val!r}",
                            segment=index) from None
    if "duration" not in kw:
        raise SpecError(f"{where}: segment {index}: missing duration", segment=index)
    for name in _SEGMENT_PARAMS[kind]:
        if name not in kw:
            raise SpecError(f"{where}: segment {index}: missing {name}", segment=index)
    return Segment(kind, **kw)


def _vec3(value, where):
    parts = value.replace(",", " ").split()
    if len(parts) != 3:
        raise SpecError(f"{where}: expected three numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise SpecError(f"{where}: expected three numbers") from None


def parse_profile(text, source="<profile>") -> SimulationSpec:
    """Parse a simulation profile; see ``docs/formats.md``."""
    segs = []
    top = {}
    noise = {}
    scalars = {"origin.lat_deg", "origin.lon_deg", "origin.h", "heading_deg", "speed0",
               "ramp", "rate", "gps_rate"}
    noise_names = {f.name for f in fields(NoiseParams)}
    seen = set()
    try:
        for lineno, key, value in _parse_kv(text, source):
            where = f"{source}:{lineno}"
            if key != "segment":
                if key in seen:
                    raise SpecError(f"{where}: duplicate key {key!r}")
                seen.add(key)
            if key == "segment":
                segs.append(_parse_segment(value, where, len(segs)))
            elif key in scalars:
                top[key] = _to_float(value, where)
            elif key == "seed":
                try:
                    top[key] = int(value)
                except ValueError:
                    raise SpecError(f"{where}: seed must be an integer") from None
            elif key in ("bias_w", "bias_f"):
                top[key] = _vec3(value, where)
            elif key == "bias_walk":
                top[key] = _to_bool(value, where)
            elif key.startswith("noise.") and key[6:] in noise_names:
                noise[key[6:]] = _to_float(value, where)
            else:
                raise SpecError(f"{where}: unknown key {key!r}")
    except SpecError:
        raise
    except ConfigError as exc:
        raise SpecError(str(exc)) from None
    try:
        origin = GeodeticCoord.from_degrees(
            top.get("origin.lat_deg", 45.0), top.get("origin.lon_deg", 7.0),
            top.get("origin.h", 300.0),
        )
        profile = ProfileSpec(
            segs, origin=origin, seed=top.get("seed", 0),
            heading=math.radians(top.get("heading_deg", 0.0)),
            speed0=top.get("speed0", 0.0), ramp=top.get("ramp", 1.0),
        )
        return SimulationSpec(
            profile, rate=top.get("rate", 200.0), gps_rate=top.get("gps_rate", 1.0),
            noise=NoiseParams(**noise), bias_w=top.get("bias_w", (0.0, 0.0, 0.0)),
            bias_f=top.get("bias_f", (0.0, 0.0, 0.0)), bias_walk=top.get("bias_walk", False),
        )
    except SpecError:
        raise
    except ValueError as exc:
        raise SpecError(f"{source}: {exc}") from exc


def read_profile(path) -> SimulationSpec:
    return parse_profile(_read_text(path, SpecError), str(path))


def format_profile(sim: SimulationSpec) -> str:
    """Inverse of :func:`parse_profile` (up to number formatting)."""
    p = sim.profile
    lines = [
        f"origin.lat_deg = {_fmt(math.degrees(p.origin.lat))}",
        f"origin.lon_deg = {_fmt(math.degrees(p.origin.lon))}",
        f"origin.h = {_fmt(p.origin.h)}",
        f"seed = {p.seed}",
        f"heading_deg = {_fmt(math.degrees(p.heading))}",
        f"speed0 = {_fmt(p.speed0)}",
        f"ramp = {_fmt(p.ramp)}",
        f"rate = {_fmt(sim.rate)}",
        f"gps_rate = {_fmt(sim.gps_rate)}",
    ]
    for f in fields(NoiseParams):
        lines.append(f"noise.{f.name} = {_fmt(getattr(sim.noise, f.name))}")
    lines.append("bias_w = " + " ".join(_fmt(x) for x in sim.bias_w))
    lines.append("bias_f = " + " ".join(_fmt(x) for x in sim.bias_f))
    lines.append(f"bias_walk = {'true' if sim.bias_walk else 'false'}")
    for s in p.segments:
        extra = "".join(f" {n}={_fmt(getattr(s, n))}" for n in _SEGMENT_PARAMS[s.kind])
        lines.append(f"segment = {s.kind} duration={_fmt(s.duration)}{extra}")
    return "\n".join(lines) + "\n"
