"""Deterministic JSON/CSV serialization, run configuration and manifests."""

from dataclasses import asdict, dataclass, field, fields
import csv
import hashlib
import io as _io
import json
import math
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .errors import ConfigError
from .fourier import FourierField


# ----------------------------------------------------------------- fields

def field_to_dict(f):
    recs = []
    for k, c in zip(f.modes.tolist(), f.coeffs):
        recs.append({"k": [int(v) for v in k], "re": [float(v) for v in c.real],
                     "im": [float(v) for v in c.imag]})
    return {"dim": f.dim, "trunc": f.trunc, "dropped": f.dropped, "modes": recs}


def field_from_dict(obj):
    try:
        d, K = int(obj["dim"]), int(obj["trunc"])
        recs = obj["modes"]
        if not recs:
            return FourierField(d, K, np.zeros((0, d)), np.zeros((0, d)), dropped=obj.get("dropped", 0.0))
        modes = np.array([r["k"] for r in recs], dtype=np.int64)
        coeffs = np.array([r["re"] for r in recs]) + 1j * np.array([r["im"] for r in recs])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed field record: {exc}") from exc
    if modes.shape != (len(recs), d) or coeffs.shape[0] != len(recs):
        raise ConfigError("field record has inconsistent shapes")
    f = FourierField(d, K, modes, coeffs, dropped=float(obj.get("dropped", 0.0)), symmetrize=False)
    scale = float(np.abs(f.coeffs).max()) if len(f) else 0.0
    if not f.is_real(tol=1e-9 * scale):
        raise ConfigError("field record is not closed under k -> -k with conjugate values")
    return f


def _default(o):
    if isinstance(o, FourierField):
        return field_to_dict(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating, np.longdouble)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats with strings so output stays strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return "nan" if math.isnan(o) else ("inf" if o > 0 else "-inf")
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def dumps(obj, indent=1):
    obj = json.loads(json.dumps(obj, default=_default))
    return json.dumps(_clean(obj), sort_keys=True, indent=indent, allow_nan=False) + "\n"


def dumps_line(obj):
    obj = json.loads(json.dumps(obj, default=_default))
    return json.dumps(_clean(obj), sort_keys=True, allow_nan=False)


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(obj))
    return Path(path)


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"missing file {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def write_field(path, f):
    return write_json(path, field_to_dict(f))


def read_field(path):
    return field_from_dict(read_json(path))


def csv_text(rows, columns):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating, np.longdouble)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in np.asarray(v).ravel().tolist())
    return str(v)


def write_csv(path, rows, columns):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(csv_text(rows, columns))
    return Path(path)


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ------------------------------------------------------------ run states

def state_to_dict(st):
    return {"n": st.n, "X": field_to_dict(st.X), "omega_n": [float(v) for v in st.omega_n],
            "rho_n": st.rho_n, "sigma_n": st.sigma_n, "eps_n": st.eps_n, "residual": st.residual,
            "renormalizable": bool(st.renormalizable), "diagnostics": st.diagnostics}


def state_from_dict(obj):
    from .renorm import RenormState
    diag = {k: _unclean(v) for k, v in obj.get("diagnostics", {}).items()}
    return RenormState(int(obj["n"]), field_from_dict(obj["X"]), np.array(obj["omega_n"], dtype=float),
                       _unclean(obj["rho_n"]), _unclean(obj["sigma_n"]), _unclean(obj["eps_n"]),
                       _unclean(obj["residual"]), bool(obj["renormalizable"]), diag)


def _unclean(v):
    if isinstance(v, str) and v in ("nan", "inf", "-inf"):
        return float(v)
    return v


def diffeo_to_dict(h):
    return {"periodic_part": field_to_dict(h.periodic_part)}


def diffeo_from_dict(obj):
    from .conjugacy import Diffeo
    try:
        return Diffeo(field_from_dict(obj["periodic_part"]))
    except KeyError as exc:
        raise ConfigError("malformed diffeo record") from exc


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    alpha: str = "golden"
    mu: float = 1.0
    s: float = 2.0
    rho0: float = 1.0
    nu: float = None
    delta: float = None
    K: int = 16
    steps: int = 5
    mode: str = "newton"
    theta: float = 1.0
    phi_rule: str = "formula"
    times: str = "stopping"
    ell: int = 1
    strict: bool = True
    amplitude: float = 1e-4
    perturbation: str = None
    seed: int = 0
    newton_tol: float = 1e-12
    brjuno_terms: int = 15
    expansion_terms: int = 12
    output: str = "run"

    def to_dict(self):
        return asdict(self)

    def hash(self):
        """Digest of everything that affects results (the output path does not)."""
        d = self.to_dict()
        d.pop("output")
        return hashlib.sha256(dumps(d).encode()).hexdigest()


_SECTIONS = {
    "frequency": {"alpha", "mu", "expansion_terms", "brjuno_terms"},
    "gevrey": {"s", "rho0", "nu", "delta", "K"},
    "schedule": {"steps", "theta", "phi_rule", "times", "ell", "strict"},
    "solver": {"mode", "newton_tol"},
    "run": {"amplitude", "perturbation", "seed", "output"},
}


def load_config(path=None, overrides=None):
    """RunConfig from a TOML file with optional sections, then apply overrides."""
    values = {}
    if path is not None:
        try:
            raw = tomli.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        for key, val in raw.items():
            if isinstance(val, dict):
                allowed = _SECTIONS.get(key)
                if allowed is None:
                    raise ConfigError(f"unknown config section [{key}]")
                for k, v in val.items():
                    if k not in allowed:
                        raise ConfigError(f"unknown key {key}.{k}")
                    values[k] = v
            elif key in known:
                values[key] = val
            else:
                raise ConfigError(f"unknown config key {key}")
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg.mode not in ("newton", "chord", "homotopy"):
        raise ConfigError(f"mode must be newton, chord or homotopy, got {cfg.mode!r}")
    if cfg.times not in ("stopping", "modified"):
        raise ConfigError(f"times must be stopping or modified, got {cfg.times!r}")
    if cfg.phi_rule not in ("formula", "one"):
        raise ConfigError(f"phi_rule must be formula or one, got {cfg.phi_rule!r}")
    if cfg.K < 1 or cfg.steps < 0 or cfg.s < 1 or cfg.rho0 <= 0 or cfg.mu <= 0:
        raise ConfigError("need K >= 1, steps >= 0, s >= 1, rho0 > 0, mu > 0")


def manifest(cfg, out_dir, artifacts, standins, extra=None):
    out_dir = Path(out_dir)
    arts = {}
    for p in sorted(artifacts):
        rel = Path(p).relative_to(out_dir).as_posix()
        arts[rel] = sha256_file(p)
    obj = {"config": cfg.to_dict(), "config_hash": cfg.hash(), "tool_version": __version__,
           "seed": cfg.seed, "artifacts": arts, "standins": standins, "mu": cfg.mu}
    obj.update(extra or {})
    return write_json(out_dir / "manifest.json", obj)


def check_manifest(out_dir):
    """Every listed artifact exists, matches its hash and parses."""
    out_dir = Path(out_dir)
    man = read_json(out_dir / "manifest.json")
    for rel, digest in man["artifacts"].items():
        p = out_dir / rel
        if not p.exists():
            raise ConfigError(f"artifact {rel} missing")
        if sha256_file(p) != digest:
            raise ConfigError(f"artifact {rel} hash mismatch")
        if p.suffix == ".json":
            read_json(p)
    return man
