"""Run configuration: TOML parsing, validation and serialization.

A config is a TOML document with top-level run keys and one optional table
per model plus a ``[noise]`` table::

    model = "rigidbody"
    dt = 0.001
    T = 10.0
    members = 64

    [noise]
    kind = "vectors"
    vectors = [[0.0, 0.0, 0.2]]

    [rigidbody]
    inertia = [1.0, 2.0, 3.0]

Unknown keys are errors. Messages name the offending key and, when it can
be located in the source text, its line.
"""

import math
import re
from dataclasses import asdict, dataclass, field, fields, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ConfigError

MODELS = ("rigidbody", "burgers", "peakons", "euler2d")
MODES = ("coupled", "decoupled")
STEPPERS = ("heun", "em")
NOISE_KINDS = ("none", "constant", "fourier", "vectors")
MODEL_DIM = {"rigidbody": 3, "burgers": 1, "peakons": 1, "euler2d": 2}
U64 = 1 << 64


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    nu: float = 0.0
    modes: tuple = ()
    vectors: tuple = ()


@dataclass(frozen=True)
class RigidBodySpec:
    inertia: tuple = (1.0, 2.0, 3.0)
    pi0: tuple = (0.1, 1.0, 0.1)


@dataclass(frozen=True)
class BurgersSpec:
    n: int = 256
    L: float = 2 * math.pi
    u0: str = "sine"


@dataclass(frozen=True)
class PeakonSpec:
    n: int = 2
    alpha: float = 1.0
    q0: tuple = (-1.0, 1.0)
    p0: tuple = (1.0, -1.0)
    kernel: str = "line"
    L: float = 2 * math.pi
    grid: int = 128


@dataclass(frozen=True)
class Euler2DSpec:
    n: int = 64
    omega0: str = "taylor-green"
    loop: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    model: str
    mode: str = "coupled"
    dt: float = 1e-3
    T: float = 1.0
    members: int = 256
    seed: int = 0
    stepper: str = "heun"
    output_dir: str = "out"
    output_every: int = 10
    workers: int = 1
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    rigidbody: RigidBodySpec = field(default_factory=RigidBodySpec)
    burgers: BurgersSpec = field(default_factory=BurgersSpec)
    peakons: PeakonSpec = field(default_factory=PeakonSpec)
    euler2d: Euler2DSpec = field(default_factory=Euler2DSpec)

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    def with_overrides(self, **kwargs):
        """Return a validated copy with top-level keys replaced (``None`` skipped)."""
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return validate(replace(self, **kwargs))


TABLES = {"noise": NoiseSpec, "rigidbody": RigidBodySpec, "burgers": BurgersSpec,
          "peakons": PeakonSpec, "euler2d": Euler2DSpec}
TOP_KEYS = [f.name for f in fields(RunConfig) if f.name not in TABLES]


def _locate(text, table, key):
    """Best-effort 1-based line of ``key`` (inside ``[table]`` or dotted)."""
    if text is None:
        return None
    current = None
    dotted = re.compile(rf"^\s*{re.escape(table)}\s*\.\s*{re.escape(key)}\s*=") if table else None
    plain = re.compile(rf"^\s*[\"']?{re.escape(key)}[\"']?\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[\s*([^\]]+?)\s*\]", line)
        if head:
            current = head.group(1)
            continue
        if table is None and current is None and plain.match(line):
            return i
        if table is not None and current == table and plain.match(line):
            return i
        if dotted is not None and current is None and dotted.match(line):
            return i
    return None


class _Checker:
    def __init__(self, text):
        self.text = text

    def error(self, message, table, key):
        name = f"{table}.{key}" if table else key
        raise ConfigError(message, key=name, line=_locate(self.text, table, key))

    def number(self, value, table, key, positive=False, nonnegative=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.error(f"expected a number, got {type(value).__name__}", table, key)
        value = float(value)
        if not math.isfinite(value):
            self.error("value must be finite", table, key)
        if positive and not value > 0:
            self.error(f"value must be positive, got {value}", table, key)
        if nonnegative and value < 0:
            self.error(f"value must be nonnegative, got {value}", table, key)
        return value

    def integer(self, value, table, key, minimum=None, maximum=None):
        if isinstance(value, bool) or not isinstance(value, int):
            self.error(f"expected an integer, got {type(value).__name__}", table, key)
        if minimum is not None and value < minimum:
            self.error(f"value must be >= {minimum}, got {value}", table, key)
        if maximum is not None and value > maximum:
            self.error(f"value must be <= {maximum}, got {value}", table, key)
        return value

    def choice(self, value, options, table, key):
        if not isinstance(value, str) or value not in options:
            self.error(f"expected one of {', '.join(options)}, got {value!r}", table, key)
        return value

    def string(self, value, table, key):
        if not isinstance(value, str) or not value:
            self.error("expected a non-empty string", table, key)
        return value

    def vector(self, value, table, key, length=None):
        if not isinstance(value, (list, tuple)):
            self.error("expected an array of numbers", table, key)
        out = tuple(self.number(v, table, key) for v in value)
        if length is not None and len(out) != length:
            self.error(f"expected {length} entries, got {len(out)}", table, key)
        return out

    def matrix(self, value, table, key, widths=None):
        if not isinstance(value, (list, tuple)):
            self.error("expected an array of arrays", table, key)
        rows = tuple(self.vector(row, table, key) for row in value)
        if widths is not None and any(len(r) not in widths for r in rows):
            self.error(f"rows must have {' or '.join(map(str, widths))} entries", table, key)
        return rows


def _check_keys(chk, table, data, allowed):
    for key in data:
        if key not in allowed:
            chk.error(f"unknown key '{key}'", table, key)


def _sub(chk, cls, table, data, convert):
    if not isinstance(data, dict):
        chk.error("expected a table", None, table)
    allowed = [f.name for f in fields(cls)]
    _check_keys(chk, table, data, allowed)
    values = {k: convert[k](v) for k, v in data.items()}
    return cls(**values)


def _build(raw, text=None):
    chk = _Checker(text)
    _check_keys(chk, None, raw, TOP_KEYS + list(TABLES))
    if "model" not in raw:
        raise ConfigError("missing required key", key="model")
    top = {}
    conv = {
        "model": lambda v: chk.choice(v, MODELS, None, "model"),
        "mode": lambda v: chk.choice(v, MODES, None, "mode"),
        "dt": lambda v: chk.number(v, None, "dt", positive=True),
        "T": lambda v: chk.number(v, None, "T", positive=True),
        "members": lambda v: chk.integer(v, None, "members", minimum=1),
        "seed": lambda v: chk.integer(v, None, "seed", minimum=0, maximum=U64 - 1),
        "stepper": lambda v: chk.choice(v, STEPPERS, None, "stepper"),
        "output_dir": lambda v: chk.string(v, None, "output_dir"),
        "output_every": lambda v: chk.integer(v, None, "output_every", minimum=1),
        "workers": lambda v: chk.integer(v, None, "workers", minimum=1),
    }
    for key in TOP_KEYS:
        if key in raw:
            top[key] = conv[key](raw[key])

    def nz(t):
        return {
            "kind": lambda v: chk.choice(v, NOISE_KINDS, t, "kind"),
            "nu": lambda v: chk.number(v, t, "nu", nonnegative=True),
            "modes": lambda v: chk.matrix(v, t, "modes", widths=(3, 4)),
            "vectors": lambda v: chk.matrix(v, t, "vectors"),
        }

    converters = {
        "noise": nz("noise"),
        "rigidbody": {
            "inertia": lambda v: chk.vector(v, "rigidbody", "inertia", 3),
            "pi0": lambda v: chk.vector(v, "rigidbody", "pi0", 3),
        },
        "burgers": {
            "n": lambda v: chk.integer(v, "burgers", "n", minimum=4),
            "L": lambda v: chk.number(v, "burgers", "L", positive=True),
            "u0": lambda v: chk.string(v, "burgers", "u0"),
        },
        "peakons": {
            "n": lambda v: chk.integer(v, "peakons", "n", minimum=1),
            "alpha": lambda v: chk.number(v, "peakons", "alpha", positive=True),
            "q0": lambda v: chk.vector(v, "peakons", "q0"),
            "p0": lambda v: chk.vector(v, "peakons", "p0"),
            "kernel": lambda v: chk.choice(v, ("line", "periodic"), "peakons", "kernel"),
            "L": lambda v: chk.number(v, "peakons", "L", positive=True),
            "grid": lambda v: chk.integer(v, "peakons", "grid", minimum=8),
        },
        "euler2d": {
            "n": lambda v: chk.integer(v, "euler2d", "n", minimum=8),
            "omega0": lambda v: chk.string(v, "euler2d", "omega0"),
            # an empty array means no loop
            "loop": lambda v: chk.vector(v, "euler2d", "loop", None if v == [] else 4),
        },
    }
    for name, cls in TABLES.items():
        if name in raw:
            top[name] = _sub(chk, cls, name, raw[name], converters[name])
    return validate(RunConfig(**top), text)


def _pow2(n):
    return n >= 4 and not n & (n - 1)


def validate(cfg, text=None):
    """Cross-field checks; returns ``cfg`` unchanged when valid."""
    chk = _Checker(text)
    if cfg.model not in MODELS:
        chk.error(f"unknown model '{cfg.model}'", None, "model")
    if cfg.mode not in MODES:
        chk.error(f"unknown mode '{cfg.mode}'", None, "mode")
    if cfg.stepper not in STEPPERS:
        chk.error(f"unknown stepper '{cfg.stepper}'", None, "stepper")
    for key in ("members", "output_every", "workers"):
        if getattr(cfg, key) < 1:
            chk.error(f"{key} must be >= 1", None, key)
    if not 0 <= cfg.seed < U64:
        chk.error("seed must be an unsigned 64-bit integer", None, "seed")
    if not (cfg.dt > 0 and cfg.T > 0):
        chk.error("dt and T must be positive", None, "dt")
    steps = round(cfg.T / cfg.dt)
    if steps < 1 or abs(steps * cfg.dt - cfg.T) > 1e-9 * max(cfg.T, 1.0):
        chk.error(f"dt={cfg.dt} does not divide T={cfg.T}", None, "dt")
    nz = cfg.noise
    dim = MODEL_DIM[cfg.model]
    if nz.kind == "constant" and nz.nu < 0:
        chk.error("nu must be nonnegative", "noise", "nu")
    if nz.kind == "fourier":
        if not nz.modes:
            chk.error("fourier noise needs at least one mode", "noise", "modes")
        width = 4 if dim == 2 else None
        if dim == 2 and any(len(m) != width for m in nz.modes):
            chk.error("2D modes are [kx, ky, amp, phase]", "noise", "modes")
        if dim == 3:
            chk.error("fourier noise is not available for the rigid body", "noise", "kind")
    if nz.kind == "vectors":
        if not nz.vectors or any(len(v) != dim for v in nz.vectors):
            chk.error(f"noise vectors must have {dim} components", "noise", "vectors")
    if cfg.model == "burgers" and not _pow2(cfg.burgers.n):
        chk.error("burgers.n must be a power of two", "burgers", "n")
    if cfg.model == "euler2d":
        if not _pow2(cfg.euler2d.n):
            chk.error("euler2d.n must be a power of two", "euler2d", "n")
        if cfg.euler2d.loop and (cfg.euler2d.loop[3] < 64 or cfg.euler2d.loop[2] <= 0
                                 or cfg.euler2d.loop[3] != int(cfg.euler2d.loop[3])):
            chk.error("loop is [cx, cy, radius > 0, P >= 64 integer]", "euler2d", "loop")
    if cfg.model == "peakons":
        pk = cfg.peakons
        if len(pk.q0) != pk.n or len(pk.p0) != pk.n:
            chk.error(f"q0 and p0 must have n={pk.n} entries", "peakons", "q0")
        if cfg.mode == "decoupled" and pk.kernel != "periodic":
            chk.error("decoupled peakons need the periodic kernel", "peakons", "kernel")
    if cfg.model == "rigidbody" and any(i <= 0 for i in cfg.rigidbody.inertia):
        chk.error("moments of inertia must be positive", "rigidbody", "inertia")
    return cfg


def parse_config(text, defaults=None):
    """Parse and validate TOML text. ``defaults`` fills absent top-level keys."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", line=int(m.group(1)) if m else None)
    for key, value in (defaults or {}).items():
        raw.setdefault(key, value)
    return _build(raw, text)


def load_config(path, defaults=None):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config file {path} is not UTF-8") from exc
    return parse_config(text, defaults)


def _toml_string(s):
    """TOML basic string: escape quotes, backslashes and control characters only.

    ``json.dumps`` is not used because it writes astral characters as
    surrogate pairs, which TOML rejects.
    """
    out = []
    for ch in s:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return '"' + "".join(out) + '"'


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return _toml_string(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def serialize_config(cfg):
    """TOML text that parses back to an identical config."""
    data = asdict(cfg)
    lines = [f"{k} = {_toml_value(data[k])}" for k in TOP_KEYS]
    for name in TABLES:
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_toml_value(v)}" for k, v in data[name].items())
    return "\n".join(lines) + "\n"
