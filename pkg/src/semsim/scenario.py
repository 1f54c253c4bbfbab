"""Scenario files: flat ``key.path = value`` lines with ``#`` comments.

Values are numbers, ``true``/``false``, bare words, or bracketed lists and
matrices (``[1, 2]``, ``[[0, 1], [1, 0]]``).  Indexed groups such as
``attack.0.latency_s`` declare repeated items.  See ``scenarios/*.scn``.
"""
import ast
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import LinkAttack
from .graph import CyberGraph, GraphError, preset_weights
from .plant import DerParams, LineNetwork, default_network
from .secondary import SecondaryGains
from .semantic import SamplerConfig


class ScenarioError(ValueError):
    pass


class ScenarioParseError(ScenarioError):
    def __init__(self, msg, line=None, source="<scenario>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + msg)


class ScenarioValidationError(ScenarioError):
    pass


_KEY_RE = re.compile(r"^[a-z_][a-z0-9_]*(\.[a-z0-9_]+)*$")


def _parse_value(text):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    if text.startswith("["):
        fixed = re.sub(r"(?<![\w.])inf(?![\w.])", "1e999", text)
        val = ast.literal_eval(fixed)
        if not isinstance(val, list):
            raise ValueError("expected a list")
        return val
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if (text[0] == text[-1]) and text[0] in "\"'":
        return text[1:-1]
    if re.fullmatch(r"[A-Za-z0-9_.>,\- ]+", text):
        return text
    raise ValueError(f"cannot interpret value {text!r}")


def parse_text(text, source="<scenario>"):
    """Raw ``{key: (value, line_no)}`` mapping."""
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioParseError(f"expected 'key = value', got {raw.strip()!r}", no, source)
        key, val = (s.strip() for s in line.split("=", 1))
        if not _KEY_RE.match(key):
            raise ScenarioParseError(f"malformed key {key!r}", no, source)
        if not val:
            raise ScenarioParseError(f"missing value for {key!r}", no, source)
        if key in out:
            raise ScenarioParseError(f"duplicate key {key!r} (first set on line {out[key][1]})", no, source)
        try:
            out[key] = (_parse_value(val), no)
        except (ValueError, SyntaxError) as exc:
            raise ScenarioParseError(f"bad value for {key!r}: {exc}", no, source) from None
    return out


@dataclass
class AttackSpec:
    attack: LinkAttack
    links: object = "all"          # "all" or list of (src, dst)
    local_latency_s: float = 0.0


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    dt_s: float = 1e-4
    sc_period_s: float = 1e-3
    duration_s: float = 10.0
    mode: str = "plant"
    graphs: list = field(default_factory=list)
    der_params: list = field(default_factory=list)
    network: LineNetwork = None
    gains: SecondaryGains = field(default_factory=SecondaryGains)
    implicit_pi: bool = False
    secondary_enabled: bool = True
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    attacks: list = field(default_factory=list)
    load_events: list = field(default_factory=list)
    compensation_enabled: bool = True
    codec: bool = False
    watch_link: tuple = None
    integrator_init: np.ndarray = None

    @property
    def n(self):
        return self.graphs[0][1].n

    @property
    def substeps(self):
        return int(round(self.sc_period_s / self.dt_s))

    @property
    def rows(self):
        return int(math.floor(self.duration_s / self.sc_period_s + 1e-9)) + 1

    def event_times(self):
        times = [t for t, _ in self.load_events]
        times += [t for t, _ in self.graphs[1:]]
        times += [a.attack.active_window[0] for a in self.attacks if a.attack.active_window[0] > 0]
        return sorted(set(times))

    def validate(self):
        _validate(self)
        return self


def _validate(s):
    err = ScenarioValidationError
    if not s.duration_s > 0:
        raise err("sim.duration_s must be positive")
    if not s.dt_s > 0 or s.dt_s > 1e-3:
        raise err("sim.dt_s must lie in (0, 1e-3]")
    ratio = s.sc_period_s / s.dt_s
    if s.sc_period_s <= 0 or abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        raise err("sim.sc_period_s must be a positive integer multiple of sim.dt_s")
    if s.mode not in ("plant", "integrator"):
        raise err(f"sim.mode must be 'plant' or 'integrator', got {s.mode!r}")
    if not s.graphs:
        raise err("at least one graph is required")
    if s.graphs[0][0] != 0:
        raise err("the first graph must start at time 0")
    n = s.graphs[0][1].n
    for (t0, g0), (t1, g1) in zip(s.graphs, s.graphs[1:]):
        if not t1 > t0:
            raise err("graph switch times must be strictly increasing")
        if g1.n != n:
            raise err("all graphs must have the same agent count")
    if len(s.der_params) != n:
        raise err(f"need {n} DER parameter sets, got {len(s.der_params)}")
    if s.network is None or s.network.n != n:
        raise err("network size does not match the agent count")
    for t, scale in s.load_events:
        if not (t >= 0 and scale > 0 and math.isfinite(scale)):
            raise err(f"bad load event ({t}, {scale})")
    for a in s.attacks:
        if a.links != "all":
            for src, dst in a.links:
                if not (0 <= src < n and 0 <= dst < n) or src == dst:
                    raise err(f"attack link {src}>{dst} is not a valid pair")
        if a.local_latency_s < 0:
            raise err("local_latency_s must be >= 0")
    if s.watch_link is not None:
        src, dst = s.watch_link
        if not (0 <= src < n and 0 <= dst < n) or src == dst:
            raise err("sim.watch_link must name a valid src>dst pair")
    if s.mode == "integrator":
        if s.integrator_init is None or s.integrator_init.shape != (2, n):
            raise err("integrator mode needs integrator.init_w and integrator.init_v of length n")


# ---------------------------------------------------------------------------
# key table
# ---------------------------------------------------------------------------

_TOP = {
    "name": str, "seed": int,
    "sim.dt_s": float, "sim.sc_period_s": float, "sim.duration_s": float, "sim.mode": str,
    "sim.compensation": bool, "sim.codec": bool, "sim.watch_link": str, "sim.n": int,
    "plant.m_p": "vec", "plant.n_q": "vec", "plant.omega_nom": "vec", "plant.v_nom": "vec",
    "plant.p_rating_w": "vec", "plant.omega_f": "vec", "plant.t_v_s": "vec",
    "network.b_scale": float, "network.load_scale": float, "network.susceptance": "mat",
    "network.load_p_w": "vec", "network.load_q_var": "vec", "network.s_base_w": float,
    "gains.g": float, "gains.kp_w": float, "gains.ki_w": float, "gains.kp_v": float,
    "gains.ki_v": float, "gains.implicit_pi": bool, "gains.enabled": bool,
    "sampler.window_w": int, "sampler.downsample_d": int, "sampler.fir": "vec",
    "sampler.alpha": float, "sampler.t_const_w_s": float, "sampler.t_const_v_s": float,
    "sampler.k1": float, "sampler.k2": float, "sampler.relevance_tol": float,
    "integrator.init_w": "vec", "integrator.init_v": "vec",
}
_GROUPS = {
    "graph": {"time_s": float, "preset": str, "n": int, "weight": float, "weights": "mat", "directed": bool},
    "attack": {"links": str, "latency_s": float, "dropout_p": float, "tsa_offset_samples": int,
               "sample_period_s": float, "start_s": float, "end_s": float, "local_latency_s": float},
    "load_event": {"time_s": float, "scale": float},
}


def _coerce(key, kind, val, line, source):
    try:
        if kind is str:
            return str(val)
        if kind is bool:
            if not isinstance(val, bool):
                raise TypeError("expected true/false")
            return val
        if kind is int:
            if isinstance(val, bool) or not (isinstance(val, int) or (isinstance(val, float) and val.is_integer())):
                raise TypeError("expected an integer")
            return int(val)
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise TypeError("expected a number")
            return float(val)
        if kind == "vec":
            arr = np.array(val if isinstance(val, list) else [val], dtype=np.float64)
            if arr.ndim != 1:
                raise TypeError("expected a number or flat list")
            return arr
        if kind == "mat":
            arr = np.array(val, dtype=np.float64)
            if arr.ndim != 2:
                raise TypeError("expected a matrix [[...], ...]")
            return arr
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{key}: {exc}", line, source) from None
    raise AssertionError(kind)


def _link_list(text):
    if text.strip() == "all":
        return "all"
    out = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)\s*>\s*(\d+)", part)
        if not m:
            raise ValueError(f"bad link {part!r}; use src>dst")
        out.append((int(m.group(1)), int(m.group(2))))
    return out


def _per_agent(vec, n, key):
    if vec is None:
        return None
    if vec.size == 1:
        return np.full(n, vec[0])
    if vec.size != n:
        raise ScenarioValidationError(f"{key} needs 1 or {n} entries, got {vec.size}")
    return vec


def from_mapping(raw, source="<scenario>"):
    """Build and validate a :class:`Scenario` from :func:`parse_text` output."""
    top = {}
    groups = {g: {} for g in _GROUPS}
    for key, (val, line) in raw.items():
        if key in _TOP:
            top[key] = _coerce(key, _TOP[key], val, line, source)
            continue
        parts = key.split(".")
        if len(parts) == 3 and parts[0] in _GROUPS and parts[1].isdigit() and parts[2] in _GROUPS[parts[0]]:
            kind = _GROUPS[parts[0]][parts[2]]
            groups[parts[0]].setdefault(int(parts[1]), {})[parts[2]] = (
                _coerce(key, kind, val, line, source), line)
            continue
        raise ScenarioValidationError(f"{source}:{line}: unknown key {key!r}")

    try:
        return _build(top, groups, source).validate()
    except (GraphError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioValidationError(f"{source}: {exc}") from None


def _build(top, groups, source):
    s = Scenario()
    s.name = top.get("name", Path(source).stem if source != "<scenario>" else "scenario")
    s.seed = top.get("seed", 0)
    s.dt_s = top.get("sim.dt_s", s.dt_s)
    s.sc_period_s = top.get("sim.sc_period_s", s.sc_period_s)
    s.duration_s = top.get("sim.duration_s", s.duration_s)
    s.mode = top.get("sim.mode", s.mode)
    s.compensation_enabled = top.get("sim.compensation", True)
    s.codec = top.get("sim.codec", False)

    default_n = top.get("sim.n", 7)
    graph_items = groups["graph"] or {0: {"preset": ("complete", None)}}
    for idx in sorted(graph_items):
        item = {k: v for k, (v, _) in graph_items[idx].items()}
        t = item.get("time_s", 0.0)
        directed = item.get("directed", False)
        if "weights" in item:
            w = item["weights"]
        else:
            w = preset_weights(item.get("preset", "complete"), item.get("n", default_n), item.get("weight", 1.0))
        s.graphs.append((t, CyberGraph(w, undirected=not directed)))
    n = s.graphs[0][1].n

    pk = {"plant.m_p": "m_p", "plant.n_q": "n_q", "plant.omega_nom": "omega_nom", "plant.v_nom": "v_nom",
          "plant.p_rating_w": "p_rating", "plant.omega_f": "omega_f", "plant.t_v_s": "t_v"}
    cols = {field_: _per_agent(top.get(key), n, key) for key, field_ in pk.items()}
    s.der_params = [DerParams(**{f: float(c[j]) for f, c in cols.items() if c is not None}) for j in range(n)]

    net = default_network(n, top.get("network.b_scale", 10.0), top.get("network.load_scale", 0.8))
    if "network.susceptance" in top:
        net.susceptances = top["network.susceptance"]
    if "network.load_p_w" in top:
        net.load_p = _per_agent(top["network.load_p_w"], n, "network.load_p_w")
    if "network.load_q_var" in top:
        net.load_q = _per_agent(top["network.load_q_var"], n, "network.load_q_var")
    if "network.s_base_w" in top:
        net.s_base = top["network.s_base_w"]
    s.network = LineNetwork(net.susceptances, net.load_p, net.load_q, net.s_base, net.v_base)

    p0 = s.der_params[0]
    gk = {k.split(".")[1]: v for k, v in top.items()
          if k.startswith("gains.") and k not in ("gains.implicit_pi", "gains.enabled")}
    s.gains = SecondaryGains(omega_nom=p0.omega_nom, **gk)
    s.implicit_pi = top.get("gains.implicit_pi", False)
    s.secondary_enabled = top.get("gains.enabled", True)

    sk = {"sampler.window_w": "window_w", "sampler.downsample_d": "downsample_d", "sampler.alpha": "alpha",
          "sampler.t_const_w_s": "t_const_w", "sampler.t_const_v_s": "t_const_v", "sampler.k1": "k1",
          "sampler.k2": "k2", "sampler.relevance_tol": "relevance_tol"}
    skw = {f: top[k] for k, f in sk.items() if k in top}
    skw.setdefault("t_const_w", s.gains.t_w if s.gains.kp_w > 0 else 0.1 / 42.0)
    skw.setdefault("t_const_v", s.gains.t_v if s.gains.kp_v > 0 else 0.1 / 1.5)
    if "sampler.fir" in top:
        skw["fir"] = tuple(top["sampler.fir"])
        skw.setdefault("window_w", len(skw["fir"]))
    s.sampler = SamplerConfig(**skw)

    for idx in sorted(groups["attack"]):
        item = {k: v for k, (v, _) in groups["attack"][idx].items()}
        try:
            links = _link_list(item.get("links", "all"))
        except ValueError as exc:
            raise ScenarioValidationError(f"attack.{idx}.links: {exc}") from None
        atk = LinkAttack(
            latency_s=item.get("latency_s", 0.0),
            dropout_p=item.get("dropout_p", 0.0),
            tsa_offset_samples=item.get("tsa_offset_samples", 0),
            sample_period_s=item.get("sample_period_s", 1e-4),
            active_window=(item.get("start_s", 0.0), item.get("end_s", math.inf)),
        )
        s.attacks.append(AttackSpec(atk, links, item.get("local_latency_s", 0.0)))

    for idx in sorted(groups["load_event"]):
        item = {k: v for k, (v, _) in groups["load_event"][idx].items()}
        if "time_s" not in item or "scale" not in item:
            raise ScenarioValidationError(f"load_event.{idx} needs time_s and scale")
        s.load_events.append((item["time_s"], item["scale"]))
    s.load_events.sort(key=lambda e: e[0])

    if "sim.watch_link" in top:
        links = _link_list(top["sim.watch_link"])
        if links == "all" or len(links) != 1:
            raise ScenarioValidationError("sim.watch_link must be a single src>dst pair")
        s.watch_link = links[0]
    if s.mode == "integrator":
        iw = _per_agent(top.get("integrator.init_w"), n, "integrator.init_w")
        iv = _per_agent(top.get("integrator.init_v"), n, "integrator.init_v")
        if iw is not None and iv is not None:
            s.integrator_init = np.stack([iw, iv])
    return s


def loads(text, source="<scenario>"):
    return from_mapping(parse_text(text, source), source)


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise ScenarioParseError(f"not a text file: {exc}", None, str(path)) from None
    return loads(text, str(path))


def bundled_names():
    root = resources.files("semsim") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def bundled_path(name):
    root = resources.files("semsim") / "scenarios"
    p = root / (name if name.endswith(".scn") else name + ".scn")
    if not p.is_file():
        raise FileNotFoundError(f"no bundled scenario {name!r}")
    return Path(str(p))


def resolve(spec):
    """A path, or the name of a bundled scenario."""
    p = Path(spec)
    if p.exists():
        return p
    return bundled_path(spec)
