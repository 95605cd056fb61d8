"""``key = value`` experiment configuration files.

Keys are dotted (``oracle.strong.accuracy = 0.95``); values are ints,
floats, booleans, strings, or comma-separated lists of those. ``#`` starts
a comment. A config names a dataset, one or more oracles, and one or more
grids of ``methods x oracles x k``; the suite is the union of the grids
crossed with ``seeds``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .exceptions import ConfigurationError, ParseError
from .oracle import PRESETS, OracleSpec
from .train import METHODS, NEEDS_PSEUDO_LABELS, SslHyper

ORACLE_KEYS = {
    "accuracy", "confusion", "fallback_rate", "fallback_class", "embedding_dim",
    "embedding_noise", "embedding_scale", "preset", "path",
}
DATA_KEYS = {"classes", "dim", "n_per_class", "separation", "test_fraction", "path"}


def parse_value(text):
    text = text.strip()
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", line=lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", line=lineno)
        out[key] = parse_value(value)
    return out


def _as_list(v):
    return v if isinstance(v, list) else [v]


def parse_method(token):
    """Split ``"zeromatch[alpha_p=0,lambda_p=0.5]"`` into a base method and overrides."""
    token = token.strip()
    if "[" not in token:
        base, overrides = token, {}
    else:
        if not token.endswith("]"):
            raise ConfigurationError(f"malformed method variant {token!r}")
        base, inner = token[:-1].split("[", 1)
        overrides = {}
        for part in inner.split(";") if ";" in inner else inner.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise ConfigurationError(f"malformed override {part!r} in {token!r}")
            k, v = part.split("=", 1)
            overrides[k.strip()] = parse_value(v)
    if base not in METHODS:
        raise ConfigurationError(f"unknown method {base!r}; choose from {METHODS}")
    return base, overrides


def _hyper_value(name, value):
    if name in ("encoder_widths", "head_widths", "betas"):
        return tuple(_as_list(value))
    return value


@dataclass
class ExperimentConfig:
    master_seed: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    data: dict = field(default_factory=dict)
    oracles: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)
    output_dir: str = "results"
    workers: int = 1
    base_dir: str = "."

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seed list must be nonempty")
        if not self.grids:
            raise ConfigurationError("config defines no methods")
        for gname, grid in self.grids.items():
            for m in grid["methods"]:
                base, overrides = parse_method(m)
                self.hyper_for(overrides)
                if base in NEEDS_PSEUDO_LABELS and not grid["oracles"]:
                    raise ConfigurationError(f"grid {gname!r}: {base} needs an oracle")
            for o in grid["oracles"]:
                if o not in self.oracles:
                    raise ConfigurationError(f"grid {gname!r} references unknown oracle {o!r}")
            if not grid["k"]:
                raise ConfigurationError(f"grid {gname!r} has no label budgets")

    def hyper_for(self, overrides=None):
        merged = dict(self.hyper)
        merged.update(overrides or {})
        kw = {k: _hyper_value(k, v) for k, v in merged.items()}
        try:
            return SslHyper().with_overrides(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from None

    def oracle_spec(self, name, seed):
        o = dict(self.oracles[name])
        o.pop("path", None)
        preset = o.pop("preset", None)
        if preset is not None and "accuracy" not in o:
            o["accuracy"] = PRESETS[preset]
        return OracleSpec(seed=seed, **o)

    def oracle_path(self, name):
        path = self.oracles[name].get("path")
        return None if path is None else str(Path(self.base_dir) / path)

    def cells(self):
        """Every ``(method, oracle, k, seed)`` coordinate, deduplicated, in grid order."""
        seen = set()
        out = []
        for grid in self.grids.values():
            oracles = grid["oracles"] or [None]
            for method in grid["methods"]:
                for oracle in oracles:
                    for k in grid["k"]:
                        for seed in self.seeds:
                            cell = (method, oracle, int(k), int(seed))
                            if cell not in seen:
                                seen.add(cell)
                                out.append(cell)
        return out

    def canonical(self):
        return {
            "master_seed": self.master_seed,
            "data": self.data,
            "oracles": self.oracles,
            "hyper": self.hyper,
        }


def load_config(source, overrides=None):
    """Read a config from a path, or a built-in name such as ``"acceptance"``."""
    path = Path(source)
    if path.exists():
        text = path.read_text()
        base_dir = str(path.parent)
    else:
        try:
            text = resources.files("zeromatch.configs").joinpath(f"{source}.cfg").read_text()
        except FileNotFoundError:
            raise ConfigurationError(f"no config file or built-in config named {source!r}") from None
        base_dir = "."
    raw = parse_config_text(text)
    raw.update(overrides or {})
    return config_from_dict(raw, base_dir)


def config_from_dict(raw, base_dir="."):
    data, oracles, grids, hyper = {}, {}, {}, {}
    top = {}
    for key, value in raw.items():
        parts = key.split(".")
        section = parts[0]
        if section == "data":
            if len(parts) != 2 or parts[1] not in DATA_KEYS:
                raise ConfigurationError(f"unknown data key {key!r}")
            data[parts[1]] = value
        elif section == "oracle":
            name, sub = ("default", parts[1]) if len(parts) == 2 else (parts[1], parts[2])
            if len(parts) not in (2, 3) or sub not in ORACLE_KEYS:
                raise ConfigurationError(f"unknown oracle key {key!r}")
            oracles.setdefault(name, {})[sub] = value
        elif section == "grid":
            if len(parts) != 3 or parts[2] not in ("methods", "oracles", "k"):
                raise ConfigurationError(f"unknown grid key {key!r}")
            grids.setdefault(parts[1], {})[parts[2]] = _as_list(value)
        elif section == "hyper":
            if len(parts) != 2:
                raise ConfigurationError(f"unknown hyper key {key!r}")
            hyper[parts[1]] = value
        elif len(parts) == 1:
            top[key] = value
        else:
            raise ConfigurationError(f"unknown key {key!r}")

    if "methods" in top:
        grids["default"] = {
            "methods": _as_list(top.pop("methods")),
            "oracles": _as_list(top.pop("oracles")) if "oracles" in top else sorted(oracles),
            "k": _as_list(top.pop("k", [1])),
        }
    for name, grid in grids.items():
        if "methods" not in grid:
            raise ConfigurationError(f"grid {name!r} lists no methods")
        grid.setdefault("oracles", sorted(oracles))
        grid.setdefault("k", [1])
        grid["methods"] = [str(m) for m in grid["methods"]]
        grid["oracles"] = [str(o) for o in grid["oracles"]]
    for name, spec in oracles.items():
        if "confusion" in spec and isinstance(spec["confusion"], list):
            raise ConfigurationError(f"oracle {name!r}: give custom confusion matrices via the API")
        if "preset" in spec and spec["preset"] not in PRESETS:
            raise ConfigurationError(f"oracle {name!r}: unknown preset {spec['preset']!r}")

    known_top = {"seed", "seeds", "out", "workers"}
    unknown = set(top) - known_top
    if unknown:
        raise ConfigurationError(f"unknown keys: {sorted(unknown)}")
    return ExperimentConfig(
        master_seed=int(top.get("seed", 0)),
        seeds=[int(s) for s in _as_list(top.get("seeds", [0, 1, 2]))],
        data=data,
        oracles=oracles,
        grids=grids,
        hyper=hyper,
        output_dir=str(top.get("out", "results")),
        workers=int(top.get("workers", 1)),
        base_dir=base_dir,
    )


def derive_seed(master_seed, *coords):
    """Stable 63-bit seed from the master seed and any hashable coordinates."""
    payload = json.dumps([master_seed, *coords], separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:8], "big") >> 1


def fingerprint(config, method, oracle, k, seed):
    payload = {
        "config": config.canonical(),
        "cell": [method, oracle, int(k), int(seed)],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
