"""Experiment configuration files.

An INI-style file (``[section]`` headers, ``key = value`` lines, ``#``
comments). Lists are comma separated. Every key is optional; missing keys
take the defaults below, which follow the published settings except for the
data sizes. See ``configs/desk.ini`` in the repository for a full file.

Sections and keys::

    [experiment]  out, seeds, strategies, threads
    [data]        synthetic, domains, sizes, sample_seed, path.<domain>
    [synthetic]   records, topic_pool, noise, neutral_fraction, seed, topic.<domain>
    [vocab]       size, coverage
    [model]       embed_dim, heights, channels, mlp_hidden, max_len, dropout_p
    [prune]       fraction, rounds, mode
    [train]       batch_size, max_epochs, learning_rate, l2_weight, beta1, beta2, eps, patience
    [transfer]    pairs (``source>target``), strategies, window, margin, factor
    [report]      divergence_scale
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .lottery import InitStrategy, TrainConfig
from .pruning import PruneConfig
from .textcnn import ModelConfig
from .transfer import TransferStrategy

THREADS_ENV = "TICKETFORGE_THREADS"


@dataclass(frozen=True)
class ModelShape:
    """Model hyperparameters except the vocabulary size, which comes from the vocab."""

    embed_dim: int = 417
    heights: tuple[int, ...] = (3, 4, 5)
    channels: int = 127
    mlp_hidden: int = 117
    max_len: int = 500
    dropout_p: float = 0.285

    def resolve(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, embed_dim=self.embed_dim, heights=self.heights,
                           channels=self.channels, mlp_hidden=self.mlp_hidden,
                           max_len=self.max_len, dropout_p=self.dropout_p)


@dataclass(frozen=True)
class SyntheticParams:
    records: int = 1200
    topic_pool: int = 40
    noise: float = 0.0
    neutral_fraction: float = 0.1
    seed: int = 0
    topics: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class TransferParams:
    pairs: tuple[tuple[str, str], ...] = ()
    strategies: tuple[str, ...] = ("masks-reset", "masks-random", "ticket-target")
    window: int = 2
    margin: float = 0.02
    factor: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    out: Path = Path("runs")
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    strategies: tuple[str, ...] = ("reset", "random")
    threads: int = 1
    synthetic: bool = False
    domains: tuple[str, ...] = ()
    paths: dict[str, Path] = field(default_factory=dict)
    sizes: tuple[int, int, int] = (20000, 10000, 10000)
    sample_seed: int = 0
    synth: SyntheticParams = SyntheticParams()
    vocab_size: int = 8000
    vocab_coverage: float = 0.9995
    model: ModelShape = ModelShape()
    prune: PruneConfig = PruneConfig()
    train: TrainConfig = TrainConfig()
    transfer: TransferParams = TransferParams()
    divergence_scale: float = 1.0

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        if not self.seeds:
            raise ConfigError("seed list must not be empty")
        if not self.domains:
            raise ConfigError("no domains configured")
        if len(set(self.domains)) != len(self.domains):
            raise ConfigError("duplicate domain names")
        for s in self.strategies:
            _enum(InitStrategy, s, "strategy")
        for s in self.transfer.strategies:
            _enum(TransferStrategy, s, "transfer strategy")
        for src, tgt in self.transfer.pairs:
            for d in (src, tgt):
                if d not in self.domains:
                    raise ConfigError(f"transfer pair names unknown domain {d!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if not self.synthetic:
            for d in self.domains:
                if d not in self.paths:
                    raise ConfigError(f"no input path configured for domain {d!r} (path.{d})")
                if check_paths and not self.paths[d].exists():
                    raise ConfigError(f"input path for domain {d!r} does not exist: {self.paths[d]}")
        # surfaces invalid model values early
        self.model.resolve(max(self.vocab_size, 2))
        return self

    def effective_threads(self) -> int:
        cap = os.environ.get(THREADS_ENV)
        if cap:
            try:
                return max(1, min(self.threads, int(cap)))
            except ValueError as exc:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from exc
        return self.threads


def paper_preset(cfg: ExperimentConfig) -> ExperimentConfig:
    """Published hyperparameters: vocabulary, model, pruning schedule and optimizer."""
    return replace(cfg, vocab_size=8000, vocab_coverage=0.9995, model=ModelShape(),
                   prune=PruneConfig(0.35, 20), sizes=(20000, 10000, 10000),
                   train=TrainConfig(batch_size=32, max_epochs=15, learning_rate=1e-3,
                                     l2_weight=1e-5))


def _enum(kind, value: str, what: str):
    try:
        return kind(value)
    except ValueError as exc:
        allowed = ", ".join(m.value for m in kind)
        raise ConfigError(f"unknown {what} {value!r} (expected one of: {allowed})") from exc


def _list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


def _bool(raw: str, key: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _convert(kind, raw: str, key: str):
    try:
        if kind is bool:
            return _bool(raw, key)
        if kind == "optional_int":
            return None if raw.strip() in ("", "none") else int(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


def _section(cp: configparser.ConfigParser, name: str) -> dict[str, str]:
    return dict(cp[name]) if cp.has_section(name) else {}


_KNOWN = {
    "experiment": {"out", "seeds", "strategies", "threads"},
    "data": {"synthetic", "domains", "sizes", "sample_seed"},
    "synthetic": {"records", "topic_pool", "noise", "neutral_fraction", "seed"},
    "vocab": {"size", "coverage"},
    "model": {"embed_dim", "heights", "channels", "mlp_hidden", "max_len", "dropout_p"},
    "prune": {"fraction", "rounds", "mode"},
    "train": {"batch_size", "max_epochs", "learning_rate", "l2_weight", "beta1", "beta2", "eps",
              "patience"},
    "transfer": {"pairs", "strategies", "window", "margin", "factor"},
    "report": {"divergence_scale"},
}
_PREFIXED = {"data": "path.", "synthetic": "topic."}


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    for sec in cp.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"unknown config section [{sec}]")
        for key in cp[sec]:
            prefix = _PREFIXED.get(sec)
            if key not in _KNOWN[sec] and not (prefix and key.startswith(prefix)):
                raise ConfigError(f"unknown key {key!r} in [{sec}]")

    base_dir = base_dir or Path(".")
    cfg = ExperimentConfig()
    ex = _section(cp, "experiment")
    data = _section(cp, "data")
    updates: dict = {}
    if "out" in ex:
        updates["out"] = _path(ex["out"], base_dir)
    if "seeds" in ex:
        updates["seeds"] = tuple(_convert(int, s, "seeds") for s in _list(ex["seeds"]))
    if "strategies" in ex:
        updates["strategies"] = tuple(_list(ex["strategies"]))
    if "threads" in ex:
        updates["threads"] = _convert(int, ex["threads"], "threads")
    if "synthetic" in data:
        updates["synthetic"] = _convert(bool, data["synthetic"], "synthetic")
    if "domains" in data:
        updates["domains"] = tuple(_list(data["domains"]))
    if "sizes" in data:
        sizes = tuple(_convert(int, s, "sizes") for s in _list(data["sizes"]))
        if len(sizes) != 3:
            raise ConfigError("sizes must list train, validation and test sizes")
        updates["sizes"] = sizes
    if "sample_seed" in data:
        updates["sample_seed"] = _convert(int, data["sample_seed"], "sample_seed")
    updates["paths"] = {k[5:]: _path(v, base_dir) for k, v in data.items() if k.startswith("path.")}

    syn = _section(cp, "synthetic")
    updates["synth"] = SyntheticParams(
        records=_convert(int, syn.get("records", "1200"), "records"),
        topic_pool=_convert(int, syn.get("topic_pool", "40"), "topic_pool"),
        noise=_convert(float, syn.get("noise", "0.0"), "noise"),
        neutral_fraction=_convert(float, syn.get("neutral_fraction", "0.1"), "neutral_fraction"),
        seed=_convert(int, syn.get("seed", "0"), "seed"),
        topics={k[6:]: v for k, v in syn.items() if k.startswith("topic.")},
    )

    voc = _section(cp, "vocab")
    if "size" in voc:
        updates["vocab_size"] = _convert(int, voc["size"], "vocab size")
    if "coverage" in voc:
        updates["vocab_coverage"] = _convert(float, voc["coverage"], "coverage")

    updates["model"] = _dataclass_from(ModelShape, _section(cp, "model"),
                                       {"heights": lambda s: tuple(int(h) for h in _list(s))})
    pr = _section(cp, "prune")
    updates["prune"] = _dataclass_from(PruneConfig, pr, {"mode": str})
    updates["train"] = _dataclass_from(TrainConfig, _section(cp, "train"),
                                       {"patience": "optional_int"}, skip={"seed"})
    tr = _section(cp, "transfer")
    pairs = []
    for item in _list(tr.get("pairs", "")):
        src, sep, tgt = item.partition(">")
        if not sep or not src.strip() or not tgt.strip():
            raise ConfigError(f"transfer pair must look like source>target, got {item!r}")
        pairs.append((src.strip(), tgt.strip()))
    updates["transfer"] = TransferParams(
        pairs=tuple(pairs),
        strategies=tuple(_list(tr["strategies"])) if "strategies" in tr else TransferParams.strategies,
        window=_convert(int, tr.get("window", "2"), "window"),
        margin=_convert(float, tr.get("margin", "0.02"), "margin"),
        factor=_convert(float, tr.get("factor", "2.0"), "factor"),
    )
    rep = _section(cp, "report")
    if "divergence_scale" in rep:
        updates["divergence_scale"] = _convert(float, rep["divergence_scale"], "divergence_scale")
    return replace(cfg, **updates)


def _path(raw: str, base: Path) -> Path:
    p = Path(raw.strip())
    return p if p.is_absolute() else base / p


def _dataclass_from(kind, values: dict[str, str], special: dict | None = None, skip=frozenset()):
    special = special or {}
    kwargs = {}
    for f in fields(kind):
        if f.name in skip or f.name not in values:
            continue
        conv = special.get(f.name)
        raw = values[f.name]
        if callable(conv) and conv is not str:
            try:
                kwargs[f.name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{f.name}: cannot parse {raw!r}") from exc
        elif conv is str:
            kwargs[f.name] = raw.strip()
        elif conv == "optional_int":
            kwargs[f.name] = _convert("optional_int", raw, f.name)
        else:
            kwargs[f.name] = _convert(type(f.default), raw, f.name)
    return kind(**kwargs)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), p.parent)


def render_config(cfg: ExperimentConfig) -> str:
    """The fully resolved configuration, in the same grammar ``parse_config`` reads."""
    lines = ["# resolved configuration (defaults applied)"]

    def section(name, items):
        lines.append(f"[{name}]")
        for k, v in items:
            lines.append(f"{k} = {v}")
        lines.append("")

    j = ", ".join
    section("experiment", [("out", cfg.out.resolve()), ("seeds", j(map(str, cfg.seeds))),
                           ("strategies", j(cfg.strategies)), ("threads", cfg.threads)])
    data = [("synthetic", str(cfg.synthetic).lower()), ("domains", j(cfg.domains)),
            ("sizes", j(map(str, cfg.sizes))), ("sample_seed", cfg.sample_seed)]
    data += [(f"path.{d}", p.resolve()) for d, p in sorted(cfg.paths.items())]
    section("data", data)
    s = cfg.synth
    section("synthetic", [("records", s.records), ("topic_pool", s.topic_pool),
                          ("noise", repr(s.noise)), ("neutral_fraction", repr(s.neutral_fraction)),
                          ("seed", s.seed)] + [(f"topic.{k}", v) for k, v in sorted(s.topics.items())])
    section("vocab", [("size", cfg.vocab_size), ("coverage", repr(cfg.vocab_coverage))])
    m = cfg.model
    section("model", [("embed_dim", m.embed_dim), ("heights", j(map(str, m.heights))),
                      ("channels", m.channels), ("mlp_hidden", m.mlp_hidden),
                      ("max_len", m.max_len), ("dropout_p", repr(m.dropout_p))])
    section("prune", [("fraction", repr(cfg.prune.fraction)), ("rounds", cfg.prune.rounds),
                      ("mode", cfg.prune.mode)])
    t = cfg.train
    section("train", [("batch_size", t.batch_size), ("max_epochs", t.max_epochs),
                      ("learning_rate", repr(t.learning_rate)), ("l2_weight", repr(t.l2_weight)),
                      ("beta1", repr(t.beta1)), ("beta2", repr(t.beta2)), ("eps", repr(t.eps)),
                      ("patience", "none" if t.patience is None else t.patience)])
    tr = cfg.transfer
    section("transfer", [("pairs", j(f"{a}>{b}" for a, b in tr.pairs)),
                         ("strategies", j(tr.strategies)), ("window", tr.window),
                         ("margin", repr(tr.margin)), ("factor", repr(tr.factor))])
    section("report", [("divergence_scale", repr(cfg.divergence_scale))])
    return "\n".join(lines)
