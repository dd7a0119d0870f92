"""Experiment configuration: schema, validation, and object builders.

Configs are YAML mappings.  The grammar, with defaults in parentheses:

    experiment: <name>                     required
    profile: watermark-8k                  (watermark-8k) frame constants
    seed: <int>                            (0)
    trials: <int>                          (20) Monte Carlo trials per cell
    out: <dir>                             ("out")
    codebook:
      path: <file.swcb>                    one of path / synthetic
      synthetic: {n_clusters, cluster_size, seed, ...}
    wavebank:
      path: <file.swwb>                    one of path / init
      init: {L, seed, scheme}              K comes from the codebook
    channels:                              nonempty, unique ids
      - id: <name>
        kind: ideal | awgn | fir | tvir
        taps: [[re, im], ...]              fir only
        path: <file.swir>                  tvir: one of path / synth
        synth: {seed, T, M, dt, rho, spread}
        group: <name>                      optional multicast tag
    snr_grid: [<db>, ...]                  nonempty
    systems:                               nonempty, unique ids
      - id: <name>
        type: wavebank | digital | softcast
        bank: {path | init}                wavebank only; falls back to
                                           the top-level wavebank entry
        modulation: bpsk | qpsk            digital (bpsk)
        fec: {n, rate, seed}               digital, optional
        budget: <slots>                    softcast (768)
    train:
      steps: <int>                         required inside train
      channel: <channel id>                required inside train
      learning_rate (1e-3), batch_frames (4), optimizer (adam),
      sampling (uniform), snr_schedule: [[db, weight], ...],
      checkpoint_every (0), stream: <file.swts>
    eval:
      n_tokens (64), image: {n (64), seed (3), sigma (3.0)}
    multicast:
      group: <tag>   system: <system id>   snr_db: <db>   n_tokens (64)
    ber:
      modulations ([bpsk]), fec_rates ([null, 0.33]), n_tokens (200),
      fec_n (1024)
    gradcheck:
      K (16), L (8), n_coords (64), snr_db (20.0), channels: [ids],
      corrupt_adjoint (false)              negative control: flips one
                                           adjoint so the check must fail
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .channel import ChannelModel, load_tvir
from .codebook import Codebook, load_codebook
from .fixtures import clustered_codebook, make_ar1_tvir
from .ofdm import OfdmFrameSpec
from .wavebank import WavebankParams, init_wavebank, load_wavebank

PROFILES = ("watermark-8k",)
CHANNEL_KINDS = ("ideal", "awgn", "fir", "tvir")
SYSTEM_TYPES = ("wavebank", "digital", "softcast")


class ConfigError(ValueError):
    """Validation failures, one dotted-path message per problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class ChannelSpec:
    id: str
    kind: str
    taps: tuple = ()
    path: str | None = None
    synth: dict | None = None
    group: str | None = None


@dataclass(frozen=True)
class SystemSpec:
    id: str
    type: str
    modulation: str = "bpsk"
    fec: dict | None = None
    budget: int = 768
    bank: dict | None = None


@dataclass(frozen=True)
class TrainSpec:
    steps: int
    channel: str
    learning_rate: float = 1e-3
    batch_frames: int = 4
    optimizer: str = "adam"
    sampling: str = "uniform"
    snr_schedule: tuple | None = None
    checkpoint_every: int = 0
    stream: str | None = None


@dataclass(frozen=True)
class EvalSpec:
    n_tokens: int = 64
    image_n: int = 64
    image_seed: int = 3
    image_sigma: float = 3.0


@dataclass(frozen=True)
class MulticastSpec:
    group: str
    system: str
    snr_db: float
    n_tokens: int = 64


@dataclass(frozen=True)
class BerSpec:
    modulations: tuple = ("bpsk",)
    fec_rates: tuple = (None, 0.33)
    n_tokens: int = 200
    fec_n: int = 1024


@dataclass(frozen=True)
class GradcheckSpec:
    K: int = 16
    L: int = 8
    n_coords: int = 64
    snr_db: float = 20.0
    channels: tuple = ()
    corrupt_adjoint: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    profile: str = "watermark-8k"
    seed: int = 0
    trials: int = 20
    out: str = "out"
    codebook: dict | None = None
    wavebank: dict | None = None
    channels: tuple = ()
    snr_grid: tuple = ()
    systems: tuple = ()
    wavelengths: tuple = (9, 10, 13, 30)
    train: TrainSpec | None = None
    eval: EvalSpec = field(default_factory=EvalSpec)
    multicast: MulticastSpec | None = None
    ber: BerSpec = field(default_factory=BerSpec)
    gradcheck: GradcheckSpec | None = None

    def frame_spec(self) -> OfdmFrameSpec:
        return OfdmFrameSpec()  # the single shipped profile

    def channel_by_id(self, cid: str) -> ChannelSpec:
        for ch in self.channels:
            if ch.id == cid:
                return ch
        raise KeyError(f"no channel with id {cid!r}")

    def system_by_id(self, sid: str) -> SystemSpec:
        for s in self.systems:
            if s.id == sid:
                return s
        raise KeyError(f"no system with id {sid!r}")


def _want(mapping, key, types, errors, path, required=False, default=None):
    if key not in mapping:
        if required:
            errors.append(f"{path}.{key}: required key missing")
        return default
    val = mapping[key]
    if not isinstance(val, types):
        names = (
            types.__name__
            if isinstance(types, type)
            else "/".join(t.__name__ for t in types)
        )
        errors.append(f"{path}.{key}: expected {names}, got {type(val).__name__}")
        return default
    return val


def _check_file(path_str, errors, path):
    if path_str is not None and not os.path.isfile(path_str):
        errors.append(f"{path}: file not found {path_str!r}")


_SYNTH_CODEBOOK_KEYS = frozenset(
    ("n_clusters", "cluster_size", "center_scale", "offset_scale",
     "jitter", "seed")
)
_BANK_INIT_KEYS = frozenset(("L", "seed", "scheme"))


def _check_keys(raw, allowed, errors, path):
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected a mapping")
        return
    for key in sorted(set(raw) - allowed):
        errors.append(f"{path}.{key}: unknown key")


def _parse_channel(raw, i, errors):
    path = f"channels[{i}]"
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    cid = _want(raw, "id", str, errors, path, required=True)
    kind = _want(raw, "kind", str, errors, path, required=True)
    if kind is not None and kind not in CHANNEL_KINDS:
        errors.append(f"{path}.kind: unknown kind {kind!r}")
        return None
    taps = ()
    if kind == "fir":
        raw_taps = _want(raw, "taps", list, errors, path, required=True)
        if raw_taps:
            try:
                taps = tuple(complex(re, im) for re, im in raw_taps)
            except (TypeError, ValueError):
                errors.append(f"{path}.taps: expected [re, im] pairs")
    fpath = _want(raw, "path", str, errors, path)
    synth = _want(raw, "synth", dict, errors, path)
    if kind == "tvir":
        if (fpath is None) == (synth is None):
            errors.append(f"{path}: tvir needs exactly one of path / synth")
        _check_file(fpath, errors, f"{path}.path")
    group = _want(raw, "group", str, errors, path)
    if cid is None or kind is None:
        return None
    return ChannelSpec(id=cid, kind=kind, taps=taps, path=fpath,
                       synth=synth, group=group)


def _parse_system(raw, i, errors):
    path = f"systems[{i}]"
    if not isinstance(raw, dict):
        errors.append(f"{path}: expected a mapping")
        return None
    sid = _want(raw, "id", str, errors, path, required=True)
    stype = _want(raw, "type", str, errors, path, required=True)
    if stype is not None and stype not in SYSTEM_TYPES:
        errors.append(f"{path}.type: unknown type {stype!r}")
        return None
    modulation = _want(raw, "modulation", str, errors, path, default="bpsk")
    if modulation not in ("bpsk", "qpsk"):
        errors.append(f"{path}.modulation: unknown modulation {modulation!r}")
    fec = _want(raw, "fec", dict, errors, path)
    if fec is not None:
        rate = fec.get("rate")
        if not isinstance(rate, (int, float)) or not 0.0 < rate < 1.0:
            errors.append(f"{path}.fec.rate: expected a rate in (0, 1)")
    budget = _want(raw, "budget", int, errors, path, default=768)
    bank = _want(raw, "bank", dict, errors, path)
    if bank is not None and ("path" in bank) == ("init" in bank):
        errors.append(f"{path}.bank: needs exactly one of path / init")
    if bank is not None and "path" in bank:
        _check_file(bank["path"], errors, f"{path}.bank.path")
    if bank is not None and "init" in bank and "path" not in bank:
        _check_keys(bank["init"], _BANK_INIT_KEYS, errors, f"{path}.bank.init")
        if isinstance(bank["init"], dict) and "L" not in bank["init"]:
            errors.append(f"{path}.bank.init.L: required")
    if sid is None or stype is None:
        return None
    return SystemSpec(id=sid, type=stype, modulation=modulation,
                      fec=fec, budget=budget, bank=bank)


def _parse_train(raw, errors, channel_ids):
    path = "train"
    steps = _want(raw, "steps", int, errors, path, required=True)
    channel = _want(raw, "channel", str, errors, path, required=True)
    if channel is not None and channel not in channel_ids:
        errors.append(f"{path}.channel: unknown channel id {channel!r}")
    schedule = _want(raw, "snr_schedule", list, errors, path)
    sched = None
    if schedule is not None:
        try:
            sched = tuple((float(db), float(w)) for db, w in schedule)
        except (TypeError, ValueError):
            errors.append(f"{path}.snr_schedule: expected [db, weight] pairs")
    stream = _want(raw, "stream", str, errors, path)
    _check_file(stream, errors, f"{path}.stream")
    if steps is None or channel is None:
        return None
    return TrainSpec(
        steps=steps,
        channel=channel,
        learning_rate=float(_want(raw, "learning_rate", (int, float), errors,
                                  path, default=1e-3)),
        batch_frames=_want(raw, "batch_frames", int, errors, path, default=4),
        optimizer=_want(raw, "optimizer", str, errors, path, default="adam"),
        sampling=_want(raw, "sampling", str, errors, path, default="uniform"),
        snr_schedule=sched,
        checkpoint_every=_want(raw, "checkpoint_every", int, errors, path,
                               default=0),
        stream=stream,
    )


def parse_config(data: dict, base_dir: str = ".") -> ExperimentConfig:
    """Validate a parsed YAML mapping; raises ConfigError listing every
    problem found, each prefixed with its dotted path."""
    errors: list = []
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a mapping"])

    experiment = _want(data, "experiment", str, errors, "top", required=True)
    profile = _want(data, "profile", str, errors, "top", default="watermark-8k")
    if profile not in PROFILES:
        errors.append(f"profile: unknown profile {profile!r}")
    seed = _want(data, "seed", int, errors, "top", default=0)
    trials = _want(data, "trials", int, errors, "top", default=20)
    if trials is not None and trials < 1:
        errors.append("trials: must be >= 1")
    out = _want(data, "out", str, errors, "top", default="out")

    codebook = _want(data, "codebook", dict, errors, "top")
    if codebook is not None:
        if ("path" in codebook) == ("synthetic" in codebook):
            errors.append("codebook: needs exactly one of path / synthetic")
        elif "path" in codebook:
            _check_file(codebook["path"], errors, "codebook.path")
        else:
            _check_keys(codebook["synthetic"], _SYNTH_CODEBOOK_KEYS, errors,
                        "codebook.synthetic")

    wavebank = _want(data, "wavebank", dict, errors, "top")
    if wavebank is not None:
        if ("path" in wavebank) == ("init" in wavebank):
            errors.append("wavebank: needs exactly one of path / init")
        elif "path" in wavebank:
            _check_file(wavebank["path"], errors, "wavebank.path")
        else:
            _check_keys(wavebank["init"], _BANK_INIT_KEYS, errors,
                        "wavebank.init")
            if isinstance(wavebank["init"], dict) and "L" not in wavebank["init"]:
                errors.append("wavebank.init.L: required")

    channels = []
    for i, raw in enumerate(_want(data, "channels", list, errors, "top",
                                  default=[]) or []):
        ch = _parse_channel(raw, i, errors)
        if ch is not None:
            channels.append(ch)
    ids = [c.id for c in channels]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        errors.append(f"channels: duplicate id {dup!r}")

    snr_grid = tuple(
        float(v) for v in (_want(data, "snr_grid", list, errors, "top",
                                 default=[]) or [])
    )

    systems = []
    for i, raw in enumerate(_want(data, "systems", list, errors, "top",
                                  default=[]) or []):
        s = _parse_system(raw, i, errors)
        if s is not None:
            systems.append(s)
    sids = [s.id for s in systems]
    for dup in sorted({i for i in sids if sids.count(i) > 1}):
        errors.append(f"systems: duplicate id {dup!r}")

    train = None
    if "train" in data:
        raw = _want(data, "train", dict, errors, "top", default={})
        if raw is not None:
            train = _parse_train(raw, errors, set(ids))

    eval_spec = EvalSpec()
    if "eval" in data:
        raw = _want(data, "eval", dict, errors, "top", default={}) or {}
        image = raw.get("image") or {}
        eval_spec = EvalSpec(
            n_tokens=_want(raw, "n_tokens", int, errors, "eval", default=64),
            image_n=image.get("n", 64),
            image_seed=image.get("seed", 3),
            image_sigma=float(image.get("sigma", 3.0)),
        )

    multicast = None
    if "multicast" in data:
        raw = _want(data, "multicast", dict, errors, "top", default={}) or {}
        group = _want(raw, "group", str, errors, "multicast", required=True)
        system = _want(raw, "system", str, errors, "multicast", required=True)
        snr_db = _want(raw, "snr_db", (int, float), errors, "multicast",
                       required=True)
        if system is not None and system not in sids:
            errors.append(f"multicast.system: unknown system id {system!r}")
        if group is not None:
            members = [c for c in channels if c.group == group]
            if len(members) < 2:
                errors.append(
                    f"multicast.group: group {group!r} has {len(members)} "
                    "receivers, need at least 2"
                )
        if group is not None and system is not None and snr_db is not None:
            multicast = MulticastSpec(
                group=group, system=system, snr_db=float(snr_db),
                n_tokens=_want(raw, "n_tokens", int, errors, "multicast",
                               default=64),
            )

    ber = BerSpec()
    if "ber" in data:
        raw = _want(data, "ber", dict, errors, "top", default={}) or {}
        mods = tuple(raw.get("modulations", ["bpsk"]))
        for m in mods:
            if m not in ("bpsk", "qpsk"):
                errors.append(f"ber.modulations: unknown modulation {m!r}")
        rates = tuple(
            None if r is None else float(r) for r in raw.get("fec_rates", [None, 0.33])
        )
        ber = BerSpec(
            modulations=mods,
            fec_rates=rates,
            n_tokens=_want(raw, "n_tokens", int, errors, "ber", default=200),
            fec_n=_want(raw, "fec_n", int, errors, "ber", default=1024),
        )

    gradcheck = None
    if "gradcheck" in data:
        raw = _want(data, "gradcheck", dict, errors, "top", default={}) or {}
        chans = tuple(raw.get("channels", []))
        for c in chans:
            if c not in ids:
                errors.append(f"gradcheck.channels: unknown channel id {c!r}")
        gradcheck = GradcheckSpec(
            K=_want(raw, "K", int, errors, "gradcheck", default=16),
            L=_want(raw, "L", int, errors, "gradcheck", default=8),
            n_coords=_want(raw, "n_coords", int, errors, "gradcheck", default=64),
            snr_db=float(_want(raw, "snr_db", (int, float), errors, "gradcheck",
                               default=20.0)),
            channels=chans,
            corrupt_adjoint=bool(raw.get("corrupt_adjoint", False)),
        )

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        experiment=experiment,
        profile=profile,
        seed=seed,
        trials=trials,
        out=out,
        codebook=codebook,
        wavebank=wavebank,
        channels=tuple(channels),
        snr_grid=snr_grid,
        systems=tuple(systems),
        wavelengths=tuple(data.get("wavelengths", (9, 10, 13, 30))),
        train=train,
        eval=eval_spec,
        multicast=multicast,
        ber=ber,
        gradcheck=gradcheck,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config: file not found {str(path)!r}"])
    except yaml.YAMLError as exc:
        raise ConfigError([f"config: not valid YAML ({exc})"])
    return parse_config(data, base_dir=os.path.dirname(str(path)) or ".")


def build_channel(chspec: ChannelSpec, snr_db: float | None = None) -> ChannelModel:
    snr = np.inf if snr_db is None else float(snr_db)
    if chspec.kind == "ideal":
        return ChannelModel(kind="ideal")
    if chspec.kind == "awgn":
        return ChannelModel(kind="awgn", snr_db=snr)
    if chspec.kind == "fir":
        return ChannelModel(kind="fir", taps=np.array(chspec.taps), snr_db=snr)
    if chspec.path is not None:
        rec = load_tvir(chspec.path)
    else:
        rec = make_ar1_tvir(**chspec.synth)
    return ChannelModel(kind="tvir-replay", tvir=rec, snr_db=snr)


def build_codebook(cfg: ExperimentConfig) -> Codebook:
    if cfg.codebook is None:
        raise ConfigError(["codebook: required by this command but missing"])
    if "path" in cfg.codebook:
        return load_codebook(cfg.codebook["path"])
    return clustered_codebook(**cfg.codebook["synthetic"])


def build_bank(source: dict | None, cfg: ExperimentConfig, K: int) -> WavebankParams:
    src = source if source is not None else cfg.wavebank
    if src is None:
        raise ConfigError(["wavebank: required by this command but missing"])
    if "path" in src:
        return load_wavebank(src["path"])
    init = dict(src["init"])
    return init_wavebank(K=K, L=init["L"], seed=init.get("seed", 0),
                         scheme=init.get("scheme", "gaussian"))
