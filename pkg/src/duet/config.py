"""Run configuration: built-in defaults, overridden by a JSON file, overridden by flags."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from pathlib import Path

from .composition import BlendSchedule
from .corpus import CorpusSpec
from .denoiser import DenoiserConfig
from .diffusion import NoiseSchedule, SamplerConfig, build_cosine_schedule
from .errors import ConfigError, DuetError
from .guidance import GuidanceWeights
from .losses import LossWeights
from .pipeline import EvalSettings
from .train import TrainSettings

_MODEL_KEYS = ("layers", "latent_dim", "heads", "condition_dropout_prob", "ff_mult")


def _model_defaults() -> dict:
    d = asdict(DenoiserConfig())
    return {k: d[k] for k in _MODEL_KEYS}


def defaults() -> dict:
    train = asdict(TrainSettings())
    train.pop("loss_weights")
    train.pop("seed")
    train["betas"] = list(train["betas"])
    return {
        "seed": 0,
        "threads": None,
        "paths": {
            "corpus": "corpus",
            "interaction_ckpt": "checkpoints/interaction.npz",
            "prior_ckpt": "checkpoints/prior.npz",
        },
        "corpus": CorpusSpec().to_dict(),
        "interaction": _model_defaults(),
        "prior": _model_defaults(),
        "schedule": {"type": "cosine", "T": 1000, "s": 0.008},
        "sampler": {
            "ddim_steps": 50,
            "eta": 0.0,
            "shared_init_noise": False,
            "count": 4,
            "labels": ["approach", "wave-right", "bow"],
        },
        "guidance": asdict(GuidanceWeights()),
        "blend": {"kind": "exponential", "lambda": 0.00875, "prior_scale": 1.0, "blend_point": "post_cfg"},
        "train": train,
        "loss": asdict(LossWeights()),
        "eval": asdict(EvalSettings()),
        "sweep": {
            "kinds": ["constant", "linear", "exponential", "inverse_exponential"],
            "lambdas": [0.0, 0.25, 0.5, 0.75],
            "exp_lambdas": [0.0025, 0.005, 0.00875, 0.0125],
        },
    }


# leaves whose value is itself a free-form structure
_OPAQUE = {("corpus", "interaction_vocab"), ("corpus", "individual_vocab")}


def merge(base: dict, override: dict, where: tuple = ()) -> dict:
    """Recursive merge that rejects keys absent from ``base``."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        path = where + (k,)
        if k not in base:
            raise ConfigError(f"unknown config key {'.'.join(path)}")
        if isinstance(base[k], dict) and path not in _OPAQUE:
            if not isinstance(v, dict):
                raise ConfigError(f"config key {'.'.join(path)} must be an object")
            out[k] = merge(base[k], v, path)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_file(path) -> dict:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {p} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc.msg} at line {exc.lineno}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return data


def build(file_path=None, overrides: dict | None = None) -> dict:
    """defaults < file < ``overrides`` (dotted keys), validated."""
    cfg = defaults()
    if file_path is not None:
        cfg = merge(cfg, load_file(file_path))
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        probe = {}
        set_path(probe, dotted, value)
        cfg = merge(cfg, probe)
    validate(cfg)
    return cfg


def set_path(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def validate(cfg: dict) -> None:
    """Construct every typed object once so bad values fail before any work starts."""
    try:
        corpus_spec(cfg)
        model_config(cfg, "interaction")
        model_config(cfg, "prior")
        schedule(cfg)
        sampler(cfg)
        guidance(cfg)
        blend(cfg)
        train_settings(cfg)
        eval_settings(cfg)
    except DuetError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    if cfg["sampler"]["count"] < 1:
        raise ConfigError("sampler.count must be >= 1")
    if cfg["threads"] is not None and int(cfg["threads"]) < 1:
        raise ConfigError("threads must be >= 1")
    if cfg["blend"]["blend_point"] not in ("post_cfg", "pre_cfg"):
        raise ConfigError("blend.blend_point must be post_cfg or pre_cfg")
    if len(cfg["sampler"]["labels"]) != 3:
        raise ConfigError("sampler.labels must name an interaction and two individual labels")


# --------------------------------------------------------------------------
# typed views
# --------------------------------------------------------------------------

def corpus_spec(cfg: dict) -> CorpusSpec:
    return CorpusSpec.from_dict(cfg["corpus"])


def model_config(cfg: dict, role: str, n_labels: int | None = None, width: int | None = None) -> DenoiserConfig:
    extra = {"variant": "interaction" if role == "interaction" else "individual", "diffusion_steps": int(cfg["schedule"]["T"])}
    if n_labels is not None:
        extra["n_labels"] = n_labels
    if width is not None:
        extra["width"] = width
    return DenoiserConfig(**cfg[role], **extra)


def schedule(cfg: dict) -> NoiseSchedule:
    s = cfg["schedule"]
    if s["type"] != "cosine":
        raise ConfigError(f"unsupported noise schedule {s['type']!r}; only cosine is available")
    return build_cosine_schedule(int(s["T"]), float(s["s"]))


def sampler(cfg: dict, seed: int | None = None) -> SamplerConfig:
    s = cfg["sampler"]
    return SamplerConfig(int(s["ddim_steps"]), float(s["eta"]), int(cfg["seed"] if seed is None else seed), bool(s["shared_init_noise"]))


def guidance(cfg: dict) -> GuidanceWeights:
    return GuidanceWeights(**cfg["guidance"])


def blend(cfg: dict) -> BlendSchedule:
    return BlendSchedule(cfg["blend"]["kind"], float(cfg["blend"]["lambda"]))


def train_settings(cfg: dict) -> TrainSettings:
    t = dict(cfg["train"])
    t["betas"] = tuple(t["betas"])
    return TrainSettings(**t, seed=int(cfg["seed"]), loss_weights=LossWeights(**cfg["loss"]))


def eval_settings(cfg: dict) -> EvalSettings:
    names = {f.name for f in fields(EvalSettings)}
    return EvalSettings(**{k: v for k, v in cfg["eval"].items() if k in names})


def sweep_grid(cfg: dict) -> list[BlendSchedule]:
    s = cfg["sweep"]
    grid = []
    for kind in s["kinds"]:
        kind = kind.replace("-", "_")
        if kind == "linear":
            grid.append(BlendSchedule("linear", 0.0))
        elif kind == "constant":
            grid += [BlendSchedule(kind, float(v)) for v in s["lambdas"]]
        else:
            grid += [BlendSchedule(kind, float(v)) for v in s["exp_lambdas"]]
    return grid


def dump(cfg: dict) -> str:
    return json.dumps(cfg, indent=1, sort_keys=True)
