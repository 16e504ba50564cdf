"""Flat `key = value` experiment configuration.

One file drives generation, training, and evaluation. Resolution order:
built-in defaults, then the selected profile's overrides, then the file's
own entries. Unknown keys are rejected so typos fail loudly, and every run
writes its fully resolved config next to the outputs.

Profiles: `desk` is the fast-feedback shape (64x64 images, d_model 64,
2+2 layers) that the bundled experiments use; `paper` restores the
full-size architecture (256x256, d_model 256, 6 encoder layers) for anyone
willing to pay for it. All randomness funnels through the single `seed`.
"""

import dataclasses
import pathlib

from polyseq.datagen import GenConfig
from polyseq.model import ModelConfig

LINE_POINTS = 8

# name -> (type, default). Bools parse from true/false/yes/no/1/0.
SCHEMA = {
    # run
    "profile": (str, "desk"),
    "task": (str, ""),
    "decode_mode": (str, "parallel"),
    "seed": (int, 0),
    # dataset
    "image_size": (int, 64),
    "n_min": (int, 1),
    "n_max": (int, 4),
    "m_min": (int, 3),
    "m_max": (int, 7),
    # model
    "d_model": (int, 64),
    "n_heads": (int, 4),
    "enc_layers": (int, 2),
    "dec_layers": (int, 2),
    "ffn_mult": (int, 2),
    "n_queries": (int, 0),  # 0 = oversample_multiplier * max object count
    "oversample_multiplier": (int, 3),
    "use_decoder_pos_enc": (bool, False),
    "order_policy": (str, "spatial"),
    "max_seq_len": (int, 64),
    "max_vertices": (int, 16),
    # training
    "steps": (int, 20000),
    "batch_size": (int, 8),
    "lr": (float, 3e-4),
    "lr_backbone": (float, 3e-5),
    "weight_decay": (float, 1e-4),
    "lr_drop_step": (int, 0),  # 0 = never
    "train_scenes": (int, 64),
    "log_every": (int, 50),
    "checkpoint_every": (int, 0),  # 0 = final only
    "eval_every": (int, 0),  # 0 = no mid-training eval
    "target_ap": (float, 0.0),  # stop once reached (0 = run all steps)
    # evaluation
    "eval_scenes": (int, 64),
    "cardinality_multiplier": (int, 1),
    "resolution": (int, 512),
    # ablation
    "ablate_seeds": (int, 3),
    "ablate_steps": (int, 0),  # 0 = same as steps
}

PROFILES = {
    "desk": {},  # the schema defaults are the desk profile
    "paper": {
        "image_size": 256,
        "d_model": 256,
        "n_heads": 8,
        "enc_layers": 6,
        "dec_layers": 3,
        "ffn_mult": 4,
        "steps": 200000,
        "lr": 1e-4,
        "lr_backbone": 1e-5,
        "resolution": 2048,
    },
}

_ENUMS = {
    "profile": tuple(PROFILES),
    "task": ("points", "line", "gates", "polygons"),
    "decode_mode": ("parallel", "autoregressive"),
    "order_policy": ("spatial", "size"),
}


class ConfigError(ValueError):
    pass


def _parse_value(key, raw):
    typ, _ = SCHEMA[key]
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


@dataclasses.dataclass
class ExperimentConfig:
    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def replace(self, **overrides):
        unknown = set(overrides) - set(SCHEMA)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return ExperimentConfig({**self.values, **overrides})

    def resolved_text(self):
        """Complete config in schema order, suitable for re-parsing."""
        lines = []
        for key in SCHEMA:
            v = self.values[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_config(text):
    """Parse `key = value` lines; `#` starts a comment; blank lines skipped."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, val = body.split("=", 1)
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = _parse_value(key, val)

    profile = raw.get("profile", SCHEMA["profile"][1])
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    values = {k: default for k, (_, default) in SCHEMA.items()}
    values.update(PROFILES[profile])
    values.update(raw)

    for key, allowed in _ENUMS.items():
        if values[key] not in allowed and not (key == "task" and not values[key]):
            raise ConfigError(f"{key} must be one of {allowed}, got {values[key]!r}")
    if not values["task"]:
        raise ConfigError("config must set a task")
    return ExperimentConfig(values)


def load_config(path):
    return parse_config(pathlib.Path(path).read_text())


def resolved_n_queries(cfg):
    """0 means oversample: multiplier x the max object count (a line is
    eight point slots)."""
    if cfg.n_queries:
        return cfg.n_queries
    per_scene = LINE_POINTS if cfg.task == "line" else cfg.n_max
    return cfg.oversample_multiplier * per_scene


def build_gen_config(cfg, seed=None, n_max=None):
    return GenConfig(
        task=cfg.task,
        image_w=cfg.image_size,
        image_h=cfg.image_size,
        n_min=cfg.n_min,
        n_max=n_max if n_max is not None else cfg.n_max,
        m_min=cfg.m_min,
        m_max=cfg.m_max,
        seed=seed if seed is not None else cfg.seed,
    )


def build_model_config(cfg):
    parallel = cfg.decode_mode == "parallel"
    return ModelConfig(
        task=cfg.task,
        decode_mode=cfg.decode_mode,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        enc_layers=cfg.enc_layers,
        dec_layers=cfg.dec_layers,
        n_queries=resolved_n_queries(cfg) if parallel else 1,
        rnn_head=parallel and cfg.task == "polygons",
        max_vertices=cfg.max_vertices,
        use_decoder_pos_enc=cfg.use_decoder_pos_enc,
        max_seq_len=cfg.max_seq_len,
        order_policy=cfg.order_policy,
        ffn_mult=cfg.ffn_mult,
    )
