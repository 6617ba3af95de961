"""Flat ``key = value`` run configuration shared by every CLI subcommand."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .finetune import FinetuneConfig
from .pretrain import PretrainConfig
from .synthetic import SyntheticSpec


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # synthetic data generation
    num_items: int = 300
    num_blocks: int = 3
    num_relations: int = 3
    p_in: float = 0.2
    p_out: float = 0.01
    d_in: int = 16
    feature_noise: float = 0.3
    num_users: int = 40
    events_per_user: int = 30
    zs_frac: float = 0.1
    home_block_affinity: float = 0.8
    zs_eval_boost: float = 0.5
    aligned_relation: int = 0
    # shared
    seed: int = 0
    dim: int = 32
    m_layers: int = 3
    k_hops: int = 2
    # pre-training
    kr_weight: float = 1.0
    fr_weight: float = 0.001
    hnr_weight: float = 0.01
    mra_weight: float = 1.0
    batch_size: int = 256
    epochs: int = 200
    lr: float = 0.05
    l2: float = 1e-6
    hnr_budget_per_item: int = 50
    neighbor_cap: int = 200
    eval_every: int = 1
    mra_mse: bool = False
    gate_reduction: int = 4
    negative_tries: int = 50
    edge_split_train: float = 0.8
    edge_split_valid: float = 0.1
    # fine-tuning
    finetune_epochs: int = 50
    finetune_lr: float = 0.01
    finetune_l2: float = 0.0
    finetune_batch_size: int = 256
    # paths (overridable from the command line)
    data_dir: str = ""
    out_dir: str = ""

    def to_synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            num_items=self.num_items,
            num_blocks=self.num_blocks,
            num_relations=self.num_relations,
            p_in=self.p_in,
            p_out=self.p_out,
            d_in=self.d_in,
            feature_noise=self.feature_noise,
            num_users=self.num_users,
            events_per_user=self.events_per_user,
            zs_frac=self.zs_frac,
            seed=self.seed,
            home_block_affinity=self.home_block_affinity,
            zs_eval_boost=self.zs_eval_boost,
            aligned_relation=self.aligned_relation,
        )

    def to_pretrain_config(self) -> PretrainConfig:
        frac_test = 1.0 - self.edge_split_train - self.edge_split_valid
        return PretrainConfig(
            dim=self.dim,
            m_layers=self.m_layers,
            k_hops=self.k_hops,
            kr_weight=self.kr_weight,
            fr_weight=self.fr_weight,
            hnr_weight=self.hnr_weight,
            mra_weight=self.mra_weight,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr=self.lr,
            l2=self.l2,
            seed=self.seed,
            hnr_budget_per_item=self.hnr_budget_per_item,
            neighbor_cap=self.neighbor_cap,
            edge_split=(self.edge_split_train, self.edge_split_valid, frac_test),
            eval_every=self.eval_every,
            mra_mse=self.mra_mse,
            gate_reduction=self.gate_reduction,
            negative_tries=self.negative_tries,
        )

    def to_finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            epochs=self.finetune_epochs,
            lr=self.finetune_lr,
            l2=self.finetune_l2,
            batch_size=self.finetune_batch_size,
            seed=self.seed,
            negative_tries=self.negative_tries,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def model_dict(self) -> dict:
        """Config as embedded in checkpoints: everything except local paths,
        so the same run at a different location hashes identically."""
        d = self.as_dict()
        d.pop("data_dir")
        d.pop("out_dir")
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    ftype = _FIELDS[name].type
    raw = raw.strip()
    if ftype in ("bool", bool):
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"key {name!r}: {raw!r} is not a boolean")
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"key {name!r}: cannot parse {raw!r} as {ftype}") from None
    return raw


def parse_config_text(text: str) -> RunConfig:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read())


def format_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"
