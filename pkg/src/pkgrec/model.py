"""Parameter container for the pre-trained encoder + adaptation heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adaptation import GateParams, gate_hidden_width, init_gate_params
from .autodiff import Tensor, parameter
from .propagation import init_encoder_params

GATE_NAMES = ("gate_fc1_weight", "gate_fc1_bias", "gate_fc2_weight", "gate_fc2_bias")


@dataclass
class ParamSet:
    """All trainable tensors, in a fixed construction (and update) order."""

    w: list[Tensor]  # per relation (d_in, d)
    dec_weight: Tensor  # (|R| * d, d_in)
    dec_bias: Tensor  # (d_in,)
    gate: GateParams

    @classmethod
    def init(cls, d_in: int, d: int, num_relations: int, seed: int, reduction: int = 4):
        """Deterministic init: projections, then decoder, then gate, one rng stream."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x706172]))
        w_mats = init_encoder_params(d_in, d, num_relations, rng)
        lim = np.sqrt(6.0 / (num_relations * d + d_in))
        dec_w = rng.uniform(-lim, lim, size=(num_relations * d, d_in))
        dec_b = np.zeros(d_in, dtype=np.float64)
        g1w, g1b, g2w, g2b = init_gate_params(d, rng, reduction)
        return cls(
            w=[parameter(m, name=f"w{r}") for r, m in enumerate(w_mats)],
            dec_weight=parameter(dec_w, name="dec_weight"),
            dec_bias=parameter(dec_b, name="dec_bias"),
            gate=GateParams(
                fc1_weight=parameter(g1w, name=GATE_NAMES[0]),
                fc1_bias=parameter(g1b, name=GATE_NAMES[1]),
                fc2_weight=parameter(g2w, name=GATE_NAMES[2]),
                fc2_bias=parameter(g2b, name=GATE_NAMES[3]),
            ),
        )

    def named_tensors(self) -> dict:
        out = {f"w{r}": t for r, t in enumerate(self.w)}
        out["dec_weight"] = self.dec_weight
        out["dec_bias"] = self.dec_bias
        for name, t in zip(GATE_NAMES, self.gate.tensors()):
            out[name] = t
        return out

    def gate_tensors(self) -> list[Tensor]:
        return self.gate.tensors()

    def all_tensors(self) -> list[Tensor]:
        return list(self.named_tensors().values())

    @property
    def num_relations(self) -> int:
        return len(self.w)

    @property
    def dim(self) -> int:
        return self.w[0].shape[1]

    @property
    def d_in(self) -> int:
        return self.w[0].shape[0]

    @property
    def reduction_width(self) -> int:
        return self.gate.fc1_weight.shape[1]

    def state_arrays(self) -> dict:
        return {k: t.data for k, t in self.named_tensors().items()}

    @classmethod
    def from_state(cls, state: dict) -> "ParamSet":
        """Rebuild from a name -> array mapping (e.g. a loaded checkpoint)."""
        w = []
        r = 0
        while f"w{r}" in state:
            w.append(parameter(state[f"w{r}"], name=f"w{r}"))
            r += 1
        if not w:
            raise ValueError("parameter state has no projection matrices")
        gate = GateParams(
            *[parameter(state[name], name=name) for name in GATE_NAMES]
        )
        return cls(
            w=w,
            dec_weight=parameter(state["dec_weight"], name="dec_weight"),
            dec_bias=parameter(state["dec_bias"], name="dec_bias"),
            gate=gate,
        )


def check_shapes(params: ParamSet, d_in: int, d: int, num_relations: int, reduction: int = 4):
    """Raise if a loaded parameter set does not match the expected geometry."""
    if params.num_relations != num_relations:
        raise ValueError(
            f"parameter set has {params.num_relations} relations, expected {num_relations}"
        )
    for r, t in enumerate(params.w):
        if t.shape != (d_in, d):
            raise ValueError(f"w{r} has shape {t.shape}, expected {(d_in, d)}")
    if params.dec_weight.shape != (num_relations * d, d_in):
        raise ValueError("decoder weight shape mismatch")
    if params.dec_bias.shape != (d_in,):
        raise ValueError("decoder bias shape mismatch")
    hidden = gate_hidden_width(d, reduction)
    if params.gate.fc1_weight.shape != (d, hidden):
        raise ValueError("gate fc1 shape mismatch")
    if params.gate.fc2_weight.shape != (hidden, 1):
        raise ValueError("gate fc2 shape mismatch")
