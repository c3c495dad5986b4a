# modules/feedback/residuals.py
# -*- coding: utf-8 -*-
"""
Residuals and the composite calibration loss
============================================

    total_mape = Σ_c w_c · MAPE_c                    (channels c ∈ {V, I, Q})
    loss(θ)    = Σ_p w_p · total_mape_p / Σ_p w_p + λ · Σ_k log(θ_k / θ_ref,k)²

A channel whose samples are all masked (or a pair with no overlap) has no
MAPE; it is left out of the total rather than counted as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

import numpy as np

from modules.core.types import JSONDict
from modules.infra.logging import get_logger

from .alignment import AlignedPair
from .metrics import MAPE_MASK_REL, mape, rmse

_log = get_logger(__name__)

DEFAULT_CHANNEL_WEIGHTS: Dict[str, float] = {"voltage": 1.0, "current": 1.0, "capacity": 1.0}

__all__ = [
      "LossConfig"
    , "ResidualSet"
    , "compute_residuals"
    , "composite_loss"
    , "regularization"
]


@dataclass(frozen=True)
class LossConfig:
    """
    Weights of the calibration loss.

    Attributes
    ----------
    protocol_weights : Dict[str, float]
        Protocol id → weight; protocols not listed weigh 1.
    channel_weights : Dict[str, float]
        Weights of the voltage/current/capacity MAPE in total_mape.
    reg_lambda : float
        Strength of the log-distance regularizer (0 disables it).
    reg_reference : Dict[str, float]
        Reference point θ_ref of the regularizer.
    mask_rel : float
        MAPE near-zero mask, relative to the channel's max |target|.
    """

    protocol_weights: Dict[str, float] = field(default_factory=dict)
    channel_weights: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CHANNEL_WEIGHTS))
    reg_lambda: float = 0.0
    reg_reference: Dict[str, float] = field(default_factory=dict)
    mask_rel: float = MAPE_MASK_REL

    def __post_init__(self) -> None:
        for name, weights in (("protocol", self.protocol_weights), ("channel", self.channel_weights)):
            if any(w < 0.0 for w in weights.values()):
                raise ValueError(f"{name} weights must be ≥ 0: {weights}")
        unknown = set(self.channel_weights) - set(DEFAULT_CHANNEL_WEIGHTS)
        if unknown:
            raise ValueError(f"unknown channels {sorted(unknown)}")
        if not any(w > 0.0 for w in self.channel_weights.values()):
            raise ValueError("at least one channel weight must be positive")
        if self.reg_lambda < 0.0:
            raise ValueError("reg_lambda must be ≥ 0")
        if self.reg_lambda > 0.0 and not self.reg_reference:
            raise ValueError("reg_lambda > 0 needs a reference point")

    def protocol_weight(self, protocol_id: str) -> float:
        return float(self.protocol_weights.get(protocol_id, 1.0))

    def to_dict(self) -> JSONDict:
        return {
              "protocol_weights": dict(self.protocol_weights)
            , "channel_weights": dict(self.channel_weights)
            , "reg_lambda": self.reg_lambda
            , "reg_reference": dict(self.reg_reference)
            , "mask_rel": self.mask_rel
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LossConfig":
        return cls(
              protocol_weights={k: float(v) for k, v in raw.get("protocol_weights", {}).items()}
            , channel_weights={k: float(v) for k, v in raw.get("channel_weights", DEFAULT_CHANNEL_WEIGHTS).items()}
            , reg_lambda=float(raw.get("reg_lambda", 0.0))
            , reg_reference={k: float(v) for k, v in raw.get("reg_reference", {}).items()}
            , mask_rel=float(raw.get("mask_rel", MAPE_MASK_REL))
        )


@dataclass(frozen=True)
class ResidualSet:
    capacity_mape: Optional[float] = None
    voltage_rmse: Optional[float] = None
    voltage_mape: Optional[float] = None
    current_mape: Optional[float] = None
    total_mape: Optional[float] = None

    def to_dict(self) -> JSONDict:
        return {
              "capacity_mape": self.capacity_mape
            , "voltage_rmse": self.voltage_rmse
            , "voltage_mape": self.voltage_mape
            , "current_mape": self.current_mape
            , "total_mape": self.total_mape
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ResidualSet":
        def _f(key: str) -> Optional[float]:
            v = raw.get(key)
            return None if v is None else float(v)

        return cls(
              capacity_mape=_f("capacity_mape")
            , voltage_rmse=_f("voltage_rmse")
            , voltage_mape=_f("voltage_mape")
            , current_mape=_f("current_mape")
            , total_mape=_f("total_mape")
        )

    def score(self) -> float:
        """total_mape, with +inf standing in for "nothing comparable"."""
        return math.inf if self.total_mape is None else float(self.total_mape)


def _weighted_total(channel_mape: Mapping[str, Optional[float]], weights: Mapping[str, float]) -> Optional[float]:
    present = [(weights.get(k, 0.0), v) for k, v in channel_mape.items() if v is not None and weights.get(k, 0.0) > 0.0]
    if not present:
        return None
    return float(sum(w * v for w, v in present))


def compute_residuals(pair: AlignedPair, cfg: Optional[LossConfig] = None) -> ResidualSet:
    """Per-channel MAPE/RMSE on an aligned pair; channel-weighted total_mape."""
    cfg = cfg or LossConfig()
    if pair.n_points == 0:
        return ResidualSet()
    per_channel = {
        k: mape(pair.sim[k], pair.target[k], mask_rel=cfg.mask_rel)
        for k in ("voltage", "current", "capacity")
    }
    res = ResidualSet(
          capacity_mape=per_channel["capacity"]
        , voltage_rmse=rmse(pair.sim["voltage"], pair.target["voltage"])
        , voltage_mape=per_channel["voltage"]
        , current_mape=per_channel["current"]
        , total_mape=_weighted_total(per_channel, cfg.channel_weights)
    )
    _log.debug("compute_residuals(%s): %s", pair.mode, res)
    return res


def regularization(theta: Mapping[str, float], reference: Mapping[str, float]) -> float:
    """Σ_k log(θ_k / θ_ref,k)² over the reference keys."""
    total = 0.0
    for key, ref in reference.items():
        value = float(theta[key])
        if value <= 0.0 or ref <= 0.0:
            raise ValueError(f"log regularizer needs positive values for {key!r}")
        total += (math.log(value) - math.log(ref)) ** 2
    return total


def composite_loss(
      residual_sets: Mapping[str, ResidualSet]
    , cfg: Optional[LossConfig] = None
    , theta: Optional[Mapping[str, float]] = None
) -> float:
    """
    Protocol-weighted mean of total_mape plus the optional regularizer.

    A protocol without a comparable total (empty simulation) makes the loss
    infinite; protocols with weight 0 are ignored.
    """
    cfg = cfg or LossConfig()
    num = den = 0.0
    for pid, res in residual_sets.items():
        w = cfg.protocol_weight(pid)
        if w <= 0.0:
            continue
        if res.total_mape is None or not np.isfinite(res.total_mape):
            return math.inf
        num += w * res.total_mape
        den += w
    if den <= 0.0:
        return math.inf
    loss = num / den
    if cfg.reg_lambda > 0.0 and theta is not None:
        loss += cfg.reg_lambda * regularization(theta, cfg.reg_reference)
    return float(loss)
