# modules/proposer/prompts.py
# -*- coding: utf-8 -*-
"""
Prompt families for the LLM proposer.

- system prompt (first-cycle and degradation wording)
- first-round body: protocol, current values, plot/feature description
- other-round body: latest results only (history travels in the memory context)
- closing JSON instruction naming the search keys
- warm-up batch ("search knowledge") prompt asking for N groups
- warm-up summarization prompt
- REPROMPT, appended once when a reply held no valid JSON

All builders are pure functions of their arguments.
"""

from __future__ import annotations

import json
from typing import Iterable, List, Mapping, Optional, Sequence, Union

from modules.core.types import JSONDict, ParamValues
from modules.feedback.package import FeedbackPackage
from modules.sim.protocol import ConstantCurrent, ConstantVoltage, Protocol, Rest

FeedbackInput = Union[FeedbackPackage, Mapping[str, FeedbackPackage]]

SYSTEM_PROMPT = (
    "You are a battery parameter expert. You calibrate the parameters of a single-particle "
    "lithium-ion cell model so that its simulated charge/discharge curves match measured ones, "
    "and you answer with structured parameter updates."
)
DEGRADATION_SYSTEM_PROMPT = (
    "You are a battery parameter expert. You calibrate the SEI growth parameters of a cell model "
    "so that its simulated capacity fade over many cycles matches the measured fade, and you "
    "answer with structured parameter updates."
)
REPROMPT = "Please return only valid JSON"

__all__ = [
      "SYSTEM_PROMPT"
    , "DEGRADATION_SYSTEM_PROMPT"
    , "REPROMPT"
    , "system_prompt"
    , "describe_protocol"
    , "describe_feedback"
    , "json_instruction"
    , "first_round_prompt"
    , "other_round_prompt"
    , "warmup_batch_prompt"
    , "summarize_prompt"
]


def system_prompt(kind: str = "first_cycle") -> str:
    return DEGRADATION_SYSTEM_PROMPT if kind == "degradation" else SYSTEM_PROMPT


# ────────────────────────────────────────────────────────────────────────────────
# Fragments
# ────────────────────────────────────────────────────────────────────────────────

def describe_protocol(protocol: Protocol) -> str:
    parts: List[str] = []
    for step in protocol.steps:
        if isinstance(step, ConstantCurrent):
            cutoff = "" if step.voltage_cutoff is None else f" to {step.voltage_cutoff:g} V"
            parts.append(f"CC {step.direction} at {step.c_rate:g}C{cutoff}")
        elif isinstance(step, ConstantVoltage):
            hold = "upper cut-off" if step.hold_voltage is None else f"{step.hold_voltage:g} V"
            parts.append(f"CV hold at {hold} until |I| < {step.current_cutoff:g}C")
        elif isinstance(step, Rest):
            parts.append(f"rest {step.duration_s:g} s")
    return f"{protocol.name}: " + " → ".join(parts)


def _fmt(v: Optional[float], unit: str = "", digits: int = 4) -> str:
    return "n/a" if v is None else f"{v:.{digits}g}{unit}"


def _one_feedback(pid: str, pkg: FeedbackPackage, scalar_only: bool) -> List[str]:
    r = pkg.residuals
    label = pid or pkg.protocol or "protocol"
    lines = [f"[{label}] total MAPE {_fmt(r.total_mape, '%')}; events: {', '.join(pkg.events) or 'none'}"]
    if scalar_only:
        return lines
    lines.append(
        f"  capacity MAPE {_fmt(r.capacity_mape, '%')}, voltage MAPE {_fmt(r.voltage_mape, '%')}, "
        f"voltage RMSE {_fmt(r.voltage_rmse, ' V')}, current MAPE {_fmt(r.current_mape, '%')}"
    )
    f = pkg.features
    lines.append(
        f"  simulated minus target: CC-charge time {_fmt(f.cc_charge_time_mismatch_s, ' s')}, "
        f"discharge plateau {_fmt(f.plateau_shift_v, ' V')}, CV share of charge {_fmt(f.cv_fraction_delta)}, "
        f"capacity {_fmt(f.capacity_delta_pct, '%')}, end voltage {_fmt(f.end_voltage_delta_v, ' V')}"
    )
    if pkg.cycles:
        sel = ", ".join(str(c) for c in sorted(pkg.cycles))
        lines.append(
            f"  fade simulated {_fmt(pkg.meta.get('fade_sim'))}, target {_fmt(pkg.meta.get('fade_target'))}; "
            f"cycles reached {pkg.meta.get('n_cycles_sim')}/{pkg.meta.get('n_cycles_target')}; selected cycles {sel}"
        )
        for idx in sorted(pkg.cycles):
            sub = pkg.cycles[idx]
            lines.append(
                f"    cycle {idx}: total MAPE {_fmt(sub.residuals.total_mape, '%')}, "
                f"capacity {_fmt(sub.features.capacity_delta_pct, '%')}, "
                f"CC-charge time {_fmt(sub.features.cc_charge_time_mismatch_s, ' s')}"
            )
    return lines


def describe_feedback(feedback: FeedbackInput, *, scalar_only: bool = False) -> str:
    """Text rendering of one package or a {protocol id: package} mapping."""
    items = [("", feedback)] if isinstance(feedback, FeedbackPackage) else sorted(feedback.items())
    lines: List[str] = []
    for pid, pkg in items:
        lines += _one_feedback(pid, pkg, scalar_only)
    return "\n".join(lines)


def json_instruction(search_keys: Sequence[str]) -> str:
    example = {"updated_params": {search_keys[0]: "*1.1"} if search_keys else {}, "rationale": "..."}
    return (
        f"You may only change these parameters: {json.dumps(list(search_keys))}. "
        "Summarize what the results above imply, then propose the next single parameter update "
        f"as one JSON object shaped like {json.dumps(example)}. Numbers are new absolute values; "
        'strings such as "*1.2" multiply the current value.'
    )


def _params_json(values: ParamValues) -> str:
    return json.dumps({k: float(v) for k, v in values.items()}, sort_keys=True)


# ────────────────────────────────────────────────────────────────────────────────
# Bodies
# ────────────────────────────────────────────────────────────────────────────────

def first_round_prompt(
      *
    , feedback: FeedbackInput
    , context: str
    , search_keys: Sequence[str]
    , current: ParamValues
    , protocols: Iterable[Protocol]
    , parameter_set: str
    , kind: str = "first_cycle"
    , image_attached: bool = False
    , scalar_only: bool = False
    , cycle_indices: Optional[Sequence[int]] = None
) -> str:
    proto = "\n".join(f"- {describe_protocol(p)}" for p in protocols)
    if kind == "degradation":
        cycles = ", ".join(str(c) for c in (cycle_indices or []))
        intro = [
              "The simulated cell starts identical to the measured one, so cycle 1 matches; the fade that "
              "follows depends on the SEI parameters."
            , f"Feedback below covers cycles {cycles}. Adjust the SEI parameters so every one of them matches."
        ]
    else:
        intro = [
              "The simulated first cycle should match the measured current and voltage curves."
            , "Capacity and the duration of each step (for example the CC charge) must agree."
        ]
    plot = (
        "The attached figure shows current (top) and voltage (bottom) over time; describe how the "
        "simulated curve differs from the target before proposing a change."
        if image_attached else
        "No figure is attached; the feature differences below describe the curves."
    )
    blocks = [
          "\n".join(intro)
        , f"Cycling protocol(s):\n{proto}"
        , f"Current values: {_params_json(current)}. All other parameters follow the {parameter_set!r} set."
        , plot
        , f"Results for the current values:\n{describe_feedback(feedback, scalar_only=scalar_only)}"
    ]
    if context:
        blocks.append(context)
    blocks.append(json_instruction(search_keys))
    return "\n\n".join(blocks)


def other_round_prompt(
      *
    , feedback: FeedbackInput
    , context: str
    , search_keys: Sequence[str]
    , current: ParamValues
    , scalar_only: bool = False
) -> str:
    blocks = [
          f"Results for {_params_json(current)}:\n{describe_feedback(feedback, scalar_only=scalar_only)}"
    ]
    if context:
        blocks.append(context)
    blocks.append(json_instruction(search_keys))
    return "\n\n".join(blocks)


def warmup_batch_prompt(
      *
    , search_keys: Sequence[str]
    , n_groups: int
    , current: ParamValues
    , protocols: Iterable[Protocol]
    , context: str = ""
) -> str:
    proto = "\n".join(f"- {describe_protocol(p)}" for p in protocols)
    blocks = [
          f"Before optimizing, we want to learn how each parameter moves the simulated curves. "
          f"Current values: {_params_json(current)}."
        , f"Cycling protocol(s):\n{proto}"
    ]
    if context:
        blocks.append(context)
    blocks.append(
        f"Propose about {n_groups} exploratory parameter groups using only {json.dumps(list(search_keys))}. "
        'Return a JSON list of objects, each mapping parameter names to absolute values or "*x" factors. '
        "Do not put comments inside the JSON."
    )
    return "\n\n".join(blocks)


def summarize_prompt(outcomes: Sequence[JSONDict]) -> str:
    return (
        "These exploratory simulations perturbed parameters around the starting point "
        "(perturbation = relative change; effects = capacity change in % and CC-charge time change in s):\n"
        f"{json.dumps(list(outcomes), sort_keys=True)}\n\n"
        "Summarize them as short sensitivity rules, one per observation, for example "
        '"increasing X by 10% raises capacity strongly but fails at high C-rates". '
        "Return a JSON list of strings."
    )
