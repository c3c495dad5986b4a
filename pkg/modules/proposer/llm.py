# modules/proposer/llm.py
# -*- coding: utf-8 -*-
"""
LLM-backed proposer
===================

llm_propose() sends one prompt, parses the reply with parse_update() and,
when the reply holds no usable update, asks once more with REPROMPT. The
proposer never touches θ; the orchestrator applies the returned update.

Also here:
- LLMProposer: the Proposer wrapper (first-round vs other-round prompts,
  image attachment, audit trail)
- LLMSummarizer: warm-up summarizer returning a JSON list of rule strings
- parse_update_groups(): warm-up batch replies (a JSON list of groups)
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

from modules.core.errors import ParameterValidationError, ParseError, ProposerError, RejectedKeyError
from modules.core.types import JSONDict, StrPath
from modules.infra.logging import get_logger
from modules.sim.parameters import ParameterSet
from modules.sim.protocol import Protocol

from . import prompts
from .base import ProposalRequest, ProposalResult, Proposer
from .llm_client import ChatClient, record_exchange
from .llm_common import ChatExchange, short_preview
from .updates import ParameterUpdate, extract_json_values, parse_update

_log = get_logger(__name__)

_INVALID_UPDATE = (ParseError, RejectedKeyError, ParameterValidationError)

__all__ = ["llm_propose", "LLMProposer", "LLMSummarizer", "parse_update_groups"]


def llm_propose(
      client: ChatClient
    , user_prompt: str
    , *
    , search_keys: Sequence[str]
    , system: str = prompts.SYSTEM_PROMPT
    , image: Optional[StrPath] = None
    , round_index: Optional[int] = None
    , audit_path: Optional[StrPath] = None
) -> Tuple[Optional[ParameterUpdate], ChatExchange]:
    """
    One proposal conversation.

    Returns
    -------
    (update, exchange)
        update is None when both the reply and the reprompted reply were
        unusable; exchange.error then says why.

    Raises
    ------
    ProposerError
        Transport/HTTP failure after retries (the partial exchange is still
        written to the audit file).
    """
    ex = ChatExchange(system=system, purpose="propose", round=round_index)
    update: Optional[ParameterUpdate] = None
    try:
        client.converse(system, user_prompt, image=image, exchange=ex)
        try:
            update = parse_update(ex.response, search_keys)
        except _INVALID_UPDATE as first:
            _log.warning("llm_propose round=%s: unusable reply (%s); reprompting", round_index, first)
            client.follow_up(ex, f"{prompts.REPROMPT}. Your previous answer could not be used: {first}")
            try:
                update = parse_update(ex.response, search_keys)
            except _INVALID_UPDATE as second:
                ex.error = f"{type(second).__name__}: {second}"
                _log.warning("llm_propose round=%s: no usable update after reprompt (%s)", round_index, second)
    except ProposerError as e:
        ex.error = f"ProposerError: {e}"
        record_exchange(ex, audit_path)
        raise
    record_exchange(ex, audit_path)
    if update is not None:
        _log.info("llm_propose round=%s: %s", round_index, short_preview(update.to_dict()["updated_params"]))
    return update, ex


def parse_update_groups(text: str, search_keys: Sequence[str]) -> List[ParameterUpdate]:
    """
    Warm-up batch reply → updates. Uses the last JSON list in the text;
    groups that do not parse are skipped.

    Raises
    ------
    ParseError
        No JSON list, or no usable group in it.
    """
    lists = [v for v in extract_json_values(text or "") if isinstance(v, list)]
    if not lists:
        raise ParseError("no JSON list found in warm-up reply")
    out: List[ParameterUpdate] = []
    for raw in lists[-1]:
        if not isinstance(raw, dict):
            continue
        try:
            out.append(ParameterUpdate.from_dict(raw, search_keys))
        except _INVALID_UPDATE as e:
            _log.debug("parse_update_groups: skipped group %s (%s)", short_preview(raw), e)
    if not out:
        raise ParseError("warm-up reply held no usable parameter group")
    return out


# ────────────────────────────────────────────────────────────────────────────────
# Proposer
# ────────────────────────────────────────────────────────────────────────────────

class LLMSummarizer:
    """WarmupSummarizer backed by the chat endpoint."""

    def __init__(self, client: ChatClient, *, kind: str = "first_cycle", audit_path: Optional[StrPath] = None) -> None:
        self.client = client
        self.kind = kind
        self.audit_path = audit_path

    def summarize(self, outcomes: Sequence[JSONDict]) -> List[str]:
        system = prompts.system_prompt(self.kind)
        ex = ChatExchange(system=system, purpose="summarize")
        try:
            self.client.converse(system, prompts.summarize_prompt(outcomes), exchange=ex)
        finally:
            record_exchange(ex, self.audit_path)
        lists = [v for v in extract_json_values(ex.response) if isinstance(v, list)]
        if not lists:
            raise ParseError("summarizer reply holds no JSON list")
        return [str(s).strip() for s in lists[-1] if isinstance(s, str) and s.strip()]


class LLMProposer(Proposer):
    """
    Chat-endpoint proposer. The first optimization round gets the full task
    description; later rounds only the latest results plus the memory context.
    """

    kind = "llm"
    uses_step_size = True

    def __init__(
          self
        , client: ChatClient
        , *
        , task_kind: str = "first_cycle"
        , protocols: Sequence[Protocol] = ()
        , parameter_set: str = "default_cell"
        , audit_path: Optional[StrPath] = None
        , owns_client: bool = False
    ) -> None:
        self.client = client
        self.owns_client = owns_client
        self.task_kind = task_kind
        self.protocols = list(protocols)
        self.parameter_set = parameter_set
        self.audit_path = audit_path
        self._system = prompts.system_prompt(task_kind)

    def _prompt(self, request: ProposalRequest, image_attached: bool) -> str:
        if request.round <= 1:
            cycles: List[int] = []
            for pkg in request.feedback.values():
                cycles = sorted(pkg.cycles) or cycles
            return prompts.first_round_prompt(
                  feedback=request.feedback
                , context=request.context
                , search_keys=request.search_keys
                , current=request.current
                , protocols=self.protocols
                , parameter_set=self.parameter_set
                , kind=self.task_kind
                , image_attached=image_attached
                , scalar_only=request.scalar_only
                , cycle_indices=cycles
            )
        return prompts.other_round_prompt(
              feedback=request.feedback
            , context=request.context
            , search_keys=request.search_keys
            , current=request.current
            , scalar_only=request.scalar_only
        )

    def propose(self, request: ProposalRequest) -> ProposalResult:
        image = None if request.scalar_only else request.visual
        attach = bool(image) and self.client.cfg.supports_images
        update, ex = llm_propose(
              self.client
            , self._prompt(request, attach)
            , search_keys=request.search_keys
            , system=self._system
            , image=image if attach else None
            , round_index=request.round
            , audit_path=self.audit_path
        )
        return ProposalResult(update, ex, note="" if update is not None else (ex.error or "no update"))

    def warmup_batch(self, theta: ParameterSet, search_keys: Sequence[str], n_groups: int) -> Optional[List[ParameterUpdate]]:
        ex = ChatExchange(system=self._system, purpose="warmup_batch")
        user = prompts.warmup_batch_prompt(
              search_keys=search_keys
            , n_groups=n_groups
            , current=theta.subset_values(search_keys)
            , protocols=self.protocols
        )
        try:
            self.client.converse(self._system, user, exchange=ex)
            groups = parse_update_groups(ex.response, search_keys)
        except (ProposerError, ParseError) as e:
            ex.error = f"{type(e).__name__}: {e}"
            _log.warning("warm-up batch from LLM failed (%s); using the fixed strategy", e)
            return None
        finally:
            record_exchange(ex, self.audit_path)
        _log.info("warm-up batch from LLM: %d groups (requested %d)", len(groups), n_groups)
        return groups[:n_groups]

    def summarizer(self) -> LLMSummarizer:
        return LLMSummarizer(self.client, kind=self.task_kind, audit_path=self.audit_path)

    def describe(self) -> JSONDict:
        return {"kind": self.kind, "endpoint": self.client.cfg.to_dict()}

    def close(self) -> None:
        if self.owns_client:
            self.client.close()


if __name__ == "__main__":
    print(parse_update_groups('[{"Electrode width [m]": "*1.1"}, {"Electrode width [m]": 1.4}]', ["Electrode width [m]"]))
