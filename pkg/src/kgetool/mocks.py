"""Scripted chat backends for offline runs and tests.

The gold-echo backends find the sample a prompt was rendered for (by its
speaker-tagged query text) and answer with the sample's gold annotation.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping, Sequence

from kgetool.dataset import Sample, ToolCall, rechain
from kgetool.kg import RelationPath
from kgetool.llm import CallableBackend, ChatRequest, ChatResponse, NativeToolCall
from kgetool.search_parser import render_search


class UnknownPromptError(LookupError):
    pass


def _sample_lookup(samples: Sequence[Sample]) -> Callable[[ChatRequest], Sample]:
    # Longest prompt text first, so a query that prefixes another never shadows it.
    ordered = sorted(samples, key=lambda s: len(s.prompt_text), reverse=True)

    def find(request: ChatRequest) -> Sample:
        content = request.messages[-1].content
        for s in ordered:
            if s.prompt_text in content:
                return s
        raise UnknownPromptError("prompt matches no known sample")

    return find


def gold_searches(sample: Sample) -> str:
    """One canonical KG.search line per gold chain."""
    lines = [
        render_search(RelationPath(chain[0].head, tuple(t.relation for t in chain)))
        for chain in rechain(sample.gold_links)
    ]
    return "\n".join(lines) if lines else "No graph search is needed."


def gold_echo_extraction(samples: Sequence[Sample]) -> CallableBackend:
    find = _sample_lookup(samples)
    return CallableBackend(lambda req: gold_searches(find(req)))


def gold_echo_tooluse(
    samples: Sequence[Sample], *, native: bool = False, value_map: Mapping[str, str] | None = None
) -> CallableBackend:
    """Answers with the gold call as fenced JSON, or as a native tool call.

    With ``value_map`` the echoed parameter values are mapped first (true-values runs).
    """
    find = _sample_lookup(samples)

    def answer(req: ChatRequest) -> ChatResponse:
        call = find(req).gold_call
        if value_map:
            call = ToolCall(call.name, {k: value_map.get(v, v) if isinstance(v, str) else v
                                        for k, v in call.parameters.items()})
        if native:
            return ChatResponse(native_tool_calls=(NativeToolCall(call.name, json.dumps(dict(call.parameters))),))
        return ChatResponse(text=f"```json\n{call.to_json()}\n```")

    return CallableBackend(answer)


def fake_final_relation_extraction(samples: Sequence[Sample], fake: str = "favourite_thing") -> CallableBackend:
    """Gold searches with the last relation of every chain replaced by ``fake``."""
    find = _sample_lookup(samples)

    def answer(req: ChatRequest) -> str:
        lines = []
        for chain in rechain(find(req).gold_links):
            rels = [t.relation for t in chain]
            rels[-1] = fake
            lines.append(render_search(RelationPath(chain[0].head, tuple(rels))))
        return "\n".join(lines)

    return CallableBackend(answer)


def constant(text: str) -> CallableBackend:
    return CallableBackend(lambda req: text)
