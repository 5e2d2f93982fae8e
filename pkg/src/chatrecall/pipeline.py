"""Chain-of-table retrieval with semantic search, its no-classifier ablation, and semantic baselines."""
from __future__ import annotations

import json
import threading
import time as _time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .chatlog import ConversationSet
from .grammar import NowContext
from .llm import (
    BackendError, CallLog, ClassifyError, LanguageModel, StepError, labelled_turns, query_speaker,
)
from .questions import Question, advance_clock
from .table import (
    DEFAULT_MAX_FILTERS, ChainError, ChatTable, FunctionCall, apply_call,
)
from .vectors import DEFAULT_K, EmbedError, Embedder, HashingEmbedder, VectorIndex, imbue_metadata_text

COTABLE = "cotable_semantic"
COTABLE_NO_CLASSIFIER = "cotable_semantic_no_classifier"
SEMANTIC = "semantic"
SEMANTIC_META = "semantic_meta"
KINDS = (COTABLE, COTABLE_NO_CLASSIFIER, SEMANTIC, SEMANTIC_META)

ORIGINAL_QUERY = "original"
CONTEXT_PLUS_QUERY = "context"
QUERY_REWRITE = "rewrite"
QUERY_INPUTS = (ORIGINAL_QUERY, CONTEXT_PLUS_QUERY, QUERY_REWRITE)


@dataclass(frozen=True)
class RetrievalMode:
    kind: str = COTABLE
    k: int = DEFAULT_K
    query_input: str = ORIGINAL_QUERY
    n_turns: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown retrieval kind {self.kind!r}")
        if self.query_input not in QUERY_INPUTS:
            raise ValueError(f"unknown query input {self.query_input!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 3 <= self.n_turns <= 6:
            raise ValueError("n_turns must be between 3 and 6")

    @property
    def uses_llm(self) -> bool:
        return self.kind in (COTABLE, COTABLE_NO_CLASSIFIER) or self.query_input == QUERY_REWRITE

    @property
    def label(self) -> str:
        suffix = f"+ctx{self.n_turns}" if self.query_input == CONTEXT_PLUS_QUERY else (
            "+rewrite" if self.query_input == QUERY_REWRITE else "")
        k = f"@k{self.k}"
        return f"{self.kind}{k}{suffix}"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RetrievalResult:
    retrieved: tuple[int, ...]
    query_input: str
    needs_meta: bool | None = None
    needs_semantic: bool | None = None
    chain: tuple[str, ...] = ()
    rewrite: str | None = None
    errors: list[str] = field(default_factory=list)
    degraded: bool = False
    retries: int = 0

    def __post_init__(self):
        # keep first occurrence order, drop repeats
        self.retrieved = tuple(dict.fromkeys(self.retrieved))


class Retriever:
    """Retrieval over one conversation set's table and vector indexes.

    The table and indexes are built once and never mutated, so
    ``retrieve`` may be called from several threads.
    """

    def __init__(self, conv: ConversationSet, llm: LanguageModel | None = None,
                 embedder: Embedder | None = None, k: int = DEFAULT_K,
                 max_steps: int = DEFAULT_MAX_FILTERS):
        if not conv.responses:
            raise ValueError("conversation set is empty")
        self.conv = conv
        self.llm = llm
        self.embedder = embedder or HashingEmbedder()
        self.k = k
        self.max_steps = max_steps
        self._lock = threading.Lock()
        self._plain: VectorIndex | None = None
        self._imbued: VectorIndex | None = None
        self.table = ChatTable.from_conversation(conv)
        self.content_table = ChatTable.from_conversation(conv, content_search=self._content_search, content_k=k)

    # --- indexes ---

    @property
    def plain_index(self) -> VectorIndex:
        with self._lock:
            if self._plain is None:
                rows = self.conv.responses
                self._plain = VectorIndex.build([r.response_index for r in rows], [r.text for r in rows],
                                                self.embedder)
            return self._plain

    @property
    def imbued_index(self) -> VectorIndex:
        with self._lock:
            if self._imbued is None:
                rows = self.conv.responses
                self._imbued = VectorIndex.build([r.response_index for r in rows],
                                                 [imbue_metadata_text(r) for r in rows], self.embedder)
            return self._imbued

    def _search(self, index: VectorIndex, text: str, candidates: Iterable[int] | None, k: int) -> list[int]:
        return [rid for rid, _ in index.top_k(self.embedder.embed(text), candidates, k)]

    def _content_search(self, text: str, candidates: Sequence[int], k: int) -> list[int]:
        return self._search(self.plain_index, text, candidates, k)

    # --- query input ---

    def build_query_input(self, query: str, context_turns: Sequence[tuple[str, str]], mode: RetrievalMode,
                          log: CallLog | None = None) -> tuple[str, str | None]:
        """Text handed to retrieval, plus the rewrite when one was produced."""
        if mode.query_input == ORIGINAL_QUERY or not context_turns and mode.query_input == CONTEXT_PLUS_QUERY:
            return query, None
        if mode.query_input == CONTEXT_PLUS_QUERY:
            turns = list(context_turns)[-mode.n_turns:]
            speaker = query_speaker(context_turns)
            return " ".join(f"{who}: {text}" for who, text in turns + [(speaker, query)]), None
        if self.llm is None:
            raise ValueError("query rewrite needs a language model")
        rewrite = self.llm.rewrite_query(context_turns, query, log)
        return rewrite, rewrite

    # --- retrieval ---

    def baseline_semantic(self, text: str, k: int | None = None) -> list[int]:
        return self._search(self.plain_index, text, None, k or self.k)

    def baseline_semantic_meta(self, text: str, k: int | None = None) -> list[int]:
        return self._search(self.imbued_index, text, None, k or self.k)

    def retrieve(self, query: str, context_turns: Sequence[tuple[str, str]] = (),
                 mode: RetrievalMode = RetrievalMode(), now: NowContext | None = None) -> RetrievalResult:
        now = now or advance_clock(self.conv)
        log = CallLog()
        errors: list[str] = []
        try:
            text, rewrite = self.build_query_input(query, context_turns, mode, log)
        except BackendError as exc:
            errors.append(f"rewrite failed, using the original query: {exc}")
            text, rewrite = (labelled_turns(context_turns, query) if context_turns else query), None

        if mode.kind == SEMANTIC:
            return RetrievalResult(tuple(self.baseline_semantic(text, mode.k)), text, rewrite=rewrite, errors=errors)
        if mode.kind == SEMANTIC_META:
            return RetrievalResult(tuple(self.baseline_semantic_meta(text, mode.k)), text, rewrite=rewrite,
                                   errors=errors)
        if self.llm is None:
            raise ValueError(f"{mode.kind} needs a language model")
        result = self._cotable(text, mode, now, log, errors)
        result.rewrite = rewrite
        result.retries = log.retries
        return result

    def _cotable(self, text: str, mode: RetrievalMode, now: NowContext, log: CallLog,
                 errors: list[str]) -> RetrievalResult:
        ablation = mode.kind == COTABLE_NO_CLASSIFIER
        table = self.content_table if ablation else self.table
        header = table.header()
        if ablation:
            # the chain sees the whole table, Content column included; no separate semantic step
            do_meta, do_semantic = True, False
        else:
            try:
                do_meta = self.llm.classify_meta(text, header, log)
                do_semantic = self.llm.classify_semantic(text, header, log)
            except (ClassifyError, BackendError) as exc:
                errors.append(f"classification failed, falling back to semantic search: {exc}")
                return self._degraded(text, mode, errors, None, None, ())
            if not do_meta and not do_semantic:
                do_semantic = True
                errors.append("classifier answered no twice; using semantic search")

        chain: list[FunctionCall] = []
        if do_meta:
            for step in range(self.max_steps + 1):
                try:
                    call = self.llm.write_function_step(header, text, now, chain, log)
                except (StepError, BackendError) as exc:
                    errors.append(f"step {step}: {exc}")
                    return self._degraded(text, mode, errors, do_meta, do_semantic, chain)
                if call.is_end:
                    break
                if step == self.max_steps:
                    errors.append(f"chain stopped after {self.max_steps} filters without <END>")
                    break
                if call in chain:
                    errors.append(f"step {step}: repeated call {call.render()} skipped")
                    continue
                try:
                    table = apply_call(table, call)
                except ChainError as exc:
                    errors.append(f"step {step}: {exc}")
                    chain.append(call)
                    return self._degraded(text, mode, errors, do_meta, do_semantic, chain)
                chain.append(call)

        if do_semantic:
            ids = self._search(self.plain_index, text, table.ids, mode.k) if len(table) else []
        else:
            ids = table.ids
        rendered = tuple(c.render() for c in chain) + (("<END>",) if do_meta else ())
        return RetrievalResult(tuple(ids), text, do_meta, do_semantic, rendered, errors=errors)

    def _degraded(self, text: str, mode: RetrievalMode, errors: list[str], meta, semantic,
                  chain: Sequence[FunctionCall]) -> RetrievalResult:
        try:
            ids = self.baseline_semantic(text, mode.k)
        except EmbedError as exc:
            errors.append(f"semantic fallback failed: {exc}")
            ids = []
        return RetrievalResult(tuple(ids), text, meta, semantic, tuple(c.render() for c in chain),
                               errors=errors, degraded=True)

    def retrieve_question(self, question: Question, mode: RetrievalMode) -> RetrievalResult:
        return self.retrieve(question.query, question.context_turns, mode, question.now)


# --- traces --------------------------------------------------------------

def trace_record(question: Question, mode: RetrievalMode, result: RetrievalResult,
                 elapsed_s: float) -> dict[str, Any]:
    return {
        "question_id": question.id,
        "set_id": question.set_id,
        "test_name": question.test_name,
        "ambiguous": question.ambiguous,
        "mode": mode.to_dict(),
        "query_input": result.query_input,
        "rewrite": result.rewrite,
        "classification": {"meta": result.needs_meta, "semantic": result.needs_semantic},
        "chain": list(result.chain),
        "retrieved": list(result.retrieved),
        "relevant": list(question.relevant_indices),
        "errors": result.errors,
        "degraded": result.degraded,
        "retries": result.retries,
        "elapsed_ms": round(elapsed_s * 1000, 3),
    }


def run_question(retriever: Retriever, question: Question, mode: RetrievalMode) -> dict[str, Any]:
    start = _time.perf_counter()
    result = retriever.retrieve_question(question, mode)
    return trace_record(question, mode, result, _time.perf_counter() - start)


def append_traces(path: str | Path, records: Iterable[dict[str, Any]]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def trim_torn_tail(path: str | Path) -> None:
    """Drop a partial final line left by an interrupted run so appends start on a fresh line."""
    p = Path(path)
    if not p.exists():
        return
    data = p.read_bytes()
    if data and not data.endswith(b"\n"):
        p.write_bytes(data[: data.rfind(b"\n") + 1])


def read_traces(path: str | Path) -> list[dict[str, Any]]:
    """Trace records from a results file; a torn final line from an interrupted run is ignored."""
    p = Path(path)
    if not p.exists():
        return []
    out = []
    for line in p.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError:
            continue
    return out
