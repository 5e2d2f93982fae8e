"""Prompt assets, completion backends, the scripted oracle, and the calls built on them."""
from __future__ import annotations

import os
import re
import time as _time
from dataclasses import dataclass, field
from datetime import date, time
from importlib import resources
from typing import Any, Iterable, Protocol, Sequence

import httpx

from .grammar import NowContext, QueryPlan, plan_free_text, plan_from_slots
from .questions import Question, extract_context_phrase
from .table import (
    COLUMNS, CONTENT_COLUMN, END, FunctionCall, ParseError, normalize_column, parse_function_call,
    render_chain, render_value,
)
from .temporal import format_time

PROMPT_NAMES = (
    "meta_classify", "semantic_classify", "function_write", "arg1_value", "arg1_between",
    "arg2_value", "arg2_between", "query_rewrite",
)
SCHEMA_LINE = " | ".join(COLUMNS)
EXAMPLE_DELIMITER = "\n%%\n"
SLOT_RE = re.compile(r"\[(?:EXAMPLES|QUERY|DATE|TIME|SESSION NUM|FUNCTION CHAIN SO FAR|OUTPUT)\]")
CONTENT_NOTE = (
    "The Content column holds the text of each response. f_value(Content, [text]) keeps the "
    "responses whose content is most similar to the given text."
)

# distinctive text identifying each prompt kind
PROMPT_MARKERS = {
    "meta_classify": "referring to the meta-data of the chat log or not",
    "semantic_classify": "referring to some specific topic or content",
    "function_write": "If do not need to call a function, write <END>.",
    "arg1_value": "Only output the first argument of the 'f_value' function.",
    "arg1_between": "Only output the first argument of the 'f_between' function.",
    "arg2_value": "Fill in the remaining argument of the f_value function.",
    "arg2_between": "Fill in the remaining argument of the f_between function.",
    "query_rewrite": "Please help reformulate the question",
}

MAX_TOKENS = {"classify": 2, "name": 16, "arg1": 16, "arg2": 96, "rewrite": 160}


class BackendError(RuntimeError):
    def __init__(self, message: str, retries: int = 0):
        self.retries = retries
        super().__init__(message)


class ClassifyError(RuntimeError):
    def __init__(self, kind: str, emissions: Sequence[str]):
        self.kind = kind
        self.emissions = list(emissions)
        super().__init__(f"{kind} classifier gave no y/n answer: {self.emissions!r}")


class StepError(RuntimeError):
    def __init__(self, stage: str, emissions: Sequence[str], reason: str = ""):
        self.stage = stage
        self.emissions = list(emissions)
        super().__init__(f"could not write {stage}: {reason} {self.emissions!r}".strip())


# --- prompts -----------------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    examples: tuple[str, ...]

    def render(self, query: str, header: str = SCHEMA_LINE, now: NowContext | None = None,
               chain: str = "", output_prefix: str = "") -> str:
        text = self.body
        if SCHEMA_LINE in text:
            note = f"\n{CONTENT_NOTE}" if CONTENT_COLUMN in header.split(" | ") else ""
            text = text.replace(f"{SCHEMA_LINE}\n*/", f"{header}\n*/{note}")
        for block in self.examples:
            text = text.replace("[EXAMPLES]", block, 1)
        if now is not None:
            text = (text.replace("[DATE]", now.date.isoformat())
                    .replace("[TIME]", format_time(now.time))
                    .replace("[SESSION NUM]", str(now.session)))
        if chain:
            text = text.replace("[FUNCTION CHAIN SO FAR]", chain)
        else:
            text = text.replace("[FUNCTION CHAIN SO FAR] -> ", "").replace("[FUNCTION CHAIN SO FAR]", "")
        text = text.replace(" [OUTPUT]", f" {output_prefix}" if output_prefix else "")
        leftover = SLOT_RE.findall(text.replace("[QUERY]", ""))
        if leftover:
            raise ValueError(f"prompt {self.name} has unfilled slots {leftover}")
        # the query goes in last so its own text is never mistaken for a slot
        return text.replace("[QUERY]", " ".join(query.split()))


class PromptLibrary:
    def __init__(self, templates: dict[str, PromptTemplate]):
        missing = set(PROMPT_NAMES) - set(templates)
        if missing:
            raise ValueError(f"missing prompt templates: {sorted(missing)}")
        self.templates = templates

    @classmethod
    def load(cls, directory: str | os.PathLike | None = None) -> "PromptLibrary":
        base = resources.files("chatrecall") / "prompts" if directory is None else None
        templates = {}
        for name in PROMPT_NAMES:
            if base is not None:
                body = (base / f"{name}.txt").read_text(encoding="utf-8")
                raw_examples = (base / f"{name}.examples.txt").read_text(encoding="utf-8")
            else:
                body = open(os.path.join(directory, f"{name}.txt"), encoding="utf-8").read()
                raw_examples = open(os.path.join(directory, f"{name}.examples.txt"), encoding="utf-8").read()
            blocks = tuple(b.strip() for b in raw_examples.strip().split(EXAMPLE_DELIMITER))
            needed = body.count("[EXAMPLES]")
            if len(blocks) != needed:
                raise ValueError(f"{name}: {needed} example slots but {len(blocks)} example blocks")
            templates[name] = PromptTemplate(name, body.rstrip("\n"), blocks)
        return cls(templates)

    def __getitem__(self, name: str) -> PromptTemplate:
        return self.templates[name]


def prompt_kind(prompt: str) -> str:
    for name, marker in PROMPT_MARKERS.items():
        if marker in prompt:
            return name
    raise ValueError("unrecognised prompt")


# --- backends ----------------------------------------------------------------

class Backend(Protocol):
    def complete(self, prompt: str, max_tokens: int) -> str: ...


class ChatCompletionBackend:
    """OpenAI-compatible chat-completion client with greedy decoding.

    Endpoint, model and key come from ``CHATRECALL_LLM_URL``,
    ``CHATRECALL_LLM_MODEL`` and ``CHATRECALL_LLM_KEY`` when not given.
    """

    def __init__(self, endpoint: str | None = None, model: str | None = None, api_key: str | None = None,
                 retries: int = 1, timeout: float = 60.0, client: httpx.Client | None = None):
        self.endpoint = endpoint or os.environ.get("CHATRECALL_LLM_URL")
        self.model = model or os.environ.get("CHATRECALL_LLM_MODEL")
        self.api_key = api_key or os.environ.get("CHATRECALL_LLM_KEY")
        if not self.endpoint or not self.model:
            raise ValueError("remote backend needs an endpoint and a model name")
        self.retries = retries
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, prompt: str, max_tokens: int) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.endpoint, json=payload, headers=headers)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                if attempt < self.retries:
                    _time.sleep(0.5 * (attempt + 1))
        raise BackendError(f"retries exhausted: {last}", retries=self.retries)


_QUERY_LINE = re.compile(r"^Query: (.*)$", re.MULTILINE)
_NOW_LINE = re.compile(r"^Current Date:(\S+) Current Time:(\S+) Current Session:(\d+)\s*$", re.MULTILINE)
_CHAIN_LINE = re.compile(r"^Function Chain:(.*)$", re.MULTILINE)
_PLACEHOLDER_NOW = NowContext(date(2000, 1, 1), time(0, 0), 1)


class ScriptedOracle:
    """Deterministic backend answering every prompt kind from the question grammar.

    Queries registered from generated questions are answered from their
    stored template slots; anything else is read with the rule-based grammar.
    """

    def __init__(self, speakers: Iterable[str] = (), registry: dict[str, tuple[str, dict[str, Any]]] | None = None):
        self.speakers = tuple(speakers)
        self.registry = dict(registry or {})

    def register(self, questions: Iterable[Question]) -> None:
        for q in questions:
            if not q.context_turns:
                slots = {k: v for k, v in q.template_slots.items() if k != "phrase"}
                self.registry[q.query] = (q.test_name, slots)

    def plan(self, query: str, now: NowContext, content_column: bool = False) -> QueryPlan:
        hit = self.registry.get(query)
        if hit is not None:
            return plan_from_slots(hit[0], hit[1], now, query, content_column)
        return plan_free_text(query, now, self.speakers, content_column)

    def complete(self, prompt: str, max_tokens: int) -> str:
        kind = prompt_kind(prompt)
        queries = _QUERY_LINE.findall(prompt)
        query = queries[-1].strip() if queries else ""
        if kind == "query_rewrite":
            phrase = extract_context_phrase(query)
            return f"what did we discuss {phrase}?" if phrase else query
        nows = _NOW_LINE.findall(prompt)
        now = NowContext(date.fromisoformat(nows[-1][0]), _parse_clock(nows[-1][1]), int(nows[-1][2])) \
            if nows else _PLACEHOLDER_NOW
        content = f"| {CONTENT_COLUMN}\n" in prompt
        plan = self.plan(query, now, content)
        if kind == "meta_classify":
            return "y" if plan.needs_meta else "n"
        if kind == "semantic_classify":
            return "y" if plan.needs_semantic else "n"
        chain_lines = _CHAIN_LINE.findall(prompt)
        done = _completed_calls(chain_lines[-1] if chain_lines else "")
        nxt = plan.calls[done] if done < len(plan.calls) else END
        if kind == "function_write":
            return "<END>" if nxt.is_end else nxt.name
        if nxt.is_end:
            return "<END>"
        if kind.startswith("arg1"):
            return nxt.column
        return "[" + ", ".join(render_value(v) for v in nxt.args) + "]"


def _parse_clock(text: str) -> time:
    h, m = text.split(":")
    return time(int(h), int(m))


def _completed_calls(chain_text: str) -> int:
    count = 0
    for piece in chain_text.split(" -> "):
        try:
            if not parse_function_call(piece.strip()).is_end:
                count += 1
        except ParseError:
            continue
    return count


# --- calls built on a backend -------------------------------------------------

def _first_char_answer(text: str) -> bool | None:
    stripped = text.lstrip().lower()
    if stripped[:1] == "y":
        return True
    if stripped[:1] == "n":
        return False
    return None


_NAME_RE = re.compile(r"^\s*[`'\"]?\s*(f_value|f_between|<\s*END\s*>|END)(?!\w)", re.IGNORECASE)


@dataclass
class CallLog:
    """Raw emissions and retry counts gathered while answering one query."""

    emissions: list[tuple[str, str]] = field(default_factory=list)
    retries: int = 0

    def add(self, stage: str, text: str) -> None:
        self.emissions.append((stage, text))


class LanguageModel:
    """Classifier, chain-writer and rewriter calls with one retry per malformed emission."""

    def __init__(self, backend: Backend, prompts: PromptLibrary | None = None, retries: int = 1):
        self.backend = backend
        self.prompts = prompts or PromptLibrary.load()
        self.retries = retries

    def _ask(self, prompt: str, max_tokens: int, stage: str, log: CallLog | None) -> str:
        text = self.backend.complete(prompt, max_tokens)
        if log is not None:
            log.add(stage, text)
        return text

    def _classify(self, name: str, query: str, header: str, log: CallLog | None) -> bool:
        if not query.strip():
            raise ValueError("query is empty")
        prompt = self.prompts[name].render(query, header)
        seen = []
        for attempt in range(self.retries + 1):
            text = self._ask(prompt, MAX_TOKENS["classify"], name, log)
            seen.append(text)
            answer = _first_char_answer(text)
            if answer is not None:
                return answer
            if log is not None and attempt < self.retries:
                log.retries += 1
        raise ClassifyError(name, seen)

    def classify_meta(self, query: str, header: str = SCHEMA_LINE, log: CallLog | None = None) -> bool:
        return self._classify("meta_classify", query, header, log)

    def classify_semantic(self, query: str, header: str = SCHEMA_LINE, log: CallLog | None = None) -> bool:
        return self._classify("semantic_classify", query, header, log)

    def _retrying(self, stage: str, prompt: str, max_tokens: int, parse, log: CallLog | None):
        seen = []
        reason = ""
        for attempt in range(self.retries + 1):
            text = self._ask(prompt, max_tokens, stage, log)
            seen.append(text)
            try:
                return parse(text)
            except (ParseError, ValueError, KeyError) as exc:
                reason = str(exc)
                if log is not None and attempt < self.retries:
                    log.retries += 1
        raise StepError(stage, seen, reason)

    def write_function_step(self, header: str, query: str, now: NowContext,
                            chain_so_far: Sequence[FunctionCall] = (), log: CallLog | None = None) -> FunctionCall:
        """Write the next call of the chain with separate name, column and value prompts."""
        columns = tuple(header.split(" | "))
        chain = render_chain(chain_so_far)

        def parse_name(text: str) -> str | FunctionCall:
            m = _NAME_RE.match(text)
            if m is None:
                raise ValueError("expected f_value, f_between or <END>")
            word = m.group(1).lower()
            if "end" in word:
                return END
            try:
                # a complete call in one emission is accepted as is
                return parse_function_call(text, columns)
            except ParseError:
                return word

        name = self._retrying("function", self.prompts["function_write"].render(query, header, now, chain),
                              MAX_TOKENS["name"], parse_name, log)
        if isinstance(name, FunctionCall):
            return name
        short = name.split("_", 1)[1]

        def parse_column(text: str) -> str:
            token = text.strip().strip("`'\"").split(",")[0].split("(")[-1].strip()
            return normalize_column(token, columns)

        arg1 = self.prompts[f"arg1_{short}"].render(query, header, now, chain, output_prefix=f"{name}(")
        column = self._retrying("column", arg1, MAX_TOKENS["arg1"], parse_column, log)

        partial = f"{name}({column},"
        arg2 = self.prompts[f"arg2_{short}"].render(
            query, header, now, f"{chain} -> {partial}" if chain else partial)

        def parse_args(text: str) -> FunctionCall:
            body = text.strip().splitlines()[0] if text.strip() else ""
            if not body.lstrip().startswith("["):
                body = f"[{body.rstrip(')').strip()}]"
            return parse_function_call(f"{name}({column}, {body})", columns)

        return self._retrying("values", arg2, MAX_TOKENS["arg2"], parse_args, log)

    def rewrite_query(self, context_turns: Sequence[tuple[str, str]], query: str,
                      log: CallLog | None = None) -> str:
        text = labelled_turns(context_turns, query) if context_turns else query
        prompt = self.prompts["query_rewrite"].render(text)
        out = self._ask(prompt, MAX_TOKENS["rewrite"], "rewrite", log).strip()
        out = out.splitlines()[0].strip() if out else ""
        return out or query


def query_speaker(context_turns: Sequence[tuple[str, str]]) -> str:
    """Speaker of the query turn, which alternates with the final context turn."""
    if len(context_turns) >= 2:
        return context_turns[-2][0]
    return "user"


def labelled_turns(context_turns: Sequence[tuple[str, str]], query: str) -> str:
    turns = list(context_turns) + [(query_speaker(context_turns), query)]
    return " ".join(f"{who}: {text}" for who, text in turns)

