"""Chat-log ingestion: per-response timestamps, sessions and the padding session."""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path
from typing import Any, Iterable, Sequence

from .temporal import day_name, format_time, iso_week, parse_date, parse_datetime, parse_time

logger = logging.getLogger(__name__)

DEFAULT_SPEECH_RATE_WPM = 160.0
DEFAULT_SESSION_GAP_MINUTES = 20
DEFAULT_PADDING_TOKENS = 4000
DEFAULT_SESSION_TIME = time(9, 0)
CONVERSATION_SET_FORMAT = "chatrecall.conversation_set"
CONVERSATION_SET_VERSION = 1


class DialogueError(ValueError):
    """Raised for malformed dialogue input."""


class NonMonotonicSessions(DialogueError):
    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"session {index} starts before the session preceding it")


class EmptyDialogue(DialogueError):
    pass


class GroundTruthError(ValueError):
    pass


def word_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class RawSession:
    session_start: datetime
    turns: tuple[tuple[str, str], ...]
    time_missing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(tuple(t) for t in self.turns))
        for speaker, utterance in self.turns:
            if not speaker or not speaker.strip() or not utterance or not utterance.strip():
                raise DialogueError("every turn needs a speaker and an utterance")


@dataclass(frozen=True)
class RawDialogue:
    sessions: tuple[RawSession, ...]
    set_id: str = "set"

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))

    @property
    def speakers(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.sessions:
            for speaker, _ in s.turns:
                seen.setdefault(speaker)
        return list(seen)

    @property
    def token_count(self) -> int:
        return sum(word_count(u) for s in self.sessions for _, u in s.turns)


@dataclass(frozen=True)
class Response:
    response_index: int
    session_index: int
    speaker: str
    date: date
    time: time
    text: str

    @property
    def day_name(self) -> str:
        return day_name(self.date)

    @property
    def week(self) -> int:
        return iso_week(self.date)

    @property
    def timestamp(self) -> datetime:
        return datetime.combine(self.date, self.time)


@dataclass(frozen=True)
class ConversationSet:
    responses: tuple[Response, ...]
    padding_start_index: int
    set_id: str = "set"
    report: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        if not 0 <= self.padding_start_index <= len(self.responses):
            raise ValueError("padding_start_index out of range")

    def __len__(self) -> int:
        return len(self.responses)

    @property
    def real_responses(self) -> tuple[Response, ...]:
        return self.responses[: self.padding_start_index]

    @property
    def speakers(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.responses:
            seen.setdefault(r.speaker)
        return list(seen)

    @property
    def last_session(self) -> int:
        return self.responses[-1].session_index if self.responses else 0

    def validate_ground_truth(self, indices: Iterable[int]) -> None:
        """Reject indices that are missing or that point into the padding session."""
        indices = list(indices)
        if not indices:
            raise GroundTruthError("ground truth is empty")
        for i in indices:
            if not 0 <= i < len(self.responses):
                raise GroundTruthError(f"index {i} does not exist")
            if i >= self.padding_start_index:
                raise GroundTruthError(f"index {i} lies in the padding session")


def augment_timestamps(
    session_turns: Sequence[str | tuple[str, str]],
    session_start: datetime,
    speech_rate_wpm: float = DEFAULT_SPEECH_RATE_WPM,
) -> list[tuple[date, time]]:
    """Simulated wall-clock stamp for every turn of one session.

    Each turn starts when the previous one has been spoken at
    ``speech_rate_wpm``. Elapsed time is accumulated exactly and only
    truncated to the minute when stored.
    """
    if not speech_rate_wpm > 0:
        raise ValueError("speech_rate_wpm must be positive")
    stamps = []
    elapsed_minutes = 0.0
    for turn in session_turns:
        utterance = turn[1] if isinstance(turn, tuple) else turn
        at = session_start + timedelta(minutes=math.floor(elapsed_minutes + 1e-9))
        stamps.append((at.date(), at.time().replace(second=0, microsecond=0)))
        elapsed_minutes += word_count(utterance) / speech_rate_wpm
    return stamps


def infer_sessions(
    timestamps: Sequence[datetime | Response],
    gap_minutes: int = DEFAULT_SESSION_GAP_MINUTES,
) -> list[int]:
    """1-based session index per response; a new session starts after a gap > ``gap_minutes``."""
    if gap_minutes <= 0:
        raise ValueError("gap_minutes must be positive")
    stamps = [t.timestamp if isinstance(t, Response) else t for t in timestamps]
    sessions: list[int] = []
    for i, ts in enumerate(stamps):
        if i == 0:
            sessions.append(1)
            continue
        gap = ts - stamps[i - 1]
        if gap < timedelta(0):
            raise ValueError(f"responses out of order at position {i}")
        sessions.append(sessions[-1] + (1 if gap > timedelta(minutes=gap_minutes) else 0))
    return sessions


def ingest_dialogue(
    doc: RawDialogue,
    speech_rate_wpm: float = DEFAULT_SPEECH_RATE_WPM,
    gap_minutes: int = DEFAULT_SESSION_GAP_MINUTES,
) -> ConversationSet:
    if not doc.sessions or not any(s.turns for s in doc.sessions):
        raise EmptyDialogue("dialogue has no turns")
    for i in range(1, len(doc.sessions)):
        if doc.sessions[i].session_start <= doc.sessions[i - 1].session_start:
            raise NonMonotonicSessions(i + 1)

    responses: list[Response] = []
    for session_number, session in enumerate(doc.sessions, start=1):
        stamps = augment_timestamps(session.turns, session.session_start, speech_rate_wpm)
        if responses and stamps:
            if datetime.combine(*stamps[0]) < responses[-1].timestamp:
                raise NonMonotonicSessions(session_number, f"session {session_number} overlaps the previous session")
        for (speaker, text), (d, t) in zip(session.turns, stamps):
            responses.append(Response(len(responses), session_number, speaker, d, t, text))

    inferred = infer_sessions(responses, gap_minutes)
    mismatched = sum(1 for r, s in zip(responses, inferred) if r.session_index != s)
    report = {
        "sessions": len(doc.sessions),
        "responses": len(responses),
        "tokens": doc.token_count,
        "sessions_missing_time": [i + 1 for i, s in enumerate(doc.sessions) if s.time_missing],
        "gap_rule_disagreements": mismatched,
    }
    if mismatched:
        logger.warning("%s: %d responses disagree with the %d-minute gap rule", doc.set_id, mismatched, gap_minutes)
    return ConversationSet(tuple(responses), len(responses), doc.set_id, report)


_FILLER_LINES = [
    "The weather has been pleasant lately and I have enjoyed a few quiet walks around the neighbourhood.",
    "That sounds lovely, I have mostly been staying in and catching up on sleep after a busy stretch.",
    "I made a big pot of soup yesterday so the next few lunches are already sorted out.",
    "Nice, I keep meaning to cook more but somehow the evenings slip away before I get started.",
    "We should swap a few easy recipes sometime, nothing fancy, just things that keep well.",
    "Sure, I would like that, I am always looking for something simple to make on weeknights.",
    "The traffic this morning was slow again, it took twice as long as usual to get across town.",
    "Ugh, that is the worst, I try to leave a bit earlier now just to avoid the rush.",
    "I also finally tidied the hallway cupboard, it is amazing how much clutter piles up.",
    "Good for you, small chores like that always feel satisfying once they are done.",
    "Anyway, nothing much else is new here, just the usual routine and a few errands.",
    "Same here honestly, it has been a calm week and I do not mind that at all.",
]


def make_padding_session(
    speakers: Sequence[str],
    start: datetime,
    target_tokens: int = DEFAULT_PADDING_TOKENS,
) -> RawSession:
    """Deterministic small-talk filler of about ``target_tokens`` whitespace tokens."""
    if not speakers:
        raise ValueError("need at least one speaker")
    turns = []
    total = 0
    i = 0
    while total < target_tokens:
        line = _FILLER_LINES[i % len(_FILLER_LINES)]
        turns.append((speakers[i % len(speakers)], line))
        total += word_count(line)
        i += 1
    return RawSession(start, tuple(turns))


def padding_start_after(
    conv: ConversationSet,
    target_tokens: int = DEFAULT_PADDING_TOKENS,
    speech_rate_wpm: float = DEFAULT_SPEECH_RATE_WPM,
    gap_minutes: int = DEFAULT_SESSION_GAP_MINUTES,
) -> datetime:
    """Start the padding on the last day when it fits before midnight, else 09:00 the next day."""
    last = conv.responses[-1].timestamp
    start = last + timedelta(minutes=gap_minutes + 1)
    duration = timedelta(minutes=target_tokens / speech_rate_wpm + 60)
    if (start + duration).date() != last.date():
        start = datetime.combine(last.date() + timedelta(days=1), DEFAULT_SESSION_TIME)
    return start


def append_padding_session(
    conv: ConversationSet,
    padding: RawSession,
    speech_rate_wpm: float = DEFAULT_SPEECH_RATE_WPM,
) -> ConversationSet:
    if conv.padding_start_index != len(conv.responses):
        raise DialogueError("conversation set already has a padding session")
    if conv.responses and padding.session_start <= conv.responses[-1].timestamp:
        raise DialogueError("padding session must start after the last response")
    session_index = conv.last_session + 1
    stamps = augment_timestamps(padding.turns, padding.session_start, speech_rate_wpm)
    appended = list(conv.responses)
    for (speaker, text), (d, t) in zip(padding.turns, stamps):
        appended.append(Response(len(appended), session_index, speaker, d, t, text))
    report = dict(conv.report)
    report["padding_tokens"] = sum(word_count(u) for _, u in padding.turns)
    report["padding_responses"] = len(padding.turns)
    return ConversationSet(tuple(appended), len(conv.responses), conv.set_id, report)


def build_conversation_set(
    doc: RawDialogue,
    speech_rate_wpm: float = DEFAULT_SPEECH_RATE_WPM,
    gap_minutes: int = DEFAULT_SESSION_GAP_MINUTES,
    padding_tokens: int = DEFAULT_PADDING_TOKENS,
) -> ConversationSet:
    """Ingest and append the filler session, the full preprocessing for one dialogue."""
    conv = ingest_dialogue(doc, speech_rate_wpm, gap_minutes)
    start = padding_start_after(conv, padding_tokens, speech_rate_wpm, gap_minutes)
    padding = make_padding_session(doc.speakers[:2], start, padding_tokens)
    return append_padding_session(conv, padding, speech_rate_wpm)


def select_longest(dialogues: Sequence[RawDialogue], n: int = 12) -> list[RawDialogue]:
    ranked = sorted(dialogues, key=lambda d: (-d.token_count, d.set_id))
    return ranked[:n]


# --- file formats ----------------------------------------------------------

_SESSION_KEY = re.compile(r"^session_(\d+)$")


def _parse_session_start(value: str) -> tuple[datetime, bool]:
    try:
        return parse_datetime(value), False
    except ValueError:
        pass
    text = value.strip()
    m = re.match(r"^(\d{4}-\d{2}-\d{2})$", text)
    try:
        d = parse_date(m.group(1) if m else re.sub(r"^on\s+", "", text, flags=re.I))
    except ValueError as exc:
        raise DialogueError(f"unreadable session timestamp {value!r}") from exc
    return datetime.combine(d, DEFAULT_SESSION_TIME), True


def dialogue_from_locomo(record: dict[str, Any], set_id: str | None = None) -> RawDialogue:
    """Read one LoCoMo-style sample (``conversation`` dict with session_N / session_N_date_time)."""
    conv = record.get("conversation", record)
    set_id = set_id or str(record.get("sample_id", conv.get("sample_id", "set")))
    numbers = sorted(int(m.group(1)) for k in conv if (m := _SESSION_KEY.match(k)))
    sessions = []
    for n in numbers:
        turns = conv[f"session_{n}"]
        if not turns:
            continue
        stamp = conv.get(f"session_{n}_date_time")
        if stamp is None:
            raise DialogueError(f"session_{n} has no session_{n}_date_time")
        start, missing = _parse_session_start(stamp)
        pairs = tuple((t["speaker"], t["text"]) for t in turns)
        sessions.append(RawSession(start, pairs, missing))
    return RawDialogue(tuple(sessions), set_id)


def dialogue_from_simple(record: dict[str, Any], set_id: str | None = None) -> RawDialogue:
    """Read ``{"set_id", "sessions": [{"session_start", "turns": [{"speaker", "text"}]}]}``."""
    sessions = []
    for s in record["sessions"]:
        start, missing = _parse_session_start(s["session_start"])
        turns = tuple((t["speaker"], t["text"]) if isinstance(t, dict) else tuple(t) for t in s["turns"])
        sessions.append(RawSession(start, turns, missing))
    return RawDialogue(tuple(sessions), set_id or str(record.get("set_id", "set")))


def load_dialogues(path: str | Path) -> list[RawDialogue]:
    """Load every dialogue in a JSON file (single record or list; LoCoMo or simple layout)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DialogueError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    records = data if isinstance(data, list) else [data]
    out = []
    for i, rec in enumerate(records):
        default_id = path.stem if len(records) == 1 else f"{path.stem}-{i}"
        if "sessions" in rec:
            out.append(dialogue_from_simple(rec, rec.get("set_id", default_id)))
        else:
            out.append(dialogue_from_locomo(rec, str(rec.get("sample_id", default_id))))
    return out


def dialogue_to_simple(doc: RawDialogue) -> dict[str, Any]:
    return {
        "set_id": doc.set_id,
        "sessions": [
            {
                "session_start": s.session_start.strftime("%Y-%m-%d %H:%M"),
                "turns": [{"speaker": a, "text": b} for a, b in s.turns],
            }
            for s in doc.sessions
        ],
    }


def conversation_set_to_dict(conv: ConversationSet) -> dict[str, Any]:
    return {
        "format": CONVERSATION_SET_FORMAT,
        "version": CONVERSATION_SET_VERSION,
        "set_id": conv.set_id,
        "padding_start_index": conv.padding_start_index,
        "report": conv.report,
        "responses": [
            {
                "response_index": r.response_index,
                "session_index": r.session_index,
                "speaker": r.speaker,
                "date": r.date.isoformat(),
                "time": format_time(r.time),
                "text": r.text,
            }
            for r in conv.responses
        ],
    }


def conversation_set_from_dict(data: dict[str, Any]) -> ConversationSet:
    if data.get("format") != CONVERSATION_SET_FORMAT:
        raise DialogueError("not a conversation-set file")
    if data.get("version") != CONVERSATION_SET_VERSION:
        raise DialogueError(f"unsupported conversation-set version {data.get('version')!r}")
    responses = []
    for i, r in enumerate(data["responses"]):
        if r["response_index"] != i:
            raise DialogueError(f"response_index {r['response_index']} at position {i}")
        responses.append(Response(
            i, int(r["session_index"]), r["speaker"], date.fromisoformat(r["date"]),
            parse_time(r["time"]), r["text"],
        ))
    return ConversationSet(tuple(responses), int(data["padding_start_index"]), data["set_id"], data.get("report", {}))


def save_conversation_set(conv: ConversationSet, path: str | Path) -> None:
    text = json.dumps(conversation_set_to_dict(conv), indent=1, sort_keys=True, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_conversation_set(path: str | Path) -> ConversationSet:
    return conversation_set_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
