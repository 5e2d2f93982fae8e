"""Deterministic LoCoMo-shaped fixture corpus for offline tests and demos.

Each dialogue spans a few months of sessions about a rotating set of
topics, ending with several sessions on consecutive days so every
time-based template has instances. Time+content questions are drawn from
the same generator so their ground truth is known exactly.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from typing import Any

from .chatlog import ConversationSet, RawDialogue, build_conversation_set, dialogue_from_locomo
from .temporal import format_date

SPEAKER_PAIRS = [
    ("Jolene", "Deborah"), ("Caroline", "Melanie"), ("Jon", "Gina"), ("John", "Maria"),
    ("Joanna", "Nate"), ("Tim", "John"), ("Audrey", "Andrew"), ("James", "John"),
    ("Evan", "Sam"), ("Calvin", "Dave"), ("Andrew", "Audrey"), ("Maria", "Jon"),
]

# topic -> (phrase used in questions, sentence templates)
TOPICS: dict[str, tuple[str, tuple[str, ...]]] = {
    "video_games": ("video games", (
        "I played {game} with my partner until late, the co-op levels are brutal.",
        "We finally beat the last boss in {game} together.",
        "My partner and I started a new save in {game} this weekend.",
    )),
    "cooking": ("cooking", (
        "I tried cooking {dish} from scratch and it turned out great.",
        "Cooking {dish} takes forever but the kitchen smells amazing.",
        "I burned the {dish} while cooking, so we ordered pizza instead.",
    )),
    "hiking": ("hiking", (
        "We went hiking up {place} and the view from the ridge was stunning.",
        "My boots fell apart halfway through hiking {place}.",
        "Hiking {place} at sunrise is my new favourite thing.",
    )),
    "painting": ("painting", (
        "I started painting a watercolour of {subject} for my studio wall.",
        "Painting {subject} in oils is harder than I expected.",
        "My painting of {subject} got into the local gallery show.",
    )),
    "garden": ("the garden", (
        "The {plant} in my garden finally bloomed after weeks of rain.",
        "Slugs ate half the {plant} in the garden overnight.",
        "I planted a new row of {plant} along the garden fence.",
    )),
    "running": ("running", (
        "I signed up for a {race} and have been running every morning.",
        "Running the {race} course in the heat nearly wiped me out.",
        "My knee hurts after running intervals for the {race}.",
    )),
    "music": ("music", (
        "I have been practising {instrument} for the band recital next month.",
        "Our band played a {instrument} cover at the cafe and people loved it.",
        "I broke a string on my {instrument} right before rehearsal.",
    )),
    "books": ("books", (
        "I just finished reading {book} and could not put it down.",
        "Our book club argued about the ending of {book} for hours.",
        "I lent my copy of {book} to a coworker who loves mysteries.",
    )),
    "pets": ("pets", (
        "My dog {pet} learned to open the back door by himself.",
        "We took {pet} to the vet for a checkup and he behaved well.",
        "{pet} chased the neighbour's cat up a tree again.",
    )),
    "travel": ("travel", (
        "We are planning a trip to {city} and booked the flights today.",
        "The food in {city} was the highlight of our travel this year.",
        "Our travel plans to {city} got delayed by a cancelled train.",
    )),
}
FILLERS = {
    "game": ["Stardew Valley", "Overcooked", "Zelda", "Minecraft", "It Takes Two"],
    "dish": ["lasagna", "ramen", "sourdough", "paella", "curry"],
    "place": ["Mount Tam", "the canyon trail", "Eagle Peak", "the coastal path"],
    "subject": ["the harbour", "my grandmother", "a fox", "sunflowers"],
    "plant": ["tomatoes", "roses", "basil", "tulips"],
    "race": ["half marathon", "10k", "trail race", "charity run"],
    "instrument": ["guitar", "violin", "piano", "drums"],
    "book": ["The Night Circus", "Dune", "Circe", "The Hobbit"],
    "pet": ["Biscuit", "Max", "Luna", "Pepper"],
    "city": ["Lisbon", "Kyoto", "Oaxaca", "Prague"],
}
REPLIES = [
    "That sounds like a lot of fun, tell me more.",
    "Oh wow, how did that make you feel?",
    "I love hearing about that, you always have good stories.",
    "Ha, that is so typical, the same thing happened to me once.",
    "Nice! I hope you keep at it.",
    "That must have been a long day.",
]

TIME_CONTENT_PER_SET = 15


@dataclass(frozen=True)
class SyntheticLine:
    session: int
    speaker: str
    topic: str | None
    text: str


def _session_starts(rng: random.Random, n_sessions: int, first: date) -> list[datetime]:
    """Mostly one session every few days, some same-day pairs, then a run of consecutive days."""
    starts: list[datetime] = []
    day = first
    tail = 4
    while len(starts) < n_sessions:
        remaining = n_sessions - len(starts)
        hour = rng.choice([9, 10, 11, 13, 14, 16, 17])
        starts.append(datetime.combine(day, time(hour, rng.choice([0, 5, 12, 30, 41, 56]))))
        if remaining > tail + 1 and rng.random() < 0.15 and len(starts) < n_sessions:
            # a second session later the same day
            starts.append(datetime.combine(day, time(19, rng.choice([0, 15, 30]))))
        if len(starts) >= n_sessions - tail:
            day += timedelta(days=1)
        else:
            day += timedelta(days=rng.randint(2, 9))
    return starts[:n_sessions]


def _dialogue_record(index: int, seed: int) -> tuple[dict[str, Any], list[SyntheticLine]]:
    rng = random.Random(f"{seed}:dialogue:{index}")
    a, b = SPEAKER_PAIRS[index % len(SPEAKER_PAIRS)]
    n_sessions = rng.randint(18, 28)
    first = date(2022, 11, 1) + timedelta(days=rng.randint(0, 60))
    starts = _session_starts(rng, n_sessions, first)
    topics = sorted(TOPICS)
    record: dict[str, Any] = {"speaker_a": a, "speaker_b": b}
    lines: list[SyntheticLine] = []
    for s, start in enumerate(starts, start=1):
        session_topics = rng.sample(topics, 2)
        turns = []
        for t in range(rng.randint(6, 12)):
            speaker = a if t % 2 == 0 else b
            if t % 2 == 0 or rng.random() < 0.3:
                topic = session_topics[(t // 2) % 2]
                template = rng.choice(TOPICS[topic][1])
                key = template.split("{")[1].split("}")[0]
                text = template.format(**{key: rng.choice(FILLERS[key])})
            else:
                topic = None
                text = rng.choice(REPLIES)
            turns.append({"speaker": speaker, "dia_id": f"D{s}:{t + 1}", "text": text})
            lines.append(SyntheticLine(s, speaker, topic, text))
        record[f"session_{s}"] = turns
        hour12 = start.hour % 12 or 12
        ampm = "am" if start.hour < 12 else "pm"
        record[f"session_{s}_date_time"] = (
            f"{hour12}:{start.minute:02d} {ampm} on {start.day} {format_date(start.date(), 'mdy').split()[0]}, "
            f"{start.year}"
        )
    return {"sample_id": f"conv-{index + 1:02d}", "conversation": record}, lines


def synthetic_locomo(n_sets: int = 12, seed: int = 0) -> list[dict[str, Any]]:
    """LoCoMo-layout records, one per dialogue."""
    return [_dialogue_record(i, seed)[0] for i in range(n_sets)]


def synthetic_dialogues(n_sets: int = 12, seed: int = 0) -> list[RawDialogue]:
    return [dialogue_from_locomo(rec) for rec in synthetic_locomo(n_sets, seed)]


def synthetic_corpus(n_sets: int = 12, seed: int = 0, **ingest) -> list[ConversationSet]:
    return [build_conversation_set(d, **ingest) for d in synthetic_dialogues(n_sets, seed)]


def synthetic_time_content(conv: ConversationSet, seed: int = 0,
                           per_set: int = TIME_CONTENT_PER_SET) -> list[dict[str, Any]]:
    """Time+content question records for one synthetic set, in the loader's record layout."""
    index = int(conv.set_id.rsplit("-", 1)[1]) - 1
    _, lines = _dialogue_record(index, seed)
    real = conv.real_responses
    if len(lines) != len(real):
        raise ValueError("conversation set does not match the synthetic generator")
    topic_of = {r.response_index: line.topic for r, line in zip(real, lines)}
    rng = random.Random(f"{seed}:time_content:{conv.set_id}")
    candidates = [r for r in real if topic_of[r.response_index]]
    picks = rng.sample(candidates, min(per_set, len(candidates)))
    records = []
    for n, r in enumerate(sorted(picks, key=lambda x: x.response_index)):
        topic = topic_of[r.response_index]
        phrase = TOPICS[topic][0]
        by_session = n % 3 == 2
        if by_session:
            relevant = [x.response_index for x in real if x.speaker == r.speaker
                        and x.session_index == r.session_index and topic_of[x.response_index] == topic]
            query = f"What did {r.speaker} say about {phrase} in session {r.session_index}?"
            slots = {"speaker": r.speaker, "session": r.session_index, "topic": phrase}
        else:
            relevant = [x.response_index for x in real if x.speaker == r.speaker
                        and x.date == r.date and topic_of[x.response_index] == topic]
            query = f"What did {r.speaker} mention about {phrase} on {format_date(r.date, 'mdy_ordinal')}?"
            slots = {"speaker": r.speaker, "date": r.date.isoformat(), "topic": phrase}
        records.append({
            "id": f"{conv.set_id}:time_content:{n:04d}:00",
            "set_id": conv.set_id,
            "query": query,
            "template_slots": slots,
            "relevant_indices": relevant,
        })
    return records
