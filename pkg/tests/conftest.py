from datetime import datetime

import pytest

from chatrecall.chatlog import RawDialogue, RawSession, build_conversation_set
from chatrecall.synthetic import synthetic_corpus


def _session(start, *turns):
    return RawSession(datetime.fromisoformat(start), tuple(turns))


SMALL_DIALOGUE = RawDialogue((
    _session("2023-01-05 10:00",
             ("Jolene", "Morning! I finally repotted the fern in the hallway."),
             ("Deborah", "Nice, did it survive the move?"),
             ("Jolene", "Barely, it dropped half its leaves."),
             ("Deborah", "It will bounce back, ferns are tough.")),
    _session("2023-01-27 14:00",
             ("Jolene", "My partner and I played Stardew Valley all evening, it is our favourite video game."),
             ("Deborah", "That sounds cozy, who farmed more?"),
             ("Jolene", "He did, I mostly went fishing."),
             ("Deborah", "Fishing is the best part anyway.")),
    _session("2023-01-27 19:00",
             ("Deborah", "I started a sourdough starter tonight."),
             ("Jolene", "Good luck feeding it every day!")),
    _session("2023-05-20 09:30",
             ("Jolene", "We are planning a trip to Lisbon in the summer."),
             ("Deborah", "Lisbon is lovely, try the custard tarts."),
             ("Jolene", "Already on the list.")),
    _session("2023-06-08 11:00",
             ("Deborah", "My knee hurts after running intervals."),
             ("Jolene", "Take a rest day, seriously."),
             ("Deborah", "Fine, I will stretch instead.")),
    _session("2023-06-10 13:00",
             ("Jolene", "I painted a fox in watercolour this morning."),
             ("Deborah", "Send me a picture!"),
             ("Jolene", "Will do after it dries.")),
), "small")


@pytest.fixture(scope="session")
def small_conv():
    return build_conversation_set(SMALL_DIALOGUE, padding_tokens=300)


@pytest.fixture(scope="session")
def corpus():
    return synthetic_corpus()


_CRITERIA: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = ""
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = f" ({report.longrepr[2]})"
        _CRITERIA.append((outcome, props["criterion"] + detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for outcome, name in _CRITERIA:
        terminalreporter.write_line(f"{outcome}  {name}")
