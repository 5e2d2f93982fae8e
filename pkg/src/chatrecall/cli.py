"""Command line entry point: ingest, generate, bench, query, report and synth."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from .chatlog import (
    DEFAULT_PADDING_TOKENS, DEFAULT_SESSION_GAP_MINUTES, DEFAULT_SPEECH_RATE_WPM, ConversationSet,
    DialogueError, build_conversation_set, load_conversation_set, load_dialogues, save_conversation_set,
    select_longest,
)
from .evaluation import format_report, report_csv, report_from_traces, report_json
from .grammar import TIME_CONTENT, TIME_TESTS
from .llm import BackendError, ChatCompletionBackend, LanguageModel, ScriptedOracle
from .pipeline import (
    COTABLE, KINDS, ORIGINAL_QUERY, QUERY_INPUTS, RetrievalMode, Retriever, append_traces, read_traces,
    run_question, trim_torn_tail,
)
from .questions import (
    Question, QuestionValidationError, advance_clock, expected_base_counts, generate_ambiguous_questions,
    generate_time_questions, load_time_content_questions, question_file_name, read_questions, write_questions,
)
from .table import DEFAULT_MAX_FILTERS
from .vectors import DEFAULT_DIM, HashingEmbedder, HttpEmbedder, imbue_metadata_text

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3

log = logging.getLogger("chatrecall")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dialogue_files(paths: Sequence[str]) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.json")))
        elif p.exists():
            files.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    if not files:
        raise UsageError("no dialogue files found")
    return files


def load_sets(directory: str) -> dict[str, ConversationSet]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"conversation-set directory not found: {d}")
    sets = {}
    for f in sorted(d.glob("*.json")):
        try:
            conv = load_conversation_set(f)
        except (ValueError, KeyError, TypeError) as exc:
            raise DialogueError(f"{f}: unreadable conversation set ({exc})") from None
        sets[conv.set_id] = conv
    if not sets:
        raise UsageError(f"no conversation sets in {d}")
    return sets


# --- ingest ------------------------------------------------------------------

def cmd_ingest(args) -> int:
    dialogues = []
    for f in _dialogue_files(args.dialogues):
        try:
            dialogues.extend(load_dialogues(f))
        except (DialogueError, KeyError, TypeError) as exc:
            print(f"{f}: {exc}", file=sys.stderr)
            return EXIT_DATA
    if args.select:
        dialogues = select_longest(dialogues, args.select)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'set':<14}{'sessions':>9}{'responses':>10}{'tokens':>8}{'padding':>9}")
    for doc in dialogues:
        try:
            conv = build_conversation_set(doc, args.speech_rate, args.session_gap, args.padding_tokens)
        except DialogueError as exc:
            print(f"{doc.set_id}: {exc}", file=sys.stderr)
            return EXIT_DATA
        save_conversation_set(conv, out / f"{conv.set_id}.json")
        r = conv.report
        print(f"{conv.set_id:<14}{r['sessions']:>9}{r['responses']:>10}{r['tokens']:>8}{r['padding_tokens']:>9}")
    return EXIT_OK


# --- generate ----------------------------------------------------------------

def cmd_generate(args) -> int:
    sets = load_sets(args.sets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    totals: dict[str, list[int]] = {}
    mismatched = False
    for set_id, conv in sets.items():
        qs = generate_time_questions(conv, seed=args.seed)
        amb = generate_ambiguous_questions(conv, qs)
        expected = expected_base_counts(conv)
        for test, items in qs.by_test().items():
            write_questions(items, out / question_file_name(set_id, test), set_id, test)
        for test, items in amb.by_test().items():
            write_questions(items, out / question_file_name(set_id, test, True), set_id, test)
        counts, amb_counts = qs.counts(), amb.counts()
        for test in TIME_TESTS:
            c = counts.get(test, {"base": 0, "full": 0})
            a = amb_counts.get(test, {"base": 0, "full": 0})
            row = totals.setdefault(test, [0, 0, 0, 0, 0])
            for i, v in enumerate((c["base"], c["full"], a["base"], a["full"], expected[test])):
                row[i] += v
            if c["base"] != expected[test]:
                mismatched = True
                print(f"{set_id}: {test} has {c['base']} base questions, formula gives {expected[test]}",
                      file=sys.stderr)
        for test, note in qs.notes.items():
            print(f"{set_id}: {test}: {note}")
        if args.time_content:
            try:
                tc = load_time_content_questions(args.time_content, conv)
            except QuestionValidationError as exc:
                print(str(exc), file=sys.stderr)
                return EXIT_DATA
            if tc.questions:
                write_questions(tc.questions, out / question_file_name(set_id, TIME_CONTENT), set_id, TIME_CONTENT)
            row = totals.setdefault(TIME_CONTENT, [0, 0, 0, 0, 0])
            row[0] += len(tc)
            row[1] += len(tc)
    print(f"{'test':<15}{'base':>7}{'full':>7}{'amb base':>10}{'amb full':>10}{'formula':>9}")
    for test in sorted(totals):
        b, f, ab, af, e = totals[test]
        formula = "-" if test == TIME_CONTENT else str(e)
        print(f"{test:<15}{b:>7}{f:>7}{ab:>10}{af:>10}{formula:>9}")
    grand = [sum(v[i] for t, v in totals.items()) for i in range(4)]
    print(f"{'total':<15}{grand[0]:>7}{grand[1]:>7}{grand[2]:>10}{grand[3]:>10}")
    return EXIT_DATA if mismatched else EXIT_OK


# --- bench -------------------------------------------------------------------

def _mode(args) -> RetrievalMode:
    try:
        return RetrievalMode(args.mode, args.k, args.query_input, args.n_turns)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _embedder(args):
    if args.embedder == "http":
        try:
            return HttpEmbedder()
        except ValueError as exc:
            raise UsageError(f"{exc}; set CHATRECALL_EMBED_URL") from None
    return HashingEmbedder(args.embed_dim, args.seed)


def _backend(args, conv: ConversationSet, questions: Sequence[Question]):
    if args.backend == "remote":
        try:
            return ChatCompletionBackend(model=args.llm_model)
        except ValueError as exc:
            raise UsageError(f"{exc}; set CHATRECALL_LLM_URL and CHATRECALL_LLM_MODEL") from None
    oracle = ScriptedOracle(conv.speakers)
    oracle.register(questions)
    return oracle


def _set_questions(directory: Path, set_id: str, ambiguous: bool, tests: Sequence[str] | None) -> list[Question]:
    out = []
    for f in sorted(directory.glob(f"{set_id}.*.jsonl")):
        if f.name.endswith(".ambiguous.jsonl") != ambiguous:
            continue
        try:
            questions = read_questions(f)
        except (ValueError, KeyError, TypeError) as exc:
            raise QuestionValidationError({f.name: [str(exc)]}) from None
        for q in questions:
            if q.set_id == set_id and (not tests or q.test_name in tests):
                out.append(q)
    return out


def _limit_per_test(questions: list[Question], limit: int | None) -> list[Question]:
    if not limit:
        return questions
    seen: dict[str, int] = {}
    kept = []
    for q in questions:
        if seen.get(q.test_name, 0) < limit:
            kept.append(q)
            seen[q.test_name] = seen.get(q.test_name, 0) + 1
    return kept


def cmd_bench(args) -> int:
    mode = _mode(args)
    sets = load_sets(args.sets)
    qdir = Path(args.questions)
    if not qdir.is_dir():
        raise UsageError(f"question directory not found: {qdir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or mode.label + ("+amb" if args.ambiguous else "")
    trace_path = out / f"{name}.traces.jsonl"
    trim_torn_tail(trace_path)
    done = {t["question_id"] for t in read_traces(trace_path)}
    embedder = _embedder(args)
    failures = 0
    total = 0
    for set_id in (args.set_id or sorted(sets)):
        if set_id not in sets:
            raise UsageError(f"unknown set id {set_id!r}")
        conv = sets[set_id]
        questions = _limit_per_test(_set_questions(qdir, set_id, args.ambiguous, args.tests), args.limit_per_test)
        total += len(questions)
        todo = [q for q in questions if q.id not in done]
        if not todo:
            continue
        llm = LanguageModel(_backend(args, conv, questions), retries=args.retries) if mode.uses_llm else None
        retriever = Retriever(conv, llm, embedder, args.k, args.max_steps)
        with ThreadPoolExecutor(max_workers=max(1, args.parallel)) as pool:
            for rec in pool.map(lambda q: run_question(retriever, q, mode), todo):
                append_traces(trace_path, [rec])
                failures += bool(rec["degraded"])
    traces = read_traces(trace_path)
    report = report_from_traces(traces, {"name": name, **mode.to_dict(), "ambiguous": args.ambiguous})
    (out / f"{name}.report.json").write_text(report_json(report) + "\n", encoding="utf-8")
    (out / f"{name}.report.csv").write_text(report_csv(report), encoding="utf-8")
    text = format_report(report)
    (out / f"{name}.report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    if total and failures / total > args.failure_budget:
        print(f"{failures} of {total} questions fell back to semantic search "
              f"(budget {args.failure_budget:.0%})", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


# --- query / report / synth ------------------------------------------------------

def cmd_query(args) -> int:
    sets = load_sets(args.sets)
    if args.set_id not in sets:
        print(f"unknown set id {args.set_id!r}; known: {', '.join(sorted(sets))}", file=sys.stderr)
        return EXIT_DATA
    conv = sets[args.set_id]
    mode = _mode(args)
    llm = LanguageModel(_backend(args, conv, []), retries=args.retries) if mode.uses_llm else None
    retriever = Retriever(conv, llm, _embedder(args), args.k, args.max_steps)
    now = advance_clock(conv)
    result = retriever.retrieve(args.text, (), mode, now)
    print(f"now: {now.date} {now.time:%H:%M} session {now.session}")
    if result.needs_meta is not None:
        print(f"meta={'y' if result.needs_meta else 'n'} semantic={'y' if result.needs_semantic else 'n'}")
    if result.chain:
        print("chain: " + " -> ".join(result.chain))
    for e in result.errors:
        print(f"note: {e}")
    print(f"{len(result.retrieved)} responses")
    for rid in result.retrieved:
        print(f"[{rid}] {imbue_metadata_text(conv.responses[rid])}")
    return EXIT_OK


def cmd_report(args) -> int:
    traces = []
    for p in args.traces:
        if not Path(p).exists():
            raise UsageError(f"no such trace file: {p}")
        traces.extend(read_traces(p))
    report = report_from_traces(traces)
    print(format_report(report))
    if args.json:
        Path(args.json).write_text(report_json(report) + "\n", encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report_csv(report), encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import synthetic_dialogues, synthetic_locomo, synthetic_time_content

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in synthetic_locomo(args.n_sets, args.seed):
        (out / f"{rec['sample_id']}.json").write_text(json.dumps(rec, indent=1) + "\n", encoding="utf-8")
    records = []
    for doc in synthetic_dialogues(args.n_sets, args.seed):
        records.extend(synthetic_time_content(build_conversation_set(doc), args.seed))
    (out / "time_content.jsonl").write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    print(f"wrote {args.n_sets} dialogues and {len(records)} time+content questions to {out}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def _add_retrieval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=KINDS, default=COTABLE)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--query-input", choices=QUERY_INPUTS, default=ORIGINAL_QUERY)
    p.add_argument("--n-turns", type=int, default=5)
    p.add_argument("--backend", choices=("oracle", "remote"), default="oracle")
    p.add_argument("--llm-model", default=None, help="model name for the remote backend")
    p.add_argument("--embedder", choices=("hashing", "http"), default="hashing")
    p.add_argument("--embed-dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_FILTERS)
    p.add_argument("--retries", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chatrecall", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="turn dialogue files into conversation sets")
    p.add_argument("dialogues", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--select", type=int, default=0, help="keep only the N longest dialogues")
    p.add_argument("--speech-rate", type=float, default=DEFAULT_SPEECH_RATE_WPM)
    p.add_argument("--session-gap", type=int, default=DEFAULT_SESSION_GAP_MINUTES)
    p.add_argument("--padding-tokens", type=int, default=DEFAULT_PADDING_TOKENS)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="write question files for every conversation set")
    p.add_argument("--sets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--time-content", help="time+content question file to validate and split per set")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="run a retrieval mode over the question files")
    p.add_argument("--sets", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", help="run name used for output files")
    p.add_argument("--set-id", action="append")
    p.add_argument("--tests", nargs="+", choices=TIME_TESTS + (TIME_CONTENT,))
    p.add_argument("--ambiguous", action="store_true", help="use the ambiguous question files")
    p.add_argument("--limit-per-test", type=int, default=0)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--failure-budget", type=float, default=0.5,
                   help="largest fraction of degraded questions before exiting with status 3")
    _add_retrieval_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("query", help="retrieve responses for one free-text query")
    p.add_argument("--sets", required=True)
    p.add_argument("--set-id", required=True)
    p.add_argument("text")
    _add_retrieval_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("report", help="score one or more trace files")
    p.add_argument("traces", nargs="+")
    p.add_argument("--json")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write the synthetic fixture corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-sets", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DialogueError, QuestionValidationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
