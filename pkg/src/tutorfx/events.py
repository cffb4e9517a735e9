"""Event-log domain types, ingestion, validation, and serialization.

An event log is the unit of exchange between every stage of the pipeline:
one row per timestamped problem attempt, plus optional side tables for
tutoring-session metadata and out-of-platform student context.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator, Mapping

from .errors import DuplicateEvent, MalformedRecord

EVENT_COLUMNS = ("student_id", "timestamp", "problem_id", "skill_id", "correct")
OPTIONAL_COLUMNS = ("tutored", "session_id")

_BOOL_VALUES = {"0": False, "1": True, "true": True, "false": False}


def parse_bool(raw, *, line: int, column: str) -> bool:
    """Parse {0, 1, true, false} case-insensitively; anything else is malformed."""
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, int) and raw in (0, 1):
        return bool(raw)
    if isinstance(raw, str):
        key = raw.strip().lower()
        if key in _BOOL_VALUES:
            return _BOOL_VALUES[key]
    raise MalformedRecord(line, f"column {column!r}: {raw!r} is not a boolean")


@dataclass(frozen=True)
class InteractionEvent:
    """One timestamped problem attempt.

    ``seq_index`` is assigned at ingestion: 0-based, contiguous per student
    in (timestamp, problem_id, input order) order. ``tutored`` marks that a
    tutoring session happened on this attempt, in which case ``session_id``
    must be present.
    """

    student_id: str
    seq_index: int
    timestamp: int
    problem_id: str
    skill_id: str
    correct: bool
    tutored: bool = False
    session_id: str | None = None
    extras: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SessionMeta:
    """Characteristics of one tutoring chat session."""

    session_id: str
    messages_total: int
    tutor_messages: int
    student_messages: int
    duration_minutes: float
    student_word_share: float
    prior_session_count: int

    def __post_init__(self):
        if self.tutor_messages + self.student_messages != self.messages_total:
            raise ValueError(
                f"session {self.session_id}: tutor + student messages "
                f"({self.tutor_messages} + {self.student_messages}) != total "
                f"({self.messages_total})"
            )
        if not 0.0 <= self.student_word_share <= 1.0:
            raise ValueError(
                f"session {self.session_id}: student_word_share "
                f"{self.student_word_share} outside [0, 1]"
            )
        if self.duration_minutes < 0:
            raise ValueError(f"session {self.session_id}: negative duration")


@dataclass(frozen=True)
class StudentContext:
    """Optional out-of-platform covariates for one student.

    Every field besides the id may be missing; missingness is preserved
    as ``None`` and never silently imputed.
    """

    student_id: str
    pretest_score: float | None = None
    gender: str | None = None
    low_ses_flag: bool | None = None
    school_id: str | None = None


@dataclass(frozen=True)
class IngestReport:
    """Row accounting for one ingestion pass: kept + dropped + deduplicated = rows_in."""

    source: str
    format: str
    rows_in: int
    kept: int
    dropped_malformed: int
    deduplicated: int


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def counts_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for v in self.violations:
            out[v.kind] = out.get(v.kind, 0) + 1
        return out

    def to_json(self) -> str:
        payload = {
            "ok": self.ok,
            "counts": self.counts_by_kind(),
            "violations": [
                {"kind": v.kind, "subject": v.subject, "detail": v.detail}
                for v in self.violations
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


class EventLog:
    """Immutable, per-student-sorted collection of interaction events.

    Events are stored grouped by student in (timestamp, seq_index) order;
    the log is safe to share read-only across threads.
    """

    def __init__(
        self,
        events: Iterable[InteractionEvent],
        sessions: Mapping[str, SessionMeta] | None = None,
        context: Mapping[str, StudentContext] | None = None,
        provenance: IngestReport | None = None,
    ):
        by_student: dict[str, list[InteractionEvent]] = {}
        for ev in events:
            by_student.setdefault(ev.student_id, []).append(ev)
        for sid in by_student:
            by_student[sid].sort(key=lambda e: (e.timestamp, e.seq_index))
        self._by_student: dict[str, tuple[InteractionEvent, ...]] = {
            sid: tuple(evs) for sid, evs in sorted(by_student.items())
        }
        self.sessions: dict[str, SessionMeta] = dict(sessions or {})
        self.context: dict[str, StudentContext] = dict(context or {})
        self.provenance = provenance

    @property
    def students(self) -> tuple[str, ...]:
        return tuple(self._by_student)

    def student_events(self, student_id: str) -> tuple[InteractionEvent, ...]:
        return self._by_student[student_id]

    def __iter__(self) -> Iterator[InteractionEvent]:
        for evs in self._by_student.values():
            yield from evs

    def __len__(self) -> int:
        return sum(len(evs) for evs in self._by_student.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            self._by_student == other._by_student
            and self.sessions == other.sessions
            and self.context == other.context
        )

    def n_problems(self) -> int:
        return len({ev.problem_id for ev in self})

    def restrict_students(self, student_ids: Iterable[str]) -> "EventLog":
        keep = set(student_ids)
        events = [ev for sid in self.students if sid in keep for ev in self._by_student[sid]]
        sessions = {
            s.session_id: s
            for s in self.sessions.values()
            if any(ev.session_id == s.session_id for ev in events)
        }
        context = {sid: c for sid, c in self.context.items() if sid in keep}
        return EventLog(events, sessions, context)


def _parse_timestamp(raw, line: int) -> int:
    if isinstance(raw, bool):
        raise MalformedRecord(line, f"timestamp {raw!r} is not an integer")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str):
        text = raw.strip()
        try:
            return int(text)
        except ValueError:
            pass
    raise MalformedRecord(line, f"timestamp {raw!r} is not an integer (epoch ms)")


def _record_from_mapping(raw: Mapping, line: int, known_str: bool) -> dict:
    """Normalize one raw row into InteractionEvent kwargs (seq_index unset)."""
    missing = [c for c in EVENT_COLUMNS if raw.get(c) in (None, "")]
    if missing:
        raise MalformedRecord(line, f"missing required column(s): {', '.join(missing)}")
    student_id = str(raw["student_id"]).strip()
    problem_id = str(raw["problem_id"]).strip()
    skill_id = str(raw["skill_id"]).strip()
    timestamp = _parse_timestamp(raw["timestamp"], line)
    correct = parse_bool(raw["correct"], line=line, column="correct")
    tutored_raw = raw.get("tutored")
    tutored = (
        parse_bool(tutored_raw, line=line, column="tutored")
        if tutored_raw not in (None, "")
        else False
    )
    session_raw = raw.get("session_id")
    session_id = None
    if session_raw not in (None, ""):
        session_id = str(session_raw).strip() or None
    if tutored and session_id is None:
        raise MalformedRecord(line, "tutored attempt without session_id")
    known = set(EVENT_COLUMNS) | set(OPTIONAL_COLUMNS) | {"seq_index", "extras"}
    extras: dict[str, str] = {}
    if not known_str:
        nested = raw.get("extras")
        if isinstance(nested, Mapping):
            extras.update({str(k): str(v) for k, v in nested.items()})
    for key, value in raw.items():
        if key in known:
            continue
        if value in (None, ""):
            continue
        extras[str(key)] = str(value)
    return {
        "student_id": student_id,
        "timestamp": timestamp,
        "problem_id": problem_id,
        "skill_id": skill_id,
        "correct": correct,
        "tutored": tutored,
        "session_id": session_id,
        "extras": extras,
    }


def _iter_csv(stream: IO[str]) -> Iterator[tuple[int, dict]]:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None:
        raise MalformedRecord(1, "empty input: header row required")
    header = [h.strip() for h in reader.fieldnames]
    missing = [c for c in EVENT_COLUMNS if c not in header]
    if missing:
        raise MalformedRecord(1, f"header lacks required column(s): {', '.join(missing)}")
    for idx, row in enumerate(reader, start=2):
        if None in row:
            raise MalformedRecord(idx, "row has more fields than the header")
        yield idx, {(k.strip() if k else k): v for k, v in row.items()}


def _iter_jsonl(stream: IO[str]) -> Iterator[tuple[int, dict]]:
    for idx, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(idx, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise MalformedRecord(idx, "JSONL line is not an object")
        yield idx, obj


def ingest_events(
    source,
    format: str = "csv",
    *,
    sessions: Mapping[str, SessionMeta] | None = None,
    context: Mapping[str, StudentContext] | None = None,
    source_name: str = "<stream>",
    on_malformed: str = "raise",
) -> EventLog:
    """Ingest an event stream into a sorted, seq-indexed EventLog.

    ``source`` is a text stream, bytes, or str in the declared format
    ({"csv", "jsonl"}). Per-student ordering is (timestamp, problem_id,
    input order); seq_index is assigned 0..n-1 in that order. Exact
    duplicates of (student, timestamp, problem, correct) are dropped and
    counted; the same key with conflicting correctness raises
    DuplicateEvent. Malformed rows raise MalformedRecord by default;
    ``on_malformed="drop"`` counts them instead.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {format!r}")
    if on_malformed not in ("raise", "drop"):
        raise ValueError(f"on_malformed must be 'raise' or 'drop', got {on_malformed!r}")
    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        source = io.StringIO(source)

    rows = _iter_csv(source) if format == "csv" else _iter_jsonl(source)
    rows_in = 0
    dropped = 0
    deduplicated = 0
    records: list[dict] = []
    seen: dict[tuple[str, int, str], bool] = {}
    for line, raw in rows:
        rows_in += 1
        try:
            rec = _record_from_mapping(raw, line, known_str=(format == "csv"))
        except MalformedRecord:
            if on_malformed == "drop":
                dropped += 1
                continue
            raise
        key = (rec["student_id"], rec["timestamp"], rec["problem_id"])
        if key in seen:
            if seen[key] != rec["correct"]:
                raise DuplicateEvent(
                    f"line {line}: student {rec['student_id']} at t={rec['timestamp']} "
                    f"on problem {rec['problem_id']} has conflicting correctness"
                )
            deduplicated += 1
            continue
        seen[key] = rec["correct"]
        records.append(rec)

    by_student: dict[str, list[dict]] = {}
    for order, rec in enumerate(records):
        rec["_order"] = order
        by_student.setdefault(rec["student_id"], []).append(rec)
    events: list[InteractionEvent] = []
    for sid in sorted(by_student):
        recs = sorted(by_student[sid], key=lambda r: (r["timestamp"], r["problem_id"], r["_order"]))
        for seq, rec in enumerate(recs):
            rec.pop("_order")
            events.append(InteractionEvent(seq_index=seq, **rec))

    report = IngestReport(
        source=source_name,
        format=format,
        rows_in=rows_in,
        kept=len(events),
        dropped_malformed=dropped,
        deduplicated=deduplicated,
    )
    return EventLog(events, sessions=sessions, context=context, provenance=report)


def validate_log(log: EventLog) -> ValidationReport:
    """Diagnostic invariant scan; never mutates the log."""
    violations: list[Violation] = []
    for sid in log.students:
        evs = log.student_events(sid)
        if len(evs) < 2:
            violations.append(Violation("ShortSequence", sid, f"{len(evs)} event(s)"))
        last_ts = None
        for pos, ev in enumerate(evs):
            if ev.seq_index != pos:
                violations.append(
                    Violation("SeqIndexGap", sid, f"expected {pos}, found {ev.seq_index}")
                )
                break
        for ev in evs:
            if last_ts is not None and ev.timestamp < last_ts:
                violations.append(
                    Violation("NonMonotoneTimestamps", sid, f"at seq {ev.seq_index}")
                )
                break
            last_ts = ev.timestamp
        for ev in evs:
            if ev.tutored and ev.session_id is None:
                violations.append(
                    Violation("TutoredWithoutSession", sid, f"at seq {ev.seq_index}")
                )
    for ev in log:
        if ev.session_id is not None and ev.session_id not in log.sessions:
            violations.append(
                Violation("OrphanSession", ev.session_id, f"referenced by {ev.student_id}")
            )
    return ValidationReport(tuple(violations))


def _event_row(ev: InteractionEvent, extra_keys: list[str]) -> list[str]:
    row = [
        ev.student_id,
        str(ev.seq_index),
        str(ev.timestamp),
        ev.problem_id,
        ev.skill_id,
        "true" if ev.correct else "false",
        "true" if ev.tutored else "false",
        ev.session_id or "",
    ]
    row.extend(ev.extras.get(k, "") for k in extra_keys)
    return row


def write_events_csv(log: EventLog, stream: IO[str]) -> None:
    """RFC-4180 CSV with header; extras become extra columns."""
    extra_keys = sorted({k for ev in log for k in ev.extras})
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(
        ["student_id", "seq_index", "timestamp", "problem_id", "skill_id",
         "correct", "tutored", "session_id", *extra_keys]
    )
    for ev in log:
        writer.writerow(_event_row(ev, extra_keys))


def write_events_jsonl(log: EventLog, stream: IO[str]) -> None:
    for ev in log:
        obj = {
            "student_id": ev.student_id,
            "seq_index": ev.seq_index,
            "timestamp": ev.timestamp,
            "problem_id": ev.problem_id,
            "skill_id": ev.skill_id,
            "correct": ev.correct,
            "tutored": ev.tutored,
            "session_id": ev.session_id,
        }
        if ev.extras:
            obj["extras"] = dict(ev.extras)
        stream.write(json.dumps(obj, sort_keys=True) + "\n")


SESSION_COLUMNS = (
    "session_id", "messages_total", "tutor_messages", "student_messages",
    "duration_minutes", "student_word_share", "prior_session_count",
)


def write_sessions_csv(sessions: Mapping[str, SessionMeta], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SESSION_COLUMNS)
    for sid in sorted(sessions):
        s = sessions[sid]
        writer.writerow(
            [s.session_id, s.messages_total, s.tutor_messages, s.student_messages,
             repr(s.duration_minutes), repr(s.student_word_share), s.prior_session_count]
        )


def load_sessions_csv(stream: IO[str]) -> dict[str, SessionMeta]:
    out: dict[str, SessionMeta] = {}
    for line, row in enumerate(csv.DictReader(stream), start=2):
        try:
            meta = SessionMeta(
                session_id=row["session_id"],
                messages_total=int(row["messages_total"]),
                tutor_messages=int(row["tutor_messages"]),
                student_messages=int(row["student_messages"]),
                duration_minutes=float(row["duration_minutes"]),
                student_word_share=float(row["student_word_share"]),
                prior_session_count=int(row["prior_session_count"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedRecord(line, f"bad session row: {exc}") from None
        out[meta.session_id] = meta
    return out


CONTEXT_COLUMNS = ("student_id", "pretest_score", "gender", "low_ses_flag", "school_id")


def write_context_csv(context: Mapping[str, StudentContext], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CONTEXT_COLUMNS)
    for sid in sorted(context):
        c = context[sid]
        writer.writerow(
            [c.student_id,
             "" if c.pretest_score is None else repr(c.pretest_score),
             c.gender or "",
             "" if c.low_ses_flag is None else ("true" if c.low_ses_flag else "false"),
             c.school_id or ""]
        )


def load_context_csv(stream: IO[str]) -> dict[str, StudentContext]:
    out: dict[str, StudentContext] = {}
    for line, row in enumerate(csv.DictReader(stream), start=2):
        sid = row.get("student_id")
        if not sid:
            raise MalformedRecord(line, "context row without student_id")
        ses_raw = row.get("low_ses_flag")
        out[sid] = StudentContext(
            student_id=sid,
            pretest_score=float(row["pretest_score"]) if row.get("pretest_score") else None,
            gender=row.get("gender") or None,
            low_ses_flag=(
                parse_bool(ses_raw, line=line, column="low_ses_flag") if ses_raw else None
            ),
            school_id=row.get("school_id") or None,
        )
    return out


def with_sessions(log: EventLog, sessions: Mapping[str, SessionMeta]) -> EventLog:
    return EventLog(list(log), sessions=sessions, context=log.context, provenance=log.provenance)


def with_context(log: EventLog, context: Mapping[str, StudentContext]) -> EventLog:
    return EventLog(list(log), sessions=log.sessions, context=context, provenance=log.provenance)
