"""Reader sessions: verdict capture with an append-only event log per session
(plus periodic snapshots), and grouped confusion reports.

Scoring semantics: a true positive is a synthetic tumor called synthetic, a
true negative is a real tumor called real.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import SessionClosed, UnknownCase
from ..metrics import ConfusionCounts, confusion_metrics
from .cases import TRUTH_REAL, TRUTH_SYNTHETIC, TuringCase

READER_LEVELS = ("junior", "mid", "senior")
VERDICTS = (TRUTH_REAL, TRUTH_SYNTHETIC)
SNAPSHOT_EVERY = 10
GROUPINGS = ("total", "reader", "level", "type")


@dataclass
class TuringSession:
    """One reader's pass over the case list, in a seeded order."""

    session_id: str
    reader_id: str
    reader_level: str
    case_order: list[str]
    verdicts: dict[str, str] = field(default_factory=dict)
    verdict_times: dict[str, float] = field(default_factory=dict)
    closed: bool = False

    def __post_init__(self):
        if self.reader_level not in READER_LEVELS:
            raise ValueError(f"reader level must be one of {READER_LEVELS}, got {self.reader_level!r}")

    @property
    def answered(self) -> int:
        return len(self.verdicts)

    @property
    def total(self) -> int:
        return len(self.case_order)

    def next_case_id(self) -> str | None:
        for cid in self.case_order:
            if cid not in self.verdicts:
                return cid
        return None


class SessionStore:
    """File-backed store: one append-only JSONL event log per session."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._events_since_snapshot: dict[str, int] = {}

    def _log_path(self, session_id: str) -> Path:
        return self.root / f"session-{session_id}.jsonl"

    def append_event(self, session: TuringSession, event: dict):
        event = {"ts": time.time(), **event}
        with open(self._log_path(session.session_id), "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        n = self._events_since_snapshot.get(session.session_id, 0) + 1
        if n >= SNAPSHOT_EVERY:
            self.write_snapshot(session)
            n = 0
        self._events_since_snapshot[session.session_id] = n

    def write_snapshot(self, session: TuringSession):
        snap = {
            "session_id": session.session_id,
            "reader_id": session.reader_id,
            "reader_level": session.reader_level,
            "case_order": session.case_order,
            "verdicts": session.verdicts,
            "closed": session.closed,
        }
        with open(self.root / f"snapshot-{session.session_id}.json", "w") as fh:
            json.dump(snap, fh, sort_keys=True)

    def load_sessions(self) -> list[TuringSession]:
        """Rebuild all sessions by replaying their event logs."""
        sessions = []
        for path in sorted(self.root.glob("session-*.jsonl")):
            session = None
            with open(path) as fh:
                for line in fh:
                    event = json.loads(line)
                    if event["type"] == "created":
                        session = TuringSession(
                            session_id=event["session_id"],
                            reader_id=event["reader_id"],
                            reader_level=event["reader_level"],
                            case_order=event["case_order"],
                        )
                    elif event["type"] in ("verdict", "overwrite") and session is not None:
                        session.verdicts[event["case_id"]] = event["verdict"]
                        session.verdict_times[event["case_id"]] = event["ts"]
                    elif event["type"] == "closed" and session is not None:
                        session.closed = True
            if session is not None:
                sessions.append(session)
        return sessions


def create_session(
    store: SessionStore,
    reader_id: str,
    reader_level: str,
    cases: list[TuringCase],
    seed: int,
) -> TuringSession:
    """Open a session whose case order is a seeded permutation."""
    order = [cases[int(i)].case_id for i in np.random.default_rng(seed).permutation(len(cases))]
    session = TuringSession(
        session_id=f"{reader_id}-{seed:08x}",
        reader_id=reader_id,
        reader_level=reader_level,
        case_order=order,
    )
    store.append_event(
        session,
        {
            "type": "created",
            "session_id": session.session_id,
            "reader_id": reader_id,
            "reader_level": reader_level,
            "case_order": order,
            "seed": seed,
        },
    )
    return session


def record_verdict(
    session: TuringSession, case_id: str, verdict: str, store: SessionStore | None = None
) -> TuringSession:
    """Store a verdict; idempotent on repeats, audit-logged on overwrites."""
    if session.closed:
        raise SessionClosed(f"session {session.session_id} is closed")
    if case_id not in session.case_order:
        raise UnknownCase(f"case {case_id!r} is not part of session {session.session_id}")
    if verdict not in VERDICTS:
        raise ValueError(f"verdict must be one of {VERDICTS}, got {verdict!r}")

    previous = session.verdicts.get(case_id)
    if previous == verdict:
        return session  # duplicate submit: single stored verdict
    session.verdicts[case_id] = verdict
    session.verdict_times[case_id] = time.time()
    if store is not None:
        event = {"type": "verdict", "case_id": case_id, "verdict": verdict}
        if previous is not None:
            event = {**event, "type": "overwrite", "previous": previous}
        store.append_event(session, event)
    return session


def close_session(session: TuringSession, store: SessionStore | None = None) -> TuringSession:
    if not session.closed:
        session.closed = True
        if store is not None:
            store.append_event(session, {"type": "closed"})
            store.write_snapshot(session)
    return session


def _grouping_key(session: TuringSession, case: TuringCase, grouping: str):
    if grouping == "total":
        return "total"
    if grouping == "reader":
        return session.reader_id
    if grouping == "level":
        return session.reader_level
    if grouping == "type":
        return case.type_tag
    raise ValueError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")


def report(
    sessions: list[TuringSession],
    cases: list[TuringCase],
    grouping: str = "total",
) -> dict:
    """Grouped confusion counts and identification metrics over sessions.

    Unanswered cases are excluded from the counts and reported separately.
    """
    case_by_id = {c.case_id: c for c in cases}
    counts: dict[str, ConfusionCounts] = {}
    unanswered: dict[str, int] = {}
    for session in sessions:
        for case_id in session.case_order:
            case = case_by_id[case_id]
            key = _grouping_key(session, case, grouping)
            verdict = session.verdicts.get(case_id)
            if verdict is None:
                unanswered[key] = unanswered.get(key, 0) + 1
                continue
            synthetic = case.truth == TRUTH_SYNTHETIC
            called_synth = verdict == TRUTH_SYNTHETIC
            delta = ConfusionCounts(
                tp=int(synthetic and called_synth),
                fn=int(synthetic and not called_synth),
                tn=int(not synthetic and not called_synth),
                fp=int(not synthetic and called_synth),
            )
            counts[key] = counts.get(key, ConfusionCounts()) + delta

    rows = {}
    for key in sorted(set(counts) | set(unanswered)):
        c = counts.get(key, ConfusionCounts())
        m = confusion_metrics(c)
        rows[key] = {
            "counts": {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn},
            "sensitivity": m.sensitivity,
            "specificity": m.specificity,
            "accuracy": m.accuracy,
            "unanswered": unanswered.get(key, 0),
        }
    return {"grouping": grouping, "rows": rows}
