"""One-way and request-response communication patterns.

A request-response thread starts with an Offer and moves through the
states below. Replies reference an earlier thread message via
``in_reply_to``.

    Requested --Accept--> Acknowledged --Announce--> Fulfilled
    Requested --Reject--> Rejected
    Requested | Acknowledged --Undo--> Withdrawn
"""

from __future__ import annotations

import enum
import json
import logging
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .as2 import ActivityType, AgentDescriptor, Notification
from .errors import BadThreadRoot, IllegalTransition, TerminalThread, UnknownParent

logger = logging.getLogger(__name__)


class Pattern(str, enum.Enum):
    ONE_WAY = "OneWay"
    THREAD_ROOT = "ThreadRoot"
    THREAD_MEMBER = "ThreadMember"


class State(str, enum.Enum):
    REQUESTED = "Requested"
    ACKNOWLEDGED = "Acknowledged"
    REJECTED = "Rejected"
    FULFILLED = "Fulfilled"
    WITHDRAWN = "Withdrawn"

    @property
    def terminal(self) -> bool:
        return self in TERMINAL_STATES


TERMINAL_STATES = frozenset({State.REJECTED, State.FULFILLED, State.WITHDRAWN})

TRANSITIONS = {
    (State.REQUESTED, ActivityType.ACCEPT): State.ACKNOWLEDGED,
    (State.REQUESTED, ActivityType.REJECT): State.REJECTED,
    (State.ACKNOWLEDGED, ActivityType.ANNOUNCE): State.FULFILLED,
    (State.REQUESTED, ActivityType.UNDO): State.WITHDRAWN,
    (State.ACKNOWLEDGED, ActivityType.UNDO): State.WITHDRAWN,
}


@dataclass(frozen=True)
class ThreadState:
    thread_id: str
    state: State
    messages: tuple
    artifact: Optional[str]
    requester: AgentDescriptor
    responder: AgentDescriptor

    @classmethod
    def start(cls, offer: Notification) -> "ThreadState":
        if offer.activity_type is not ActivityType.OFFER:
            raise BadThreadRoot(f"threads start with an Offer, not {offer.activity_type}")
        if offer.in_reply_to is not None:
            raise BadThreadRoot("a thread root cannot reply to another message")
        return cls(
            thread_id=offer.id,
            state=State.REQUESTED,
            messages=(offer.id,),
            artifact=offer.context,
            requester=offer.actor,
            responder=offer.target,
        )

    @property
    def terminal(self) -> bool:
        return self.state.terminal


def classify(n: Notification) -> Pattern:
    if n.in_reply_to is not None:
        return Pattern.THREAD_MEMBER
    if n.activity_type is ActivityType.OFFER:
        return Pattern.THREAD_ROOT
    return Pattern.ONE_WAY


def transition(t: ThreadState, n: Notification) -> ThreadState:
    """Apply reply ``n`` to thread ``t`` and return the successor state.

    Raises:
        UnknownParent: ``n`` does not reply to a message of this thread.
        IllegalTransition: the table has no move for (state, activity), or an
            Undo comes from someone other than the requester.
    """
    if n.in_reply_to is None or n.in_reply_to not in t.messages:
        raise UnknownParent(f"{n.id} replies to {n.in_reply_to!r}, not in thread {t.thread_id}")
    if n.id in t.messages:
        raise IllegalTransition(f"{n.id} already part of thread {t.thread_id}")
    activity = n.activity_type
    new_state = TRANSITIONS.get((t.state, activity))
    if new_state is None:
        raise IllegalTransition(f"{activity} not allowed in state {t.state.value}")
    if activity is ActivityType.UNDO and n.actor.id != t.requester.id:
        raise IllegalTransition("only the requester may withdraw a thread")
    return replace(t, state=new_state, messages=t.messages + (n.id,))


def expected_responder(t: ThreadState) -> AgentDescriptor:
    """The agent whose reply the thread is waiting for."""
    if t.terminal:
        raise TerminalThread(f"thread {t.thread_id} is {t.state.value}")
    return t.responder


class ThreadStore:
    """Thread registry with per-thread serialised updates.

    Transitions for one thread are applied under that thread's lock, so
    parallel threads progress independently. Every accepted message is
    appended to ``journal`` as a JSON line
    ``{"thread_id", "notification_id", "new_state", "timestamp"}``.
    """

    def __init__(self, journal: Optional[Path] = None):
        self.journal = Path(journal) if journal else None
        self._threads: dict = {}
        self._message_thread: dict = {}
        self._locks: dict = {}
        self._registry_lock = threading.Lock()
        self._journal_lock = threading.Lock()

    def get(self, thread_id: str) -> Optional[ThreadState]:
        return self._threads.get(thread_id)

    def thread_of(self, notification_id: str) -> Optional[ThreadState]:
        tid = self._message_thread.get(notification_id)
        return self._threads.get(tid) if tid else None

    def __len__(self):
        return len(self._threads)

    def observe(self, n: Notification) -> tuple:
        """Record ``n``; returns ``(pattern, thread_state_or_None)``."""
        pattern = classify(n)
        if pattern is Pattern.ONE_WAY:
            return pattern, None
        if pattern is Pattern.THREAD_ROOT:
            state = ThreadState.start(n)
            with self._registry_lock:
                if state.thread_id in self._threads:
                    return pattern, self._threads[state.thread_id]
                self._threads[state.thread_id] = state
                self._message_thread[n.id] = state.thread_id
                self._locks[state.thread_id] = threading.Lock()
            self._log(state, n.id)
            return pattern, state

        with self._registry_lock:
            tid = self._message_thread.get(n.in_reply_to)
            lock = self._locks.get(tid)
        if tid is None:
            raise UnknownParent(f"{n.id} replies to unknown message {n.in_reply_to}")
        with lock:
            current = self._threads[tid]
            if n.id in current.messages:
                return pattern, current
            if current.state is State.FULFILLED and n.activity_type is ActivityType.ANNOUNCE:
                # follow-up results are kept in the thread without changing state
                new = replace(current, messages=current.messages + (n.id,))
                pattern = Pattern.ONE_WAY
            else:
                new = transition(current, n)
            self._threads[tid] = new
            with self._registry_lock:
                self._message_thread[n.id] = tid
        self._log(new, n.id)
        return pattern, new

    def _log(self, state: ThreadState, notification_id: str) -> None:
        if self.journal is None:
            return
        line = json.dumps(
            {
                "thread_id": state.thread_id,
                "notification_id": notification_id,
                "new_state": state.state.value,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            }
        )
        with self._journal_lock, self.journal.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
