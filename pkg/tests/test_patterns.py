import dataclasses
import itertools
import json
import re
import threading

import pytest

from conftest import ARTIFACT, SPRINGFIELD, memento_announce
from valuenet.as2 import AgentDescriptor, RelationshipObject, build_offer, build_response
from valuenet.errors import BadThreadRoot, IllegalTransition, TerminalThread, UnknownParent
from valuenet.patterns import (
    TERMINAL_STATES,
    Pattern,
    State,
    ThreadState,
    ThreadStore,
    classify,
    expected_responder,
    transition,
)

REVIEW = AgentDescriptor("https://review.example/service#us", inbox="https://review.example/inbox")
STRANGER = AgentDescriptor("https://stranger.example/#me")
RESULT = RelationshipObject(ARTIFACT, "https://purl.org/review", "https://review.example/r/1")

# oracle for whole threads, written independently of the transition table:
# O = Offer, A = Accept, R = Reject, N = Announce, U = Undo by requester
LEGAL = re.compile(r"O(A(N|U)?|R|U)?")


def offer():
    return build_offer(SPRINGFIELD, ARTIFACT, "https://schema.org/ReviewAction", REVIEW)


def reply(letter, root):
    # built against the root so the builder accepts any letter; callers
    # re-point in_reply_to at the message actually being answered
    kind = {"A": "Accept", "R": "Reject", "N": "Announce", "U": "Undo"}[letter]
    actor = SPRINGFIELD if letter == "U" else REVIEW
    return build_response(kind, root, actor, result=RESULT if letter == "N" else None)


def run(word):
    """Apply ``word`` (after the leading O); returns the final state or raises."""
    root = offer()
    t = ThreadState.start(root)
    parent = root
    for letter in word[1:]:
        n = dataclasses.replace(reply(letter, root), in_reply_to=parent.id)
        t = transition(t, n)
        parent = n
    return t


def test_classify():
    o = offer()
    assert classify(memento_announce()) is Pattern.ONE_WAY
    assert classify(o) is Pattern.THREAD_ROOT
    assert classify(build_response("Accept", o, REVIEW)) is Pattern.THREAD_MEMBER


def test_classify_announce_reply_is_member():
    o = offer()
    accept = build_response("Accept", o, REVIEW)
    assert classify(build_response("Announce", accept, REVIEW, result=RESULT)) is Pattern.THREAD_MEMBER


def test_start_requires_offer():
    with pytest.raises(BadThreadRoot):
        ThreadState.start(memento_announce())


def test_start_state():
    o = offer()
    t = ThreadState.start(o)
    assert t.state is State.REQUESTED
    assert t.thread_id == o.id and t.messages == (o.id,)
    assert t.requester == SPRINGFIELD and t.responder == REVIEW
    assert t.artifact == ARTIFACT


@pytest.mark.parametrize(
    "word,state",
    [("O", State.REQUESTED), ("OA", State.ACKNOWLEDGED), ("OR", State.REJECTED), ("OU", State.WITHDRAWN),
     ("OAN", State.FULFILLED), ("OAU", State.WITHDRAWN)],
)
def test_legal_threads(word, state):
    assert run(word).state is state


@pytest.mark.parametrize("word", ["ON", "ORA", "OAA", "OANU", "ORU", "OAR", "OUA"])
def test_illegal_threads(word):
    with pytest.raises(IllegalTransition):
        run(word)


def test_reply_to_unknown_parent():
    t = ThreadState.start(offer())
    other = offer()
    with pytest.raises(UnknownParent):
        transition(t, build_response("Accept", other, REVIEW))


def test_undo_by_other_party_refused():
    o = offer()
    t = ThreadState.start(o)
    with pytest.raises(IllegalTransition, match="requester"):
        transition(t, build_response("Undo", o, STRANGER))
    with pytest.raises(IllegalTransition):
        transition(t, build_response("Undo", o, REVIEW))


def test_same_message_twice_refused():
    o = offer()
    accept = build_response("Accept", o, REVIEW)
    t = transition(ThreadState.start(o), accept)
    with pytest.raises(IllegalTransition):
        transition(t, accept)


def test_enumerate_sequences_up_to_four():
    """Every word of length <= 4 agrees with the regular-language oracle."""
    checked = 0
    for length in range(0, 4):
        for tail in itertools.product("ARNU", repeat=length):
            word = "O" + "".join(tail)
            expected = LEGAL.fullmatch(word) is not None
            try:
                run(word)
                got = True
            except IllegalTransition:
                got = False
            assert got == expected, word
            checked += 1
    assert checked == 1 + 4 + 16 + 64


def test_legal_language_is_prefix_closed():
    words = ["O" + "".join(t) for n in range(4) for t in itertools.product("ARNU", repeat=n)]
    legal = {w for w in words if LEGAL.fullmatch(w)}
    assert legal == {"O", "OA", "OR", "OU", "OAN", "OAU"}
    assert all(w[:-1] in legal for w in legal if len(w) > 1)


def test_terminal_states_absorb():
    for word in ("OR", "OU", "OAN", "OAU"):
        t = run(word)
        assert t.state in TERMINAL_STATES
        last = t.messages[-1]
        for letter in "ARNU":
            n = dataclasses.replace(reply(letter, offer()), in_reply_to=last)
            with pytest.raises(IllegalTransition):
                transition(t, n)


def test_states_never_return_to_requested():
    for n in range(4):
        for tail in itertools.product("ARNU", repeat=n):
            try:
                t = run("O" + "".join(tail))
            except IllegalTransition:
                continue
            if tail:
                assert t.state is not State.REQUESTED


def test_expected_responder():
    o = offer()
    t = ThreadState.start(o)
    assert expected_responder(t) == REVIEW
    t = transition(t, build_response("Reject", o, REVIEW))
    with pytest.raises(TerminalThread):
        expected_responder(t)


def test_store_tracks_thread_and_journal(tmp_path):
    journal = tmp_path / "threads.ndjson"
    store = ThreadStore(journal)
    o = offer()
    accept = build_response("Accept", o, REVIEW)
    done = build_response("Announce", accept, REVIEW, result=RESULT)
    assert store.observe(memento_announce()) == (Pattern.ONE_WAY, None)
    assert store.observe(o)[1].state is State.REQUESTED
    assert store.observe(accept)[1].state is State.ACKNOWLEDGED
    pattern, t = store.observe(done)
    assert pattern is Pattern.THREAD_MEMBER and t.state is State.FULFILLED
    assert store.thread_of(done.id).thread_id == o.id
    lines = [json.loads(line) for line in journal.read_text().splitlines()]
    assert [l["new_state"] for l in lines] == ["Requested", "Acknowledged", "Fulfilled"]
    assert set(lines[0]) == {"thread_id", "notification_id", "new_state", "timestamp"}


def test_store_follow_up_announce_after_fulfilled():
    store = ThreadStore()
    o = offer()
    accept = build_response("Accept", o, REVIEW)
    done = build_response("Announce", accept, REVIEW, result=RESULT)
    for n in (o, accept, done):
        store.observe(n)
    extra = build_response("Announce", done, REVIEW, result=RESULT)
    pattern, t = store.observe(extra)
    assert pattern is Pattern.ONE_WAY
    assert t.state is State.FULFILLED and t.messages[-1] == extra.id


def test_store_unknown_parent():
    with pytest.raises(UnknownParent):
        ThreadStore().observe(build_response("Accept", offer(), REVIEW))


def test_store_is_idempotent_per_message():
    store = ThreadStore()
    o = offer()
    accept = build_response("Accept", o, REVIEW)
    store.observe(o)
    store.observe(accept)
    assert store.observe(accept)[1].messages == (o.id, accept.id)
    assert store.observe(o)[1].state is State.ACKNOWLEDGED


def test_store_parallel_threads(tmp_path):
    store = ThreadStore(tmp_path / "j.ndjson")
    roots = [offer() for _ in range(40)]
    for o in roots:
        store.observe(o)
    barrier = threading.Barrier(8)
    errors = []

    def work(chunk):
        barrier.wait()
        for o in chunk:
            try:
                accept = build_response("Accept", o, REVIEW)
                store.observe(accept)
                store.observe(build_response("Announce", accept, REVIEW, result=RESULT))
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

    threads = [threading.Thread(target=work, args=(roots[i::8],)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    assert all(store.get(o.id).state is State.FULFILLED for o in roots)
    assert len((tmp_path / "j.ndjson").read_text().splitlines()) == 120


def test_racing_replies_one_wins():
    store = ThreadStore()
    o = offer()
    store.observe(o)
    replies = [build_response(k, o, REVIEW) for k in ("Accept", "Reject") * 4]
    outcomes = []
    barrier = threading.Barrier(len(replies))

    def work(n):
        barrier.wait()
        try:
            store.observe(n)
            outcomes.append("ok")
        except IllegalTransition:
            outcomes.append("refused")

    threads = [threading.Thread(target=work, args=(n,)) for n in replies]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert outcomes.count("ok") == 1
    assert store.get(o.id).state in (State.ACKNOWLEDGED, State.REJECTED)
