"""Profiled ActivityStreams 2.0 notifications.

A notification is a single AS2 activity with exactly one of eight core
activity types, an actor, a target, an object and, optionally, an origin,
a context artifact and a reply link. Values are immutable; builders mint
fresh ``urn:uuid`` identifiers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import BadThreadRoot, InvalidIri, MismatchedSubject, MissingResult
from .iri import is_absolute_iri, is_http_url, new_urn_uuid

AS_NS = "https://www.w3.org/ns/activitystreams#"
LDP_NS = "http://www.w3.org/ns/ldp#"

__all__ = [
    "AS_NS",
    "LDP_NS",
    "ActivityType",
    "AgentKind",
    "AgentDescriptor",
    "RelationshipObject",
    "Notification",
    "ValidationReport",
    "build_announce",
    "build_offer",
    "build_response",
    "validate_notification",
]


class ActivityType(str, enum.Enum):
    ANNOUNCE = "Announce"
    OFFER = "Offer"
    ACCEPT = "Accept"
    REJECT = "Reject"
    UNDO = "Undo"
    CREATE = "Create"
    UPDATE = "Update"
    REMOVE = "Remove"

    @property
    def iri(self) -> str:
        return AS_NS + self.value

    @classmethod
    def lookup(cls, value) -> Optional["ActivityType"]:
        """Map a short name or full AS IRI onto a core type, else None."""
        if isinstance(value, cls):
            return value
        if not isinstance(value, str):
            return None
        if value.startswith(AS_NS):
            value = value[len(AS_NS):]
        try:
            return cls(value)
        except ValueError:
            return None

    def __str__(self) -> str:
        return self.value


class AgentKind(str, enum.Enum):
    ORGANIZATION = "Organization"
    SERVICE = "Service"
    PERSON = "Person"
    APPLICATION = "Application"

    @property
    def iri(self) -> str:
        return AS_NS + self.value

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class AgentDescriptor:
    id: str
    kind: Optional[AgentKind] = AgentKind.ORGANIZATION
    name: Optional[str] = None
    inbox: Optional[str] = None

    def with_inbox(self, inbox: str) -> "AgentDescriptor":
        return AgentDescriptor(self.id, self.kind, self.name, inbox)


@dataclass(frozen=True)
class RelationshipObject:
    """A by-reference statement ``subject --relationship--> object``."""

    subject: str
    relationship: str
    object: str
    id: str = field(default_factory=new_urn_uuid)


ObjectValue = Union[RelationshipObject, str]


@dataclass(frozen=True)
class Notification:
    id: str
    types: tuple
    actor: AgentDescriptor
    object: ObjectValue
    target: AgentDescriptor
    origin: Optional[AgentDescriptor] = None
    context: Optional[str] = None
    in_reply_to: Optional[str] = None
    # triples carried through parse/serialize that the model does not interpret
    extra: frozenset = frozenset()

    @property
    def activity_type(self) -> Optional[ActivityType]:
        core = [t for t in map(ActivityType.lookup, self.types) if t is not None]
        return core[0] if len(core) == 1 else None

    @property
    def extension_types(self) -> tuple:
        return tuple(t for t in self.types if ActivityType.lookup(t) is None)


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return self.ok


def _types(core: ActivityType, extra_types) -> tuple:
    ext = []
    for t in extra_types:
        if not is_absolute_iri(t) or ActivityType.lookup(t) is not None:
            raise InvalidIri(f"extension type must be a non-core absolute IRI: {t!r}")
        ext.append(t)
    return (core, *sorted(set(ext)))


def _require_iri(value, what: str) -> None:
    if not is_absolute_iri(value):
        raise InvalidIri(f"{what} is not an absolute IRI: {value!r}")


def build_announce(
    actor: AgentDescriptor,
    artifact: str,
    result: ObjectValue,
    target: AgentDescriptor,
    origin: Optional[AgentDescriptor] = None,
    extra_types=(),
) -> Notification:
    """One-way announcement of a service result about ``artifact``.

    Raises:
        MismatchedSubject: ``result`` is a relationship whose subject is not
            ``artifact``.
    """
    _require_iri(artifact, "artifact")
    if isinstance(result, RelationshipObject):
        if result.subject != artifact:
            raise MismatchedSubject(
                f"result subject {result.subject!r} != artifact {artifact!r}"
            )
    else:
        _require_iri(result, "result")
    return Notification(
        id=new_urn_uuid(),
        types=_types(ActivityType.ANNOUNCE, extra_types),
        actor=actor,
        origin=origin,
        context=artifact,
        object=result,
        target=target,
    )


def build_offer(
    actor: AgentDescriptor,
    artifact: str,
    service: Optional[str],
    target: AgentDescriptor,
    origin: Optional[AgentDescriptor] = None,
) -> Notification:
    """Ask ``target`` to apply a service to ``artifact``.

    ``service`` names the requested service as an extension activity type
    (for instance ``https://schema.org/ReviewAction``); pass None for a
    plain Offer. The artifact itself is the offered object.
    """
    _require_iri(artifact, "artifact")
    extra = ()
    if service is not None:
        _require_iri(service, "service")
        extra = (service,)
    return Notification(
        id=new_urn_uuid(),
        types=_types(ActivityType.OFFER, extra),
        actor=actor,
        origin=origin,
        context=artifact,
        object=artifact,
        target=target,
    )


def build_response(
    kind,
    request: Notification,
    actor: AgentDescriptor,
    origin: Optional[AgentDescriptor] = None,
    result: Optional[ObjectValue] = None,
) -> Notification:
    """Reply to ``request`` within its thread.

    The reply is addressed to the request's actor and keeps its context.
    Accept and Reject only answer an Offer; Undo and Announce answer any
    thread member (the Offer itself or a reply to it).
    """
    kind = ActivityType(kind)
    req_type = request.activity_type
    if kind in (ActivityType.ACCEPT, ActivityType.REJECT):
        if req_type is not ActivityType.OFFER:
            raise BadThreadRoot(f"{kind.value} must reply to an Offer, not {req_type}")
    elif kind in (ActivityType.UNDO, ActivityType.ANNOUNCE):
        if req_type is not ActivityType.OFFER and request.in_reply_to is None:
            raise BadThreadRoot(f"{kind.value} must reply to a thread member")
    else:
        raise ValueError(f"{kind.value} is not a response type")

    obj: ObjectValue = request.id
    if kind is ActivityType.ANNOUNCE:
        if result is None:
            raise MissingResult("Announce response requires a result")
        if isinstance(result, RelationshipObject) and result.subject != request.context:
            raise MismatchedSubject(
                f"result subject {result.subject!r} != thread artifact {request.context!r}"
            )
        obj = result
    return Notification(
        id=new_urn_uuid(),
        types=(kind,),
        actor=actor,
        origin=origin,
        context=request.context,
        object=obj,
        target=request.actor,
        in_reply_to=request.id,
    )


def _check_agent(agent, role: str, report: ValidationReport) -> None:
    if not isinstance(agent, AgentDescriptor):
        report.errors.append(f"{role} missing")
        return
    if not is_http_url(agent.id):
        report.errors.append(f"{role} id is not an http(s) IRI: {agent.id!r}")
    if agent.kind is None:
        report.warnings.append(f"{role} has no agent type")
    elif not isinstance(agent.kind, AgentKind):
        report.errors.append(f"{role} has unsupported agent type {agent.kind!r}")
    if agent.inbox is not None and not is_http_url(agent.inbox):
        report.errors.append(f"{role} inbox is not an http(s) URL: {agent.inbox!r}")


def validate_notification(n: Notification) -> ValidationReport:
    """Collect every profile violation in ``n`` instead of stopping at the first."""
    report = ValidationReport()
    errors = report.errors

    if not is_absolute_iri(n.id):
        errors.append(f"id is not an absolute IRI or URN: {n.id!r}")

    core = []
    for t in n.types or ():
        at = ActivityType.lookup(t)
        if at is not None:
            core.append(at)
        elif not is_absolute_iri(t) or str(t).startswith(AS_NS):
            errors.append(f"activity type outside profile: {t}")
    if not n.types:
        errors.append("no activity type")
    elif len(core) == 0:
        errors.append("no core activity type")
    elif len(core) > 1:
        errors.append("more than one core activity type: " + ", ".join(c.value for c in core))

    _check_agent(n.actor, "actor", report)
    _check_agent(n.target, "target", report)
    if n.origin is None:
        report.warnings.append("origin missing")
    else:
        _check_agent(n.origin, "origin", report)
    if isinstance(n.target, AgentDescriptor) and n.target.inbox is None:
        report.warnings.append("target inbox missing")

    if n.context is not None and not is_absolute_iri(n.context):
        errors.append(f"context is not an absolute IRI: {n.context!r}")

    obj = n.object
    if isinstance(obj, RelationshipObject):
        if not is_absolute_iri(obj.id):
            errors.append(f"relationship id is not an IRI or URN: {obj.id!r}")
        for name in ("subject", "relationship", "object"):
            if not is_absolute_iri(getattr(obj, name)):
                errors.append(f"relationship {name} is not an absolute IRI: {getattr(obj, name)!r}")
        if obj.subject == obj.object:
            errors.append("relationship subject equals its object")
    elif obj is None:
        errors.append("object missing")
    elif not is_absolute_iri(obj):
        errors.append(f"object is not an absolute IRI: {obj!r}")

    activity = core[0] if len(core) == 1 else None
    if activity is ActivityType.ANNOUNCE and isinstance(obj, RelationshipObject):
        if n.context is None:
            errors.append("Announce of a service result has no context")
        elif n.context != obj.subject:
            errors.append("context differs from the relationship subject")
    if activity in (ActivityType.ACCEPT, ActivityType.REJECT, ActivityType.UNDO):
        if n.in_reply_to is None:
            errors.append(f"{activity.value} without in_reply_to")
    if n.in_reply_to is not None and not is_absolute_iri(n.in_reply_to):
        errors.append(f"in_reply_to is not an absolute IRI: {n.in_reply_to!r}")
    return report
