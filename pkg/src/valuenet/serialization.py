"""Wire formats for notifications: compacted JSON-LD and Turtle.

JSON-LD is emitted against a pinned copy of the ActivityStreams context that
ships with the package, and incoming documents referencing that context are
expanded with the same copy, so no network access happens here. Any other
remote context is refused with :class:`ParseError`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from rdflib import BNode, Graph, Literal, URIRef
from rdflib.namespace import RDF

from .as2 import (
    AS_NS,
    LDP_NS,
    ActivityType,
    AgentDescriptor,
    AgentKind,
    Notification,
    RelationshipObject,
    validate_notification,
)
from .errors import InvalidNotification, ParseError, ProfileError

logger = logging.getLogger(__name__)

AS_CONTEXT_IRI = "https://www.w3.org/ns/activitystreams"
JSONLD = "application/ld+json"
TURTLE = "text/turtle"
SUPPORTED_MEDIA_TYPES = (JSONLD, TURTLE)

_FORMAT_ALIASES = {
    "jsonld": JSONLD,
    "json-ld": JSONLD,
    JSONLD: JSONLD,
    "application/json": JSONLD,
    "turtle": TURTLE,
    "ttl": TURTLE,
    TURTLE: TURTLE,
}
_RDFLIB_FORMAT = {JSONLD: "json-ld", TURTLE: "turtle"}

# Relative references in incoming documents resolve against this unless the
# caller supplies a base (an inbox uses its own URL).
DEFAULT_BASE = "http://relative.invalid/"

_LDP_CONTEXT = {
    "ldp": LDP_NS,
    "id": "@id",
    "type": "@type",
    "contains": {"@id": "ldp:contains", "@type": "@id"},
    "inbox": {"@id": "ldp:inbox", "@type": "@id"},
}


def _as(term: str) -> URIRef:
    return URIRef(AS_NS + term)


AS_ACTOR = _as("actor")
AS_ORIGIN = _as("origin")
AS_CONTEXT = _as("context")
AS_OBJECT = _as("object")
AS_TARGET = _as("target")
AS_IN_REPLY_TO = _as("inReplyTo")
AS_NAME = _as("name")
AS_SUBJECT = _as("subject")
AS_RELATIONSHIP = _as("relationship")
AS_RELATIONSHIP_TYPE = _as("Relationship")
LDP_INBOX = URIRef(LDP_NS + "inbox")

_CORE_TYPE_IRIS = {URIRef(t.iri): t for t in ActivityType}
_AGENT_KIND_IRIS = {URIRef(k.iri): k for k in AgentKind}


@dataclass(frozen=True)
class WireDocument:
    media_type: str
    body: bytes

    @property
    def text(self) -> str:
        return self.body.decode("utf-8")


def media_type_for(fmt: str) -> str:
    """Normalise a format name or Content-Type header to a supported media type."""
    key = (fmt or "").split(";", 1)[0].strip().lower()
    try:
        return _FORMAT_ALIASES[key]
    except KeyError:
        raise ValueError(f"unsupported format {fmt!r}") from None


@lru_cache(maxsize=None)
def _as_context() -> dict:
    text = resources.files("valuenet").joinpath("data/activitystreams.jsonld").read_text("utf-8")
    return json.loads(text)["@context"]


def _known_context(iri: str):
    key = iri.rstrip("/#")
    for suffix in (".jsonld", ".json"):
        if key.endswith(suffix):
            key = key[: -len(suffix)]
    key = key.replace("http://", "https://", 1)
    if key == AS_CONTEXT_IRI:
        return _as_context()
    if key == "https://www.w3.org/ns/ldp":
        return _LDP_CONTEXT
    return None


# ---------------------------------------------------------------------------
# Notification -> graph
# ---------------------------------------------------------------------------


def _agent_triples(agent: AgentDescriptor):
    node = URIRef(agent.id)
    if agent.kind is not None:
        yield node, RDF.type, URIRef(AgentKind(agent.kind).iri)
    if agent.name is not None:
        yield node, AS_NAME, Literal(agent.name)
    if agent.inbox is not None:
        yield node, LDP_INBOX, URIRef(agent.inbox)


def _type_iri(t) -> URIRef:
    core = ActivityType.lookup(t)
    return URIRef(core.iri if core is not None else t)


def to_graph(n: Notification) -> Graph:
    """The RDF graph a notification denotes."""
    g = Graph()
    g.bind("as", AS_NS)
    g.bind("ldp", LDP_NS)
    root = URIRef(n.id)
    for t in n.types:
        g.add((root, RDF.type, _type_iri(t)))
    for prop, agent in ((AS_ACTOR, n.actor), (AS_ORIGIN, n.origin), (AS_TARGET, n.target)):
        if agent is None:
            continue
        g.add((root, prop, URIRef(agent.id)))
        for triple in _agent_triples(agent):
            g.add(triple)
    if n.context is not None:
        g.add((root, AS_CONTEXT, URIRef(n.context)))
    if isinstance(n.object, RelationshipObject):
        rel = n.object
        rel_node = URIRef(rel.id)
        g.add((root, AS_OBJECT, rel_node))
        g.add((rel_node, RDF.type, AS_RELATIONSHIP_TYPE))
        g.add((rel_node, AS_SUBJECT, URIRef(rel.subject)))
        g.add((rel_node, AS_RELATIONSHIP, URIRef(rel.relationship)))
        g.add((rel_node, AS_OBJECT, URIRef(rel.object)))
    else:
        g.add((root, AS_OBJECT, URIRef(n.object)))
    if n.in_reply_to is not None:
        g.add((root, AS_IN_REPLY_TO, URIRef(n.in_reply_to)))
    for triple in n.extra:
        g.add(triple)
    return g


# ---------------------------------------------------------------------------
# Compacted JSON-LD
# ---------------------------------------------------------------------------


def _agent_json(agent: AgentDescriptor) -> dict:
    out = {"id": agent.id}
    if agent.kind is not None:
        out["type"] = AgentKind(agent.kind).value
    if agent.name is not None:
        out["name"] = agent.name
    if agent.inbox is not None:
        out["inbox"] = agent.inbox
    return out


def _term_json(term):
    if isinstance(term, URIRef):
        return {"@id": str(term)}
    if isinstance(term, BNode):
        return {"@id": term.n3()}
    out = {"@value": str(term)}
    if term.language:
        out["@language"] = term.language
    elif term.datatype is not None:
        out["@type"] = str(term.datatype)
    return out


def _extra_nodes(triples) -> list:
    nodes: dict = {}
    for s, p, o in sorted(triples):
        sid = str(s) if isinstance(s, URIRef) else s.n3()
        node = nodes.setdefault(sid, {"@id": sid})
        if p == RDF.type and isinstance(o, (URIRef, BNode)):
            node.setdefault("@type", []).append(_term_json(o)["@id"])
        else:
            node.setdefault(str(p), []).append(_term_json(o))
    return list(nodes.values())


def to_jsonld(n: Notification) -> dict:
    types = [ActivityType.lookup(t).value if ActivityType.lookup(t) else t for t in n.types]
    doc = {"@context": AS_CONTEXT_IRI, "id": n.id, "type": types[0] if len(types) == 1 else types}
    doc["actor"] = _agent_json(n.actor)
    if n.origin is not None:
        doc["origin"] = _agent_json(n.origin)
    if n.context is not None:
        doc["context"] = n.context
    if isinstance(n.object, RelationshipObject):
        rel = n.object
        doc["object"] = {
            "id": rel.id,
            "type": "Relationship",
            "subject": rel.subject,
            "relationship": rel.relationship,
            "object": rel.object,
        }
    else:
        doc["object"] = n.object
    doc["target"] = _agent_json(n.target)
    if n.in_reply_to is not None:
        doc["inReplyTo"] = n.in_reply_to
    if n.extra:
        ctx = doc.pop("@context")
        return {"@context": ctx, "@graph": [doc, *_extra_nodes(n.extra)]}
    return doc


def serialize(n: Notification, format: str = "jsonld") -> WireDocument:
    """Render ``n`` in one of the supported wire formats.

    Raises:
        InvalidNotification: ``n`` has validation errors.
    """
    media_type = media_type_for(format)
    report = validate_notification(n)
    if report.errors:
        raise InvalidNotification(report)
    if media_type == JSONLD:
        body = json.dumps(to_jsonld(n), indent=2, ensure_ascii=False)
    else:
        body = to_graph(n).serialize(format="turtle")
    return WireDocument(media_type, body.encode("utf-8"))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _inline_contexts(value):
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            out[k] = _resolve_context(v) if k == "@context" else _inline_contexts(v)
        return out
    if isinstance(value, list):
        return [_inline_contexts(v) for v in value]
    return value


def _resolve_context(ctx):
    if isinstance(ctx, str):
        known = _known_context(ctx)
        if known is None:
            raise ParseError(f"remote JSON-LD context not available offline: {ctx}")
        return known
    if isinstance(ctx, list):
        return [_resolve_context(c) for c in ctx]
    if isinstance(ctx, dict) or ctx is None:
        return ctx
    raise ParseError(f"malformed @context: {ctx!r}")


def parse_graph(doc: WireDocument, base: str | None = None) -> Graph:
    try:
        media_type = media_type_for(doc.media_type)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    try:
        text = bytes(doc.body).decode("utf-8")
    except (UnicodeDecodeError, TypeError) as exc:
        raise ParseError(f"body is not UTF-8: {exc}") from None
    if media_type == JSONLD:
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise ParseError(f"invalid JSON: {exc}") from None
        if not isinstance(data, (dict, list)):
            raise ParseError("JSON-LD document must be an object or array")
        text = json.dumps(_inline_contexts(data))
    g = Graph()
    try:
        g.parse(data=text, format=_RDFLIB_FORMAT[media_type], publicID=base or DEFAULT_BASE)
    except RecursionError:
        raise ParseError("document nesting too deep") from None
    except Exception as exc:  # rdflib raises a wide variety of types
        raise ParseError(f"malformed {media_type} document: {exc}") from None
    return g


def _single(g: Graph, s, p, required: bool = False):
    values = list(g.objects(s, p))
    if len(values) > 1:
        raise ProfileError(f"multiple values for {p}")
    if not values:
        if required:
            raise ProfileError(f"missing {p}")
        return None
    return values[0]


def _iri_value(term, what: str) -> str:
    if not isinstance(term, URIRef):
        raise ProfileError(f"{what} must be an IRI, got {term!r}")
    return str(term)


def _read_agent(g: Graph, node, role: str, used: set) -> AgentDescriptor:
    agent_id = _iri_value(node, role)
    kinds = sorted(o for o in g.objects(node, RDF.type) if o in _AGENT_KIND_IRIS)
    kind = None
    if kinds:
        kind = _AGENT_KIND_IRIS[kinds[0]]
        used.add((node, RDF.type, kinds[0]))
    name = None
    names = [o for o in g.objects(node, AS_NAME) if isinstance(o, Literal)]
    plain = [o for o in names if o.language is None and o.datatype is None]
    if len(plain) == 1 and len(names) == 1:
        name = str(plain[0])
        used.add((node, AS_NAME, plain[0]))
    inbox = None
    inboxes = [o for o in g.objects(node, LDP_INBOX) if isinstance(o, URIRef)]
    if len(inboxes) == 1:
        inbox = str(inboxes[0])
        used.add((node, LDP_INBOX, inboxes[0]))
    return AgentDescriptor(agent_id, kind, name, inbox)


def _read_object(g: Graph, node, used: set):
    if not isinstance(node, URIRef):
        raise ProfileError(f"object must be an IRI, got {node!r}")
    if (node, RDF.type, AS_RELATIONSHIP_TYPE) not in g:
        return str(node)
    parts = {}
    for name, prop in (("subject", AS_SUBJECT), ("relationship", AS_RELATIONSHIP), ("object", AS_OBJECT)):
        value = _single(g, node, prop, required=True)
        parts[name] = _iri_value(value, f"relationship {name}")
    used.add((node, RDF.type, AS_RELATIONSHIP_TYPE))
    for prop, value in ((AS_SUBJECT, parts["subject"]), (AS_RELATIONSHIP, parts["relationship"]), (AS_OBJECT, parts["object"])):
        used.add((node, prop, URIRef(value)))
    return RelationshipObject(id=str(node), **parts)


def from_graph(g: Graph) -> Notification:
    """Extract the single profiled activity in ``g``.

    Raises:
        ProfileError: no core activity, several activity roots, or a
            required property missing or ambiguous.
    """
    roots = sorted({s for t in _CORE_TYPE_IRIS for s in g.subjects(RDF.type, t)})
    if not roots:
        raise ProfileError("no core activity type in document")
    if len(roots) > 1:
        raise ProfileError(f"multiple activity roots: {', '.join(map(str, roots))}")
    root = roots[0]
    root_id = _iri_value(root, "notification id")

    used: set = set()
    core, ext = [], []
    for t in g.objects(root, RDF.type):
        if t in _CORE_TYPE_IRIS:
            core.append(_CORE_TYPE_IRIS[t])
        elif isinstance(t, URIRef):
            ext.append(str(t))
        else:
            continue
        used.add((root, RDF.type, t))
    order = list(ActivityType)
    types = tuple(sorted(core, key=order.index)) + tuple(sorted(ext))

    def prop(p, required=False):
        value = _single(g, root, p, required)
        if value is not None:
            used.add((root, p, value))
        return value

    actor = _read_agent(g, prop(AS_ACTOR, True), "actor", used)
    target = _read_agent(g, prop(AS_TARGET, True), "target", used)
    origin_node = prop(AS_ORIGIN)
    origin = _read_agent(g, origin_node, "origin", used) if origin_node is not None else None
    ctx_node = prop(AS_CONTEXT)
    context = _iri_value(ctx_node, "context") if ctx_node is not None else None
    obj = _read_object(g, prop(AS_OBJECT, True), used)
    reply_node = prop(AS_IN_REPLY_TO)
    in_reply_to = _iri_value(reply_node, "inReplyTo") if reply_node is not None else None

    extra = frozenset(t for t in g if t not in used)
    return Notification(
        id=root_id,
        types=types,
        actor=actor,
        origin=origin,
        context=context,
        object=obj,
        target=target,
        in_reply_to=in_reply_to,
        extra=extra,
    )


def parse(doc: WireDocument, base: str | None = None) -> Notification:
    """Parse a wire document into a notification.

    Raises:
        ParseError: unsupported media type or malformed document.
        ProfileError: the graph is not a single profiled activity.
    """
    return from_graph(parse_graph(doc, base))


def notification_from_jsonld(data: dict) -> Notification:
    return parse(WireDocument(JSONLD, json.dumps(data).encode("utf-8")))
