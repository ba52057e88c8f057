"""Event notifications between scholarly repositories and services.

Build, validate, serialize, send, receive and track profiled
ActivityStreams 2.0 notifications over Linked Data Notifications.
"""

from .as2 import (
    ActivityType,
    AgentDescriptor,
    AgentKind,
    Notification,
    RelationshipObject,
    ValidationReport,
    build_announce,
    build_offer,
    build_response,
    validate_notification,
)
from .serialization import WireDocument, parse, serialize

__version__ = "0.1.0"

__all__ = [
    "ActivityType",
    "AgentDescriptor",
    "AgentKind",
    "Notification",
    "RelationshipObject",
    "ValidationReport",
    "WireDocument",
    "build_announce",
    "build_offer",
    "build_response",
    "parse",
    "serialize",
    "validate_notification",
]
