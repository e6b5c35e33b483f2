"""Reference inference sidecar for the her2-sidecar stdio protocol."""

from .serve import PROTOCOL, ROLES, VERSION, RuleModel, serve

__version__ = "0.1.0"
