"""Privacy-preserving smartphone context-data collection framework.

A device agent that gates collection on consent and runtime permissions
and anonymizes every observation before storing it, a batched 24-hour
upload pipeline over pinned-certificate channels, a pseudonym-keyed
backend, an unlinkable compensation enrollment service, and a
deterministic behavior simulator that drives and verifies all of it.
"""

__version__ = "0.1.0"

from .catalog import ContextEvent, source_catalog, validate_event  # noqa: F401
