"""Backend-agnostic source handles.

The extraction engine only talks to a :class:`SourceHandle`, which owns the
request ledger and checks every backend response against the API contract.
Only the simulator backend ships; live vendor adapters are placeholders.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from .budget import BudgetLedger
from .geometry import GeoPoint, QueryCircle, within_mask
from .sources import Location, SimulatedSource, SourceProfile


class BackendUnavailable(RuntimeError):
    pass


class ContractViolation(RuntimeError):
    """A backend answered outside the location API contract."""


@runtime_checkable
class Backend(Protocol):
    def respond(self, p: GeoPoint, r: float, call_index: int = 0) -> list[Location]: ...


class LiveBackend:
    """Placeholder for a real vendor API client."""

    def __init__(self, vendor: str):
        self.vendor = vendor

    def respond(self, p: GeoPoint, r: float, call_index: int = 0) -> list[Location]:
        raise BackendUnavailable(f"no live adapter for {self.vendor}")


class SourceHandle:
    def __init__(self, profile: SourceProfile, backend: Backend, ledger: BudgetLedger | None = None):
        self.profile = profile
        self.backend = backend
        self.ledger = ledger if ledger is not None else profile.new_ledger()

    @classmethod
    def simulated(cls, source: SimulatedSource, **ledger_kw) -> SourceHandle:
        return cls(source.profile, source, source.profile.new_ledger(**ledger_kw))

    @property
    def name(self) -> str:
        return self.profile.name

    @property
    def max_result_size(self) -> int:
        return self.profile.max_result_size

    @property
    def is_simulated(self) -> bool:
        return isinstance(self.backend, SimulatedSource)

    def query(self, p: GeoPoint, r: float, seen: set | None = None) -> list[Location]:
        """One accounted request; ``seen`` only feeds the ledger's new-location count."""
        res = self.backend.respond(p, r, call_index=self.ledger.request_count)
        if len(res) > self.profile.max_result_size:
            raise ContractViolation(
                f"{self.name}: {len(res)} results exceed max_result_size {self.profile.max_result_size}"
            )
        QueryCircle(p, r)  # rejects radii outside the API range
        plain = [l for l in res if not l.supplemental]
        if plain:
            inside = within_mask(p, np.array([l.point.lat for l in plain]),
                                 np.array([l.point.lon for l in plain]), r)
            if not inside.all():
                bad = plain[int(np.flatnonzero(~inside)[0])]
                raise ContractViolation(f"{self.name}: location {bad.id!r} lies outside the query circle")
        seen = seen if seen is not None else ()
        new = sum(1 for k in {l.key for l in res} if k not in seen)
        self.ledger.record_request(p, r, len(res), new)
        return res


def query(handle: SourceHandle, p: GeoPoint, r: float) -> list[Location]:
    return handle.query(p, r)
