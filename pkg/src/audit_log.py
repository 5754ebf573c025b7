"""Audit Log: append-only record of pipeline stages and the artifacts they wrote."""

import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional

from src.artifacts import sha256_file


class AuditLog:
    """Append-only audit log for reconstructing how a run's outputs were produced.

    Events carry sequence-numbered trace ids and no wall-clock fields, so an
    identical rerun exports an identical log.
    """

    def __init__(self, command: str, seed: int):
        self.command = command
        self.seed = seed
        self.events: List[Dict] = []

    def log_event(self, event_type: str, stage: str, details: Dict) -> str:
        """
        Log an event and return trace_id.
        """
        trace_id = f"{self.command}-{len(self.events):04d}"
        event = {
            "trace_id": trace_id,
            "event_type": event_type,
            "stage": stage,
            "details": details,
            "event_hash": self._compute_hash(details),
        }
        self.events.append(event)
        return trace_id

    def log_artifact(self, stage: str, path: Path, root: Optional[Path] = None) -> str:
        """Record a written file with its checksum."""
        path = Path(path)
        name = str(path.relative_to(root)) if root is not None else path.name
        return self.log_event("artifact", stage, {"path": name, "sha256": sha256_file(path)})

    def get_events(self, stage: str = None, event_type: str = None) -> List[Dict]:
        """
        Query events by stage and/or event_type.
        """
        results = self.events
        if stage:
            results = [e for e in results if e["stage"] == stage]
        if event_type:
            results = [e for e in results if e["event_type"] == event_type]
        return results

    def get_trace(self, trace_id: str) -> Optional[Dict]:
        for event in self.events:
            if event["trace_id"] == trace_id:
                return event
        return None

    def verify_integrity(self) -> bool:
        """Check that no event's details were altered after logging."""
        return all(e["event_hash"] == self._compute_hash(e["details"]) for e in self.events)

    @staticmethod
    def _compute_hash(data: Dict) -> str:
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> Dict:
        return {"command": self.command, "seed": self.seed, "events": self.events}

    def export_json(self) -> str:
        """Export full audit log as JSON."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
