"""Store every stream frame as-is."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

from ..docmodel import DocKind, DocumentError, classify
from ..store import Cluster, ClusterError
from .listener import MalformedFrame, StreamListener

logger = logging.getLogger(__name__)


@dataclass
class IngestReport:
    frames: int = 0
    statuses: int = 0
    deletions: int = 0
    duplicates: int = 0
    parse_errors: int = 0
    unknown: int = 0
    insert_failures: int = 0
    transport_errors: int = 0
    end_reason: str = ""

    def conserved(self) -> bool:
        return self.frames == (self.statuses + self.deletions + self.duplicates
                               + self.parse_errors + self.unknown + self.insert_failures)

    def to_dict(self) -> dict:
        return asdict(self)


class IngestHandler:
    """Listener handler inserting statuses and deletion records."""

    def __init__(self, cluster: Cluster, collection: str = "stream"):
        self.cluster = cluster
        self.collection = collection
        self.report = IngestReport()

    def on_data(self, raw: bytes, doc) -> None:
        r = self.report
        r.frames += 1
        kind = classify(doc, self.cluster.deletion_keys)
        if kind is DocKind.UNKNOWN:
            r.unknown += 1
            return
        for attempt in (1, 2):
            try:
                ack = self.cluster.insert(self.collection, doc)
                break
            except DocumentError as e:
                # Well-formed JSON but no usable id: same bucket as bad JSON.
                r.parse_errors += 1
                logger.warning("%s", MalformedFrame(raw, e))
                return
            except ClusterError as e:
                if attempt == 2:
                    logger.error("insert failed twice, dropping frame: %s", e)
                    r.insert_failures += 1
                    return
        if not ack.inserted:
            r.duplicates += 1
        elif kind is DocKind.STATUS:
            r.statuses += 1
        else:
            r.deletions += 1

    def on_error(self, e: Exception) -> None:
        if isinstance(e, MalformedFrame):
            self.report.frames += 1
            self.report.parse_errors += 1
            logger.warning("%s", e)
        else:
            self.report.transport_errors += 1
            logger.warning("stream error: %s", e)


def ingest(endpoint, credential: str, cluster: Cluster, collection: str = "stream",
           **listener_kwargs) -> IngestReport:
    """Consume the stream until it ends and return the ingestion report."""
    handler = IngestHandler(cluster, collection)
    lst = StreamListener(endpoint, credential, handler, **listener_kwargs).run()
    handler.report.end_reason = lst.end_reason or ""
    return handler.report
