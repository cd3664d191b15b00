from .cluster import (
    KEY_MAX,
    KEY_MIN,
    Chunk,
    Cluster,
    ClusterConfig,
    ClusterError,
    ElectionResult,
    InsertAck,
    Migration,
    NoEligibleMember,
    NoPrimaryAvailable,
    OplogEntry,
    ReadPreference,
    Role,
    UnknownCollection,
)
from .snapshot import restore, snapshot

create_cluster = Cluster
