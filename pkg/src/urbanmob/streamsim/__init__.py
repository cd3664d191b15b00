from .ingest import IngestHandler, IngestReport, ingest
from .listener import Backoff, CallbackHandler, MalformedFrame, StreamInterrupted, StreamListener, listen
from .service import Banned, ConnectionDropped, StreamConfig, StreamService, plan_frames, serve
from .world import SimUser, SyntheticWorld, generate_corpus, generate_world, iter_statuses
