from .client import RestClient
from .harvest import (
    FetchReport,
    NetworkSnapshot,
    fetch_timeline_incremental,
    harvest_network,
    network_history,
)
from .ratelimit import DEFAULT_QUOTAS, FixedWindowLimiter, RateLimitPolicy
from .scheduler import ClientBudget, ScheduleConfig, ScheduleLog, schedule
from .service import (
    MAX_COUNT,
    ApiError,
    NotFound,
    RateLimited,
    RestService,
    TimelineSource,
    Unauthorized,
    serve_rest,
)
