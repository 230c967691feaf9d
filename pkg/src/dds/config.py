"""Engine configuration: dataclasses parsed from a sectioned key=value file.

Sections: [store], [event_bus], [agents], [rest], [auth], [notify], and one
[backend:NAME] section per registered workload backend. All durations are
seconds (floats). See docs/configuration.md for the full key reference.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class StoreConfig:
    engine: str = "embedded"  # embedded | server
    path: str = "dds.db"      # embedded engine: sqlite file path
    url: str = ""             # server engine: SQLAlchemy URL


@dataclass
class BusConfig:
    backend: str = "local"    # local | persistent | socket
    path: str = ""            # persistent: event db path (default <store.path>.events)
    host: str = "127.0.0.1"   # socket: bus daemon address
    port: int = 18861
    drop_rate: float = 0.0    # socket server: injected delivery loss, for tests
    drop_seed: int = 0
    visibility_timeout: float = 30.0  # persistent: unacked redelivery delay


@dataclass
class AgentLoopConfig:
    """Tunables for the hybrid event-driven + lazy-poll scheduling loop."""

    poll_interval: float = 5.0
    idle_threshold: float = 30.0
    batch_limit: int = 100
    event_driven: bool = True
    lease: float = 300.0

    def __post_init__(self):
        if self.poll_interval <= 0:
            raise ValueError("poll_interval must be > 0")
        if self.idle_threshold < self.poll_interval:
            raise ValueError("idle_threshold must be >= poll_interval")


@dataclass
class RestConfig:
    host: str = "127.0.0.1"
    port: int = 18860
    cache_dir: str = "cache"
    cache_max_bytes: int = 64 * 1024 * 1024
    log_dir: str = "logs"


@dataclass
class UserCred:
    username: str
    password: str
    groups: list[str]


@dataclass
class AuthConfig:
    secret: str = "dev-secret"
    token_ttl: float = 24 * 3600.0
    submitter_group: str = "submitter"
    operator_group: str = "operator"
    users: list[UserCred] = field(default_factory=list)


@dataclass
class BackendConfig:
    name: str
    type: str                 # local | simulated
    options: dict[str, str] = field(default_factory=dict)


@dataclass
class NotifyConfig:
    callback_url: str = ""    # conductor HTTP callback; empty disables
    retry_base: float = 0.5
    retry_cap: float = 30.0


@dataclass
class EngineConfig:
    store: StoreConfig = field(default_factory=StoreConfig)
    bus: BusConfig = field(default_factory=BusConfig)
    agents: AgentLoopConfig = field(default_factory=AgentLoopConfig)
    rest: RestConfig = field(default_factory=RestConfig)
    auth: AuthConfig = field(default_factory=AuthConfig)
    notify: NotifyConfig = field(default_factory=NotifyConfig)
    backends: list[BackendConfig] = field(default_factory=list)
    roles: list[str] = field(default_factory=list)  # roles enabled for `dds.agents.service`

    @property
    def bus_path(self) -> str:
        return self.bus.path or (self.store.path + ".events")


def _coerce(value: str, like) -> object:
    if isinstance(like, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _fill(obj, section: configparser.SectionProxy) -> None:
    for key, raw in section.items():
        if not hasattr(obj, key):
            raise ValueError(f"unknown configuration key {key!r} in [{section.name}]")
        setattr(obj, key, _coerce(raw, getattr(obj, key)))


def _parse_users(raw: str) -> list[UserCred]:
    # "alice:pw:submitter,operator; bob:pw2:submitter"
    users = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        username, password, groups = chunk.split(":", 2)
        users.append(UserCred(username.strip(), password.strip(),
                              [g.strip() for g in groups.split(",") if g.strip()]))
    return users


def load_config(path: str | Path) -> EngineConfig:
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise FileNotFoundError(path)
    cfg = EngineConfig()
    for name in parser.sections():
        section = parser[name]
        if name == "store":
            _fill(cfg.store, section)
        elif name == "event_bus":
            _fill(cfg.bus, section)
        elif name == "agents":
            roles = section.pop("roles", None) if "roles" in section else None
            if roles is not None:
                cfg.roles = [r.strip() for r in roles.split(",") if r.strip()]
            _fill(cfg.agents, section)
            cfg.agents.__post_init__()
        elif name == "rest":
            _fill(cfg.rest, section)
        elif name == "auth":
            users = section.pop("users", None) if "users" in section else None
            if users is not None:
                cfg.auth.users = _parse_users(users)
            _fill(cfg.auth, section)
        elif name == "notify":
            _fill(cfg.notify, section)
        elif name.startswith("backend:"):
            options = dict(section)
            btype = options.pop("type", "")
            if btype not in ("local", "simulated"):
                raise ValueError(f"[{name}] type must be 'local' or 'simulated', got {btype!r}")
            cfg.backends.append(BackendConfig(name.split(":", 1)[1], btype, options))
        else:
            raise ValueError(f"unknown configuration section [{name}]")
    return cfg


def dump_config(cfg: EngineConfig, path: str | Path) -> None:
    """Write a config file equivalent to `cfg` (used by test harnesses)."""
    parser = configparser.ConfigParser()
    parser["store"] = {"engine": cfg.store.engine, "path": cfg.store.path, "url": cfg.store.url}
    parser["event_bus"] = {
        "backend": cfg.bus.backend, "path": cfg.bus.path, "host": cfg.bus.host,
        "port": str(cfg.bus.port), "drop_rate": str(cfg.bus.drop_rate),
        "drop_seed": str(cfg.bus.drop_seed),
        "visibility_timeout": str(cfg.bus.visibility_timeout),
    }
    parser["agents"] = {
        "poll_interval": str(cfg.agents.poll_interval),
        "idle_threshold": str(cfg.agents.idle_threshold),
        "batch_limit": str(cfg.agents.batch_limit),
        "event_driven": str(cfg.agents.event_driven).lower(),
        "lease": str(cfg.agents.lease),
        "roles": ",".join(cfg.roles),
    }
    parser["rest"] = {
        "host": cfg.rest.host, "port": str(cfg.rest.port), "cache_dir": cfg.rest.cache_dir,
        "cache_max_bytes": str(cfg.rest.cache_max_bytes), "log_dir": cfg.rest.log_dir,
    }
    parser["auth"] = {
        "secret": cfg.auth.secret, "token_ttl": str(cfg.auth.token_ttl),
        "submitter_group": cfg.auth.submitter_group,
        "operator_group": cfg.auth.operator_group,
        "users": "; ".join(f"{u.username}:{u.password}:{','.join(u.groups)}" for u in cfg.auth.users),
    }
    parser["notify"] = {
        "callback_url": cfg.notify.callback_url,
        "retry_base": str(cfg.notify.retry_base),
        "retry_cap": str(cfg.notify.retry_cap),
    }
    for b in cfg.backends:
        parser[f"backend:{b.name}"] = {"type": b.type, **b.options}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
