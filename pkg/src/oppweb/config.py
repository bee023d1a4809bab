"""Node configuration: defaults < environment < config file < flags."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

ENV_PREFIX = "OPPWEB_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NodeConfig:
    data_dir: str = "./oppweb-data"
    node_name: str = "oppweb-node"
    portal_listen: str = "127.0.0.1:8080"
    sync_listen: str = "127.0.0.1:9460"
    peers: tuple[str, ...] = ()
    identity_path: str = ""  # defaults to <data_dir>/identity.key
    ttl_default: int = 5400
    cpu_budget: float = 2.0
    memory_budget: int = 64 * 2**20
    output_budget: int = 2**20
    capacity_bytes: int = 0  # 0 means unbounded
    per_session_keys: bool = False
    ui_dir: str = ""  # optional directory with a built frontend bundle

    def resolved_identity_path(self) -> str:
        return self.identity_path or os.path.join(self.data_dir, "identity.key")

    def validate(self) -> None:
        errors = []
        if self.portal_listen == self.sync_listen and not self.portal_listen.endswith(":0"):
            errors.append("portal_listen and sync_listen must differ")
        for name in ("portal_listen", "sync_listen"):
            try:
                parse_listen(getattr(self, name))
            except ConfigError as exc:
                errors.append(str(exc))
        if self.ttl_default <= 0:
            errors.append("ttl_default must be positive")
        if self.cpu_budget <= 0 or self.memory_budget <= 0 or self.output_budget <= 0:
            errors.append("sandbox budgets must be positive")
        if errors:
            raise ConfigError("; ".join(errors))


def parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"listen address {value!r} must be host:port")
    try:
        port_num = int(port)
    except ValueError:
        raise ConfigError(f"bad port in {value!r}") from None
    if not 0 < port_num < 65536 and port_num != 0:
        raise ConfigError(f"port out of range in {value!r}")
    return host, port_num


_COERCERS = {
    str: lambda v: v,
    int: lambda v: int(v),
    float: lambda v: float(v),
    bool: lambda v: str(v).lower() in ("1", "true", "yes", "on"),
    tuple: lambda v: tuple(p.strip() for p in str(v).split(",") if p.strip()),
}


_DEFAULTS = NodeConfig()


def _coerce(name: str, value):
    if not any(f.name == name for f in fields(NodeConfig)):
        raise ConfigError(f"unknown configuration key {name!r}")
    coerce = _COERCERS[type(getattr(_DEFAULTS, name))]
    try:
        return coerce(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def read_config_file(path: str) -> dict:
    """Key-value text: one `key = value` per line, # comments."""
    values = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def load_config(path: str | None = None, overrides: dict | None = None,
                env: dict | None = None) -> NodeConfig:
    """Assemble a NodeConfig honoring the documented precedence."""
    env = os.environ if env is None else env
    config = NodeConfig()
    known = {f.name for f in fields(NodeConfig)}
    for key in known:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            config = replace(config, **{key: _coerce(key, env[env_key])})
    if path:
        for key, value in read_config_file(path).items():
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r} in {path}")
            config = replace(config, **{key: _coerce(key, value)})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        config = replace(config, **{key: _coerce(key, value)})
    config.validate()
    return config
