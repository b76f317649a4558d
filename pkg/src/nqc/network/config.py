"""TOML network configuration.

Schema (units in brackets)::

    [network]
    master_seed = 7
    epoch_target_bits = 768          # final key wanted per client per epoch [bits]
    pulses_per_client = 20000000     # pulses each client sends per round
    max_rounds = 1                   # rounds per epoch before giving up on the target
    decoy_weights = [0.1, 0.3, 0.6]  # vacuum, decoy, signal
    schedule = [1, 2, 3]             # optional; client order in the superframe (repeats allowed)
    output_dir = "nqc-out"
    store_passphrase = "change me"

    [hub]                            # receiver and timing, shared by every client
    detector_efficiency = 0.15
    dark_prob = 1e-5
    blocking_time = 50.0             # [us]
    pulse_rate = 10e6                # [Hz]
    duty_cycle = 0.2
    slot_width = 1.0                 # [ns]
    superframe = 1000.0              # [us]
    double_click = "random"

    [link]                           # defaults for every client link
    fiber_length = 25.0              # [km]
    attenuation = 0.2                # [dB/km]
    intrinsic_error = 0.01
    mean_photons = [0.0, 0.1, 0.5]

    [[clients]]
    id = 1
    name = "alice"
    fiber_length = 25.0              # any [link] key may be overridden here

    [proxy]
    listen = "127.0.0.1:0"
    egress = "127.0.0.1:0"
    rekey_frames = 65536
"""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field

from .._util import ConfigurationError
from ..photonic_sim import ChannelConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

HUB_FIELDS = ("detector_efficiency", "dark_prob", "blocking_time", "pulse_rate", "duty_cycle", "slot_width",
              "superframe", "double_click")
LINK_FIELDS = ("fiber_length", "attenuation", "intrinsic_error", "mean_photons")
NETWORK_FIELDS = ("master_seed", "epoch_target_bits", "pulses_per_client", "max_rounds", "decoy_weights",
                  "schedule", "output_dir", "store_passphrase")
PROXY_FIELDS = ("listen", "egress", "rekey_frames")
DEFAULT_PASSPHRASE = "nqc-demo-passphrase"


@dataclass(frozen=True)
class ClientSpec:
    client_id: int
    name: str
    channel: ChannelConfig


@dataclass(frozen=True)
class ProxyConfig:
    listen: str = "127.0.0.1:0"
    egress: str = "127.0.0.1:0"
    rekey_frames: int = 1 << 16


@dataclass(frozen=True)
class NetworkConfig:
    clients: tuple[ClientSpec, ...]
    master_seed: int = 0
    epoch_target_bits: int = 768
    pulses_per_client: int = 20_000_000
    max_rounds: int = 1
    decoy_weights: tuple[float, float, float] = (0.1, 0.3, 0.6)
    schedule: tuple[int, ...] = ()
    output_dir: str = "nqc-out"
    store_passphrase: str = DEFAULT_PASSPHRASE
    proxy: ProxyConfig = field(default_factory=ProxyConfig)

    def __post_init__(self):
        ids = [c.client_id for c in self.clients]
        if not ids:
            raise ConfigurationError("clients: at least one client is required")
        if len(set(ids)) != len(ids):
            raise ConfigurationError("clients.id: client ids must be unique")
        for cid in ids:
            if not 0 <= cid < 0x8000_0000:
                raise ConfigurationError(f"clients.id: {cid} outside [0, 2^31)")
        if self.schedule:
            unknown = set(self.schedule) - set(ids)
            if unknown:
                raise ConfigurationError(f"network.schedule: unknown client ids {sorted(unknown)}")
            missing = set(ids) - set(self.schedule)
            if missing:
                raise ConfigurationError(f"network.schedule: clients {sorted(missing)} have no slot")
        w = self.decoy_weights
        if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigurationError("network.decoy_weights: need three probabilities summing to 1")
        if self.epoch_target_bits < 0:
            raise ConfigurationError("network.epoch_target_bits: must be >= 0")
        if self.pulses_per_client <= 0:
            raise ConfigurationError("network.pulses_per_client: must be > 0")
        if self.max_rounds < 1:
            raise ConfigurationError("network.max_rounds: must be >= 1")
        hub = {f: getattr(self.clients[0].channel, f) for f in HUB_FIELDS}
        for c in self.clients[1:]:
            for f in HUB_FIELDS:
                if getattr(c.channel, f) != hub[f]:
                    raise ConfigurationError(f"clients.{f}: receiver setting must match across clients")

    @property
    def client_ids(self) -> list[int]:
        return [c.client_id for c in self.clients]

    @property
    def hub_channel(self) -> ChannelConfig:
        return self.clients[0].channel

    def client(self, client_id: int) -> ClientSpec:
        for c in self.clients:
            if c.client_id == client_id:
                return c
        raise ConfigurationError(f"clients.id: no client {client_id}")

    def with_seed(self, seed: int | None) -> "NetworkConfig":
        return self if seed is None else dataclasses.replace(self, master_seed=seed)


def _check_keys(table: dict, allowed, section: str) -> None:
    for k in table:
        if k not in allowed:
            raise ConfigurationError(f"{section}.{k}: unknown field")


def _channel(hub: dict, link: dict, override: dict, where: str) -> ChannelConfig:
    params = {**hub, **link, **override}
    if "mean_photons" in params:
        params["mean_photons"] = tuple(float(x) for x in params["mean_photons"])
    try:
        return ChannelConfig(**params)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None
    except ConfigurationError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def from_dict(doc: dict) -> NetworkConfig:
    _check_keys(doc, ("network", "hub", "link", "clients", "proxy"), "config")
    net = dict(doc.get("network", {}))
    hub = dict(doc.get("hub", {}))
    link = dict(doc.get("link", {}))
    _check_keys(net, NETWORK_FIELDS, "network")
    _check_keys(hub, HUB_FIELDS, "hub")
    _check_keys(link, LINK_FIELDS, "link")
    clients = []
    for i, c in enumerate(doc.get("clients", [])):
        c = dict(c)
        if "id" not in c:
            raise ConfigurationError(f"clients[{i}].id: missing")
        cid = c.pop("id")
        if not isinstance(cid, int):
            raise ConfigurationError(f"clients[{i}].id: must be an integer")
        name = str(c.pop("name", f"client{cid}"))
        _check_keys(c, LINK_FIELDS, f"clients[{i}]")
        clients.append(ClientSpec(cid, name, _channel(hub, link, c, f"clients[{i}]")))
    proxy = dict(doc.get("proxy", {}))
    _check_keys(proxy, PROXY_FIELDS, "proxy")
    for key in ("decoy_weights", "schedule"):
        if key in net:
            net[key] = tuple(net[key])
    try:
        return NetworkConfig(clients=tuple(clients), proxy=ProxyConfig(**proxy), **net)
    except TypeError as exc:
        raise ConfigurationError(f"network: {exc}") from None


DEMO_TOML = """
[network]
master_seed = 7
epoch_target_bits = 768
pulses_per_client = 20000000
max_rounds = 1
decoy_weights = [0.1, 0.3, 0.6]
output_dir = "nqc-out"

[link]
fiber_length = 25.0
intrinsic_error = 0.01

[[clients]]
id = 1
name = "alice"

[[clients]]
id = 2
name = "bob"

[[clients]]
id = 3
name = "charlie"
"""

BUILTIN = {"demo": DEMO_TOML}


def loads(text: str) -> NetworkConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config: {exc}") from None
    return from_dict(doc)


def load(path_or_name: str) -> NetworkConfig:
    """Read a TOML file, or a built-in configuration by name (``demo``)."""
    if path_or_name in BUILTIN and not os.path.exists(path_or_name):
        return loads(BUILTIN[path_or_name])
    try:
        with open(path_or_name, encoding="utf-8") as f:
            return loads(f.read())
    except OSError as exc:
        raise ConfigurationError(f"config: cannot read {path_or_name}: {exc.strerror}") from None
