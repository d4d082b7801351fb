"""Scenario configuration, topology generators and environment bundles."""

from __future__ import annotations

import dataclasses
import numpy as np

from . import channel
from .reduce import node_sum
from .gnn import Architecture
from .plant import PlantModel

KINDS = ("multicell", "multicell_distributed", "adhoc", "transfer")
STREAMS = ("topology", "fading", "plant", "init", "closure", "policy", "baseline", "trainer")
CONTROLLER_SPACING = 4.0
TRANSFER_HALF_SIDE = 6.0


class ConfigError(ValueError):
    pass


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Independent named random stream derived from a global seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS.index(name), int(index))))


@dataclasses.dataclass
class ScenarioConfig:
    kind: str = "adhoc"
    m: int = 30
    n: int = 5
    k: int = 6
    pathloss: float = 1.5
    rayleigh_scale: float = 2.0
    noise_var: float = 1.0
    p0: float = 2.5
    Q: float = 1.0  # weight matrix is Q * I
    process_noise: float = 1.0
    obs_noise: float = 0.01
    T_train: int = 30
    T_eval: int = 80
    head: str = "power"
    constraint: bool = True
    seed: int = 0
    redraw_topology: bool = False
    # architecture (actor and critic share it)
    layers: int = 3
    taps: int = 5
    hidden: int = 10
    # trainer
    gamma: float = 0.95
    N: int = 16
    t_max: int = 10
    clip_eps: float = 0.2
    beta_rl: float = 5e-5
    beta_critic: float = 0.0  # 0 means: same as beta_rl
    beta_il: float = 5e-4
    beta_lambda: float = 1e-5
    lambda0: float = 0.0
    E_RL: int = 10000
    E_IL: int = 0
    dagger_decay: float = 0.9
    dagger_batch: int = 256
    dagger_steps: int = 4
    optimizer: str = "sgd"
    normalize_advantages: bool = True
    cost_scale: float = 1.0
    init_log_std: float = -0.5
    undiscounted_dual: bool = False
    wmmse_iters: int = 100
    reps: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.kind.startswith("multicell") and self.n * self.k != self.m:
            raise ConfigError(f"multicell scenario needs n*k == m (got {self.n}*{self.k} != {self.m})")
        if self.head not in ("bernoulli", "percell", "power"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.m < 1 or self.T_train < 1 or self.T_eval < 1 or self.N < 1 or self.t_max < 1:
            raise ConfigError("sizes and horizons must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("clip_eps must lie in (0, 1)")
        for name in ("beta_rl", "beta_il", "beta_lambda", "pathloss", "rayleigh_scale", "noise_var", "p0", "cost_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be sgd or adam")
        if self.E_RL < 0 or self.E_IL < 0:
            raise ConfigError("episode counts must be nonnegative")

    @classmethod
    def defaults(cls, kind: str, **overrides):
        base = {
            "multicell": dict(m=30, n=5, k=6, T_train=50, head="bernoulli", constraint=False),
            "multicell_distributed": dict(m=30, n=5, k=6, T_train=50, head="percell", constraint=False),
            "adhoc": dict(m=30, T_train=30, head="power", constraint=True, E_IL=1000),
            "transfer": dict(m=60, p0=5.0, T_train=30, head="power", constraint=True, E_IL=1000),
        }
        if kind not in base:
            raise ConfigError(f"unknown scenario kind {kind!r}")
        return cls(kind=kind, **{**base[kind], **overrides})

    @property
    def architecture(self) -> Architecture:
        return Architecture.uniform(layers=self.layers, taps=self.taps, hidden=self.hidden)

    @property
    def beta_value(self):
        return self.beta_critic or self.beta_rl

    def with_size(self, m):
        if self.kind.startswith("multicell"):
            raise ConfigError("resizing is only defined for ad-hoc style scenarios")
        return dataclasses.replace(self, m=m)


def _coerce(field, raw: str):
    raw = raw.strip()
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{field.name}: expected a boolean, got {raw!r}")
    try:
        if field.type in ("int", int):
            return int(raw)
        if field.type in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{field.name}: cannot parse {raw!r}") from None
    return raw


def parse_config(text: str) -> ScenarioConfig:
    """Parse flat ``key = value`` lines; '#' starts a comment. Values not
    given fall back to the defaults of the chosen ``kind``."""
    fields = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(fields[key], raw)
    kind = values.pop("kind", "adhoc")
    return ScenarioConfig.defaults(kind, **values)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: ScenarioConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


# -- topologies -----------------------------------------------------------------

def multicell_topology(n: int, k: int, rng) -> channel.Topology:
    """n base stations on a line, k plants around each."""
    m = n * k
    spacing = m / n
    bs = np.column_stack([spacing * np.arange(n), np.zeros(n)])
    assignment = np.repeat(np.arange(n), k)
    dx = rng.uniform(-m / (2 * n), m / (2 * n), size=m)
    dy = rng.uniform(-k, k, size=m)
    plants = bs[assignment] + np.column_stack([dx, dy])
    return channel.Topology(bs, plants, assignment)


def adhoc_topology(m: int, rng, half_side=None) -> channel.Topology:
    """One controller per plant on a line (spacing 4); plant i uniform in a
    square of half-side ``half_side`` (default m/10) around controller i."""
    h = m / 10 if half_side is None else half_side
    ctrl = np.column_stack([CONTROLLER_SPACING * np.arange(m), np.zeros(m)])
    plants = ctrl + rng.uniform(-h, h, size=(m, 2))
    return channel.Topology(ctrl, plants, np.arange(m))


@dataclasses.dataclass
class Environment:
    """Everything needed to simulate one scenario instance."""

    config: ScenarioConfig
    topology: channel.Topology
    slow: np.ndarray
    model: PlantModel
    chan: channel.ChannelParams
    Q: np.ndarray
    cells: np.ndarray
    seed: int

    @property
    def m(self):
        return self.topology.m

    @property
    def head(self):
        return self.config.head

    @property
    def constraint_active(self):
        return self.config.constraint

    def constraint(self, alpha):
        """Sum-power slack sum(alpha) - m*p0 per realization."""
        return node_sum(alpha, axis=-1) - self.m * self.chan.p0

    def redraw(self, rng):
        topo = draw_topology(self.config, rng)
        return dataclasses.replace(self, topology=topo, slow=channel.slow_fading(topo, self.chan.pathloss),
                                   cells=np.asarray(topo.assignment))

    def permuted(self, perm):
        topo = self.topology.permuted(perm)
        return dataclasses.replace(self, topology=topo, slow=channel.slow_fading(topo, self.chan.pathloss),
                                   cells=np.asarray(topo.assignment))


def draw_topology(cfg: ScenarioConfig, rng) -> channel.Topology:
    if cfg.kind.startswith("multicell"):
        return multicell_topology(cfg.n, cfg.k, rng)
    if cfg.kind == "transfer":
        return adhoc_topology(cfg.m, rng, half_side=TRANSFER_HALF_SIDE)
    return adhoc_topology(cfg.m, rng)


def make_environment(cfg: ScenarioConfig, seed: int | None = None) -> Environment:
    seed = cfg.seed if seed is None else seed
    topo = draw_topology(cfg, stream(seed, "topology"))
    chan = channel.ChannelParams(cfg.pathloss, cfg.rayleigh_scale, cfg.noise_var, cfg.p0)
    model = PlantModel.default(cfg.process_noise, cfg.obs_noise)
    return Environment(
        config=cfg,
        topology=topo,
        slow=channel.slow_fading(topo, cfg.pathloss),
        model=model,
        chan=chan,
        Q=cfg.Q * np.eye(model.p),
        cells=np.asarray(topo.assignment),
        seed=seed,
    )
