"""Core types, scenario schema and validation.

A scenario is a single JSON document. Every section is optional and falls
back to the defaults below; unknown keys anywhere are rejected so that a
typo in an experiment config fails loudly instead of silently running the
default. See ``docs/scenario_schema.md`` for the field reference.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

ATTACK_KINDS = ("none", "sign-flip", "label-flip", "adaptive", "targeted")
ALARM_POLICIES = ("honest", "always-alarm", "never-alarm")

# substream tags; see ``substream``
STREAM_DATA = 1
STREAM_PARTITION = 2
STREAM_TRAIN = 3
STREAM_REJOIN = 4
STREAM_MALICIOUS = 5
STREAM_PROBE = 6
STREAM_CLIENTS = 7
STREAM_AUDIT = 8


class ScenarioError(ValueError):
    """Raised when a scenario fails to parse or validate."""


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Every random draw in the simulator goes through one of these, keyed by
    purpose, client and round, so a single client-round can be replayed in
    isolation and results do not depend on execution order.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def derive_nu(epsilon: float, epsilon_max: float) -> float:
    """Concave privacy-budget score ``1 - (1 - eps/eps_max)**2``."""
    if not epsilon > 0:
        raise ScenarioError("epsilon must be > 0")
    if epsilon > epsilon_max:
        raise ScenarioError(f"epsilon must be <= epsilon_max ({epsilon_max})")
    return 1.0 - (1.0 - epsilon / epsilon_max) ** 2


def derive_alpha(lambda_k: float, lambda_max: float) -> float:
    """Data-quality score ``1 - (lambda_k/lambda_max)**2``.

    A client whose divergence exceeds ``lambda_max`` is outside the server's
    tolerance and is rejected with ``ScenarioError``.
    """
    if not lambda_max > 0:
        raise ScenarioError("lambda_max must be > 0")
    if lambda_k < 0:
        raise ScenarioError("lambda must be >= 0")
    if lambda_k > lambda_max:
        raise ScenarioError(
            f"lambda {lambda_k:.6g} exceeds lambda_max {lambda_max:.6g}; client rejected"
        )
    return 1.0 - (lambda_k / lambda_max) ** 2


@dataclass(frozen=True)
class ClientAttributes:
    """Per-client attributes driving both the game and the selection loop.

    ``alpha`` may be unknown at load time (``alpha_source == "pending"``);
    the engine fills it from data via :func:`cosifl.data.estimate_lambda`.
    """

    id: int
    epsilon: float
    gamma: float
    s: float
    t_latency: float
    nu: float
    alpha: float | None = None
    lam: float | None = None
    alpha_source: str = "pending"

    @property
    def effectiveness(self) -> float:
        """alpha*gamma, the weight of one sample in the reward contest."""
        if self.alpha is None:
            raise ScenarioError(f"client {self.id}: alpha not resolved")
        return self.alpha * self.gamma


@dataclass(frozen=True)
class DataSpec:
    num_classes: int = 5
    feature_dim: int = 10
    samples_per_client: int = 200
    separation: float = 2.5
    noise_std: float = 1.0
    p_noniid: float = 0.4
    test_fraction: float = 0.2
    server_fraction: float = 0.1
    min_shard: int = 100


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    fraction: float = 0.0
    sign_constant: float = -1.0
    beta: float = 1.0
    source: int = 0
    target: int = 1
    alarm_policy: str = "never-alarm"


@dataclass(frozen=True)
class PrivacySpec:
    use_ldp: bool = False
    delta: float = 1e-5
    clip: float = 1.0
    epsilon_max: float = 8.0
    sigma_override: float | None = None


@dataclass(frozen=True)
class TrainingSpec:
    eta: float = 0.1
    eta_global: float = 1.0
    local_epochs: int = 1
    l2_reg: float = 1e-3
    B_min: int = 1


@dataclass(frozen=True)
class SecuritySpec:
    C_c: float = 0.1
    C_s: float = 0.05
    C_p: int = 2
    p_rejoin: float = 0.1
    false_alarm_weight: float = 0.5


@dataclass(frozen=True)
class CostSpec:
    gamma1: float = 1000.0
    gamma2: float = 100.0
    gamma3: float = 100.0
    mu: float = 0.5
    rho: float = 1.0
    Theta: float | None = None
    delta1: float = 10.0
    delta2: float = 100.0
    R_lo: float = 1.0
    R_hi: float = 5000.0


@dataclass(frozen=True)
class GameSpec:
    denominator: str = "selected"


@dataclass(frozen=True)
class ClientRanges:
    """Uniform ranges used when a scenario does not list its clients."""

    epsilon: tuple[float, float] = (0.5, 8.0)
    gamma: tuple[float, float] = (0.6, 1.0)
    s: tuple[float, float] = (0.5, 1.5)
    t_latency: tuple[float, float] = (1.0, 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    K: int = 10
    seed: int = 0
    D_total: float = 300.0
    t_max_rounds: int = 60
    T_fixed: int | None = None
    lambda_max: float | None = None
    data: DataSpec = field(default_factory=DataSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    privacy: PrivacySpec = field(default_factory=PrivacySpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    security: SecuritySpec = field(default_factory=SecuritySpec)
    cost: CostSpec = field(default_factory=CostSpec)
    game: GameSpec = field(default_factory=GameSpec)
    client_ranges: ClientRanges = field(default_factory=ClientRanges)
    clients: tuple[ClientAttributes, ...] = ()

    @property
    def phi(self) -> float:
        """Loss-proxy decay factor ``1 - 2*mu*eta + 2*mu*rho*eta**2``."""
        c, eta = self.cost, self.training.eta
        return 1.0 - 2.0 * c.mu * eta + 2.0 * c.mu * c.rho * eta**2

    @property
    def n_malicious(self) -> int:
        return int(round(self.attack.fraction * self.K)) if self.attack.kind != "none" else 0

    def malicious_ids(self) -> tuple[int, ...]:
        """Client ids controlled by the adversary (seeded, sorted)."""
        m = self.n_malicious
        if m == 0:
            return ()
        rng = substream(self.seed, STREAM_MALICIOUS)
        return tuple(sorted(int(i) for i in rng.choice(self.K, size=m, replace=False)))

    def replace(self, **changes: Any) -> "ScenarioConfig":
        """Copy with top-level fields or ``section__field`` overrides, re-validated."""
        top: dict[str, Any] = {}
        nested: dict[str, dict[str, Any]] = {}
        for key, value in changes.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                nested.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, vals in nested.items():
            top[sec] = dataclasses.replace(getattr(self, sec), **vals)
        cfg = dataclasses.replace(self, **top)
        if "clients" not in top and self._clients_sampled() and cfg._sampling_key() != self._sampling_key():
            clients = _build_clients(None, cfg.K, cfg.client_ranges, cfg.privacy.epsilon_max, cfg.seed)
            cfg = dataclasses.replace(cfg, clients=clients)
        validate(cfg)
        return cfg

    def _sampling_key(self) -> tuple:
        return (self.K, self.seed, self.client_ranges, self.privacy.epsilon_max)

    def _clients_sampled(self) -> bool:
        # sampled clients are exactly what the generator yields for this seed
        return self.clients == _build_clients(None, self.K, self.client_ranges, self.privacy.epsilon_max, self.seed)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["clients"] = [_client_to_dict(c) for c in self.clients]
        d["client_ranges"] = {k: list(v) for k, v in d["client_ranges"].items()}
        return d


_SECTIONS = {
    "data": DataSpec,
    "attack": AttackSpec,
    "privacy": PrivacySpec,
    "training": TrainingSpec,
    "security": SecuritySpec,
    "cost": CostSpec,
    "game": GameSpec,
    "client_ranges": ClientRanges,
}
_CLIENT_KEYS = {"id", "epsilon", "gamma", "s", "t_latency", "lambda", "alpha"}


def _client_to_dict(c: ClientAttributes) -> dict[str, Any]:
    d: dict[str, Any] = {
        "id": c.id,
        "epsilon": c.epsilon,
        "gamma": c.gamma,
        "s": c.s,
        "t_latency": c.t_latency,
    }
    if c.lam is not None:
        d["lambda"] = c.lam
    if c.alpha is not None and c.alpha_source == "config":
        d["alpha"] = c.alpha
    return d


def _build_section(name: str, cls: type, raw: Any) -> Any:
    if not isinstance(raw, Mapping):
        raise ScenarioError(f"{name} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ScenarioError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    kwargs = dict(raw)
    if cls is ClientRanges:
        kwargs = {k: tuple(v) for k, v in kwargs.items()}
    return cls(**kwargs)


def _build_clients(raw: Any, K: int, ranges: ClientRanges, eps_max: float, seed: int):
    if raw is None or len(raw) == 0:
        rng = substream(seed, STREAM_CLIENTS)
        raw = []
        for k in range(K):
            raw.append(
                {
                    "id": k,
                    "epsilon": float(rng.uniform(*ranges.epsilon)),
                    "gamma": float(rng.uniform(*ranges.gamma)),
                    "s": float(rng.uniform(*ranges.s)),
                    "t_latency": float(rng.uniform(*ranges.t_latency)),
                }
            )
    if len(raw) != K:
        raise ScenarioError(f"clients has {len(raw)} entries but K={K}")
    out = []
    for k, item in enumerate(raw):
        where = f"clients[{k}]"
        if not isinstance(item, Mapping):
            raise ScenarioError(f"{where} must be an object")
        unknown = sorted(set(item) - _CLIENT_KEYS)
        if unknown:
            raise ScenarioError(f"unknown key(s) in {where}: {', '.join(unknown)}")
        for req in ("epsilon", "gamma", "s", "t_latency"):
            if req not in item:
                raise ScenarioError(f"{where}.{req} is required")
        eps = float(item["epsilon"])
        if not eps > 0:
            raise ScenarioError(f"{where}.epsilon must be > 0")
        try:
            nu = derive_nu(eps, eps_max)
        except ScenarioError as exc:
            raise ScenarioError(f"{where}.{exc}") from None
        alpha = item.get("alpha")
        lam = item.get("lambda")
        source = "pending"
        if alpha is not None:
            source = "config"
        out.append(
            ClientAttributes(
                id=int(item.get("id", k)),
                epsilon=eps,
                gamma=float(item["gamma"]),
                s=float(item["s"]),
                t_latency=float(item["t_latency"]),
                nu=nu,
                alpha=None if alpha is None else float(alpha),
                lam=None if lam is None else float(lam),
                alpha_source=source,
            )
        )
    return tuple(out)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ScenarioError(msg)


def validate(cfg: ScenarioConfig) -> None:
    """Raise ``ScenarioError`` naming the first violated constraint."""
    _check(isinstance(cfg.K, int) and cfg.K >= 2, "K must be an integer >= 2")
    _check(cfg.D_total > 0, "D_total must be > 0")
    _check(cfg.t_max_rounds >= 1, "t_max_rounds must be >= 1")
    _check(cfg.T_fixed is None or cfg.T_fixed >= 1, "T_fixed must be >= 1")
    _check(cfg.lambda_max is None or cfg.lambda_max > 0, "lambda_max must be > 0")

    d = cfg.data
    _check(d.num_classes >= 2, "data.num_classes must be >= 2")
    _check(d.feature_dim >= 2, "data.feature_dim must be >= 2")
    _check(d.samples_per_client >= 1, "data.samples_per_client must be >= 1")
    _check(0.0 <= d.p_noniid <= 1.0, "data.p_noniid must lie in [0, 1]")
    _check(0.0 < d.test_fraction < 1.0, "data.test_fraction must lie in (0, 1)")
    _check(0.0 < d.server_fraction < 1.0, "data.server_fraction must lie in (0, 1)")
    _check(d.separation > 0 and d.noise_std > 0, "data.separation and data.noise_std must be > 0")

    a = cfg.attack
    _check(a.kind in ATTACK_KINDS, f"attack.kind must be one of {ATTACK_KINDS}")
    _check(0.0 <= a.fraction < 1.0, "attack.fraction must lie in [0, 1)")
    _check(a.sign_constant < 0, "attack.sign_constant must be < 0")
    _check(a.source != a.target, "attack.source must differ from attack.target")
    _check(
        0 <= a.source < d.num_classes and 0 <= a.target < d.num_classes,
        "attack.source/target must be valid class indices",
    )
    _check(a.alarm_policy in ALARM_POLICIES, f"attack.alarm_policy must be one of {ALARM_POLICIES}")

    p = cfg.privacy
    _check(0.0 < p.delta < 1.0, "privacy.delta must lie in (0, 1)")
    _check(p.clip > 0, "privacy.clip must be > 0")
    _check(p.epsilon_max > 0, "privacy.epsilon_max must be > 0")
    _check(p.sigma_override is None or p.sigma_override >= 0, "privacy.sigma_override must be >= 0")

    t = cfg.training
    _check(t.eta > 0, "training.eta must be > 0")
    _check(t.eta_global > 0, "training.eta_global must be > 0")
    _check(t.local_epochs >= 1, "training.local_epochs must be >= 1")
    _check(t.l2_reg >= 0, "training.l2_reg must be >= 0")
    _check(t.B_min >= 1, "training.B_min must be >= 1")

    s = cfg.security
    _check(0.0 < s.C_c < 1.0, "security.C_c must lie in (0, 1)")
    _check(0.0 < s.C_s < 1.0, "security.C_s must lie in (0, 1)")
    _check(isinstance(s.C_p, int) and s.C_p >= 1, "security.C_p must be a positive integer")
    _check(0.0 <= s.p_rejoin <= 1.0, "security.p_rejoin must lie in [0, 1]")
    _check(0.0 <= s.false_alarm_weight <= 1.0, "security.false_alarm_weight must lie in [0, 1]")

    c = cfg.cost
    for name in ("gamma1", "gamma2", "gamma3", "mu", "rho", "delta1", "delta2"):
        _check(getattr(c, name) >= 0, f"cost.{name} must be >= 0")
    _check(c.Theta is None or c.Theta >= 0, "cost.Theta must be >= 0")
    _check(0 < c.R_lo < c.R_hi, "cost.R_lo/R_hi must satisfy 0 < R_lo < R_hi")
    phi = cfg.phi
    _check(0.0 < phi < 1.0, f"phi = {phi:.6g} must lie in (0, 1); adjust cost.mu, cost.rho or training.eta")

    _check(cfg.game.denominator in ("selected", "all"), "game.denominator must be 'selected' or 'all'")

    _check(len(cfg.clients) == cfg.K, "clients must have K entries")
    for c_ in cfg.clients:
        where = f"clients[{c_.id}]"
        vals = (c_.epsilon, c_.gamma, c_.s, c_.t_latency)
        _check(all(math.isfinite(v) for v in vals), f"{where} fields must be finite")
        _check(c_.epsilon > 0, f"{where}.epsilon must be > 0")
        _check(0.0 < c_.gamma <= 1.0, f"{where}.gamma must lie in (0, 1]")
        _check(c_.s > 0, f"{where}.s must be > 0")
        _check(c_.t_latency > 0, f"{where}.t_latency must be > 0")
        _check(c_.alpha is None or 0.0 <= c_.alpha <= 1.0, f"{where}.alpha must lie in [0, 1]")
        _check(c_.lam is None or c_.lam >= 0, f"{where}.lambda must be >= 0")
    ids = [c_.id for c_ in cfg.clients]
    _check(ids == list(range(cfg.K)), "client ids must be 0..K-1 in order")


def scenario_from_dict(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Build and validate a scenario from a parsed JSON object."""
    if not isinstance(raw, Mapping):
        raise ScenarioError("scenario must be a JSON object")
    top_known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = sorted(set(raw) - top_known)
    if unknown:
        raise ScenarioError(f"unknown key(s): {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for name in ("K", "seed", "D_total", "t_max_rounds", "T_fixed", "lambda_max"):
        if name in raw:
            kwargs[name] = raw[name]
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build_section(name, cls, raw[name])
    cfg = ScenarioConfig(**kwargs)
    clients = _build_clients(
        raw.get("clients"), cfg.K, cfg.client_ranges, cfg.privacy.epsilon_max, cfg.seed
    )
    lam_max = cfg.lambda_max
    if lam_max is not None:
        resolved = []
        for c in clients:
            if c.alpha is None and c.lam is not None:
                c = dataclasses.replace(c, alpha=derive_alpha(c.lam, lam_max), alpha_source="config")
            resolved.append(c)
        clients = tuple(resolved)
    cfg = dataclasses.replace(cfg, clients=clients)
    validate(cfg)
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read a scenario JSON file and return the validated config."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"parse error in {path}: {exc}") from exc
    return scenario_from_dict(raw)


def dump_scenario(cfg: ScenarioConfig, path: str | Path | None = None) -> str:
    text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
