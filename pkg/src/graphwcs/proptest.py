"""Randomized property suites: equivariance, coupled invariance, gradients, oracles.

Each suite returns a :class:`SuiteResult`; the command line turns any
failure into exit code 3.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import autodiff as ad
from . import baselines, gnn, plant, policy, trainer
from .env import Simulator
from .reduce import canonical_reductions
from .scenarios import ScenarioConfig, make_environment

SUITES = ("equivariance", "coupled", "gradient", "oracle")


@dataclasses.dataclass
class SuiteResult:
    name: str
    trials: int
    failures: int
    worst: float  # largest observed error statistic
    seconds: float
    messages: list = dataclasses.field(default_factory=list)

    @property
    def ok(self):
        return self.failures == 0 and self.trials > 0

    def line(self):
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.trials - self.failures}/{self.trials} trials, worst={self.worst:.3g}, {self.seconds:.2f}s"


def _timed(name, fn):
    t0 = time.perf_counter()
    trials, failures, worst, msgs = fn()
    return SuiteResult(name, trials, failures, worst, time.perf_counter() - t0, msgs)


def random_architecture(rng, max_layers=3, max_taps=5, max_features=8):
    L = int(rng.integers(1, max_layers + 1))
    taps = tuple(int(k) for k in rng.integers(1, max_taps + 1, size=L))
    feats = tuple(int(f) for f in rng.integers(1, max_features + 1, size=L + 1))
    nonlin = tuple(str(rng.choice(["relu", "sigmoid", "identity"])) for _ in range(L))
    return gnn.Architecture(taps, feats, nonlin)


def relative_error(a, b, floor=1e-300):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor)) if a.size else 0.0


# -- equivariance -------------------------------------------------------------

def equivariance(trials=1000, seed=0, max_m=20, tol=1e-9):
    """Relabelled inputs give relabelled outputs for random architectures."""
    def run():
        rng = np.random.default_rng(seed)
        failures, worst, msgs = 0, 0.0, []
        for i in range(trials):
            m = int(rng.integers(1, max_m + 1))
            arch = random_architecture(rng)
            params = gnn.init_params(arch, rng)
            S = gnn.normalize_gso(rng.exponential(size=(m, m)))
            z = rng.standard_normal((m, arch.features[0]))
            perm = rng.permutation(m)
            Sp, zp = gnn.permute(perm, S, z)
            out = gnn.regnn_forward(S, z, params, arch)
            outp = gnn.regnn_forward(Sp, zp, params, arch)
            err = relative_error(outp, out[perm], floor=1e-12)
            worst = max(worst, err)
            if not err <= tol:
                failures += 1
                msgs.append(f"trial {i}: m={m} arch={arch} error {err:.3g}")
        return trials, failures, worst, msgs
    return _timed("equivariance", run)


# -- coupled permutation invariance ------------------------------------------------

def coupled_run(env, actor, perm, T, seed, actor_perm=None):
    """Simulate ``env`` and its relabelled copy with shared randomness.

    The copy uses the permuted topology, the permuted initial states and the
    permuted per-node draws. Returns per-step (cost, constraint) arrays for
    both systems, each of shape (T, 2).
    """
    actor_perm = actor if actor_perm is None else actor_perm
    perm = np.asarray(perm)
    sim = Simulator(env, 1, seed)
    sim.reset()
    psim = Simulator(env.permuted(perm), 1, seed)
    psim.reset(sim.states[:, perm, :])
    out, pout = [], []
    for _ in range(T):
        d = sim.draw()
        pd = d.permuted(perm)
        obs, H = sim.observe(d)
        pobs, pH = psim.observe(pd)
        a = policy.act(actor, policy.build_features(obs), H, noise=d.policy).alpha
        pa = policy.act(actor_perm, policy.build_features(pobs), pH, noise=pd.policy).alpha
        r = sim.advance(obs, H, a, d)
        pr = psim.advance(pobs, pH, pa, pd)
        out.append((r.cost[0], r.constraint[0]))
        pout.append((pr.cost[0], pr.constraint[0]))
    return np.array(out), np.array(pout)


def corrupt_tap(actor, rng, scale=0.5, layer=-1):
    """Copy of ``actor`` with one filter tap (the matrix weighting one shift
    order in ``layer``) offset by ``scale``."""
    bad = actor.copy()
    k = int(rng.integers(bad.params[layer].shape[0]))
    bad.params[layer][k] += scale
    return bad


def coupled(trials=100, seed=0, m=12, T=30, corrupt=False):
    """Per-step cost and constraint sequences of the relabelled system equal
    the original ones bit for bit. With ``corrupt`` one filter tap of the
    relabelled run's policy is perturbed, which must break the equality."""
    def run():
        rng = np.random.default_rng(seed)
        failures, worst, msgs = 0, 0.0, []
        # the negative control needs an allocation that moves with the taps
        heads = ("power",) if corrupt else ("power", "bernoulli")
        with canonical_reductions():
            for i in range(trials):
                head = heads[i % len(heads)]
                cfg = ScenarioConfig.defaults("adhoc", m=m, head=head, T_train=T, seed=int(rng.integers(2**31)))
                env = make_environment(cfg)
                arch = random_architecture(rng)
                hidden = ("sigmoid",) * (arch.n_layers - 1) if corrupt else arch.nonlinearities[:-1]
                # sigmoid hidden units never die, so a perturbed output tap always reaches the scores
                arch = dataclasses.replace(arch, features=(1,) + arch.features[1:-1] + (1,),
                                           nonlinearities=hidden + ("identity",))
                actor = policy.Actor(arch, gnn.init_params(arch, rng), policy.PolicyHead(head, cfg.p0),
                                     np.array([0.5, -0.5])[: 2 if head == "power" else 1])
                other = corrupt_tap(actor, rng) if corrupt else None
                perm = rng.permutation(m)
                base, perm_out = coupled_run(env, actor, perm, T, cfg.seed, other)
                differs = not np.array_equal(base, perm_out)
                gap = float(np.max(np.abs(base - perm_out)))
                worst = max(worst, gap)
                if differs != corrupt:
                    failures += 1
                    msgs.append(f"trial {i}: head={head} max gap {gap:.3g}")
        return trials, failures, worst, msgs
    return _timed("coupled-corrupted" if corrupt else "coupled", run)


# -- gradients ---------------------------------------------------------------------

def _fd_grad(f, params: dict, h):
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            hi, lo = dict(params), dict(params)
            hi[name], lo[name] = p.copy(), p.copy()
            hi[name][idx] += h
            lo[name][idx] -= h
            g[idx] = (f(hi) - f(lo)) / (2 * h)
        out[name] = g
    return out


def _grad_error(ad_grads, fd_grads):
    a = np.concatenate([np.ravel(ad_grads[k]) for k in sorted(fd_grads)])
    b = np.concatenate([np.ravel(fd_grads[k]) for k in sorted(fd_grads)])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def gradient_instance(rng, loss, h=1e-5):
    """Relative error between tape and central-difference gradients for one
    random small instance of ``loss`` in {'ppo', 'value', 'imitation'}."""
    m = int(rng.integers(2, 6))
    B = int(rng.integers(2, 5))
    arch = random_architecture(rng, max_layers=2, max_taps=3, max_features=3)
    arch = dataclasses.replace(arch, features=(1,) + arch.features[1:-1] + (1,))
    H = rng.exponential(size=(B, m, m))
    feats = rng.exponential(size=(B, m, 1))
    params = gnn.init_params(arch, rng)
    if loss == "value":
        critic = policy.Critic(arch, params, rng.standard_normal(1))
        targets = rng.standard_normal(B) * m
        _, g = trainer.value_gradient(critic, feats, H, targets)
        f = lambda d: trainer.value_loss(trainer._with_critic_params(critic, d), feats, H, targets)  # noqa: E731
        return _grad_error(g, _fd_grad(lambda d: float(ad.value(f(d))), trainer.critic_params(critic), h))
    head = str(rng.choice(["power", "bernoulli"])) if loss == "ppo" else "power"
    hp = np.array([rng.standard_normal(), -0.5 + 0.3 * rng.standard_normal()])[: 2 if head == "power" else 1]
    actor = policy.Actor(arch, params, policy.PolicyHead(head, 2.5), hp)
    if loss == "imitation":
        target = rng.standard_normal((B, m))
        _, g = trainer.imitation_gradient(actor, feats, H, target)
        g = {k: v for k, v in g.items()}
        f = lambda d: trainer.imitation_loss(trainer._with_actor_params(actor, d), feats, H, target)  # noqa: E731
        fd = _fd_grad(lambda d: float(ad.value(f(d))), trainer.actor_params(actor), h)
        # log-std is held fixed during imitation: compare only the bias entry of the head
        g["actor.head"] = g["actor.head"][:1]
        fd["actor.head"] = fd["actor.head"][:1]
        return _grad_error(g, fd)
    sample = policy.act(actor, feats, H, rng=rng)
    batch = {
        "features": feats,
        "H": H,
        "action": sample,
        "old_log_prob": sample.log_prob + 0.3 * rng.standard_normal(B),
        "advantages": rng.standard_normal(B),
    }
    _, g = trainer.ppo_gradient(actor, batch, 0.2)
    f = lambda d: trainer.ppo_objective(trainer._with_actor_params(actor, d), batch, 0.2)  # noqa: E731
    return _grad_error(g, _fd_grad(lambda d: float(ad.value(f(d))), trainer.actor_params(actor), h))


def gradient(trials=100, seed=0, h=1e-5, tol=1e-5):
    def run():
        rng = np.random.default_rng(seed)
        failures, worst, msgs = 0, 0.0, []
        n = 0
        for i in range(trials):
            for loss in ("ppo", "value", "imitation"):
                err = gradient_instance(rng, loss, h)
                n += 1
                worst = max(worst, err)
                if not err <= tol:
                    failures += 1
                    msgs.append(f"trial {i} {loss}: relative error {err:.3g}")
        return n, failures, worst, msgs
    return _timed("gradient", run)


# -- closed-form oracles ---------------------------------------------------------------

def oracle(trials=100, seed=0):
    """Simulator against matrix powers, deadbeat one-step convergence, WMMSE
    monotonicity and the default parameter count."""
    def run():
        rng = np.random.default_rng(seed)
        failures, worst, msgs, n = 0, 0.0, [], 0
        model = plant.PlantModel.default(process_noise=0.0, obs_noise=0.0)
        for i in range(trials):
            m = int(rng.integers(1, 8))
            T = int(rng.integers(1, 20))
            x0 = rng.standard_normal((m, 3))
            ens = plant.PlantEnsemble.create(model, m, states=x0)
            zeros = np.zeros((m, 3))
            for _ in range(T):
                ens = plant.step(ens, zeros, np.zeros(m), noise=zeros)
            expect = x0 @ np.linalg.matrix_power(model.A, T).T
            err = relative_error(ens.states, expect)
            n += 1
            worst = max(worst, err)
            if not err <= 1e-12:
                failures += 1
                msgs.append(f"open loop trial {i}: {err:.3g}")
            ens = plant.PlantEnsemble.create(model, m, states=x0)
            ens = plant.step(ens, plant.observe(ens, noise=zeros), np.ones(m), noise=zeros)
            n += 1
            if np.any(ens.states != 0.0):
                failures += 1
                msgs.append(f"deadbeat trial {i}: state not zero")
            H = rng.exponential(size=(m, m))
            _, trace = baselines.wmmse(H, 1.0, 2.5, iters=50, history=True)
            rates = [baselines.sum_rate(H, a, 1.0) for a in trace]
            drop = max([0.0] + [rates[k] - rates[k + 1] for k in range(len(rates) - 1)])
            n += 1
            if drop > 1e-9:
                failures += 1
                msgs.append(f"wmmse trial {i}: sum rate fell by {drop:.3g}")
        n += 1
        if gnn.param_count_gnn(gnn.Architecture.uniform(3, 5, 10)) != 600:
            failures += 1
            msgs.append("default architecture does not have 600 parameters")
        return n, failures, worst, msgs
    return _timed("oracle", run)


def run_suite(name, trials=None, seed=0):
    if name == "equivariance":
        return [equivariance(trials or 1000, seed)]
    if name == "coupled":
        return [coupled(trials or 100, seed), coupled(max(1, (trials or 100) // 10), seed + 1, corrupt=True)]
    if name == "gradient":
        return [gradient(trials or 100, seed)]
    if name == "oracle":
        return [oracle(trials or 100, seed)]
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, trials, seed)]
    raise ValueError(f"unknown suite {name!r}")


__all__ = ["SUITES", "SuiteResult", "coupled", "coupled_run", "equivariance", "gradient", "oracle", "run_suite"]
