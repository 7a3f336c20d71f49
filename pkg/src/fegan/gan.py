"""Feature-enriched GAN: generator, critic, objectives, training and evaluation.

The generator sees ``[embed(feature) | noise]``: a length-T feature
sequence derived from the context preceding the target window is passed
through two linear/batch-norm/ReLU preprocessing blocks, concatenated in
front of the noise vector and fed to the trunk. The critic only sees
sequences. Real and fake rows always go through the critic as one joint
batch, so its batch-norm statistics cannot hide a location shift between
the two.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache

import numpy as np

from . import nn
from .errors import ArityMismatch, NonFiniteActivation, ShapeMismatch, TrainingAborted
from .ingest import CleanSeries, SeriesTooShort, pair_at
from .risk import DiffReport, check_alpha, diff, fz_score, fz_score_grads, var_es
from .tsmodels import (
    FEATURE_METHODS,
    ArmaSpec,
    FeatureConfig,
    arma_fit,
    arma_forecast,
    decompose,
    gbm_estimate,
    gbm_simulate,
    generate_feature,
)

LOSS_KINDS = ("wasserstein", "tail_score")


@dataclass(frozen=True)
class FeGanConfig:
    """Every knob of one training run.

    Defaults are the full-size architecture (batch 100, windows of 250,
    generator 10 x 1000, critic 5 x 100). :meth:`desk` gives the small
    setting used for experiments on a laptop.
    """

    batch: int = 100
    window: int = 250
    context: int = 250
    noise_dim: int = 100
    feature_embed_dim: int = 100
    gen_layers: int = 10
    gen_width: int = 1000
    critic_layers: int = 5
    critic_width: int = 100
    feature_method: str = "None"
    loss_kind: str = "wasserstein"
    alphas: tuple = (0.05,)
    n_critic: int = 5
    lipschitz: str = "clip"
    clip_value: float = 0.01
    gp_lambda: float = 10.0
    critic_batchnorm: bool | None = None
    conditional_critic: bool = False
    optimizer: str = "rmsprop"
    lr_gen: float | None = None
    lr_critic: float | None = None
    steps: int = 2000
    seed: int = 0
    eval_batch: int = 100
    eval_every: int = 0
    arma_spec: str = "ARMA(2,1)"
    arma_history: int = 0
    period: int = 20

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(check_alpha(a) for a in self.alphas))
        for name in ("batch", "window", "noise_dim", "feature_embed_dim", "gen_width",
                     "critic_width", "n_critic", "eval_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.arma_history < 0:
            raise ValueError("arma_history must be non-negative")
        if self.context < 1 or self.gen_layers < 0 or self.critic_layers < 0 or self.steps < 0:
            raise ValueError("context, layer counts and steps must be non-negative")
        if self.feature_method not in FEATURE_METHODS:
            raise ValueError(f"feature_method must be one of {FEATURE_METHODS}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.lipschitz not in ("clip", "penalty"):
            raise ValueError("lipschitz must be 'clip' or 'penalty'")
        if self.optimizer not in ("rmsprop", "adam"):
            raise ValueError("optimizer must be 'rmsprop' or 'adam'")
        if self.lipschitz == "penalty" and self.critic_batchnorm:
            raise ValueError("gradient penalty needs a critic without batch norm")
        ArmaSpec.parse(self.arma_spec)

    @classmethod
    def desk(cls, **overrides):
        """Small nets (3 x 64), windows of 10 and a faster learning rate.

        ARMA features are fitted on the 250 points ending at the context
        (a 10-point context cannot identify the model) and the hybrid
        decomposition uses a period of 5.
        """
        base = dict(batch=64, window=10, context=10, noise_dim=16, feature_embed_dim=32,
                    gen_layers=3, gen_width=64, critic_layers=3, critic_width=64,
                    steps=2000, lr_gen=5e-4, lr_critic=5e-4, arma_history=250, period=5)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if "alphas" in d:
            d["alphas"] = tuple(d["alphas"])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def uses_critic_batchnorm(self):
        if self.critic_batchnorm is None:
            return self.lipschitz == "clip"
        return self.critic_batchnorm

    @property
    def feature_config(self):
        return FeatureConfig(self.window, ArmaSpec.parse(self.arma_spec), self.period)

    @property
    def critic_sees_features(self):
        return self.conditional_critic and self.feature_method != "None"

    @property
    def critic_outputs(self):
        return 1 if self.loss_kind == "wasserstein" else 2 * len(self.alphas)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class Generator:
    """Optional feature preprocessor plus the trunk producing length-T rows."""

    def __init__(self, preprocess, trunk, noise_dim):
        self.preprocess = preprocess
        self.trunk = trunk
        self.noise_dim = noise_dim
        self._embed_dim = 0 if preprocess is None else preprocess.out_dim

    @classmethod
    def build(cls, config: FeGanConfig, rng):
        pre = None
        embed = 0
        if config.feature_method != "None":
            pre = nn.mlp(config.window, config.feature_embed_dim, 2, rng=rng)
            embed = config.feature_embed_dim
        trunk = nn.mlp(embed + config.noise_dim, config.gen_width, config.gen_layers,
                       config.window, rng=rng)
        return cls(pre, trunk, config.noise_dim)

    @property
    def nets(self):
        return [n for n in (self.preprocess, self.trunk) if n is not None]

    def parameters(self):
        return [p for n in self.nets for p in n.parameters()]

    def zero_grad(self):
        for n in self.nets:
            n.zero_grad()

    def forward(self, features, noise, train=True):
        noise = np.asarray(noise, dtype=float)
        if noise.ndim != 2 or noise.shape[1] != self.noise_dim:
            raise ShapeMismatch(f"noise must be (batch, {self.noise_dim}), got {noise.shape}")
        if self.preprocess is None:
            return self.trunk.forward(noise, train)
        features = np.asarray(features, dtype=float)
        if features.shape[0] != noise.shape[0]:
            raise ShapeMismatch("features and noise disagree on batch size")
        embed = self.preprocess.forward(features, train)
        return self.trunk.forward(np.hstack([embed, noise]), train)

    def backward(self, dout):
        dz = self.trunk.backward(dout)
        if self.preprocess is not None:
            self.preprocess.backward(dz[:, :self._embed_dim])


class Critic:
    """Sequence critic, optionally conditioned on the feature row.

    A conditioned critic reads ``[feature | sequence]``; real and fake rows
    of one batch share their features.
    """

    def __init__(self, net, loss_kind, alphas, cond_dim=0):
        self.net = net
        self.loss_kind = loss_kind
        self.alphas = tuple(alphas)
        self.cond_dim = cond_dim

    @classmethod
    def build(cls, config: FeGanConfig, rng):
        cond = config.window if config.critic_sees_features else 0
        net = nn.mlp(cond + config.window, config.critic_width, config.critic_layers,
                     config.critic_outputs, rng=rng, batchnorm=config.uses_critic_batchnorm)
        return cls(net, config.loss_kind, config.alphas, cond)

    def parameters(self):
        return self.net.parameters()

    def inputs(self, rows, cond=None):
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != self.net.in_dim - self.cond_dim:
            raise ShapeMismatch(f"critic expects rows of length {self.net.in_dim - self.cond_dim}")
        if not self.cond_dim:
            return rows
        if cond is None or np.shape(cond) != (len(rows), self.cond_dim):
            raise ShapeMismatch(f"conditioned critic needs ({len(rows)}, {self.cond_dim}) features")
        return np.hstack([cond, rows])

    def joint(self, real, fake, cond=None, train=True):
        """Critic outputs for real and fake rows from one forward pass."""
        x = np.vstack([self.inputs(real, cond), self.inputs(fake, cond)])
        out = self.net.forward(x, train)
        return out[:len(real)], out[len(real):]


def generate(gen: Generator, features, noise, train=False):
    """Generated B x T batch; ``features`` may be None when the generator has none."""
    return gen.forward(features, noise, train)


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _wgan_values(out_real, out_fake):
    critic_loss = float(out_fake.mean() - out_real.mean())
    return critic_loss, float(-out_fake.mean())


def wgan_losses(critic: Critic, real, fake, cond=None, train=True):
    """``(mean D(fake) - mean D(real), -mean D(fake))``."""
    out_real, out_fake = critic.joint(real, fake, cond, train)
    if out_real.shape[1] != 1:
        raise ArityMismatch("wasserstein critic must have a single output")
    return _wgan_values(out_real, out_fake)


def _row_scores(out, x, alphas):
    """Per-row score sum over alphas and its partials.

    Returns ``s`` (rows,), ``d_out`` (rows, 2*len(alphas)) and ``d_x``
    (rows, T), all for ``s`` itself (not yet averaged over rows).
    """
    n, T = x.shape
    s = np.zeros(n)
    d_out = np.zeros_like(out)
    d_x = np.zeros_like(x)
    for j, a in enumerate(alphas):
        v = out[:, 2 * j][:, None]
        e = out[:, 2 * j + 1][:, None]
        s += fz_score(v, e, x, a).mean(axis=1)
        dv, de, dx = fz_score_grads(v, e, x, a)
        d_out[:, 2 * j] = dv.mean(axis=1)
        d_out[:, 2 * j + 1] = de.mean(axis=1)
        d_x += dx / T
    return s, d_out, d_x


def tail_losses(critic: Critic, real, fake, alphas=None, cond=None, train=True):
    """Score-based critic and generator losses.

    With ``s(row) = sum_alpha mean_t S_alpha(v_alpha(row), e_alpha(row), x_t)``
    the critic loss is ``E_real[s] - E_fake[s]`` and the generator loss is
    ``E_fake[s]``.
    """
    alphas = critic.alphas if alphas is None else tuple(alphas)
    out_real, out_fake = critic.joint(real, fake, cond, train)
    if out_real.shape[1] != 2 * len(alphas):
        raise ArityMismatch(f"tail critic must emit {2 * len(alphas)} outputs, "
                            f"got {out_real.shape[1]}")
    s_real, _, _ = _row_scores(out_real, np.asarray(real, dtype=float), alphas)
    s_fake, _, _ = _row_scores(out_fake, np.asarray(fake, dtype=float), alphas)
    return float(s_real.mean() - s_fake.mean()), float(s_fake.mean())


def _critic_grads(critic, real, fake, cond=None):
    """Forward the joint batch, backprop the critic loss; returns (critic_loss, gen_loss)."""
    out_real, out_fake = critic.joint(real, fake, cond, True)
    nr, nf = len(real), len(fake)
    if critic.loss_kind == "wasserstein":
        losses = _wgan_values(out_real, out_fake)
        dout = np.vstack([np.full_like(out_real, -1.0 / nr), np.full_like(out_fake, 1.0 / nf)])
    else:
        s_r, d_r, _ = _row_scores(out_real, real, critic.alphas)
        s_f, d_f, _ = _row_scores(out_fake, fake, critic.alphas)
        losses = (float(s_r.mean() - s_f.mean()), float(s_f.mean()))
        dout = np.vstack([d_r / nr, -d_f / nf])
    critic.net.backward(dout)
    return losses


def _generator_grad(critic, real, fake, cond=None):
    """Gradient of the generator loss with respect to the fake rows."""
    out_real, out_fake = critic.joint(real, fake, cond, True)
    nr, nf, c = len(real), len(fake), critic.cond_dim
    if critic.loss_kind == "wasserstein":
        loss = float(-out_fake.mean())
        dout = np.vstack([np.zeros_like(out_real), np.full_like(out_fake, -1.0 / nf)])
        return loss, critic.net.backward(dout)[nr:, c:]
    s_f, d_f, d_x = _row_scores(out_fake, fake, critic.alphas)
    dout = np.vstack([np.zeros_like(out_real), d_f / nf])
    return float(s_f.mean()), critic.net.backward(dout)[nr:, c:] + d_x / nf


def _input_grads(net, x, k):
    """Gradient of output column ``k`` summed over rows, w.r.t. each input row."""
    out = net.forward(x, True)
    dout = np.zeros_like(out)
    dout[:, k] = 1.0
    return net.backward(dout)


def gradient_penalty(critic: Critic, real, fake, rng, lam=10.0, cond=None):
    """Add the gradient-penalty term's parameter gradients to the critic.

    The penalty is ``lam * mean_i (|grad_x D_k(xhat_i)| - 1)^2`` summed over
    output columns ``k``, at random interpolates ``xhat``. Its parameter
    gradient is the mixed derivative ``d/de grad_theta sum_i D_k(xhat_i + e u_i)``
    with ``u`` the penalty's sensitivity to the input gradient; that
    directional derivative is taken by a central difference, which is exact
    inside a linear region of the ReLU critic. For a conditioned critic only
    the sequence part is interpolated and differentiated. Returns the
    penalty value.
    """
    net = critic.net
    n, c = len(real), critic.cond_dim
    eps = rng.uniform(size=(n, 1))
    xhat = critic.inputs(eps * real + (1 - eps) * fake, cond)
    params = net.parameters()
    saved = [p.grad.copy() for p in params]
    total = 0.0
    acc = [np.zeros_like(p.value) for p in params]
    for k in range(net.out_dim):
        net.zero_grad()
        g = _input_grads(net, xhat, k)
        g[:, :c] = 0.0
        norms = np.sqrt((g ** 2).sum(axis=1))
        total += lam * float(np.mean((norms - 1.0) ** 2))
        u = (2 * lam / n) * ((norms - 1.0) / np.maximum(norms, 1e-12))[:, None] * g
        scale = np.abs(u).max()
        if scale == 0:
            continue
        h = 1e-6 * max(1.0, float(np.abs(xhat).max())) / scale
        grads = []
        for sign in (1.0, -1.0):
            net.zero_grad()
            out = net.forward(xhat + sign * h * u, True)
            dout = np.zeros_like(out)
            dout[:, k] = 1.0
            net.backward(dout)
            grads.append([p.grad.copy() for p in params])
        for a, gp, gm in zip(acc, *grads):
            a += (gp - gm) / (2 * h)
    for p, s, a in zip(params, saved, acc):
        p.grad[...] = s + a
    return total


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16384)
def _cached_forecast(history: bytes, p, q, T):
    hist = np.frombuffer(history)
    model = arma_fit(hist, ArmaSpec(p, q))
    mean = arma_forecast(model, hist, T)[0]
    mean.flags.writeable = False
    return mean


def _forecast_path(history, fcfg):
    # runs of one sweep share their training series, so fits are memoised
    spec = fcfg.arma_spec
    return _cached_forecast(np.ascontiguousarray(history, dtype=float).tobytes(),
                            spec.p, spec.q, fcfg.T)


class FeatureBank:
    """Feature rows for context/target pairs, caching the expensive parts.

    ARMA forecasts are deterministic given the context, so they are cached
    per offset; the hybrid path caches trend + seasonal and redraws only
    its noise; GBM caches the fitted parameters.

    With ``config.arma_history > 0`` and a ``series`` the ARMA model is fitted
    and forecast from the last ``arma_history`` points of ``series`` that end
    where the context ends, instead of the context alone.
    """

    def __init__(self, config: FeGanConfig, series: CleanSeries | None = None):
        self.method = config.feature_method
        self.fcfg = config.feature_config
        self.history = config.arma_history
        self.series = series
        self._cache = {}

    def min_offset(self, context):
        """Smallest pair offset whose features are fully defined."""
        if self.method in ("Arma", "Hybrid") and self.history > context:
            return self.history - context
        return 0

    def _arma_history(self, pair):
        ctx = pair.context
        if not self.history or self.series is None or len(ctx) >= self.history:
            return ctx
        end = pair.offset + len(ctx)
        return self.series.values[max(0, end - self.history):end]

    def _entry(self, pair):
        key = (pair.offset, len(pair.context))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        ctx = pair.context
        if self.method == "Gbm":
            entry = gbm_estimate(ctx)
        elif self.method == "Arma":
            entry = _forecast_path(self._arma_history(pair), self.fcfg)
        else:
            mean = _forecast_path(self._arma_history(pair), self.fcfg)
            dec = decompose(mean, self.fcfg.period)
            entry = (dec.trend + dec.seasonal, gbm_estimate(ctx).sigma)
        self._cache[key] = entry
        return entry

    def row(self, pair, rng):
        if self.method in ("None", "Historical"):
            return generate_feature(self.method, pair, self.fcfg, rng)
        entry = self._entry(pair)
        if self.method == "Gbm":
            return gbm_simulate(entry, self.fcfg.T, rng)
        if self.method == "Arma":
            return entry.copy()
        path, sigma = entry
        return path + sigma * rng.standard_normal(self.fcfg.T)

    def batch(self, pairs, rng):
        if self.method == "None":
            return None
        return np.vstack([self.row(p, rng) for p in pairs])


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    run_id: str
    config: dict
    config_hash: str
    diffs: dict
    seconds: float
    steps: int
    critic_loss: list = field(default_factory=list)
    gen_loss: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    error: str | None = None
    failed_step: int | None = None

    def to_dict(self, timings=True):
        d = {
            "run_id": self.run_id,
            "config": self.config,
            "config_hash": self.config_hash,
            "diffs": {a: {"var_diff": r.var_diff, "es_diff": r.es_diff}
                      for a, r in self.diffs.items()},
            "steps": self.steps,
            "critic_loss": self.critic_loss,
            "gen_loss": self.gen_loss,
            "checkpoints": self.checkpoints,
            "error": self.error,
            "failed_step": self.failed_step,
        }
        if timings:
            d["seconds"] = self.seconds
        return d

    @classmethod
    def from_dict(cls, d):
        diffs = {k: DiffReport(float(k), v["var_diff"], v["es_diff"])
                 for k, v in d["diffs"].items()}
        return cls(d["run_id"], d["config"], d["config_hash"], diffs, d.get("seconds", 0.0),
                   d["steps"], d["critic_loss"], d["gen_loss"], d.get("checkpoints", []),
                   d.get("error"), d.get("failed_step"))


def alpha_key(alpha):
    return repr(float(alpha))


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(5)]


def split_series(series: CleanSeries, config: FeGanConfig):
    """Training part and the held-out (context, target) evaluation pair."""
    C, T = config.context, config.window
    n = len(series)
    need = 2 * T + C + FeatureBank(config).min_offset(C)
    if n < need:
        raise SeriesTooShort(f"need at least {need} points (feature history, train pair and "
                             f"a held-out target of {T}), got {n}")
    return series.head(n - T), pair_at(series, n - T - C, C, T)


def evaluate(gen: Generator, series: CleanSeries, config: FeGanConfig, rng=None):
    """Per-alpha |risk(real) - risk(generated)| on the held-out final window.

    The real sample is the last ``window`` values; the generated sample pools
    ``eval_batch`` generated rows, each conditioned on the context right
    before that window. The generator runs in evaluation mode.
    """
    _, pair = split_series(series, config)
    if rng is None:
        rng = _streams(config.seed)[4]
    bank = FeatureBank(config, series)
    feats = bank.batch([pair] * config.eval_batch, rng)
    noise = rng.standard_normal((config.eval_batch, config.noise_dim))
    pooled = generate(gen, feats, noise, train=False).ravel()
    out = {}
    for a in config.alphas:
        out[alpha_key(a)] = diff(var_es(pair.target, a), var_es(pooled, a))
    return out


def _sample(train_series, config, bank, data_rng, feat_rng):
    C, T, B = config.context, config.window, config.batch
    offsets = data_rng.integers(bank.min_offset(C), len(train_series) - C - T + 1, size=B)
    values = train_series.values
    real = values[offsets[:, None] + C + np.arange(T)]
    if bank.method == "None":
        return real, None
    if bank.method == "Historical":
        return real, values[offsets[:, None] + (C - T) + np.arange(T)]
    pairs = [pair_at(train_series, int(o), C, T) for o in offsets]
    return real, bank.batch(pairs, feat_rng)


def train(config: FeGanConfig, series: CleanSeries, run_id=None, callback=None):
    """Adversarial training of one FE-GAN.

    Each step does ``n_critic`` critic updates followed by one generator
    update, each on a fresh batch of pairs from the training part of the
    series. The held-out final window is evaluated at the end, and every
    ``eval_every`` steps when that is positive. Everything random derives
    from ``config.seed``.

    Returns
    -------
    (Generator, Critic, RunResult)

    Raises
    ------
    TrainingAborted
        When an activation or loss becomes non-finite; carries the step.
    """
    start = time.perf_counter()
    init_rng, data_rng, noise_rng, feat_rng, _ = _streams(config.seed)
    train_series, _ = split_series(series, config)
    gen = Generator.build(config, init_rng)
    critic = Critic.build(config, init_rng)
    opt_g = nn.make_optimizer(config.optimizer, gen.parameters(), config.lr_gen)
    opt_c = nn.make_optimizer(config.optimizer, critic.parameters(), config.lr_critic)
    bank = FeatureBank(config, train_series)
    gp_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(6)[5])
    result = RunResult(run_id or f"run-{config.config_hash()}", config.to_dict(),
                       config.config_hash(), {}, 0.0, 0)
    B = config.batch

    step = 0
    try:
        for step in range(config.steps):
            for _ in range(config.n_critic):
                real, feats = _sample(train_series, config, bank, data_rng, feat_rng)
                fake = gen.forward(feats, noise_rng.standard_normal((B, config.noise_dim)), True)
                cond = feats if critic.cond_dim else None
                critic.net.zero_grad()
                c_loss, _ = _critic_grads(critic, real, fake, cond)
                if config.lipschitz == "penalty":
                    # divergence surfaces as a non-finite loss below
                    with np.errstate(over="ignore", invalid="ignore"):
                        c_loss += gradient_penalty(critic, real, fake, gp_rng,
                                                   config.gp_lambda, cond)
                opt_c.step()
                if config.lipschitz == "clip":
                    nn.clip_weights(critic.net, config.clip_value)
            real, feats = _sample(train_series, config, bank, data_rng, feat_rng)
            gen.zero_grad()
            fake = gen.forward(feats, noise_rng.standard_normal((B, config.noise_dim)), True)
            g_loss, d_fake = _generator_grad(critic, real, fake, feats if critic.cond_dim else None)
            critic.net.zero_grad()
            gen.backward(d_fake)
            opt_g.step()
            if not (np.isfinite(c_loss) and np.isfinite(g_loss)):
                raise NonFiniteActivation("non-finite loss")
            result.critic_loss.append(c_loss)
            result.gen_loss.append(g_loss)
            result.steps = step + 1
            if config.eval_every and (step + 1) % config.eval_every == 0:
                diffs = evaluate(gen, series, config)
                result.checkpoints.append(
                    {"step": step + 1,
                     "diffs": {k: {"var_diff": r.var_diff, "es_diff": r.es_diff}
                               for k, r in diffs.items()}})
            if callback is not None:
                callback(step, c_loss, g_loss)
    except NonFiniteActivation as exc:
        raise TrainingAborted(step, str(exc)) from exc

    result.diffs = evaluate(gen, series, config)
    result.seconds = time.perf_counter() - start
    return gen, critic, result


def with_overrides(config: FeGanConfig, **kw):
    return replace(config, **kw)
