"""Mean-field Gaussian multi-head network trained with a beta-weighted ELBO.

Every layer is stored as one augmented block of shape ``(fan_in + 1, fan_out)``
whose last row holds the bias, so the local reparametrization moments are

    M = [A, 1] @ mu
    V = [A*A, 1] @ sigma**2

and a pre-activation sample is ``M + sqrt(V) * eps``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import RandomStream, log_softmax, softmax

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "betavcl-posterior"
CHECKPOINT_VERSION = 1


class NumericalError(ArithmeticError):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class NetworkArchitecture:
    input_dim: int
    hidden_sizes: tuple
    head_sizes: tuple
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        object.__setattr__(self, "head_sizes", tuple(int(c) for c in self.head_sizes))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError("hidden_sizes must be a non-empty list of positive widths")
        if any(c < 2 for c in self.head_sizes):
            raise ValueError("every head needs at least 2 classes")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def shared_shapes(self) -> list[tuple[int, int]]:
        widths = (self.input_dim,) + self.hidden_sizes
        return [(widths[i] + 1, widths[i + 1]) for i in range(len(self.hidden_sizes))]

    def head_shape(self, head: int) -> tuple[int, int]:
        return (self.hidden_sizes[-1] + 1, self.head_sizes[head])

    @property
    def n_heads(self) -> int:
        return len(self.head_sizes)

    def n_params(self) -> int:
        shapes = self.shared_shapes + [self.head_shape(k) for k in range(self.n_heads)]
        return sum(a * b for a, b in shapes)


@dataclass
class MeanFieldGaussian:
    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_sigma = np.asarray(self.log_sigma, dtype=np.float64)
        if self.mu.shape != self.log_sigma.shape:
            raise ValueError("mu and log_sigma must have the same shape")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def var(self) -> np.ndarray:
        return np.exp(2.0 * self.log_sigma)

    @property
    def shape(self):
        return self.mu.shape

    def copy(self) -> "MeanFieldGaussian":
        return MeanFieldGaussian(self.mu.copy(), self.log_sigma.copy())

    def equals(self, other: "MeanFieldGaussian") -> bool:
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.log_sigma, other.log_sigma)


@dataclass
class VariationalPosterior:
    architecture: NetworkArchitecture
    shared: list
    heads: list
    trained_heads: frozenset = frozenset()

    def blocks(self, head: int | None = None) -> list[MeanFieldGaussian]:
        """Shared blocks plus one head, or every block when ``head`` is None."""
        if head is None:
            return list(self.shared) + list(self.heads)
        self._check_head(head)
        return list(self.shared) + [self.heads[head]]

    def _check_head(self, head: int) -> None:
        if not 0 <= head < len(self.heads):
            raise IndexError(f"head {head} out of range for {len(self.heads)} heads")

    def copy(self) -> "VariationalPosterior":
        return VariationalPosterior(
            self.architecture,
            [b.copy() for b in self.shared],
            [b.copy() for b in self.heads],
            frozenset(self.trained_heads),
        )

    def n_params(self) -> int:
        return sum(b.mu.size for b in self.blocks())


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.001
    beta: float = 0.1
    epochs: int = 120
    batch_size: int = 128
    s_train: int = 10
    s_test: int = 100
    prior_sigma: float = 1.0
    init_log_sigma: float = -6.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.s_train < 1 or self.s_test < 1:
            raise ValueError("batch_size, s_train and s_test must be >= 1")
        if not self.prior_sigma > 0:
            raise ValueError("prior_sigma must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class GradientSet:
    """Gradients w.r.t. the shared blocks and one head, as (d_mu, d_log_sigma)
    pairs stored in MeanFieldGaussian containers."""

    head: int
    shared: list
    head_block: MeanFieldGaussian

    def blocks(self) -> list[MeanFieldGaussian]:
        return list(self.shared) + [self.head_block]


def init_prior(arch: NetworkArchitecture, prior_sigma: float = 1.0) -> VariationalPosterior:
    ls = math.log(prior_sigma)

    def block(shape):
        return MeanFieldGaussian(np.zeros(shape), np.full(shape, ls))

    return VariationalPosterior(
        arch,
        [block(s) for s in arch.shared_shapes],
        [block(arch.head_shape(k)) for k in range(arch.n_heads)],
        frozenset(),
    )


def add_head(post: VariationalPosterior, n_classes: int, prior_sigma: float = 1.0) -> tuple[VariationalPosterior, int]:
    """Return a copy of ``post`` with one extra untrained head at the prior."""
    arch = post.architecture
    new_arch = NetworkArchitecture(arch.input_dim, arch.hidden_sizes, arch.head_sizes + (n_classes,), arch.activation)
    out = post.copy()
    out.architecture = new_arch
    shape = new_arch.head_shape(new_arch.n_heads - 1)
    out.heads.append(MeanFieldGaussian(np.zeros(shape), np.full(shape, math.log(prior_sigma))))
    return out, new_arch.n_heads - 1


def _random_block(shape, init_log_sigma: float, rng: np.random.Generator) -> MeanFieldGaussian:
    fan_in = shape[0] - 1
    scale = math.sqrt(2.0 / fan_in)
    return MeanFieldGaussian(scale * rng.standard_normal(shape), np.full(shape, float(init_log_sigma)))


def init_variational(prior: VariationalPosterior, seed: int | RandomStream = 0, init_log_sigma: float = -6.0) -> VariationalPosterior:
    """He-scaled random means with a small common ``init_log_sigma``."""
    stream = seed if isinstance(seed, RandomStream) else RandomStream(seed, 0)
    arch = prior.architecture
    shared = [_random_block(s, init_log_sigma, stream.child(0, i).generator) for i, s in enumerate(arch.shared_shapes)]
    heads = [_random_block(arch.head_shape(k), init_log_sigma, stream.child(1, k).generator) for k in range(arch.n_heads)]
    return VariationalPosterior(arch, shared, heads, frozenset())


def _check_congruent(q_blocks, p_blocks) -> None:
    if len(q_blocks) != len(p_blocks) or any(a.shape != b.shape for a, b in zip(q_blocks, p_blocks)):
        raise ValueError("posteriors are not shape-congruent")


def _kl_block(q: MeanFieldGaussian, p: MeanFieldGaussian) -> float:
    var_ratio = np.exp(2.0 * (q.log_sigma - p.log_sigma))
    mean_term = (q.mu - p.mu) ** 2 / p.var
    return float(np.sum(p.log_sigma - q.log_sigma + 0.5 * (var_ratio + mean_term) - 0.5))


def kl_divergence(q: VariationalPosterior, p: VariationalPosterior, head: int | None = None) -> float:
    """Closed-form KL(q || p) summed over the shared blocks and ``head``
    (every block when ``head`` is None)."""
    qb, pb = q.blocks(head), p.blocks(head)
    _check_congruent(qb, pb)
    return sum(_kl_block(a, b) for a, b in zip(qb, pb))


def _kl_grad_block(q: MeanFieldGaussian, p: MeanFieldGaussian):
    d_mu = (q.mu - p.mu) / p.var
    d_ls = np.exp(2.0 * (q.log_sigma - p.log_sigma)) - 1.0
    return d_mu, d_ls


def draw_noise(arch: NetworkArchitecture, head: int, rows: int, stream: RandomStream) -> list[np.ndarray]:
    """One standard-normal matrix per layer, ``rows`` by the layer width."""
    widths = list(arch.hidden_sizes) + [arch.head_sizes[head]]
    return [stream.normal((rows, w)) for w in widths]


def _augment(A: np.ndarray) -> np.ndarray:
    return np.hstack([A, np.ones((A.shape[0], 1))])


def _forward(blocks: Sequence[MeanFieldGaussian], X: np.ndarray, eps: Sequence[np.ndarray] | None, keep: bool = False):
    A = X
    cache = []
    last = len(blocks) - 1
    for i, b in enumerate(blocks):
        At = _augment(A)
        M = At @ b.mu
        if eps is None:
            Z = M
            cache_entry = (At, None, None, None)
        else:
            s2 = b.var
            V = (At * At) @ s2
            sd = np.sqrt(V)
            Z = M + sd * eps[i]
            cache_entry = (At, s2, sd, eps[i])
        if keep:
            cache.append((cache_entry, Z))
        A = Z if i == last else np.maximum(Z, 0.0)
    return A, cache


def _backward(blocks, cache, d_out):
    grads = [None] * len(blocks)
    dZ = d_out
    for i in range(len(blocks) - 1, -1, -1):
        (At, s2, sd, eps), _ = cache[i]
        b = blocks[i]
        d_mu = At.T @ dZ
        dV = np.divide(dZ * eps, 2.0 * sd, out=np.zeros_like(dZ), where=sd > 0)
        d_s2 = (At * At).T @ dV
        grads[i] = MeanFieldGaussian(d_mu, 2.0 * s2 * d_s2)
        if i == 0:
            break
        dAt = dZ @ b.mu.T + 2.0 * At * (dV @ s2.T)
        _, Z_prev = cache[i - 1]
        dZ = dAt[:, :-1] * (Z_prev > 0)
    return grads


def forward_local_reparam(post: VariationalPosterior, head: int, X, noise) -> np.ndarray:
    """Sampled logits for the rows of ``X``.

    ``noise`` is a RandomStream (fresh draws per layer and row) or a list of
    pre-drawn per-layer matrices as returned by :func:`draw_noise`.
    """
    blocks = post.blocks(head)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != post.architecture.input_dim:
        raise ValueError(f"expected a batch with {post.architecture.input_dim} columns")
    eps = draw_noise(post.architecture, head, X.shape[0], noise) if isinstance(noise, RandomStream) else noise
    logits, _ = _forward(blocks, X, eps)
    return logits


def forward_mean(post: VariationalPosterior, head: int, X) -> np.ndarray:
    """Deterministic pass through the posterior means."""
    logits, _ = _forward(post.blocks(head), np.asarray(X, dtype=np.float64), None)
    return logits


def beta_elbo_loss(
    post: VariationalPosterior,
    prior: VariationalPosterior,
    head: int,
    X,
    y,
    n_data: int,
    beta: float,
    s_train: int,
    noise,
) -> tuple[float, GradientSet]:
    """Per-example negative beta-weighted ELBO on one mini-batch and its
    pathwise gradient.

    ``loss = -mean_{s, batch} log p(y | x, theta_s) + beta * KL(q || prior) / n_data``

    ``prior`` is the previous posterior acting as the KL anchor. ``noise`` may
    be a RandomStream or frozen per-layer draws for ``s_train * len(X)`` rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    C = post.architecture.head_sizes[head]
    if y.min() < 0 or y.max() >= C:
        raise ValueError(f"labels out of range for head {head} with {C} classes")
    B = X.shape[0]
    rows = s_train * B
    Xs = np.tile(X, (s_train, 1))
    ys = np.tile(y, s_train)
    eps = draw_noise(post.architecture, head, rows, noise) if isinstance(noise, RandomStream) else noise

    blocks = post.blocks(head)
    logits, cache = _forward(blocks, Xs, eps, keep=True)
    logp = log_softmax(logits)
    nll = -float(np.mean(logp[np.arange(rows), ys]))
    d_logits = softmax(logits)
    d_logits[np.arange(rows), ys] -= 1.0
    d_logits /= rows
    grads = _backward(blocks, cache, d_logits)

    loss = nll
    if beta != 0.0:
        anchor = prior.blocks(head)
        _check_congruent(blocks, anchor)
        kl = sum(_kl_block(q, p) for q, p in zip(blocks, anchor))
        loss += beta * kl / n_data
        w = beta / n_data
        for g, q, p in zip(grads, blocks, anchor):
            d_mu, d_ls = _kl_grad_block(q, p)
            g.mu += w * d_mu
            g.log_sigma += w * d_ls
    return loss, GradientSet(head, grads[:-1], grads[-1])


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float, b1: float, b2: float, eps: float):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_task(
    q_prev: VariationalPosterior,
    X,
    y,
    head: int,
    hyper: HyperParams,
    seed: int | RandomStream = 0,
) -> VariationalPosterior:
    """Fit ``q_t`` for one task starting from (and anchored at) ``q_prev``.

    A head that has never been trained gets fresh random means before
    training; while no head has been trained the shared trunk is still at the
    prior and is initialized the same way. Only the shared blocks and ``head``
    are updated; ``q_prev`` is never mutated.
    """
    q_prev._check_head(head)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    stream = seed if isinstance(seed, RandomStream) else RandomStream(seed, 0)
    arch = q_prev.architecture

    post = q_prev.copy()
    if not q_prev.trained_heads:
        post.shared = [
            _random_block(s, hyper.init_log_sigma, stream.child(0, i).generator)
            for i, s in enumerate(arch.shared_shapes)
        ]
    if head not in q_prev.trained_heads:
        post.heads[head] = _random_block(arch.head_shape(head), hyper.init_log_sigma, stream.child(1, head).generator)

    active = post.blocks(head)
    params = [a for b in active for a in (b.mu, b.log_sigma)]
    opt = _Adam(params, hyper.learning_rate, hyper.adam_beta1, hyper.adam_beta2, hyper.adam_eps)
    batch = min(hyper.batch_size, n)
    shuffle = stream.child(2)
    noise = stream.child(3)
    for epoch in range(hyper.epochs):
        perm = shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            loss, grads = beta_elbo_loss(post, q_prev, head, X[idx], y[idx], n, hyper.beta, hyper.s_train, noise)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            opt.step([a for g in grads.blocks() for a in (g.mu, g.log_sigma)])
            total += loss * len(idx)
        logger.debug("head %d epoch %d loss %.6f", head, epoch, total / n)
    post.trained_heads = frozenset(q_prev.trained_heads | {head})
    return post


def _encode_block(b: MeanFieldGaussian) -> dict:
    return {"shape": list(b.mu.shape), "mu": b.mu.ravel().tolist(), "log_sigma": b.log_sigma.ravel().tolist()}


def _decode_block(d: dict) -> MeanFieldGaussian:
    shape = tuple(d["shape"])
    return MeanFieldGaussian(
        np.array(d["mu"], dtype=np.float64).reshape(shape),
        np.array(d["log_sigma"], dtype=np.float64).reshape(shape),
    )


def posterior_to_dict(post: VariationalPosterior, hyper: HyperParams | None = None, metadata: dict | None = None) -> dict:
    arch = post.architecture
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": {
            "input_dim": arch.input_dim,
            "hidden_sizes": list(arch.hidden_sizes),
            "head_sizes": list(arch.head_sizes),
            "activation": arch.activation,
        },
        "trained_heads": sorted(post.trained_heads),
        "hyper": hyper.to_dict() if hyper is not None else None,
        "metadata": metadata or {},
        "shared": [_encode_block(b) for b in post.shared],
        "heads": [_encode_block(b) for b in post.heads],
    }


def posterior_from_dict(doc: dict) -> tuple[VariationalPosterior, HyperParams | None, dict]:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a posterior checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    arch = NetworkArchitecture(**doc["architecture"])
    post = VariationalPosterior(
        arch,
        [_decode_block(b) for b in doc["shared"]],
        [_decode_block(b) for b in doc["heads"]],
        frozenset(doc["trained_heads"]),
    )
    expected = init_prior(arch)
    _check_congruent(post.blocks(), expected.blocks())
    hyper = HyperParams.from_dict(doc["hyper"]) if doc.get("hyper") else None
    return post, hyper, doc.get("metadata", {})


def save_posterior(post: VariationalPosterior, path, hyper: HyperParams | None = None, metadata: dict | None = None) -> None:
    """Write a JSON checkpoint. Python's shortest-repr floats make the
    round trip bit-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(posterior_to_dict(post, hyper, metadata)), encoding="utf-8")


def load_posterior(path) -> tuple[VariationalPosterior, HyperParams | None, dict]:
    return posterior_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
