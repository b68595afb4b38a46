"""Noise-prediction backends.

Three backends share one ``predict(z, t, prompt, sched, control)`` call:

* ``AnalyticDenoiser`` - exact posterior noise of a Gaussian-mixture toy world
  whose components are rendered shapes, one per vocabulary word.
* ``ToyAttentionDenoiser`` - a fixed-weight patch transformer with one
  self-attention ("enc") and one cross-attention ("dec") layer whose keys and
  values can be recorded and replayed.
* ``HybridDenoiser`` - analytic noise plus a small attention residual, so the
  editing pipeline has both a faithful score and attention taps.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple, Protocol

import numpy as np

from .errors import InjectionMiss, InvalidArgument, PhaseError
from .grid import LatentGrid, Rng, grid_write

if TYPE_CHECKING:
    from .scheduler import NoiseSchedule

EMBED_DIM = 32
NULL_TOKEN = "<null>"
LAYERS = ("enc", "dec")
DEFAULT_SHAPE = (4, 64, 64)


def word_seed(word: str, salt: str = "") -> int:
    digest = hashlib.blake2b((salt + word).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    words: tuple[str, ...]
    vectors: np.ndarray  # (N, EMBED_DIM)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def is_null(self) -> bool:
        return self.words == (NULL_TOKEN,)


def _word_vector(word: str, dim: int) -> np.ndarray:
    return Rng(word_seed(word, "embed:")).normal(dim) / math.sqrt(dim)


def embed_prompt(text: str, dim: int = EMBED_DIM) -> PromptEmbedding:
    words = tuple(text.split())
    if not words:
        raise InvalidArgument("prompt must contain at least one word")
    return PromptEmbedding(words, np.stack([_word_vector(w, dim) for w in words]))


def null_prompt(dim: int = EMBED_DIM) -> PromptEmbedding:
    """The empty-text condition used for the unconditional half of guidance."""
    return PromptEmbedding((NULL_TOKEN,), _word_vector(NULL_TOKEN, dim)[None, :])


def as_prompt(prompt) -> PromptEmbedding:
    return prompt if isinstance(prompt, PromptEmbedding) else embed_prompt(prompt)


def unique_words(words) -> list[str]:
    return list(dict.fromkeys(words))


class DenoiserOutput(NamedTuple):
    eps: LatentGrid
    maps: np.ndarray | None  # (h, w, N) cross-attention probabilities


class Denoiser(Protocol):
    has_attention: bool

    def predict(
        self,
        z: LatentGrid,
        t: int,
        prompt: PromptEmbedding,
        sched: "NoiseSchedule",
        control: "FeatureControl | None" = None,
    ) -> DenoiserOutput: ...


# -- analytic backend --------------------------------------------------------


def render_word(word: str, shape: tuple[int, int, int] = DEFAULT_SHAPE) -> np.ndarray:
    """Flat background, one filled rectangle and one filled disc, all in [-1, 1].

    Geometry and per-channel levels come from the word's hash; the disc is
    painted over the rectangle.
    """
    c, h, w = shape
    if word == NULL_TOKEN:
        return np.zeros(shape)
    u = Rng(word_seed(word, "shape:")).uniform(8 + 3 * c)
    rw = max(1, int(round((0.25 + 0.25 * u[0]) * w)))
    rh = max(1, int(round((0.25 + 0.25 * u[1]) * h)))
    rx = int(u[2] * (w - rw + 1))
    ry = int(u[3] * (h - rh + 1))
    radius = (0.12 + 0.13 * u[4]) * min(h, w)
    cx = radius + u[5] * max(w - 2 * radius, 0.0)
    cy = radius + u[6] * max(h - 2 * radius, 0.0)
    back = 0.6 * u[8 : 8 + c] - 0.3
    rect_level = 2.0 * u[8 + c : 8 + 2 * c] - 1.0
    disc_level = 2.0 * u[8 + 2 * c : 8 + 3 * c] - 1.0

    yy, xx = np.mgrid[0:h, 0:w]
    in_rect = (xx >= rx) & (xx < rx + rw) & (yy >= ry) & (yy < ry + rh)
    in_disc = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= radius**2
    mean = np.broadcast_to(back[:, None, None], shape).copy()
    mean[:, in_rect] = rect_level[:, None]
    mean[:, in_disc] = disc_level[:, None]
    return mean


@dataclass(frozen=True, eq=False)
class GaussianWorld:
    """Mixture of isotropic Gaussians N(mu_word, sigma0_sq * I), one per word."""

    means: dict
    weights: dict
    sigma0_sq: float = 0.05
    shape: tuple[int, int, int] = DEFAULT_SHAPE

    @property
    def words(self) -> list[str]:
        return list(self.means)

    def components(self, words) -> tuple[np.ndarray, np.ndarray]:
        words = unique_words(words)
        missing = [w for w in words if w not in self.means]
        if missing:
            raise InvalidArgument(f"words not in the world vocabulary: {missing}")
        w = np.array([self.weights[x] for x in words], dtype=np.float64)
        return np.stack([self.means[x] for x in words]), w / w.sum()

    def sample(self, rng: Rng, words=None) -> LatentGrid:
        """Draw one latent: pick a component by weight, add sqrt(sigma0_sq) noise."""
        names = unique_words(words) if words is not None else self.words
        means, weights = self.components(names)
        k = int(np.searchsorted(np.cumsum(weights), rng.uniform(1)[0], side="right"))
        k = min(k, len(names) - 1)
        return LatentGrid(means[k] + math.sqrt(self.sigma0_sq) * rng.normal(self.shape))


def render_world(words, shape: tuple[int, int, int] = DEFAULT_SHAPE, sigma0_sq: float = 0.05) -> GaussianWorld:
    words = unique_words(words)
    if not words:
        raise InvalidArgument("render_world needs at least one word")
    if sigma0_sq < 0:
        raise InvalidArgument(f"sigma0_sq must be >= 0, got {sigma0_sq}")
    means = {}
    for word in words:
        mu = render_word(word, shape)
        mu.flags.writeable = False
        means[word] = mu
    weights = {word: 1.0 / len(words) for word in words}
    return GaussianWorld(means, weights, sigma0_sq, tuple(shape))


def mixture_eps(z: np.ndarray, alpha_bar: float, means: np.ndarray, weights: np.ndarray, sigma0_sq: float) -> np.ndarray:
    """Posterior-mean noise for z ~ sum_i w_i N(sqrt(a) mu_i, (a s0^2 + 1 - a) I)."""
    var = alpha_bar * sigma0_sq + (1.0 - alpha_bar)
    resid = z[None] - math.sqrt(alpha_bar) * means
    if len(weights) == 1:
        mean_resid = resid[0]
    else:
        axes = tuple(range(1, resid.ndim))
        logits = np.log(weights) - 0.5 * np.sum(resid**2, axis=axes) / var
        logits -= logits.max()
        resp = np.exp(logits)
        resp /= resp.sum()
        mean_resid = np.tensordot(resp, resid, axes=1)
    return math.sqrt(1.0 - alpha_bar) * mean_resid / var


def analytic_eps(
    z_t: LatentGrid,
    t: int,
    prompt: PromptEmbedding,
    world: GaussianWorld,
    sched: "NoiseSchedule",
) -> LatentGrid:
    """Exact noise prediction -sqrt(1 - a_t) * grad log p_t(z_t) of the toy world.

    The prompt selects mixture components by word; the null prompt selects
    the whole vocabulary (the unconditional model).
    """
    sched.check_step(t)
    if z_t.shape != world.shape:
        raise InvalidArgument(f"latent shape {z_t.shape} does not match world shape {world.shape}")
    words = world.words if prompt.is_null else prompt.words
    means, weights = world.components(words)
    return LatentGrid(mixture_eps(z_t.f64(), float(sched.alpha_cumprod[t]), means, weights, world.sigma0_sq))


class AnalyticDenoiser:
    has_attention = False

    def __init__(self, vocabulary, shape: tuple[int, int, int] = DEFAULT_SHAPE, sigma0_sq: float = 0.05):
        self.world = render_world(vocabulary, shape, sigma0_sq)
        self.shape = tuple(shape)

    def predict(self, z, t, prompt, sched, control=None) -> DenoiserOutput:
        return DenoiserOutput(analytic_eps(z, t, as_prompt(prompt), self.world, sched), None)


# -- feature recording / injection ------------------------------------------


class FeatureCache:
    """(step, layer) -> (K, V) store written once by the source branch.

    Writes are refused after ``freeze()``; reads are refused before it, so a
    replay can never observe a half-recorded cache.
    """

    def __init__(self):
        self._entries: dict[tuple[int, str], tuple[np.ndarray, np.ndarray]] = {}
        self._frozen = False
        self._width: int | None = None

    def put(self, t: int, layer: str, k: np.ndarray, v: np.ndarray) -> None:
        if self._frozen:
            raise PhaseError(f"cache is frozen; cannot record (t={t}, layer={layer!r})")
        key = (int(t), layer)
        if key in self._entries:
            raise InvalidArgument(f"cache already holds an entry for {key}")
        if k.shape != v.shape or k.ndim != 2:
            raise InvalidArgument(f"K and V must be matching token x dim matrices, got {k.shape}, {v.shape}")
        if self._width is not None and k.shape[1] != self._width:
            raise InvalidArgument(f"feature width {k.shape[1]} differs from cached width {self._width}")
        self._width = k.shape[1]
        k, v = k.copy(), v.copy()
        k.flags.writeable = False
        v.flags.writeable = False
        self._entries[key] = (k, v)

    def get(self, t: int, layer: str) -> tuple[np.ndarray, np.ndarray]:
        if not self._frozen:
            raise PhaseError("cache read before recording finished (call freeze() first)")
        try:
            return self._entries[(int(t), layer)]
        except KeyError:
            raise InjectionMiss(int(t), layer) from None

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    def keys(self):
        return sorted(self._entries)

    def count(self, layer: str) -> int:
        return sum(1 for _, name in self._entries if name == layer)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def dump(self, directory) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for (t, layer), (k, v) in sorted(self._entries.items()):
            for tag, mat in (("K", k), ("V", v)):
                p = out / f"t{t:04d}_{layer}_{tag}.flxl"
                grid_write(LatentGrid(mat[None]), p)
                paths.append(p)
        return paths


@dataclass
class FeatureControl:
    mode: str = "plain"  # plain | record | replay
    cache: FeatureCache | None = None
    layers: frozenset = field(default_factory=lambda: frozenset({"dec"}))

    def __post_init__(self):
        if self.mode not in ("plain", "record", "replay"):
            raise InvalidArgument(f"unknown control mode {self.mode!r}")
        if self.mode != "plain" and self.cache is None:
            raise InvalidArgument(f"mode {self.mode!r} needs a FeatureCache")
        self.layers = frozenset(self.layers)
        unknown = self.layers - set(LAYERS)
        if unknown:
            raise InvalidArgument(f"unknown layer ids {sorted(unknown)}; known: {LAYERS}")


# -- fixed-weight attention backend -------------------------------------------


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def patchify(z: np.ndarray, patch: int) -> np.ndarray:
    c, h, w = z.shape
    return z.reshape(c, h // patch, patch, w // patch, patch).transpose(1, 3, 0, 2, 4).reshape(
        (h // patch) * (w // patch), c * patch * patch
    )


def unpatchify(tokens: np.ndarray, shape: tuple[int, int, int], patch: int) -> np.ndarray:
    c, h, w = shape
    return tokens.reshape(h // patch, w // patch, c, patch, patch).transpose(2, 0, 3, 1, 4).reshape(c, h, w)


class LayerTrace(NamedTuple):
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    out: np.ndarray  # probs @ v, before the output projection


class ToyForward(NamedTuple):
    eps: LatentGrid
    maps: np.ndarray
    layers: dict


class ToyAttentionDenoiser:
    """Patchify -> embed -> self-attention "enc" -> cross-attention "dec" -> head.

    Weights are drawn once from ``Rng(seed)``; nothing is trained.
    """

    has_attention = True

    def __init__(self, shape=DEFAULT_SHAPE, patch: int = 4, dim: int = 32, embed_dim: int = EMBED_DIM, seed: int = 0):
        c, h, w = shape
        if h % patch or w % patch:
            raise InvalidArgument(f"latent {h}x{w} not divisible by patch size {patch}")
        self.shape = tuple(shape)
        self.patch = patch
        self.dim = dim
        self.grid_hw = (h // patch, w // patch)
        n_tokens = self.grid_hw[0] * self.grid_hw[1]
        token_dim = c * patch * patch
        rng = Rng(seed)

        def mat(rows, cols):
            return rng.normal((rows, cols)) / math.sqrt(rows)

        self.w_in = mat(token_dim, dim)
        self.pos = 0.1 * rng.normal((n_tokens, dim))
        self.enc = {name: mat(dim, dim) for name in ("q", "k", "v", "o")}
        self.dec = {"q": mat(dim, dim), "k": mat(embed_dim, dim), "v": mat(embed_dim, dim), "o": mat(dim, dim)}
        self.w_out = mat(dim, token_dim)
        self.freqs = np.exp(-math.log(1000.0) * np.arange(dim // 2) / max(dim // 2, 1))

    def time_embedding(self, t: int) -> np.ndarray:
        phase = t * self.freqs
        return 0.1 * np.concatenate([np.sin(phase), np.cos(phase)])

    def _attend(self, name, x_q, x_kv, weights, t, control) -> LayerTrace:
        q = x_q @ weights["q"]
        k = x_kv @ weights["k"]
        v = x_kv @ weights["v"]
        if control is not None and name in control.layers:
            if control.mode == "record":
                control.cache.put(t, name, k, v)
            elif control.mode == "replay":
                k, v = control.cache.get(t, name)
        probs = softmax_rows(q @ k.T / math.sqrt(self.dim))
        return LayerTrace(q, k, v, probs, probs @ v)

    def forward(self, z: LatentGrid, t: int, prompt: PromptEmbedding, control: FeatureControl | None = None) -> ToyForward:
        if z.shape != self.shape:
            raise InvalidArgument(f"latent shape {z.shape} does not match backend shape {self.shape}")
        prompt = as_prompt(prompt)
        x = patchify(z.f64(), self.patch) @ self.w_in + self.pos + self.time_embedding(t)
        enc = self._attend("enc", x, x, self.enc, t, control)
        x = x + enc.out @ self.enc["o"]
        dec = self._attend("dec", x, prompt.vectors, self.dec, t, control)
        x = x + dec.out @ self.dec["o"]
        eps = unpatchify(x @ self.w_out, self.shape, self.patch)
        maps = dec.probs.reshape(self.grid_hw + (dec.probs.shape[1],))
        return ToyForward(LatentGrid(eps), maps, {"enc": enc, "dec": dec})

    def predict(self, z, t, prompt, sched=None, control=None) -> DenoiserOutput:
        out = self.forward(z, t, prompt, control)
        return DenoiserOutput(out.eps, out.maps)


def toy_attention_eps(z_t, t, prompt, mode="plain", cache=None, layers=("dec",), backend=None):
    """Functional wrapper: returns (eps, maps) from a default-seeded toy backend."""
    backend = backend or ToyAttentionDenoiser(shape=z_t.shape)
    control = None if mode == "plain" else FeatureControl(mode, cache, frozenset(layers))
    out = backend.forward(z_t, t, as_prompt(prompt), control)
    return out.eps, out.maps


class HybridDenoiser:
    """eps = analytic eps + gain * attention eps; maps and taps come from the attention part."""

    has_attention = True

    def __init__(self, analytic: AnalyticDenoiser, attention: ToyAttentionDenoiser, gain: float = 0.02):
        if analytic.shape != attention.shape:
            raise InvalidArgument("analytic and attention backends disagree on latent shape")
        self.analytic = analytic
        self.attention = attention
        self.gain = gain
        self.shape = analytic.shape

    def predict(self, z, t, prompt, sched, control=None) -> DenoiserOutput:
        prompt = as_prompt(prompt)
        base = self.analytic.predict(z, t, prompt, sched).eps
        att = self.attention.forward(z, t, prompt, control)
        return DenoiserOutput(LatentGrid(base.f64() + self.gain * att.eps.f64()), att.maps)


BACKENDS = ("analytic", "attention", "hybrid")


def make_denoiser(
    backend: str,
    vocabulary,
    shape=DEFAULT_SHAPE,
    sigma0_sq: float = 0.05,
    seed: int = 0,
    patch: int = 4,
    dim: int = 32,
    gain: float = 0.02,
):
    if backend == "analytic":
        return AnalyticDenoiser(vocabulary, shape, sigma0_sq)
    if backend == "attention":
        return ToyAttentionDenoiser(shape, patch, dim, seed=seed)
    if backend == "hybrid":
        return HybridDenoiser(
            AnalyticDenoiser(vocabulary, shape, sigma0_sq), ToyAttentionDenoiser(shape, patch, dim, seed=seed), gain
        )
    raise InvalidArgument(f"unknown backend {backend!r}; choose from {BACKENDS}")
