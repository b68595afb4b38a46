import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import random_grid
from latentforge.denoiser import (
    AnalyticDenoiser,
    FeatureCache,
    FeatureControl,
    HybridDenoiser,
    ToyAttentionDenoiser,
    analytic_eps,
    embed_prompt,
    make_denoiser,
    null_prompt,
    render_world,
    toy_attention_eps,
)
from latentforge.errors import InjectionMiss, InvalidArgument, PhaseError
from latentforge.grid import LatentGrid, Rng

SMALL = (1, 4, 4)


def test_embed_prompt_deterministic():
    a, b = embed_prompt("a cat"), embed_prompt("a cat")
    assert a.words == ("a", "cat") and len(a) == 2
    assert np.array_equal(a.vectors, b.vectors)
    assert not np.array_equal(embed_prompt("a dog").vectors, a.vectors)
    with pytest.raises(InvalidArgument):
        embed_prompt("")
    assert null_prompt().is_null


def test_render_world_contract():
    w1, w2 = render_world(["cat", "dog", "tree"]), render_world(["cat", "dog", "tree"])
    for word in w1.words:
        assert np.array_equal(w1.means[word], w2.means[word])
        assert np.abs(w1.means[word]).max() <= 1.0
    words = w1.words
    for i in range(len(words)):
        for j in range(i + 1, len(words)):
            assert np.linalg.norm(w1.means[words[i]] - w1.means[words[j]]) > 0.1


def test_eps_zero_at_component_mean(sched):
    world = render_world(["cat"])
    t = 20
    z = LatentGrid(math.sqrt(sched.alpha_cumprod[t]) * world.means["cat"])
    assert np.abs(analytic_eps(z, t, embed_prompt("cat"), world, sched).f64()).max() < 1e-6


def test_eps_is_exact_noise_when_data_is_deterministic(sched):
    world = render_world(["cat"], sigma0_sq=0.0)
    t = 30
    a = sched.alpha_cumprod[t]
    noise = Rng(2).normal(world.shape)
    z = LatentGrid(math.sqrt(a) * world.means["cat"] + math.sqrt(1 - a) * noise)
    eps = analytic_eps(z, t, embed_prompt("cat"), world, sched).f64()
    assert np.abs(eps - (z.f64() - math.sqrt(a) * world.means["cat"]) / math.sqrt(1 - a)).max() < 1e-6


@pytest.mark.parametrize("words", [["cat"], ["cat", "dog"]])
@pytest.mark.parametrize("t", [1, 25, 50])
def test_eps_matches_finite_difference_score(sched, words, t):
    world = render_world(words, SMALL)
    means, weights = world.components(words)
    a = float(sched.alpha_cumprod[t])
    # a point between the two components keeps both responsibilities alive
    z = math.sqrt(a) * means.mean(axis=0) + 0.3 * Rng(t).normal(SMALL)
    z = LatentGrid(z).f64()
    eps = analytic_eps(LatentGrid(z), t, embed_prompt(" ".join(words)), world, sched).f64()
    ref = oracles.fd_eps(z, a, means, weights, world.sigma0_sq)
    assert np.abs(eps - ref).max() <= 1e-4


def test_null_prompt_uses_whole_vocabulary(sched):
    d = AnalyticDenoiser(["cat", "dog"], SMALL)
    z = random_grid(SMALL, 3)
    both = d.predict(z, 10, embed_prompt("cat dog"), sched).eps
    assert d.predict(z, 10, null_prompt(), sched).eps.identical(both)


def test_unknown_word_rejected(sched):
    d = AnalyticDenoiser(["cat"], SMALL)
    with pytest.raises(InvalidArgument):
        d.predict(random_grid(SMALL), 5, embed_prompt("horse"), sched)


@pytest.fixture(scope="module")
def toy():
    return ToyAttentionDenoiser()


def test_maps_are_row_stochastic(toy):
    eps, maps = toy_attention_eps(random_grid(seed=1), 10, embed_prompt("a jumping dog"), backend=toy)
    assert maps.shape == (16, 16, 3)
    assert np.allclose(maps.reshape(256, 3).sum(axis=1), 1.0, atol=1e-5)
    assert eps.shape == (4, 64, 64)


@pytest.mark.parametrize("layers", [("dec",), ("enc", "dec"), ("enc",)])
def test_self_injection_matches_plain(toy, layers):
    z, t, p = random_grid(seed=5), 17, embed_prompt("a cat")
    plain, _ = toy_attention_eps(z, t, p, backend=toy)
    cache = FeatureCache()
    toy_attention_eps(z, t, p, "record", cache, layers, backend=toy)
    cache.freeze()
    replay, _ = toy_attention_eps(z, t, p, "replay", cache, layers, backend=toy)
    assert np.abs(replay.f64() - plain.f64()).max() <= 1e-6


def test_replayed_cross_attention_matches_hand_computation(toy):
    t = 12
    src_prompt, tar_prompt = embed_prompt("a sitting dog"), embed_prompt("a jumping cat here")
    cache = FeatureCache()
    toy.forward(random_grid(seed=20), t, src_prompt, FeatureControl("record", cache))
    cache.freeze()
    k_src, v_src = cache.get(t, "dec")
    out = toy.forward(random_grid(seed=21), t, tar_prompt, FeatureControl("replay", cache))
    dec = out.layers["dec"]
    assert np.abs(dec.out - oracles.attention(dec.q, k_src, v_src)).max() <= 1e-6
    assert out.maps.shape == (16, 16, 3)  # the source tokens, since K came from the source


def test_replay_changes_output(toy):
    t, p = 8, embed_prompt("a jumping dog")
    cache = FeatureCache()
    toy.forward(random_grid(seed=30), t, embed_prompt("a sitting dog"), FeatureControl("record", cache))
    cache.freeze()
    z = random_grid(seed=31)
    plain = toy.forward(z, t, p).layers["dec"].out
    injected = toy.forward(z, t, p, FeatureControl("replay", cache)).layers["dec"].out
    assert not np.allclose(plain, injected)


def test_cache_phases():
    cache = FeatureCache()
    k = np.zeros((2, 4))
    cache.put(1, "dec", k, k)
    with pytest.raises(PhaseError):
        cache.get(1, "dec")
    cache.freeze()
    with pytest.raises(PhaseError):
        cache.put(2, "dec", k, k)
    with pytest.raises(InjectionMiss) as info:
        cache.get(3, "dec")
    assert (info.value.t, info.value.layer) == (3, "dec")
    assert cache.count("dec") == 1 and (1, "dec") in cache


def test_cache_entries_are_copies():
    cache = FeatureCache()
    k = np.ones((2, 2))
    cache.put(1, "dec", k, k)
    k[:] = 5
    cache.freeze()
    assert (cache.get(1, "dec")[0] == 1).all()


def test_feature_control_validation():
    with pytest.raises(InvalidArgument):
        FeatureControl("bogus", FeatureCache())
    with pytest.raises(InvalidArgument):
        FeatureControl("record", FeatureCache(), frozenset({"mid"}))


def test_hybrid_is_analytic_plus_gain(sched):
    d = make_denoiser("hybrid", ["cat"], gain=0.02)
    assert isinstance(d, HybridDenoiser)
    z = random_grid(seed=6)
    p = embed_prompt("cat")
    ref = d.analytic.predict(z, 9, p, sched).eps.f64() + 0.02 * d.attention.forward(z, 9, p).eps.f64()
    assert np.abs(d.predict(z, 9, p, sched).eps.f64() - ref).max() < 1e-6
    with pytest.raises(InvalidArgument):
        make_denoiser("unet", ["cat"])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), t=st.integers(1, 50))
def test_analytic_eps_finite_far_from_data(sched, seed, t):
    world = render_world(["cat", "dog"], SMALL)
    z = LatentGrid(50.0 * Rng(seed).normal(SMALL))
    assert np.isfinite(analytic_eps(z, t, embed_prompt("cat dog"), world, sched).f64()).all()
