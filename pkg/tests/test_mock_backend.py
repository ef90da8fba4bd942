import numpy as np
import pytest

from concepttree import (
    BackendBatch,
    ConceptSpace,
    MockBackend,
    TokenDictionary,
    noise_latent,
)
from concepttree.backend import (
    BackendError,
    DecodeError,
    NotTrainableError,
    PromptResolutionError,
)
from concepttree.core import ConfigError, ImageRef, ImageSource
from concepttree.mock import _interleave, _proportional_counts

from conftest import vector_set


def make_backend(dim=4, specialization=0.0, atoms=None, sigma_gen=0.05):
    space = ConceptSpace(
        dimension=dim,
        sigma_gen=sigma_gen,
        specialization=specialization,
        words={"object": np.full(dim, 0.5), "photo": np.zeros(dim)},
        atoms=atoms or {},
    )
    return MockBackend(space)


def batch_of(latents, prompt, timesteps=None):
    latents = np.asarray(latents, dtype=np.float64)
    n = latents.shape[0]
    return BackendBatch(
        latents=latents,
        timesteps=tuple(timesteps or [1] * n),
        noises=np.zeros_like(latents),
        prompt=prompt,
    )


def loss_at(backend, batch, dictionary, tokens):
    return backend.loss_and_gradient(batch, dictionary, tokens).loss


def reference_loss(tokens, latents, mix):
    """Quadratic surrogate evaluated without the backend: for the unit
    signal/noise ratio schedule the loss is mean_b ||cond_b - z_b||^2."""
    mean_vec = np.mean(tokens, axis=0)
    total = 0.0
    for b, z in enumerate(latents):
        if mix > 0.0 and len(tokens) >= 2:
            dists = [np.linalg.norm(v - z) for v in tokens]
            lo = min(dists)
            tied = [j for j, d in enumerate(dists) if d == lo]
            cond = (1 - mix) * mean_vec + mix * tokens[tied[b % len(tied)]]
        else:
            cond = mean_vec
        total += float((cond - z) @ (cond - z))
    return total / len(latents)


def test_schedule_has_unit_signal_noise_ratio():
    backend = make_backend()
    sched = backend.schedule
    assert sched.total_steps == 1000
    np.testing.assert_allclose(sched.alpha_bar / sched.sigma, 1.0, atol=1e-15)
    np.testing.assert_allclose(sched.alpha_bar, 1 / np.sqrt(2), atol=1e-15)


def test_noise_latent_recomputes_forward_process():
    backend = make_backend(dim=3)
    sched = backend.schedule
    rng = np.random.default_rng(0)
    z = rng.standard_normal(3)
    eps = rng.standard_normal(3)
    for t in (1, 500, 1000):
        expected = sched.alpha_bar[t - 1] * z + sched.sigma[t - 1] * eps
        np.testing.assert_allclose(noise_latent(z, t, eps, sched), expected, atol=1e-12)
    with pytest.raises(BackendError):
        noise_latent(z, 0, eps, sched)
    with pytest.raises(BackendError):
        noise_latent(z, 1001, eps, sched)
    with pytest.raises(BackendError):
        noise_latent(z, 1, eps[:2], sched)


def test_encode_and_embed_are_identity_on_concept_vectors():
    backend = make_backend(dim=4)
    vec = np.array([0.25, -1.0, 3.0, 0.125], dtype=np.float32)
    ref = ImageRef(image_id="a", payload=vec, source=ImageSource.USER)
    np.testing.assert_array_equal(backend.encode_image(ref), vec.astype(np.float64))
    embedded = backend.embed_image(ref)
    assert embedded.dtype == np.float32
    np.testing.assert_array_equal(embedded, vec)


def test_decode_rejects_garbage_payloads():
    backend = make_backend(dim=4)
    bad_dim = ImageRef(image_id="b", payload=np.ones(3, dtype=np.float32), source=ImageSource.USER)
    with pytest.raises(DecodeError):
        backend.encode_image(bad_dim)
    nan = ImageRef(
        image_id="c",
        payload=np.array([1.0, np.nan, 0.0, 0.0], dtype=np.float32),
        source=ImageSource.USER,
    )
    with pytest.raises(DecodeError):
        backend.encode_image(nan)
    blob = ImageRef(image_id="d", payload=b"\x89PNG....", source=ImageSource.USER)
    with pytest.raises(DecodeError):
        backend.encode_image(blob)


def test_prompt_conditioning_is_mean_of_resolvable_words():
    backend = make_backend(dim=4)
    dictionary = TokenDictionary(4, backend.base_vocabulary()).extend(["<t_v1>"], "object")
    dictionary = dictionary.update_embedding("<t_v1>", np.array([1.0, 0, 0, 0]))
    cond = backend.prompt_conditioning("A picture of <t_v1> photo", dictionary)
    np.testing.assert_allclose(cond, np.array([0.5, 0, 0, 0]))
    with pytest.raises(PromptResolutionError):
        backend.prompt_conditioning("totally unknown words", dictionary)


def test_injected_tokens_shadow_nothing_but_win_resolution():
    backend = make_backend(dim=2)
    detached = TokenDictionary(2, base=None, injected={"tok": np.array([2.0, 0.0])})
    cond = backend.prompt_conditioning("object tok", detached)
    np.testing.assert_allclose(cond, np.array([1.25, 0.25]))


def test_loss_matches_closed_form_single_token():
    # one prompt token: cond = v, loss = mean_b ||v - z_b||^2 and the
    # gradient is 2 (v - mean z)
    backend = make_backend(dim=2)
    dictionary = TokenDictionary(2, backend.base_vocabulary()).extend(["tok"], "object")
    v = np.array([1.0, -0.5])
    dictionary = dictionary.update_embedding("tok", v)
    latents = np.array([[0.0, 0.0], [2.0, 1.0], [1.0, 1.0]])
    batch = batch_of(latents, "tok", timesteps=[1, 17, 1000])
    result = backend.loss_and_gradient(batch, dictionary, ["tok"])
    expected_loss = np.mean([np.sum((v - z) ** 2) for z in latents])
    assert result.loss == pytest.approx(expected_loss, rel=1e-12)
    expected_grad = 2.0 * (v - latents.mean(axis=0))
    np.testing.assert_allclose(result.gradients["tok"], expected_grad, atol=1e-12)


def test_loss_matches_closed_form_token_pair_mean_mode():
    backend = make_backend(dim=2, specialization=0.0)
    dictionary = TokenDictionary(2, backend.base_vocabulary()).extend(["ta", "tb"], "object")
    va, vb = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    dictionary = dictionary.update_embedding("ta", va).update_embedding("tb", vb)
    latents = np.array([[0.25, 0.25], [1.0, 1.0]])
    batch = batch_of(latents, "ta tb")
    result = backend.loss_and_gradient(batch, dictionary, ["ta", "tb"])
    mean_vec = (va + vb) / 2
    expected_loss = np.mean([np.sum((mean_vec - z) ** 2) for z in latents])
    assert result.loss == pytest.approx(expected_loss, rel=1e-12)
    shared = np.mean([mean_vec - z for z in latents], axis=0)
    np.testing.assert_allclose(result.gradients["ta"], shared, atol=1e-12)
    np.testing.assert_allclose(result.gradients["tb"], shared, atol=1e-12)


def test_specialization_routes_items_to_nearest_token():
    backend = make_backend(dim=2, specialization=0.8)
    dictionary = TokenDictionary(2, backend.base_vocabulary()).extend(["ta", "tb"], "object")
    va, vb = np.array([1.0, 0.0]), np.array([-1.0, 0.0])
    dictionary = dictionary.update_embedding("ta", va).update_embedding("tb", vb)
    latents = np.array([[2.0, 0.0], [-2.0, 0.0]])
    batch = batch_of(latents, "ta tb")
    result = backend.loss_and_gradient(batch, dictionary, ["ta", "tb"])
    expected = reference_loss([va, vb], latents, mix=0.8)
    assert result.loss == pytest.approx(expected, rel=1e-12)
    # item 0 is assigned to ta only, so ta feels the strong pull toward z_0
    assert result.gradients["ta"][0] < 0
    assert result.gradients["tb"][0] > 0


def test_tied_assignment_alternates_over_batch_position():
    backend = make_backend(dim=2, specialization=0.8)
    dictionary = TokenDictionary(2, backend.base_vocabulary()).extend(["ta", "tb"], "object")
    # identical embeddings: every item ties, so assignment alternates and the
    # two gradients differ whenever the latents differ
    latents = np.array([[1.0, 0.0], [-1.0, 0.0]])
    batch = batch_of(latents, "ta tb")
    result = backend.loss_and_gradient(batch, dictionary, ["ta", "tb"])
    ga, gb = result.gradients["ta"], result.gradients["tb"]
    assert not np.allclose(ga, gb)
    expected = reference_loss(
        [np.full(2, 0.5), np.full(2, 0.5)], latents, mix=0.8
    )
    assert result.loss == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("specialization", [0.0, 0.8])
def test_gradient_matches_central_difference(specialization):
    # the loss is piecewise quadratic in the token embeddings, so a central
    # difference is exact up to float rounding away from assignment
    # boundaries; embeddings and h are chosen exactly representable in
    # float32 so the dictionary round trip adds no error
    h = 2.0 ** -6
    backend = make_backend(dim=3, specialization=specialization)
    dictionary = TokenDictionary(3, backend.base_vocabulary()).extend(["ta", "tb"], "object")
    va = np.array([1.0, 0.25, -0.5])
    vb = np.array([-1.0, 0.5, 0.125])
    dictionary = dictionary.update_embedding("ta", va).update_embedding("tb", vb)
    latents = np.array([[1.5, 0.5, -0.25], [-1.25, 0.75, 0.0], [1.0, 0.0, 0.0]])
    batch = batch_of(latents, "ta tb", timesteps=[3, 500, 997])
    grads = backend.loss_and_gradient(batch, dictionary, ["ta", "tb"]).gradients
    for token in ("ta", "tb"):
        v = dictionary.injected[token].astype(np.float64)
        fd = np.zeros(3)
        for i in range(3):
            bump = np.zeros(3)
            bump[i] = h
            up = dictionary.update_embedding(token, v + bump)
            down = dictionary.update_embedding(token, v - bump)
            fd[i] = (loss_at(backend, batch, up, [token]) - loss_at(backend, batch, down, [token])) / (2 * h)
        scale = max(np.linalg.norm(grads[token]), 1e-12)
        assert np.linalg.norm(grads[token] - fd) / scale < 1e-5


def test_gradients_keyed_by_trainable_and_zero_off_prompt():
    backend = make_backend(dim=2)
    dictionary = TokenDictionary(2, backend.base_vocabulary()).extend(["ta", "tb"], "object")
    batch = batch_of(np.ones((2, 2)), "ta")
    result = backend.loss_and_gradient(batch, dictionary, ["ta", "tb"])
    assert set(result.gradients) == {"ta", "tb"}
    np.testing.assert_array_equal(result.gradients["tb"], np.zeros(2))
    with pytest.raises(NotTrainableError):
        backend.loss_and_gradient(batch, dictionary, ["object"])
    with pytest.raises(NotTrainableError):
        backend.loss_and_gradient(batch, dictionary, ["ghost"])


def test_proportional_counts_largest_remainder():
    assert _proportional_counts(40, 2) == [20, 20]
    assert _proportional_counts(7, 2) == [4, 3]
    assert _proportional_counts(10, 3) == [4, 3, 3]
    assert _proportional_counts(2, 3) == [1, 1, 0]


def test_interleave_tracks_proportions_in_every_prefix():
    for counts in ([3, 2], [4, 3, 3], [1, 1], [5, 0], [2, 1, 1]):
        order = _interleave(counts)
        assert len(order) == sum(counts)
        for j, c in enumerate(counts):
            assert order.count(j) == c
        total = sum(counts)
        for pos in range(1, total + 1):
            for j, c in enumerate(counts):
                seen = order[:pos].count(j)
                assert abs(seen - c * pos / total) <= 1.0


def test_generation_without_atoms_samples_around_conditioning():
    backend = make_backend(dim=4, sigma_gen=0.05)
    dictionary = TokenDictionary(4, backend.base_vocabulary())
    images = backend.generate("object", dictionary, seed=11, count=400)
    assert len(images) == 400
    pts = np.stack([img.payload for img in images]).astype(np.float64)
    se = 0.05 / np.sqrt(400)
    np.testing.assert_allclose(pts.mean(axis=0), np.full(4, 0.5), atol=3 * se * 1.5)
    assert pts.std(axis=0).mean() == pytest.approx(0.05, rel=0.15)
    assert images.cached_embeddings is not None
    np.testing.assert_array_equal(images.cached_embeddings, pts.astype(np.float32))


def test_generation_splits_over_contained_atoms_exactly():
    dim = 4
    e0, e1, e2 = np.eye(dim)[0], np.eye(dim)[1], np.eye(dim)[2]
    atoms = {"a": e0 + 0.4 * e2, "b": e0 - 0.4 * e2, "far": 5.0 * e1}
    space = ConceptSpace(
        dimension=dim,
        sigma_gen=0.01,
        words={"object": e0},
        atoms=atoms,
    )
    backend = MockBackend(space)
    dictionary = TokenDictionary(dim, backend.base_vocabulary())
    images = backend.generate("object", dictionary, seed=5, count=7)
    pts = np.stack([img.payload for img in images]).astype(np.float64)
    names = list(atoms)
    nearest = [
        names[int(np.argmin([np.linalg.norm(p - atoms[a]) for a in names]))]
        for p in pts
    ]
    # conditioning e0 is within radius 0.9 of both near atoms but not the far
    # one; 7 draws split 4/3 in declaration order
    assert nearest.count("a") == 4
    assert nearest.count("b") == 3
    assert nearest.count("far") == 0


def test_generation_falls_back_to_nearest_atom():
    dim = 2
    space = ConceptSpace(
        dimension=dim,
        sigma_gen=0.001,
        containment_radius=0.5,
        words={"object": np.zeros(dim)},
        atoms={"near": np.array([1.0, 0.0]), "far": np.array([4.0, 0.0])},
    )
    backend = MockBackend(space)
    dictionary = TokenDictionary(dim, backend.base_vocabulary())
    images = backend.generate("object", dictionary, seed=1, count=6)
    pts = np.stack([img.payload for img in images])
    np.testing.assert_allclose(pts, np.tile([1.0, 0.0], (6, 1)), atol=0.01)


def test_generation_is_seed_deterministic():
    backend = make_backend(dim=4)
    dictionary = TokenDictionary(4, backend.base_vocabulary())
    a = backend.generate("object", dictionary, seed=3, count=5)
    b = backend.generate("object", dictionary, seed=3, count=5)
    c = backend.generate("object", dictionary, seed=4, count=5)
    assert [i.image_id for i in a] == [i.image_id for i in b]
    np.testing.assert_array_equal(a.cached_embeddings, b.cached_embeddings)
    assert not np.array_equal(a.cached_embeddings, c.cached_embeddings)
    for img in a:
        assert img.source == ImageSource.GENERATED
        assert img.seed == 3 and img.prompt == "object"
    with pytest.raises(BackendError):
        backend.generate("object", dictionary, seed=0, count=0)


def test_vocabulary_checksum_tracks_space_not_dictionary():
    backend = make_backend(dim=4)
    again = make_backend(dim=4)
    assert backend.vocabulary_checksum() == again.vocabulary_checksum()
    other = make_backend(dim=4, specialization=0.3)
    assert backend.vocabulary_checksum() != other.vocabulary_checksum()
    # resolving or training injected tokens never touches the base layer
    checksum = backend.vocabulary_checksum()
    dictionary = TokenDictionary(4, backend.base_vocabulary()).extend(["tok"], "object")
    batch = batch_of(np.ones((2, 4)), "tok")
    backend.loss_and_gradient(batch, dictionary, ["tok"])
    assert backend.vocabulary_checksum() == checksum


def test_base_vocabulary_is_frozen():
    backend = make_backend(dim=4)
    base = backend.base_vocabulary()
    with pytest.raises(TypeError):
        base["new"] = np.zeros(4)
    with pytest.raises(ValueError):
        base["object"][0] = 9.0


def test_concept_space_json_round_trip(tmp_path):
    space = ConceptSpace(
        dimension=3,
        sigma_gen=0.02,
        specialization=0.5,
        containment_radius=1.2,
        words={"object": np.array([1.0, 0, 0])},
        atoms={"a": np.array([0, 1.0, 0])},
    )
    path = tmp_path / "space.json"
    space.to_file(path)
    loaded = ConceptSpace.from_file(path)
    assert loaded.dimension == 3
    assert loaded.sigma_gen == 0.02
    assert loaded.specialization == 0.5
    np.testing.assert_array_equal(loaded.words["object"], space.words["object"])
    np.testing.assert_array_equal(loaded.atoms["a"], space.atoms["a"])
    with pytest.raises(ConfigError):
        ConceptSpace.from_json({"sigma_gen": 0.1})


def test_concept_space_validation():
    with pytest.raises(ConfigError):
        ConceptSpace(dimension=0)
    with pytest.raises(ConfigError):
        ConceptSpace(dimension=2, sigma_gen=-1.0)
    with pytest.raises(ConfigError):
        ConceptSpace(dimension=2, specialization=1.5)
    with pytest.raises(ConfigError):
        ConceptSpace(dimension=2, containment_radius=0.0)


def test_batch_validation():
    with pytest.raises(BackendError):
        BackendBatch(latents=np.ones(3), timesteps=(1,), noises=np.ones(3), prompt="p")
    with pytest.raises(BackendError):
        BackendBatch(
            latents=np.ones((2, 3)), timesteps=(1,), noises=np.ones((2, 3)), prompt="p"
        )
    with pytest.raises(BackendError):
        BackendBatch(
            latents=np.ones((2, 3)), timesteps=(1, 2), noises=np.ones((2, 3)), prompt=""
        )


def test_vector_set_helper_round_trips(two_cluster):
    space, backend, images = two_cluster
    assert len(images) == 10
    replayed = vector_set(np.stack([backend.encode_image(i) for i in images]))
    assert len(replayed) == 10
