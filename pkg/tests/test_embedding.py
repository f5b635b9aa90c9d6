import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from maskconver.embedding import (generate_mask_embeddings, init_generator, lookup_class_embeddings,
                                  masks_from_embeddings)
from maskconver.numerics import GradTape, Tensor


def test_lookup_rows():
    table = np.eye(4)
    np.testing.assert_array_equal(lookup_class_embeddings(table, [2]).data, [[0, 0, 1, 0]])
    np.testing.assert_array_equal(lookup_class_embeddings(table, [1, 1]).data, [table[1], table[1]])


def test_lookup_gradient_touches_only_used_rows():
    table = Tensor(np.random.default_rng(0).standard_normal((5, 3)), requires_grad=True)
    with GradTape() as tape:
        y = lookup_class_embeddings(table, [1, 3, 1]).sum()
    (g,) = tape.gradient(y, [table])
    np.testing.assert_array_equal(g[[0, 2, 4]], 0)
    np.testing.assert_array_equal(g[1], 2)
    np.testing.assert_array_equal(g[3], 1)


def test_zero_mlp_gives_bias():
    p = init_generator(np.random.default_rng(0), 3, 4, np.float64)
    mlp = p.scope("mlp")
    for t in mlp.values():
        t.data[...] = 0
    mlp["fc2.bias"].data[...] = [1, 2, 3, 4]
    out = generate_mask_embeddings(np.ones((2, 4)), np.ones((2, 4)), mlp)
    np.testing.assert_array_equal(out.data, [[1, 2, 3, 4]] * 2)


def test_empty_input():
    p = init_generator(np.random.default_rng(0), 3, 4)
    assert generate_mask_embeddings(np.zeros((0, 4)), np.zeros((0, 4)), p.scope("mlp")).shape == (0, 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 5), st.integers(0, 5))
def test_class_embeddings_break_collisions(seed, a, b):
    if a == b:
        return
    p = init_generator(np.random.default_rng(0), 6, 16, np.float64)
    center = np.random.default_rng(seed).standard_normal((1, 16))
    both = np.repeat(center, 2, axis=0)
    cls = lookup_class_embeddings(p["class_table"], [a, b])
    emb = generate_mask_embeddings(both, cls, p.scope("mlp")).data
    assert np.linalg.norm(emb[0] - emb[1]) > 1e-6
    plain = generate_mask_embeddings(both, None, p.scope("mlp")).data
    np.testing.assert_array_equal(plain[0], plain[1])


def test_masks_one_hot_and_zero_embedding():
    f = np.random.default_rng(1).standard_normal((1, 3, 4, 4))
    out = masks_from_embeddings(f, np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]), [0, 0]).data
    np.testing.assert_array_equal(out[0], f[0, 1])
    np.testing.assert_array_equal(out[1], 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_masks_linear_in_embeddings(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((2, 5, 3, 3))
    a, b = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
    bi = [0, 1, 1]
    lhs = masks_from_embeddings(f, a + b, bi).data
    rhs = masks_from_embeddings(f, a, bi).data + masks_from_embeddings(f, b, bi).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
