import math
import pytest
import torch

from mcsae import tensor as T
from mcsae.errors import DimensionError
from mcsae.models import (
  McsaeStage,
  SapHead,
  build_attention_matrix,
  concat_embedding,
  cross_branch,
  sap_pool,
  sap_weights,
  scaled_dot_attention,
  transform_layer,
)


def randn(*shape, seed=0):
  return torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=T.DTYPE)


def test_scaled_dot_attention_single_key_returns_value():
  q, k, v = randn(1, 4), randn(1, 4, seed=1), randn(1, 4, seed=2)
  torch.testing.assert_close(scaled_dot_attention(q, k, v), v)


def test_scaled_dot_attention_zero_query_averages_values():
  v = randn(3, 4, seed=2)
  out = scaled_dot_attention(torch.zeros(3, 4, dtype=T.DTYPE), randn(3, 4, seed=1), v)
  torch.testing.assert_close(out, v.mean(dim=0, keepdim=True).expand(3, 4))


def test_scaled_dot_attention_matches_two_step_oracle():
  q, k, v = randn(3, 4), randn(3, 4, seed=1), randn(3, 4, seed=2)
  scores = (q @ k.T) / 2.
  weights = scores.exp() / scores.exp().sum(dim=1, keepdim=True)
  torch.testing.assert_close(scaled_dot_attention(q, k, v), weights @ v)


def test_sap_weights_analytic_case():
  h = T.tensor([[0.], [math.log(3)]])
  w = sap_weights(h, T.tensor([1.]))
  torch.testing.assert_close(w, T.tensor([0.25, 0.75]))


def test_sap_weights_uniform_and_shift_invariant():
  h = randn(1, 4).expand(5, 4)
  torch.testing.assert_close(sap_weights(h, randn(4, seed=1)), torch.full((5,), 0.2, dtype=T.DTYPE))

  h, u = randn(6, 4), randn(4, seed=1)
  w = sap_weights(h, u)
  assert w.sum().item() == pytest.approx(1., abs=1e-9)
  assert bool((w > 0).all())
  # Adding a multiple of u to every frame adds the same constant to every score.
  torch.testing.assert_close(sap_weights(h + 3. * u, u), w)


def test_sap_pool_one_hot_and_uniform():
  x = randn(5, 3)
  one_hot = torch.zeros(5, dtype=T.DTYPE)
  one_hot[2] = 1.
  torch.testing.assert_close(sap_pool(x, one_hot), x[2])
  torch.testing.assert_close(sap_pool(x, torch.full((5,), 0.2, dtype=T.DTYPE)), x.mean(dim=0))


def test_sap_head_pools_batches():
  head = SapHead(6).to(T.DTYPE)
  out = head(randn(2, 9, 6))
  assert out.shape == (2, 6)
  with pytest.raises(DimensionError):
    head(randn(2, 9, 5))


def test_transform_layer_identity_and_affine():
  p = randn(1, 8)
  one, zero = T.tensor(1.), T.tensor(0.)
  torch.testing.assert_close(transform_layer(p, one, zero, 0.01), torch.nn.functional.leaky_relu(p, 0.01))
  positive = p.abs() + 1.
  torch.testing.assert_close(transform_layer(positive, T.tensor(2.), T.tensor(0.5), 0.2), 2. * positive + 0.5)


def test_cross_branch_shapes_and_trivial_cases():
  assert cross_branch(randn(1, 32), randn(1, 64, seed=1)).shape == (1, 32, 1)

  kv = randn(2, 5, seed=1)
  out = cross_branch(torch.zeros(2, 3, dtype=T.DTYPE), kv)
  torch.testing.assert_close(out, kv.mean(dim=-1, keepdim=True).unsqueeze(-1).expand(2, 3, 1))

  single = cross_branch(T.tensor([[2.]]), T.tensor([[-0.7]]))
  torch.testing.assert_close(single, T.tensor([[[-0.7]]]))


def test_cross_branch_is_a_convex_combination():
  q, kv = randn(4, 7) * 10, randn(4, 9, seed=1)
  out = cross_branch(q, kv).squeeze(-1)
  assert bool((out >= kv.min(dim=-1, keepdim=True).values - 1e-12).all())
  assert bool((out <= kv.max(dim=-1, keepdim=True).values + 1e-12).all())


@pytest.mark.parametrize('d_in, d_out', [(32, 32), (64, 128)])
def test_mcsae_stage_emits_rank_one_segments(d_in, d_out):
  stage = McsaeStage(d_in, d_out, slope=0.01).eval()
  z, (branch1, branch2) = stage(randn(2, d_in), randn(2, d_out, seed=1))
  assert z.shape == (2, d_in, d_out)
  assert branch1.shape == (2, d_in, 1) and branch2.shape == (2, d_out, 1)
  s = torch.linalg.svdvals(z)
  assert bool((s[:, 1] <= 1e-8 * s[:, 0]).all())


def test_mcsae_stage_names_itself_on_mismatch():
  stage = McsaeStage(4, 8, slope=0.01, index=3)
  with pytest.raises(DimensionError, match='McsaeStage 3'):
    stage(randn(1, 4), randn(1, 4))


def test_mcsae_stage_is_deterministic_in_eval_mode():
  stage = McsaeStage(4, 8, slope=0.01).eval()
  a, b = randn(1, 4), randn(1, 8, seed=1)
  assert torch.equal(stage(a, b)[0], stage(a, b)[0])


def test_build_attention_matrix_full_scale_chain():
  dims = [32, 32, 64, 128, 256]
  segments = [randn(1, dims[i], dims[i + 1], seed=i) for i in range(4)]
  assert build_attention_matrix(randn(1, 32), segments).shape == (1, 256)


def test_build_attention_matrix_routes_through_selectors():
  p1 = randn(1, 3)
  segments = [torch.eye(3, 4, dtype=T.DTYPE).unsqueeze(0), torch.eye(4, 5, dtype=T.DTYPE).unsqueeze(0)]
  Z = build_attention_matrix(p1, segments)
  torch.testing.assert_close(Z, torch.cat([p1, torch.zeros(1, 2, dtype=T.DTYPE)], dim=-1))


def test_build_attention_matrix_names_broken_link():
  segments = [randn(1, 3, 4), randn(1, 5, 6, seed=1)]
  with pytest.raises(DimensionError, match='link 2'):
    build_attention_matrix(randn(1, 3), segments)


def test_attention_matrix_is_collinear_with_last_branch():
  dims = [4, 4, 8, 16, 32]
  stages = [McsaeStage(dims[i], dims[i + 1], 0.01, index=i + 1).eval() for i in range(4)]
  P = [randn(1, d, seed=i) for i, d in enumerate(dims)]
  outs = [stage(P[i], P[i + 1]) for i, stage in enumerate(stages)]
  Z = build_attention_matrix(P[0], [z for z, _ in outs])[0]
  last = outs[-1][1][1][0, :, 0]
  cos = (Z @ last).abs() / (Z.norm() * last.norm())
  assert cos.item() >= 1 - 1e-9


def test_concat_embedding_slices_back():
  Z, p5 = randn(1, 256), randn(1, 256, seed=1)
  C = concat_embedding(Z, p5)
  assert C.shape == (1, 512)
  assert torch.equal(C[:, :256], Z) and torch.equal(C[:, 256:], p5)
  assert torch.equal(concat_embedding(torch.zeros(1, 4, dtype=T.DTYPE), randn(1, 4))[:, :4], torch.zeros(1, 4, dtype=T.DTYPE))


def test_attention_matrix_is_bounded_by_its_first_tap():
  dims = [4, 4, 8, 16, 32]
  stages = [McsaeStage(dims[i], dims[i + 1], 0.01, index=i + 1).eval() for i in range(4)]
  P = [1e3 * randn(3, d, seed=i).abs() for i, d in enumerate(dims)]
  segments = [stage(P[i], P[i + 1])[0] for i, stage in enumerate(stages)]
  for z in segments:
    torch.testing.assert_close(torch.linalg.matrix_norm(z, ord=2), torch.ones(3, dtype=T.DTYPE))
  Z = build_attention_matrix(P[0], segments)
  assert bool((Z.norm(dim=-1) <= P[0].norm(dim=-1) * (1 + 1e-9)).all())
