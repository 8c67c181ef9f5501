"""Positional table construction, dual-site addition, and sharing."""

import numpy as np
import pytest

from tmamba.numcore import Tensor, grad_check, mul, silu, tsum
from tmamba.posenc import (
    SharedPositionalEmbedding,
    add_post,
    add_pre,
    init_posenc,
    sinusoidal_init,
)
from tmamba.tim import TimBlock, TimConfig


def table_oracle(length, channels):
    """Literal per-entry evaluation of the sinusoidal formula."""
    out = np.zeros((length, channels))
    for pos in range(length):
        for i in range(0, channels, 2):
            angle = pos / (10000.0 ** (i / channels))
            out[pos, i] = np.sin(angle)
            out[pos, i + 1] = np.cos(angle)
    return out


@pytest.mark.parametrize("length,channels", [(1, 2), (4, 2), (8, 6), (64, 16)])
def test_sinusoidal_matches_oracle(length, channels):
    got = sinusoidal_init(length, channels)
    assert np.allclose(got, table_oracle(length, channels), atol=1e-14)


def test_sinusoidal_first_row_and_column():
    table = sinusoidal_init(16, 8)
    # position 0: sin(0)=0 on even columns, cos(0)=1 on odd columns
    assert np.array_equal(table[0, 0::2], np.zeros(4))
    assert np.array_equal(table[0, 1::2], np.ones(4))
    # column 0 is sin(pos) at unit rate
    assert np.allclose(table[:, 0], np.sin(np.arange(16)), atol=1e-15)


def test_odd_channel_count_rejected():
    with pytest.raises(ValueError):
        sinusoidal_init(8, 5)


def test_add_requires_matching_scale():
    pe = init_posenc(8, 4)
    bad = Tensor(np.zeros((2, 8, 6)))
    with pytest.raises(ValueError):
        add_pre(bad, pe)
    with pytest.raises(ValueError):
        add_post(Tensor(np.zeros((4, 4))), pe)


def test_add_pre_broadcasts_over_batch():
    rng = np.random.default_rng(0)
    pe = init_posenc(5, 4)
    tokens = Tensor(rng.normal(size=(3, 5, 4)))
    out = add_pre(tokens, pe)
    assert np.allclose(out.data, tokens.data + pe.table.data)


def test_shared_table_gradient_is_twice_single_site():
    """With an identity map between the two sites, the shared table sees
    the cotangent twice, so its gradient is exactly 2x the pre-only one."""
    rng = np.random.default_rng(1)
    weights = rng.normal(size=(2, 6, 4))
    tokens_data = rng.normal(size=(2, 6, 4))

    pe_shared = init_posenc(6, 4)
    out = add_post(add_pre(Tensor(tokens_data), pe_shared), pe_shared)
    tsum(mul(out, Tensor(weights))).backward()

    pe_single = init_posenc(6, 4)
    out1 = add_pre(Tensor(tokens_data), pe_single)
    tsum(mul(out1, Tensor(weights))).backward()

    assert np.allclose(pe_shared.table.grad, 2.0 * pe_single.table.grad,
                       atol=1e-12)
    assert np.allclose(pe_single.table.grad, weights.sum(axis=0), atol=1e-12)


def test_shared_table_gradcheck_through_nonlinearity():
    rng = np.random.default_rng(2)
    pe = init_posenc(4, 4)
    tokens = Tensor(rng.normal(size=(4, 4)))

    def fn():
        return tsum(silu(add_post(silu(add_pre(tokens, pe)), pe)))

    assert grad_check(fn, [pe.table]) < 1e-6


def _pe_entries(block, prefix="blk"):
    return [n for n, _ in block.named(prefix) if ".pe" in n]


def test_block_census_one_table_per_scale_when_shared():
    rng = np.random.default_rng(3)
    cfg = TimConfig(channels=4, length=8, state=4, pool=8, pos_mode="shared")
    block = TimBlock(cfg, rng)
    assert _pe_entries(block) == ["blk.pe.table"]
    assert block.pe_pre is block.pe_post


def test_block_census_two_tables_when_unshared():
    rng = np.random.default_rng(4)
    cfg = TimConfig(channels=4, length=8, state=4, pool=8, pos_mode="unshared")
    block = TimBlock(cfg, rng)
    assert _pe_entries(block) == ["blk.pe_pre.table", "blk.pe_post.table"]
    assert block.pe_pre is not block.pe_post


def test_unshared_minus_shared_param_count_is_table_size():
    def count(mode):
        rng = np.random.default_rng(5)
        cfg = TimConfig(channels=4, length=8, state=4, pool=8, pos_mode=mode)
        return sum(t.data.size for _, t in TimBlock(cfg, rng).named("b"))

    assert count("unshared") - count("shared") == 8 * 4


def test_pos_mode_none_has_no_tables():
    rng = np.random.default_rng(6)
    cfg = TimConfig(channels=4, length=8, state=4, pool=8, pos_mode="none")
    block = TimBlock(cfg, rng)
    assert _pe_entries(block) == []
    assert block.pe_pre is None and block.pe_post is None


def test_invalid_pos_mode_rejected():
    with pytest.raises(ValueError):
        TimConfig(channels=4, length=8, pos_mode="both")
