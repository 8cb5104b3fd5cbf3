import numpy as np
import pytest
from pydantic import ValidationError

from longformer_engine.band_pattern import (
    HeadWindow,
    LayerPattern,
    PatternConfig,
    ReceptiveFieldReport,
    band_indices,
    nonzero_count,
    pattern_matrix,
    receptive_field,
    render_pattern,
    row_counts,
)
from longformer_engine.errors import DataError, RenderGuardError, UsageError


def brute_force_count(cfg):
    return sum(len(band_indices(cfg, i)) for i in range(cfg.n))


@pytest.mark.parametrize(
    "cfg, i, expected",
    [
        (PatternConfig(n=8, half_window=2), 0, [0, 1, 2]),
        (PatternConfig(n=8, half_window=2), 3, [1, 2, 3, 4, 5]),
        (PatternConfig(n=6, half_window=2, dilation=2, mode="causal"), 5, [1, 3, 5]),
        (PatternConfig(n=6, half_window=2, dilation=2, mode="causal"), 2, [0, 2]),
    ],
)
def test_band_indices(cfg, i, expected):
    assert band_indices(cfg, i) == expected


def test_band_indices_out_of_range():
    with pytest.raises(DataError):
        band_indices(PatternConfig(n=4, half_window=1), 4)


def test_window_and_half_window_are_interchangeable():
    assert PatternConfig(n=8, window=4) == PatternConfig(n=8, half_window=2)
    assert HeadWindow(window=6).half_window == 3
    with pytest.raises(ValidationError):
        PatternConfig(n=8, window=3)


def test_global_positions_must_lie_inside_sequence():
    with pytest.raises(ValidationError):
        PatternConfig(n=4, global_positions=(4,))
    assert PatternConfig(n=8, global_positions=(5, 0, 5)).global_positions == (0, 5)


def test_nonzero_count_examples():
    assert nonzero_count(PatternConfig(n=8, half_window=2)) == 34
    assert nonzero_count(PatternConfig(n=8, half_window=8)) == 64
    ratio = nonzero_count(PatternConfig(n=1024, half_window=32)) / nonzero_count(PatternConfig(n=512, half_window=32))
    assert 1.97 <= ratio <= 2.0


@pytest.mark.parametrize("mode", ["bidirectional", "causal"])
@pytest.mark.parametrize("n, h, d, globals_", [(17, 3, 1, ()), (20, 2, 3, (0,)), (12, 4, 2, (0, 11)), (9, 0, 1, (4,))])
def test_closed_form_counts_match_enumeration(mode, n, h, d, globals_):
    cfg = PatternConfig(n=n, half_window=h, dilation=d, mode=mode, global_positions=globals_)
    assert nonzero_count(cfg) == brute_force_count(cfg)
    assert row_counts(cfg).tolist() == [len(band_indices(cfg, i)) for i in range(n)]


def test_count_is_linear_beyond_the_boundary_regime():
    h = 3
    counts = [nonzero_count(PatternConfig(n=n, half_window=h)) for n in range(2 * h + 1, 40)]
    assert set(np.diff(counts).tolist()) == {2 * h + 1}


def test_bidirectional_pattern_is_symmetric():
    m = pattern_matrix(PatternConfig(n=30, half_window=3, dilation=2))
    assert (m == m.T).all()


def test_causal_pattern_never_looks_ahead():
    cfg = PatternConfig(n=25, half_window=4, dilation=2, mode="causal", global_positions=(3, 10))
    assert all(max(band_indices(cfg, i)) <= i for i in range(cfg.n))
    assert (np.triu(pattern_matrix(cfg), k=1) == 0).all()


def test_global_tokens_see_and_are_seen_by_everyone():
    cfg = PatternConfig(n=16, half_window=1, global_positions=(0, 9))
    for g in cfg.global_positions:
        assert len(band_indices(cfg, g)) == cfg.n
        assert all(g in band_indices(cfg, i) for i in range(cfg.n))
    m = pattern_matrix(cfg)
    assert m[0].all() and m[:, 0].all()


def test_receptive_field_examples():
    assert receptive_field([(256, 1)] * 12).theoretical_width == 6145
    report = receptive_field([(2, 3), (2, 3)])
    assert report.half_width == 12 and report.theoretical_width == 25
    assert receptive_field([HeadWindow(half_window=2, dilation=3)], mode="causal").theoretical_width == 7
    with pytest.raises(UsageError):
        receptive_field([])


def test_empirical_width_cannot_exceed_theory():
    with pytest.raises(ValidationError):
        ReceptiveFieldReport(layers=1, half_width=2, theoretical_width=5, empirical_width=6)


def test_render_full_and_tridiagonal(tmp_path):
    full = render_pattern(PatternConfig(n=5, half_window=5))
    assert full.all()
    tri = render_pattern(PatternConfig(n=4, half_window=1), tmp_path / "tri.pgm")
    expected = np.eye(4, dtype=np.uint8) + np.eye(4, k=1, dtype=np.uint8) + np.eye(4, k=-1, dtype=np.uint8)
    assert (tri == expected).all()
    text = (tmp_path / "tri.pgm").read_text().splitlines()
    assert text[:3] == ["P2", "4 4", "1"]
    assert text[3] == "1 1 0 0"


def test_render_csv_and_streaming_csv_agree(tmp_path):
    cfg = PatternConfig(n=12, half_window=2, global_positions=(0,))
    render_pattern(cfg, tmp_path / "dense.csv")
    render_pattern(cfg, tmp_path / "stream.csv", csv_only=True)
    assert (tmp_path / "dense.csv").read_text() == (tmp_path / "stream.csv").read_text()


def test_render_guard(tmp_path):
    with pytest.raises(RenderGuardError) as info:
        render_pattern(PatternConfig(n=4097, half_window=1))
    assert "CSV" in str(info.value)
    with pytest.raises(UsageError):
        render_pattern(PatternConfig(n=4, half_window=1), tmp_path / "pattern.png")


def test_for_layer_and_for_head_resolve_overrides():
    layer = LayerPattern(half_window=4, heads=(HeadWindow(half_window=4, dilation=2), HeadWindow(half_window=1)))
    cfg = PatternConfig(n=32, half_window=1, per_layer=(LayerPattern(half_window=1), layer))
    resolved = cfg.for_layer(1)
    assert resolved.half_window == 4 and resolved.per_layer is None
    head0 = resolved.for_head(0)
    assert (head0.half_window, head0.dilation, head0.per_head) == (4, 2, None)
    assert resolved.for_head(1).half_window == 1
    assert cfg.for_layer(0).for_head(1).half_window == 1
