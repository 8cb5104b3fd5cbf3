import pytest

from longformer_engine.config import ModelConfig, PhaseBase, PhaseOverride, ScheduleSpec
from longformer_engine.errors import ConfigError
from longformer_engine.schedule import (
    FULL_SCALE_SEQLEN_CAP,
    ablation_presets,
    dilation_by_layer,
    full_scale_model_config,
    full_scale_schedule,
    geometric_windows,
    make_phase_schedule,
    schedule_from_spec,
    total_steps,
)


@pytest.fixture
def base():
    return PhaseBase(seqlen=2048, windows=[32, 8192], lr=2.5e-4, steps=100, batch=32)


def test_each_phase_doubles_and_halves(base):
    schedule = make_phase_schedule(base, 5)
    assert [p.seqlen for p in schedule] == [2048, 4096, 8192, 16384, 32768]
    assert schedule.phases[1].windows == (64, 16384)
    assert schedule.phases[4].lr == pytest.approx(1.5625e-5)
    assert [p.number for p in schedule] == [1, 2, 3, 4, 5]


def test_override_pins_a_phase(base):
    schedule = make_phase_schedule(base, 5, {5: PhaseOverride(seqlen=23040, batch=16)})
    assert schedule.phases[-1].seqlen == 23040
    assert schedule.phases[-1].batch == 16
    assert schedule.phases[-2].batch == 32


def test_later_phases_double_from_the_override(base):
    schedule = make_phase_schedule(base, 3, {2: PhaseOverride(lr=1e-3, windows=[10, 20])})
    assert schedule.phases[2].lr == pytest.approx(5e-4)
    assert schedule.phases[2].half_windows == (10, 20)


def test_shrinking_sequence_is_rejected(base):
    with pytest.raises(ConfigError, match="shorter"):
        make_phase_schedule(base, 3, {2: PhaseOverride(seqlen=1024)})


def test_bad_phase_numbers(base):
    with pytest.raises(ConfigError):
        make_phase_schedule(base, 0)
    with pytest.raises(ConfigError):
        make_phase_schedule(base, 2, {3: PhaseOverride(steps=5)})
    with pytest.raises(ConfigError):
        make_phase_schedule(base, 2, {2: PhaseOverride(half_windows=[4])})


def test_schedule_from_spec_keeps_options():
    spec = ScheduleSpec(
        base={"seqlen": 64, "windows": [8, 16], "lr": 1e-3, "steps": 40},
        phases=2,
        overrides={"2": {"steps": 10}},
        warmup_fraction=0.25,
        lr_schedule="cosine",
    )
    schedule = schedule_from_spec(spec)
    assert schedule.lr_schedule == "cosine"
    assert schedule.warmup_steps(schedule.phases[0]) == 10
    assert total_steps(schedule) == 50


def test_full_scale_layout():
    schedule = full_scale_schedule("small")
    assert schedule.phases[0].seqlen == 2048
    assert schedule.phases[-1].seqlen == FULL_SCALE_SEQLEN_CAP == 23040
    assert schedule.phases[0].windows[0] == 32
    assert schedule.phases[0].windows[-1] == 8192
    cfg = full_scale_model_config("small")
    assert cfg.layers == 12
    assert cfg.patterns[6].heads[0].dilation == 2
    assert cfg.patterns[6].heads[2].dilation == 1
    with pytest.raises(ConfigError):
        full_scale_schedule("medium")


def test_dilation_mapping():
    assert dilation_by_layer(12) == (1, 1, 1, 1, 1, 1, 2, 2, 3, 3, 4, 4)
    assert dilation_by_layer(4) == (1, 1, 2, 3)


def test_geometric_windows_are_even_and_monotone():
    windows = geometric_windows(32, 512, 12)
    assert windows[0] == 32 and windows[-1] == 512
    assert all(w % 2 == 0 for w in windows)
    assert list(windows) == sorted(windows)


def test_ablation_presets():
    presets = ablation_presets()
    assert {"increasing", "fixed", "decreasing", "dilation"} <= set(presets)
    assert presets["decreasing_desk"].windows() == presets["increasing_desk"].windows()[::-1]
    assert presets["fixed"].windows() == (230,) * 12
    assert sum(presets["dilation"].dilated_heads()) == 6 * 2
    cfg = ModelConfig(layers=4, heads=4, d_model=16)
    applied = presets["increasing_desk"].apply(cfg)
    assert applied.half_windows() == tuple(w // 2 for w in presets["increasing_desk"].windows())
    with pytest.raises(ConfigError):
        presets["increasing"].apply(cfg)
