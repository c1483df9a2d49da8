import json

import pytest

from mln.config import PRESETS, ConfigError, EditConfig, coerce, load, loads, preset, with_overrides


def test_defaults_are_the_desk_preset():
    c = EditConfig().validate()
    assert c == preset("desk")
    assert c.K == 8 and c.latent == 16 and c.s == 5 and c.mask_start == 7


def test_all_presets_validate():
    for name, c in PRESETS.items():
        assert c.validate().preset == name


def test_512_analog_values():
    c = preset("paper-512-analog")
    assert (c.K, c.s, c.q, c.k_cut, c.beta, c.cfg_band, c.refine_iterations, c.refine_tau) == \
        (10, 6, 80.0, 7, 12.0, (2, 8), 5, 0.2)
    assert c.mask_start == c.K - 1
    assert c.cfg_band[1] == c.K - 2


def test_1024_analog_exposes_both_fix_scales():
    c = preset("paper-1024-analog")
    assert c.K == 14 and (c.s, c.s_alt) == (8, 10)
    assert (c.refine_iterations, c.refine_tau) == (3, 0.8)
    assert c.cfg_band == (2, 12)


def test_unknown_preset():
    with pytest.raises(ConfigError, match="nope"):
        preset("nope")


def test_round_trip_through_text():
    for c in PRESETS.values():
        assert loads(c.dumps()) == c
    custom = EditConfig(schedule="custom", alphas=(1, 2, 3, 4, 5, 6, 7, 8), mask_layers=(1, 4))
    assert loads(custom.dumps()) == custom


def test_json_flat_and_nested():
    assert loads(json.dumps({"s": 4, "q": 70})).replace(s=5, q=80.0) == EditConfig()
    nested = loads(json.dumps({"edit": {"s": 3}, "mask": {"q": 90}}))
    assert (nested.s, nested.q) == (3, 90.0)
    assert loads(json.dumps(EditConfig().to_json())) == EditConfig()


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match="bogus"):
        loads("[edit]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        loads('{"bogus": 1}')
    with pytest.raises(ConfigError, match="section"):
        loads("[mask]\ns = 2\n")
    with pytest.raises(ConfigError, match="bogus"):
        with_overrides(EditConfig(), ["bogus=3"])


def test_bad_values_and_inconsistent_settings():
    for text in ("[edit]\ns = x\n", "[edit]\ns = 8\n", "[mask]\nq = 100\n", "[nudge]\nk_cut = 0\n",
                 "[nudge]\nschedule = custom\n", "[model]\nimage_size = 60\n", "[edit]\nsampler = beam\n",
                 "not a config"):
        with pytest.raises(ConfigError):
            loads(text)


def test_overrides_win_and_preset_in_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("[run]\npreset = paper-512-analog\n[edit]\ns = 5 # inline comment\n")
    c = load(path)
    assert c.K == 10 and c.s == 5
    c2 = with_overrides(c, ["s=7", "cfg_band=3,7", "beta=none", "refine=false"])
    assert (c2.s, c2.cfg_band, c2.beta, c2.refine) == (7, (3, 7), None, False)
    with pytest.raises(ConfigError):
        with_overrides(c, ["s"])


def test_coerce():
    assert coerce("scales", "1, 2, 4") == (1, 2, 4)
    assert coerce("style", "yes") is True
    assert coerce("beta", None) is None
    with pytest.raises(ConfigError):
        coerce("s", 2.5)
    with pytest.raises(ConfigError):
        coerce("s", None)
