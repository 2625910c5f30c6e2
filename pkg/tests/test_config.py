import pytest
from hypothesis import given, settings, strategies as st

from dmfp.config import BASELINE_NAMES, RunConfig, from_dict, load_config, to_toml
from dmfp.errors import ConfigError
from dmfp.fusion import Fallback, Variant


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    p = tmp_path / "c.toml"
    p.write_text(to_toml(cfg))
    back = load_config(p)
    assert back == cfg
    assert back.hash() == cfg.hash()


@settings(max_examples=25, deadline=None)
@given(k_v=st.integers(1, 2000), k_p=st.integers(1, 2000), thr=st.floats(0.01, 0.99),
       fb=st.sampled_from(list(Fallback)), seed=st.integers(0, 2**31),
       names=st.lists(st.sampled_from(BASELINE_NAMES), min_size=1, unique=True))
def test_round_trip_property(tmp_path_factory, k_v, k_p, thr, fb, seed, names):
    cfg = load_config(None, {"neighbors.k_v": k_v, "neighbors.k_p": k_p, "fusion.threshold": thr,
                             "fusion.fallback": fb.value, "split.seed": seed,
                             "baselines.names": names})
    p = tmp_path_factory.mktemp("cfg") / "c.toml"
    p.write_text(to_toml(cfg))
    assert load_config(p) == cfg


def test_unknown_keys_listed(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[train]\nepoch = 3\n[bogus]\nx = 1\n")
    with pytest.raises(ConfigError) as e:
        load_config(p)
    assert sorted(e.value.keys) == ["bogus", "train.epoch"]


@pytest.mark.parametrize("section,key,value", [
    ("neighbors", "k_v", "many"),
    ("fusion", "short_circuit", 1),
    ("fusion", "fallback", "coin_flip"),
    ("baselines", "names", ["oracle"]),
    ("run", "variants", ["dmfp", "nope"]),
])
def test_invalid_values(section, key, value):
    with pytest.raises(ConfigError):
        from_dict({section: {key: value}})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_unparsable(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[train\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_hash_ignores_output_location():
    a = load_config(None, {"run.out": "x"})
    b = load_config(None, {"run.out": "y"})
    c = load_config(None, {"neighbors.k_v": 11})
    assert a.hash() == b.hash() != c.hash()
    assert len(a.hash()) == 64


def test_with_seed():
    cfg = RunConfig().with_seed(9)
    assert cfg.split.seed == cfg.train.seed == 9
    assert cfg.neighbors == RunConfig().neighbors


def test_variant_parsing():
    cfg = from_dict({"run": {"variants": ["dmfp", "no_phi3"]}})
    assert cfg.run.variants == (Variant.DMFP, Variant.NO_PHI3)
