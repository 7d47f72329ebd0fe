import pytest
from hypothesis import given
from hypothesis import strategies as st

from pqdt.harness.config import ConfigError, RunConfig, config_digest, load_config, parse_config
from pqdt.harness.schedule import lr_at
from pqdt.network import DESK, FULL


def ref():
    return dict(lr=1e-4, lr_min=1e-5, warmup=10, total=300)


def test_reference_points():
    assert lr_at(0, **ref()) == pytest.approx(1e-5, rel=1e-12)
    assert lr_at(10, **ref()) == pytest.approx(1e-4, rel=1e-12)
    assert lr_at(300, **ref()) == pytest.approx(1e-5, rel=1e-12)


def test_junction_continuity():
    eps = 1e-9
    left, right = lr_at(10 - eps, **ref()), lr_at(10 + eps, **ref())
    assert abs(left - 1e-4) < 1e-12 and abs(right - 1e-4) < 1e-12


def test_no_warmup_is_pure_cosine():
    assert lr_at(0, 1e-3, 1e-5, 0, 100) == 1e-3
    assert lr_at(50, 1e-3, 1e-5, 0, 100) == pytest.approx(1e-5 + 0.5 * (1e-3 - 1e-5))


def test_out_of_range_rejected():
    with pytest.raises(ValueError, match="epoch"):
        lr_at(301, **ref())
    with pytest.raises(ValueError, match="warmup"):
        lr_at(0, 1e-4, 1e-5, 20, 10)


@given(st.floats(0, 300), st.floats(0, 300))
def test_bounded_and_monotone_after_warmup(a, b):
    lo, hi = sorted((a, b))
    for e in (lo, hi):
        assert 1e-5 - 1e-18 <= lr_at(e, **ref()) <= 1e-4 + 1e-18
    if lo >= 10:
        assert lr_at(lo, **ref()) >= lr_at(hi, **ref())
    if hi <= 10:
        assert lr_at(lo, **ref()) <= lr_at(hi, **ref())


def test_defaults_match_reference_run():
    cfg = RunConfig()
    assert cfg.net == FULL
    assert (cfg.optimizer.lr, cfg.schedule.lr_min, cfg.schedule.warmup_epochs, cfg.schedule.epochs,
            cfg.batch_size) == (1e-4, 1e-5, 10, 300, 32)
    assert cfg.lr_at(0) == pytest.approx(1e-5) and cfg.lr_at(300) == pytest.approx(1e-5)
    assert cfg.anneal_horizon == 300


def test_unknown_keys_rejected_with_path():
    with pytest.raises(ConfigError, match=r"optimizer\.lrr: unknown key"):
        parse_config({"optimizer": {"lrr": 1}})
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config({"bogus": 1})
    with pytest.raises(ConfigError, match="unknown keys"):
        parse_config({"network": {"preset": "desk", "widht": 3}})


def test_invariants_enforced():
    with pytest.raises(ConfigError, match="warmup_epochs"):
        parse_config({"schedule": {"warmup_epochs": 20, "epochs": 10}})
    with pytest.raises(ConfigError, match="lr_min"):
        parse_config({"optimizer": {"lr": 1e-6}})
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config({"schema_version": 2})


def test_strict_types():
    with pytest.raises(ConfigError):
        parse_config({"batch_size": "big"})


def test_json_round_trip(tmp_path):
    cfg = parse_config({"network": {"preset": "desk"}, "seed": 4, "batch_size": 2})
    p = tmp_path / "run.json"
    p.write_text(cfg.to_json())
    assert load_config(p) == cfg
    p.write_text("{oops")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(p)


def test_digest_tracks_network():
    assert config_digest(DESK) == config_digest(parse_config({"network": {"preset": "desk"}}).net)
    assert config_digest(DESK) != config_digest(FULL)
    assert len(config_digest(DESK)) == 64
