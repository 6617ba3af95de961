import pytest

from pkgrec.config import ConfigError, RunConfig, format_config, parse_config_text


def test_defaults():
    cfg = parse_config_text("")
    assert cfg == RunConfig()
    assert cfg.dim == 32 and cfg.m_layers == 3 and cfg.k_hops == 2


def test_parse_types_and_comments():
    text = """
    # planted-block run
    num_items = 120
    p_in = 0.25        # within-block density
    mra_mse = true
    epochs = 10
    """
    cfg = parse_config_text(text)
    assert cfg.num_items == 120
    assert cfg.p_in == 0.25
    assert cfg.mra_mse is True
    assert cfg.epochs == 10
    assert cfg.p_out == 0.01  # untouched default


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key 'learning_rate'"):
        parse_config_text("learning_rate = 0.1")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("dim = 8\ndim = 16")


def test_bad_value_rejected():
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config_text("dim = eight")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config_text("mra_mse = maybe")


def test_missing_equals_rejected():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        parse_config_text("dim 8")


def test_round_trip_through_format():
    cfg = RunConfig(num_items=77, lr=0.125, mra_mse=True)
    again = parse_config_text(format_config(cfg))
    assert again == cfg


def test_extractors_carry_shared_fields():
    cfg = RunConfig(seed=9, dim=16, m_layers=2, k_hops=3, epochs=12, finetune_epochs=4)
    pre = cfg.to_pretrain_config()
    assert (pre.dim, pre.m_layers, pre.k_hops, pre.epochs, pre.seed) == (16, 2, 3, 12, 9)
    assert pre.edge_split == (0.8, 0.1, pytest.approx(0.1))
    spec = cfg.to_synthetic_spec()
    assert spec.seed == 9 and spec.num_items == 300
    ft = cfg.to_finetune_config()
    assert ft.epochs == 4 and ft.seed == 9
