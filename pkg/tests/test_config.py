import pytest
from hypothesis import given
from hypothesis import strategies as st

from adagad.config import ConfigError, PipelineConfig, load_config, parse_seeds, validate_config


def test_small_dataset_preset():
    cfg = validate_config("", {"dataset": "data/disney"})
    assert (cfg.embedding_dim, cfg.encoder_depth, cfg.decoder_depth, cfg.encoder_kind) == (12, 2, 1, "gcn")
    assert cfg.dataset_name == "disney"


def test_large_and_gat_presets():
    cora = validate_config("dataset_name = cora-injected\n")
    assert (cora.embedding_dim, cora.encoder_depth, cora.decoder_depth) == (64, 1, 1)
    enron = validate_config("dataset_name = enron\n")
    assert (enron.embedding_dim, enron.encoder_kind) == (12, "gat")
    assert validate_config("dataset_name = weibo\n").encoder_kind == "gat"


def test_explicit_values_beat_presets():
    cfg = validate_config("dataset_name = disney\nembedding_dim = 7\n")
    assert cfg.embedding_dim == 7 and cfg.encoder_depth == 2


def test_defaults():
    cfg = PipelineConfig().validate()
    assert cfg.pretrain_epochs == cfg.retrain_epochs == 20
    assert (cfg.weight_decay, cfg.dropout, cfg.lr) == (0.01, 0.1, 0.005)
    assert (cfg.l_n, cfg.l_e, cfg.l_s, cfg.n_aug) == (10, 10, 10, 30)
    assert cfg.seeds == tuple(range(10))
    assert (cfg.gamma, cfg.tau, cfg.gamma_reg) == (0.5, 0.5, 0.01)


def test_tau_range_error():
    with pytest.raises(ConfigError, match="tau"):
        validate_config("tau = 1.5\n")


def test_unknown_key_suggests_nearest():
    with pytest.raises(ConfigError) as exc:
        validate_config("gamm = 0.3\n")
    assert "did you mean 'gamma'" in str(exc.value)


def test_errors_are_collected():
    with pytest.raises(ConfigError) as exc:
        validate_config("gamm = 0.3\nfoo = 1\nlr = abc\n")
    assert len(exc.value.errors) == 3


def test_conflicting_duplicates():
    with pytest.raises(ConfigError, match="conflicting"):
        validate_config("gamma = 0.3\ngamma = 0.4\n")
    assert validate_config("gamma = 0.3\ngamma = 0.3\n").gamma == 0.3


def test_overrides_win_and_comments(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\ngamma = 0.3  # trailing\nseeds = 0..2\n")
    cfg = load_config(p, {"gamma": "0.7"})
    assert cfg.gamma == 0.7 and cfg.seeds == (0, 1, 2)


def test_bad_lines():
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        validate_config("gamma 0.3\n")
    with pytest.raises(ConfigError):
        validate_config("variant = fancy\n")
    with pytest.raises(ConfigError):
        validate_config("seeds = 1,1\n")


def test_parse_seeds():
    assert parse_seeds("0..9") == tuple(range(10))
    assert parse_seeds("3") == (3,)
    assert parse_seeds("0, 2..4, 9") == (0, 2, 3, 4, 9)
    with pytest.raises(ValueError):
        parse_seeds("5..1")


def test_hash_ignores_output_and_workers():
    a = PipelineConfig(output="a", workers=1)
    b = PipelineConfig(output="b", workers=4)
    assert a.hash() == b.hash()
    assert a.hash() != PipelineConfig(gamma=0.4).hash()


def test_stage1_hash_scope():
    base = PipelineConfig(dataset_name="disney").validate()
    h = base.stage1_hash(0, "g")
    # stage-2 settings do not invalidate checkpoints
    assert PipelineConfig(dataset_name="disney", gamma=0.2, tau=0.3).validate().stage1_hash(0, "g") == h
    assert base.stage1_hash(1, "g") != h
    assert base.stage1_hash(0, "other") != h
    assert PipelineConfig(dataset_name="disney", l_n=3).validate().stage1_hash(0, "g") != h


def test_variant_levels():
    assert PipelineConfig().levels == ("node", "edge", "subgraph")
    assert PipelineConfig(variant="edge").levels == ("edge",)
    assert PipelineConfig(variant="rand").levels == ("node", "edge", "subgraph")


configs = st.builds(
    PipelineConfig,
    dataset_name=st.sampled_from(["disney", "books", "cora-injected", "enron", "x"]),
    seeds=st.lists(st.integers(0, 50), min_size=1, max_size=5, unique=True).map(tuple),
    gamma=st.floats(0, 1),
    tau=st.floats(0.01, 0.99),
    gamma_reg=st.sampled_from([0.0, 0.001, 0.01]),
    anomaly_rate=st.none() | st.floats(0.01, 0.5),
    variant=st.sampled_from(["full", "rand", "node", "edge", "subgraph"]),
    fixed_weights=st.sampled_from([(), (0.2, 0.3, 0.5)]),
    shared_theta=st.booleans(),
    p_z=st.floats(0, 1),
    encoder_depth=st.none() | st.integers(0, 9),
)


@given(configs)
def test_serialize_round_trip(cfg):
    cfg = cfg.validate()
    again = validate_config(cfg.serialize())
    assert again == cfg
    assert again.hash() == cfg.hash()
    assert again.serialize() == cfg.serialize()
