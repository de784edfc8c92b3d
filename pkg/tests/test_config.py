import pytest

from gam.config import EngineConfig
from gam.researcher import OutputFormat


def test_defaults():
    cfg = EngineConfig()
    assert (cfg.page_size, cfg.max_reflection_depth, cfg.top_k) == (2048, 3, 5)
    assert cfg.output_format is OutputFormat.INTEGRATION_ONLY
    assert cfg.enabled_tools == ("bm25", "embedding", "page_id")
    assert cfg.research.max_reflection_depth == 3 and cfg.research.top_k == 5


def test_precedence(tmp_path):
    path = tmp_path / "gam.toml"
    path.write_text('top_k = 7\nmax_reflection_depth = 2\nstore_path = "from-file"\nbase_url = "http://file"\n')
    env = {"GAM_STORE": "from-env"}
    cfg = EngineConfig.resolve(path, env=env, max_reflection_depth=4)
    assert cfg.top_k == 7                  # file over default
    assert cfg.store_path == "from-env"    # env over file
    assert cfg.max_reflection_depth == 4   # flag over file
    assert cfg.base_url == "http://file"


def test_unset_flags_do_not_override(tmp_path):
    path = tmp_path / "gam.toml"
    path.write_text("top_k = 9\n")
    assert EngineConfig.resolve(path, env={}, top_k=None).top_k == 9


def test_tools_parsing():
    assert EngineConfig(enabled_tools="page_id, bm25").enabled_tools == ("bm25", "page_id")
    assert EngineConfig.resolve(env={}, enabled_tools="bm25").enabled_tools == ("bm25",)
    with pytest.raises(ValueError):
        EngineConfig(enabled_tools=())
    with pytest.raises(ValueError):
        EngineConfig(enabled_tools="bm25,grep")


def test_rejects_bad_values(tmp_path):
    with pytest.raises(ValueError):
        EngineConfig(top_k=0)
    with pytest.raises(ValueError):
        EngineConfig(output_format="whole-book")
    path = tmp_path / "gam.toml"
    path.write_text("topk = 3\n")
    with pytest.raises(ValueError):
        EngineConfig.resolve(path, env={})
