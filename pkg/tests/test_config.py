import pytest

from jointsi.config import OUT_DIR_ENV, load_config, output_dir, parse_config
from jointsi.seqcore import ConfigError


@pytest.mark.parametrize("text, name", [
    ('{"colour": 1}', "colour"),
    ('{"jsi": {"K": 4, "beam": 2}}', "jsi.beam"),
    ('{"run": {"reinvent": {"sigma": 1}}}', "run.reinvent.sigma"),
])
def test_unknown_key_is_named(text, name):
    with pytest.raises(ConfigError, match=f"unknown config key '{name}'"):
        parse_config(text)


@pytest.mark.parametrize("text, where", [
    ('{"jsi": {"K": 0}}', "jsi.K"),
    ('{"jsi": {"sigma": -1}}', "jsi.sigma"),
    ('{"oracle": {"budget": "many"}}', "oracle.budget"),
    ('{"run": {"method": "magic"}}', "run.method"),
    ('{"run": {"train_fraction": 1.0}}', "run.train_fraction"),
    ('{"jsi": {"preset": "egfr"}}', "jsi.preset"),
])
def test_invalid_values_are_located(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text)


def test_not_json():
    with pytest.raises(ConfigError, match="not valid JSON"):
        parse_config("{K: 1")


def test_empty_config_gives_defaults():
    spec = parse_config("")
    off, on = spec.offline(), spec.online()
    assert (off.jsi.K, off.jsi.n_rounds, off.jsi.sigma) == (128, 10, 0.5)
    assert (on.jsi.K, on.jsi.n_rounds, on.jsi.sigma) == (16, 10, 1.5)
    assert off.n_eval == 64 and off.budget == on.budget == 3000
    assert spec.variants == ["full", "no-joint", "no-self-improve"]


def test_presets_per_regime():
    spec = parse_config('{"jsi": {"preset": "parp1"}}')
    j = spec.offline().jsi
    assert (j.K, j.n_rounds, j.sigma) == (128, 10, 0.25)
    spec = parse_config('{"jsi": {"preset": "jak2", "temperature": 0.8}}')
    j = spec.online().jsi
    assert (j.K, j.n_rounds, j.sigma, j.temperature) == (16, 10, 1.5, 0.8)
    j = parse_config('{"jsi": {"preset": "jak2", "K": 4}}').offline().jsi
    assert (j.K, j.n_rounds) == (4, 8)


def test_sections_flow_into_runner_configs():
    spec = parse_config('{"model": {"max_len": 10, "hidden": 5}, "oracle": {"budget": 90, "n_eval": 9},'
                        ' "train": {"epochs": 3}, "run": {"method": "best-of-n", "best_of_n": 7,'
                        ' "reinvent": {"sigma_r": 12}}}')
    off = spec.offline()
    assert off.world.max_len == 10 and off.world.hidden == 5
    assert (off.budget, off.n_eval, off.train.epochs, off.method, off.best_of_n) == (90, 9, 3, "best-of-n", 7)
    on = spec.online()
    assert on.reinvent.sigma_r == 12 and on.retrain.lam == 0.0 and on.retrain.epochs == 3
    with pytest.raises(ConfigError, match="not an offline method"):
        parse_config('{"run": {"method": "reinvent"}}').offline()
    with pytest.raises(ConfigError, match="not an online method"):
        parse_config('{"run": {"method": "no-joint"}}').online()


def test_seeds_and_override():
    spec = parse_config('{"run": {"seed": 4}}')
    assert spec.seed == 4 and spec.seeds == [4] and spec.offline().seed == 4
    spec = parse_config('{"run": {"seed": 4, "seeds": [1, 2, 3]}}')
    assert spec.seeds == [1, 2, 3]
    spec = parse_config('{"run": {"seeds": [1, 2, 3]}}', seed=9)
    assert spec.seed == 9 and spec.seeds == [9] and spec.online().seed == 9


def test_empty_variant_list_rejected():
    with pytest.raises(ConfigError):
        parse_config('{"run": {"variants": []}}').variants


def test_load_config_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "c.json"
    p.write_text('{"jsi": {"K": 3}}', encoding="utf-8")
    assert load_config(p).offline().jsi.K == 3
    assert load_config(None, seed=2).doc == {} and load_config(None, seed=2).seed == 2


def test_output_dir_precedence(monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    assert str(output_dir(None)) == "runs"
    monkeypatch.setenv(OUT_DIR_ENV, "/tmp/from-env")
    assert str(output_dir(None)) == "/tmp/from-env"
    assert str(output_dir("flag")) == "flag"
