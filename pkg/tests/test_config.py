import pytest

from eesng.config import ConfigError, load_config, parse_config
from eesng.space import bert_space, desk_space

BASE = """[experiment]
seed = 7
output = out

[space]
preset = desk

[backend]
kind = tabular
generator = deceptive

[train]
epochs = 3
steps_per_epoch = 10
"""


def test_parse_defaults():
    cfg = parse_config(BASE)
    assert cfg.seed == 7 and cfg.train.seed == 7
    assert cfg.space == desk_space()
    assert cfg.backend.generator == "deceptive"
    assert cfg.train.samples_per_step == 8
    assert cfg.searches == []


def test_neural_default_lambda():
    cfg = parse_config(BASE.replace("kind = tabular", "kind = neural"))
    assert cfg.train.samples_per_step == 2


def test_inline_space_and_searches():
    text = BASE.replace("preset = desk", "depth = 6,8,10,12\nheads = 12,8,4\nintermediates = 3072,1024,768,512")
    text += "\n[search small]\nomega = 1000\nmetric = flops\n\n[search big]\nomega = 5e4\nwarm_start = yes\n"
    cfg = parse_config(text)
    assert cfg.space == bert_space()
    assert [(j.name, j.metric, j.warm_start) for j in cfg.searches] == [("small", "flops", False),
                                                                          ("big", "params", True)]


def test_missing_field_named():
    with pytest.raises(ConfigError, match=r"\[train\] steps_per_epoch"):
        parse_config(BASE.replace("steps_per_epoch = 10\n", ""))
    with pytest.raises(ConfigError, match=r"\[backend\]"):
        parse_config(BASE.replace("[backend]\nkind = tabular\ngenerator = deceptive\n", ""))


def test_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match=r":13: \[train\] epochs"):
        parse_config(BASE.replace("epochs = 3", "epochs = three"), "x.ini")
    with pytest.raises(ConfigError, match=r":11: \[backend\] colour: unknown field"):
        parse_config(BASE.replace("generator = deceptive", "generator = deceptive\ncolour = red"), "x.ini")
    with pytest.raises(ConfigError, match="gate"):
        parse_config(BASE + "gate = sideways\n")


def test_bad_preset():
    with pytest.raises(ConfigError, match="preset"):
        parse_config(BASE.replace("preset = desk", "preset = nowhere.txt"))


def test_load_relative_space(tmp_path):
    (tmp_path / "s.txt").write_text("depth = 2\nheads = 2,1\nintermediates = 8,4\n")
    f = tmp_path / "c.ini"
    f.write_text(BASE.replace("preset = desk", "preset = s.txt"))
    assert load_config(f).space.max_depth == 2
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")
