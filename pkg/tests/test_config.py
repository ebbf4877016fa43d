from pathlib import Path

import pytest

from roacert import config as cfgmod
from roacert.config import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

MINIMAL = """
seed = 1
[system]
name = "rational2d"
[synthesize]
excluded_lo = [-0.05, -0.2]
excluded_hi = [0.05, 0.2]
"""


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = cfgmod.load(path)
    assert cfg.source == str(path)


def test_minimal_defaults(tmp_path):
    cfg = cfgmod.load(write(tmp_path, MINIMAL))
    assert cfg.seed == 1 and cfg.dim == 2 and cfg.roi.tau == 0.9
    assert cfg.synthesize.verifier.node_cap == 200_000


def test_nested_verifier_table(tmp_path):
    cfg = cfgmod.load(write(tmp_path, MINIMAL + "[synthesize.verifier]\nnode_cap = 7\n"))
    assert cfg.synthesize.verifier.node_cap == 7


@pytest.mark.parametrize("extra, match", [
    ("[roi]\ntau = 1.5\n", "tau"),
    ("[roi]\nspeed = 1\n", "unknown keys"),
    ("colour = 1\n", "top-level"),
    ("[simulate]\npolicy = \"worst\"\n", "policy"),
    ("[synthesize.verifier]\nmode = \"fast\"\n", "mode"),
    ("[error]\ngammas = []\n", "gammas"),
])
def test_rejections(tmp_path, extra, match):
    text = MINIMAL.replace("seed = 1\n", "seed = 1\n" + extra) if not extra.startswith("[") else MINIMAL + extra
    with pytest.raises(ConfigError, match=match):
        cfgmod.load(write(tmp_path, text))


def test_bad_system_and_box(tmp_path):
    with pytest.raises(ConfigError, match="unknown system"):
        cfgmod.load(write(tmp_path, MINIMAL.replace("rational2d", "pendulum")))
    with pytest.raises(ConfigError, match="excluded box"):
        cfgmod.load(write(tmp_path, MINIMAL.replace("[-0.05, -0.2]", "[0.05, -0.2]")))
    with pytest.raises(ConfigError, match="needs 3"):
        cfgmod.load(write(tmp_path, MINIMAL.replace("rational2d", "poly3d")))


def test_missing_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "nope.toml")
    with pytest.raises(ConfigError):
        cfgmod.load(write(tmp_path, "seed = = 1"))
