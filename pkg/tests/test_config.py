import pytest

from submfl.config import ConfigError, ExperimentConfig, load_config


def write(tmp_path, text):
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    return path


def test_defaults():
    cfg = load_config()
    assert cfg.layer_sizes == (784, 128, 10)
    assert (cfg.n_devices, cfg.rounds, cfg.batch_size, cfg.local_epochs) == (100, 30, 64, 3)
    assert (cfg.learning_rate, cfg.availability_fraction, cfg.min_fit_clients) == (0.001, 0.3, 3)


def test_parse_and_comments(tmp_path):
    cfg = load_config(write(tmp_path, "# header\nlayer_sizes = 4, 3,2\nrounds = 7  # inline\n\npruning_mode = maxnorm\n"))
    assert cfg.layer_sizes == (4, 3, 2) and cfg.rounds == 7 and cfg.pruning_mode == "maxnorm"


def test_paths_relative_to_config(tmp_path):
    cfg = load_config(write(tmp_path, "images = data/i.gz\nlabels = /abs/l.gz\n"))
    assert cfg.images == str(tmp_path / "data" / "i.gz")
    assert cfg.labels == "/abs/l.gz"


def test_overrides_win(tmp_path):
    cfg = load_config(write(tmp_path, "rounds = 7\n"), {"rounds": 2, "seed": "5"})
    assert cfg.rounds == 2 and cfg.seed == 5


@pytest.mark.parametrize("text", [
    "nonsense = 1\n",
    "rounds\n",
    "rounds = many\n",
    "rounds = 0\n",
    "availability_fraction = 0\n",
    "pruning_mode = random\n",
    "layer_sizes = 784\n",
    "target_acc_low = 0.9\ntarget_acc_high = 0.8\n",
])
def test_rejects(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_unknown_override():
    with pytest.raises(ConfigError):
        load_config(overrides={"colour": "red"})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_text_round_trip(tmp_path):
    cfg = ExperimentConfig(layer_sizes=(5, 4, 3), rounds=3, dataset="synthetic")
    assert load_config(write(tmp_path, cfg.to_text()), {"out_dir": cfg.out_dir}) == cfg


def test_digest_ignores_output_location():
    cfg = ExperimentConfig()
    assert cfg.digest() == cfg.replace(out_dir="elsewhere", workers=8).digest()
    assert cfg.digest() != cfg.replace(seed=1).digest()
