#!/usr/bin/env python3
"""
Smoke tests for package imports and configuration loading.
"""

import sys

import pytest

from app.utils.error_handling import ConfigurationError


def test_imports():
    """Test if all modules can be imported."""
    from app import create_app  # noqa: F401
    from app.commands import main  # noqa: F401
    from app.services.benchmark_service import benchmark_service  # noqa: F401
    from app.services.metrics_service import metrics_service  # noqa: F401
    from app.services.online_service import online_service  # noqa: F401
    from app.services.pipeline_service import process  # noqa: F401
    from app.services.reproduction_service import reproduction_service  # noqa: F401
    from app.services.scenario_service import scenario_service  # noqa: F401
    from app.services.separation_service import separation_service  # noqa: F401
    from app.utils.stft_utils import analyze, synthesize  # noqa: F401


def test_app_creation():
    """Test that the default configuration carries the experiment defaults."""
    from app import create_app
    from app.models.separation import Algorithm, Mode

    config = create_app()
    assert config.algorithm == Algorithm.DRAEC_BSS
    assert config.mode == Mode.BATCH
    assert (config.frame_size, config.hop, config.sample_rate) == (1024, 512, 16000)
    assert (config.taps_aec, config.taps_dr, config.delta) == (5, 5, 2)
    assert config.gamma == 0.2 and config.alpha == 0.999
    assert config.solver_settings().var_bias == 1e-3
    assert config.stft_config().n_bins == 513


def write_config(path, text):
    path.write_text(text)
    return str(path)


def test_config_layers(tmp_path, monkeypatch):
    from app.config import load_configurations

    monkeypatch.setenv("JOINTSEP_SEED", "7")
    monkeypatch.setenv("JOINTSEP_TAPS_DR", "8")
    assert load_configurations().seed == 7

    config_file = write_config(tmp_path / "run.txt", "SEED=9\nRT60=0.6\n# comment\nLAMBDA=2.5\n")
    config = load_configurations(config_file)
    assert config.seed == 9 and config.taps_dr == 8 and config.rt60 == 0.6
    assert config.prior().scale == 2.5

    assert load_configurations(config_file, {"seed": 11, "rt60": None}).seed == 11


def test_config_lists_and_tokens(tmp_path):
    from app.config import load_configurations
    from app.models.separation import Algorithm, Mode

    config_file = write_config(
        tmp_path / "grid.txt",
        "ALGORITHMS=draec-bss, joint-ss\nRT60_GRID=0.3\nSER_GRID=0,-10\nMODE=ONLINE\nROOM_LENGTH=\n",
    )
    config = load_configurations(config_file)
    assert config.algorithms == [Algorithm.DRAEC_BSS, Algorithm.JOINT_SS]
    assert config.rt60_grid == [0.3] and config.ser_grid == [0.0, -10.0]
    assert config.mode == Mode.ONLINE
    assert config.room_override() is None


@pytest.mark.parametrize("text", ["SEEDS=3\n", "GAMMA=3\n", "ALGORITHM=WPE\n", "HOP=-1\n"])
def test_invalid_config_is_rejected(tmp_path, text):
    from app.config import load_configurations

    with pytest.raises(ConfigurationError):
        load_configurations(write_config(tmp_path / "bad.txt", text))


def test_missing_config_file_is_rejected(tmp_path):
    from app.config import load_configurations

    with pytest.raises(ConfigurationError):
        load_configurations(str(tmp_path / "absent.txt"))


def main():
    """Run the script-friendly tests."""
    print("🚀 Testing separation toolkit")
    print("=" * 50)

    results = []
    for test in (test_imports, test_app_creation):
        try:
            test()
            print(f"✅ {test.__name__}")
            results.append(True)
        except Exception as e:
            print(f"❌ {test.__name__}: {e}")
            results.append(False)

    print("\n" + "=" * 50)
    if all(results):
        print("🎉 All tests passed! Try:")
        print("python run.py simulate --output-dir output/scenario")
        return 0
    print("❌ Some tests failed. Please check the errors above.")
    return 1


if __name__ == "__main__":
    sys.exit(main())
