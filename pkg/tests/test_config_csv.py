import json

import numpy as np
import pytest

from dvlnav import config, csvlog, simkit
from dvlnav.errors import ConfigError, ValidationError
from dvlnav.strapdown import ImuSeries

from conftest import streams

SCENARIO = """\
seed = 7

[scenario]
plan = "2d"
dvl_rate = 10.0
origin = [10.0, -20.0, -5.0]

[sensors]
gyro_bias = [0.01, 0.02, 0.03]
dvl_noise = 0.01

[dvl]
scale = 1.001
misalignment = [0.1, 0.2, 0.3]

[ekf]
initial_scale = 0.9
gate = "inf"
"""


def write(tmp_path, text, name="scenario.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestScenarioConfig:
    def test_defaults(self):
        cfg = config.load()
        assert cfg.plan().boundaries[-1] == 2060.0
        assert cfg.dvl.scale == 0.9998
        np.testing.assert_allclose(np.rad2deg(np.array(cfg.dvl.misalignment)), [-0.1, -0.2, -0.5])
        assert cfg.ekf.initial_scale == 0.8

    def test_file_values(self, tmp_path):
        cfg = config.load(write(tmp_path, SCENARIO))
        assert cfg.seed == 7 and cfg.sensors.seed == 7
        assert cfg.plan_name == "2d" and cfg.dvl_rate == 10.0
        assert np.rad2deg(cfg.origin.lat) == pytest.approx(-20.0)
        np.testing.assert_allclose(cfg.sensors.gyro_bias_vector / simkit.DEG_PER_HOUR, [0.01, 0.02, 0.03])
        assert cfg.ekf.gate == float("inf")

    def test_seed_override(self, tmp_path):
        cfg = config.load(write(tmp_path, SCENARIO), seed=3)
        assert cfg.seed == 3 and cfg.sensors.seed == 3

    def test_json_mirror_matches(self, tmp_path):
        cfg = config.load(write(tmp_path, SCENARIO))
        mirror = config.load(write(tmp_path, json.dumps(cfg.to_dict()), "scenario.json"))
        assert mirror.digest() == cfg.digest()
        # degrees -> radians -> degrees may move the last bit
        np.testing.assert_allclose(np.array(mirror.init_attitude), np.array(cfg.init_attitude), rtol=1e-15)
        assert mirror.dvl == cfg.dvl and mirror.ekf == cfg.ekf and mirror.seed == cfg.seed

    def test_digest_tracks_content(self, tmp_path):
        a = config.load(write(tmp_path, SCENARIO))
        b = config.load(write(tmp_path, SCENARIO.replace("1.001", "1.002"), "other.toml"))
        assert a.digest() != b.digest()
        assert a.digest() == config.load(tmp_path / "scenario.toml").digest()
        assert a.with_seed(8).digest() != a.digest()

    @pytest.mark.parametrize("text, key", [
        ("[scenario]\nspeed = 3\n", "scenario.speed"),
        ("[vehicle]\nmass = 3\n", "vehicle"),
        ("[dvl]\nscale = 'big'\n", "dvl.scale"),
        ("[scenario]\norigin = [1.0, 2.0]\n", "scenario.origin"),
        ("[scenario]\nimu_rate = -1.0\n", "imu_rate"),
        ("[scenario]\nplan = 'missing.toml'\n", "missing.toml"),
        ("[ekf]\nscale_sigma = 0.0\n", "ekf"),
        ("seed = -1\n", "seed"),
    ])
    def test_rejects_bad_input(self, tmp_path, text, key):
        with pytest.raises(ConfigError) as info:
            config.load(write(tmp_path, text))
        assert key in str(info.value)
        assert isinstance(info.value, ValidationError)

    def test_syntax_error_names_line(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            config.load(write(tmp_path, "seed = 1\n[dvl\nscale = 1\n"))
        assert "line 2" in str(info.value)

    def test_custom_plan_file(self, tmp_path):
        plan = {"segments": [{"kind": "Static", "start": 0, "end": 60},
                             {"kind": "LevelAccelerate", "start": 60, "end": 120, "speed": 1.0}]}
        (tmp_path / "plan.json").write_text(json.dumps(plan))
        cfg = config.load(write(tmp_path, '[scenario]\nplan = "plan.json"\n'))
        assert cfg.plan().boundaries == [60.0, 120.0]


class TestCsv:
    def test_imu_round_trip_is_bit_exact(self, tmp_path):
        _, _, imu, dvl = streams("2d", seed=3)
        short = ImuSeries(imu.time[:5000], imu.gyro[:5000], imu.accel[:5000])
        csvlog.write_imu(tmp_path / "imu.csv", short, ["seed 3"])
        back = csvlog.read_imu(tmp_path / "imu.csv")
        assert back.time.tobytes() == short.time.tobytes()
        assert back.gyro.tobytes() == short.gyro.tobytes()
        assert back.accel.tobytes() == short.accel.tobytes()

    def test_dvl_round_trip_is_bit_exact(self, tmp_path):
        _, _, _, dvl = streams("2d", seed=3)
        part = dvl.between(590.0, 640.0)
        csvlog.write_dvl(tmp_path / "dvl.csv", part)
        back = csvlog.read_dvl(tmp_path / "dvl.csv")
        assert back.velocity.tobytes() == part.velocity.tobytes()

    def test_truth_columns(self, tmp_path, truth_2d):
        short = truth_2d.decimate(1000)
        csvlog.write_truth(tmp_path / "truth.csv", short)
        header = [ln for ln in (tmp_path / "truth.csv").read_text().splitlines() if not ln.startswith("#")][0]
        assert header == "t_s,lon_rad,lat_rad,h_m,vN,vU,vE,roll,pitch,yaw"
        back = csvlog.read_truth(tmp_path / "truth.csv")
        np.testing.assert_array_equal(back.position, short.position)
        np.testing.assert_allclose(back.attitude, short.attitude, atol=1e-15)

    def test_digest_matches_file(self, tmp_path):
        digest = csvlog.write_csv(tmp_path / "x.csv", ("a", "b"), [[1.0, 2.0], [3.0, 4.5]], ["note"])
        assert digest == csvlog.file_digest(tmp_path / "x.csv")
        assert (tmp_path / "x.csv").read_text().startswith("# note\na,b\n")

    def test_wrong_header(self, tmp_path):
        csvlog.write_csv(tmp_path / "x.csv", ("t_s", "y"), [[1.0, 2.0]])
        with pytest.raises(ValidationError):
            csvlog.read_dvl(tmp_path / "x.csv")

    def test_ragged_rows(self, tmp_path):
        (tmp_path / "x.csv").write_text("t_s,y_x,y_y,y_z\n0,1,2,3\n1,2,3\n")
        with pytest.raises(ValidationError):
            csvlog.read_dvl(tmp_path / "x.csv")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            csvlog.read_imu(tmp_path / "nope.csv")


@pytest.mark.parametrize("name, plan", [("3d.toml", "3d"), ("2d.toml", "2d")])
def test_shipped_configs(name, plan):
    from pathlib import Path

    cfg = config.load(Path(__file__).parent.parent / "configs" / name)
    assert cfg.plan_name == plan
    if plan == "3d":
        assert cfg.digest() == config.load().digest()
