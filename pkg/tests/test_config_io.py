import numpy as np
import pytest

from cooptune.config import (
    DEFAULTS,
    build_analysis,
    build_sim_config,
    config_digest,
    default_config_path,
    load_config,
    merge_config,
)
from cooptune.errors import InvalidConfig, MalformedLog, NotHurwitz
from cooptune.io import read_csv, read_run_log, read_twist_log, write_csv, write_run_log, write_twist_log
from cooptune.sim import LOG_HEADER, TWIST_HEADER


def test_bundled_config_loads():
    cfg = load_config(default_config_path())
    sim = build_sim_config(cfg)
    assert sim.trajectory.kind == "rotating-axis-sine"
    assert sim.dt == 1e-3 and sim.steps == 20000
    assert set(cfg) == set(DEFAULTS)


def test_unknown_keys_rejected():
    with pytest.raises(InvalidConfig, match="gains.kq"):
        merge_config({"gains": {"kq": 1.0}})
    with pytest.raises(InvalidConfig):
        merge_config({"extra": {}})


def test_invalid_values_rejected():
    with pytest.raises(InvalidConfig):
        build_sim_config(merge_config({"estimators": {"mu_attitude": -0.1}}))
    with pytest.raises(InvalidConfig):
        build_sim_config(merge_config({"estimators": {"mu_displacement": 1.0}}))
    with pytest.raises(InvalidConfig):
        build_sim_config(merge_config({"run": {"dt": 0.0}}))
    with pytest.raises(InvalidConfig):
        build_sim_config(merge_config({"estimators": {"window": 10.5}}))
    with pytest.raises(NotHurwitz):
        build_sim_config(merge_config({"gains": {"kp": -1.0}}))


def test_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("gains: [unclosed\n")
    with pytest.raises(InvalidConfig):
        load_config(p)
    with pytest.raises(InvalidConfig):
        load_config(tmp_path / "missing.yaml")


def test_digest_is_stable():
    a = merge_config({})
    b = merge_config({"gains": {"kp": 25.0}})
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(merge_config({"gains": {"kp": 30.0}}))


def test_quaternion_overrides_axis_angle():
    sim = build_sim_config(merge_config({"theta_true": {"quaternion": [0.0, 0.0, -0.6, -0.8]}}))
    np.testing.assert_allclose(sim.theta_true.eta.as_array(), [0.0, 0.0, 0.6, 0.8])


def test_analysis_region_covers_reference():
    cfg = merge_config({})
    sim = build_sim_config(cfg)
    a = build_analysis(cfg, sim)
    assert a.region.speed > sim.trajectory.c_v
    assert np.all(a.region.pose_halfwidth >= 2 * np.abs(sim.trajectory.amplitude))


def test_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(size=(25, len(LOG_HEADER))) * 10.0 ** rng.integers(-300, 300, size=(25, len(LOG_HEADER)))
    write_run_log(tmp_path / "run.csv", data)
    np.testing.assert_array_equal(read_run_log(tmp_path / "run.csv"), data)
    header = (tmp_path / "run.csv").read_text().splitlines()[0]
    assert header == ",".join(LOG_HEADER)


def test_malformed_logs(tmp_path):
    p = tmp_path / "tw.csv"
    p.write_text(",".join(TWIST_HEADER) + "\n")
    with pytest.raises(MalformedLog):
        read_twist_log(p)
    p.write_text(",".join(TWIST_HEADER) + "\n" + ",".join(["0"] * 13) + "\n" + ",".join(["x"] * 13) + "\n")
    with pytest.raises(MalformedLog) as info:
        read_twist_log(p)
    assert info.value.line == 3
    rows = np.zeros((3, 13))
    rows[:, 0] = [0.0, 1.0, 1.0]
    write_twist_log(p, rows)
    with pytest.raises(MalformedLog):
        read_twist_log(p)
    p.write_text("a,b\n1\n")
    with pytest.raises(MalformedLog):
        read_csv(p)
    with pytest.raises(MalformedLog):
        read_csv(tmp_path / "nope.csv")
    with pytest.raises(ValueError):
        write_csv(p, ["a"], np.zeros((2, 2)))
