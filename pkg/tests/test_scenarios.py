import json

import numpy as np
import pytest

from glancer import scenarios as scen
from glancer.errors import ValidationError


def test_all_builtins_load():
    for name in scen.BUILTIN_NAMES:
        s = scen.load_scenario(name)
        assert s.dim == 2
        assert s.config_hash


def test_config_hash_is_stable_and_sensitive():
    a = scen.builtin("strip")
    b = scen.builtin("strip")
    c = scen.builtin("strip", height=2.0)
    assert a.config_hash == b.config_hash
    assert a.config_hash != c.config_hash


def test_resolve_is_idempotent():
    cfg = {"schema": 1, "builtin": "disk_interior"}
    once = scen.resolve_config(cfg)
    twice = scen.resolve_config(once)
    assert once == twice


def test_from_config_roundtrip():
    s = scen.builtin("annulus")
    s2 = scen.from_config(s.config)
    assert s2.config_hash == s.config_hash
    assert np.allclose(s2.domain_lo, s.domain_lo)


def test_load_scenario_from_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"schema": 1, "builtin": "half_plane"}))
    s = scen.load_scenario(str(path))
    assert s.name == "half_plane"


def test_unknown_builtin_rejected():
    with pytest.raises(ValidationError):
        scen.load_scenario("klein_bottle")


def test_config_requires_geometry():
    with pytest.raises(ValidationError):
        scen.from_config({"schema": 1})


def test_expression_boundary_matches_builtin_disk():
    custom = scen.from_config(
        {
            "schema": 1,
            "name": "round",
            "boundary": {
                "kind": "expression",
                "phi": "1.0 - hypot(x1, x2)",
                "box": [[-1.25, -1.25], [1.25, 1.25]],
            },
        }
    )
    disk = scen.builtin("disk_interior")
    for th in np.linspace(0.0, 2 * np.pi, 7):
        x = 0.8 * np.array([np.cos(th), np.sin(th)])
        assert custom.boundary.phi(x) == pytest.approx(disk.boundary.phi(x), abs=1e-12)


def test_expression_boundary_rejects_unknown_names():
    with pytest.raises(ValidationError):
        scen.from_config(
            {"schema": 1, "boundary": {"kind": "expression", "phi": "x1 - secret"}}
        )


def test_corner_boundaries_rejected():
    # zero set of x1*x2 crosses itself at the origin with vanishing gradient
    with pytest.raises(ValidationError):
        scen.from_config(
            {
                "schema": 1,
                "boundary": {
                    "kind": "expression",
                    "phi": "x1 * x2",
                    "box": [[-1.0, -1.0], [1.0, 1.0]],
                },
            }
        )


def test_potential_blocks():
    flat = scen.builtin("half_plane")
    assert flat.f is None
    damped = scen.builtin("half_plane", potential={"kind": "constant", "value": 0.25})
    assert damped.f(0.0, np.zeros(2)) == 0.25
    varying = scen.builtin(
        "half_plane", potential={"kind": "expression", "expr": "t + x1 * x2"}
    )
    assert varying.f(2.0, np.array([3.0, 4.0])) == pytest.approx(14.0)


def test_constant_metric_block():
    s = scen.builtin("strip", metric={"kind": "constant", "matrix": [[2.0, 0.0], [0.0, 1.0]]})
    assert s.metric.is_constant
    assert s.metric.g(np.zeros(2))[0, 0] == 2.0


def test_expression_metric_block_interpolates():
    s = scen.from_config(
        {
            "schema": 1,
            "builtin": "half_plane",
            "metric": {
                "kind": "expression",
                "expressions": [["1.0 + 0.25 * x2", "0.0"], ["0.0", "1.0 + 0.25 * x2"]],
            },
        }
    )
    assert not s.metric.is_constant
    g = s.metric.g(np.array([0.0, 2.0]))
    assert g[0, 0] == pytest.approx(1.5, abs=1e-6)


def test_chart_boxes_carry_a_collar():
    # builtin boxes extend past the physical boundary so that reflection
    # bookkeeping and boundary-following integrators can evaluate there
    hp = scen.builtin("half_plane")
    assert hp.domain_lo[1] < 0.0
    disk = scen.builtin("disk_interior")
    assert disk.domain_hi[0] > 1.0


def test_describe_mentions_hash():
    s = scen.builtin("strip")
    d = s.describe()
    assert d["scenario_hash"] == s.config_hash
