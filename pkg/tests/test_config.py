import json

import numpy as np
import pytest

from weakhj.config import (
    SAMPLE_CONFIGS,
    ConfigError,
    build_discounted,
    build_initial,
    build_numerics,
    build_system,
    evolve_settings,
    load_config,
    sample_config,
    write_sample_configs,
)
from weakhj.hamiltonian import coupling_strength


@pytest.mark.parametrize("name", sorted(SAMPLE_CONFIGS))
def test_sample_configs_build(name):
    cfg = sample_config(name)
    if "coupling" in cfg:
        spec = build_system(cfg, 32)
        assert spec.grid.n == 32
    if "critical" in cfg:
        assert build_discounted(cfg, 32).grid.n == 32


def test_weak_linear_strength():
    assert coupling_strength(build_system(sample_config("weak-linear"), 32)) == pytest.approx(0.16)


def test_expressions_in_matrix_and_grid():
    cfg = {
        "grid": {"n": 16, "length": "2*pi"},
        "components": [
            {"kinetic": "custom", "expression": "p**2 + 0.1*cos(x)", "p_bound_hint": 2, "derivative": "2*p"},
            {"kinetic": "quadratic_plus_potential", "potential": "sin(x)"},
        ],
        "coupling": {"kind": "linear", "matrix": [[1, "-0.2 - 0.1*sin(x)"], [-0.3, 1]], "monotone": True},
        "initial": ["sin(x)", "0"],
    }
    spec = build_system(cfg)
    x = spec.grid.nodes
    assert np.allclose(spec.coupling.coefficient(0, 1, x), -0.2 - 0.1 * np.sin(x))
    assert np.allclose(spec.kinetic[0](x, 1.0), 1.0 + 0.1 * np.cos(x))
    phis = build_initial(cfg, spec.grid, 2)
    assert np.allclose(phis[0].values, np.sin(x))


def test_nonlinear_terms_use_one_based_names():
    spec = build_system(sample_config("sin-cos"), 16)
    assert float(spec.coupling.term(0, 0.0, [2.0, 1.0])) == pytest.approx(2.0)
    assert spec.classes == ("none", "none")


@pytest.mark.parametrize("mutate,match", [
    (lambda c: c.pop("components"), "components"),
    (lambda c: c.pop("coupling"), "coupling"),
    (lambda c: c["coupling"].update(matrix=[[1, 0], [0, 1], [1, 1]]), "2x2"),
    (lambda c: c["components"][0].update(kinetic="cubic"), "unknown kinetic"),
    (lambda c: c["components"][0].update(kinetic="quadratic_plus_potential", potential="import os"), "component 1"),
    (lambda c: c["components"][0].update(kinetic="custom"), "custom"),
    (lambda c: c["coupling"].update(kind="tensor"), "unknown coupling"),
    (lambda c: c["coupling"].update(matrix=[[1, 0.5], [-0.4, 1]]), "monotone pattern"),
    (lambda c: c.update(grid={"n": 4}), "coarse"),
    (lambda c: c["coupling"].update(matrix=[[1, "y"], [-0.4, 1]]), "matrix"),
])
def test_config_errors(mutate, match):
    cfg = sample_config("weak-linear")
    mutate(cfg)
    with pytest.raises(ConfigError, match=match):
        build_system(cfg)


def test_critical_config_errors():
    cfg = sample_config("alpha-line")
    cfg["critical"]["rates"] = [1]
    with pytest.raises(ConfigError):
        build_discounted(cfg)
    cfg["critical"]["rates"] = [1, "-1"]
    with pytest.raises(ConfigError):
        build_discounted(cfg)


def test_numerics_and_evolve_settings():
    cfg = {"numerics": {"tol": 1e-6, "cfl": 0.5, "max_sweeps": 7}, "evolve": {"T": "4*pi", "period": "2*pi"}}
    num = build_numerics(cfg)
    assert num.params.tol == 1e-6 and num.params.cfl == 0.5 and num.max_sweeps == 7
    assert build_numerics(cfg, tol=1e-9).params.tol == 1e-9
    ev = evolve_settings(cfg)
    assert ev["T"] == pytest.approx(4 * np.pi) and ev["period"] == pytest.approx(2 * np.pi)
    with pytest.raises(ConfigError):
        build_numerics({"numerics": {"cfl": 3}})


def test_sample_files_roundtrip(tmp_path):
    paths = write_sample_configs(tmp_path)
    assert len(paths) == len(SAMPLE_CONFIGS)
    for p in paths:
        assert load_config(p) == json.loads(json.dumps(SAMPLE_CONFIGS[p.stem]))


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)
    with pytest.raises(ConfigError):
        sample_config("nothing")
