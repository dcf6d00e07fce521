import math

import pytest
import yaml

from sc3loop.scenario import ScenarioError, bundled, load_scenario, with_budget


@pytest.fixture
def base_doc():
    return yaml.safe_load(bundled().read_text())


def _write(tmp_path, doc):
    path = tmp_path / "s.scenario"
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def test_bundled_full_scale():
    sc = load_scenario(bundled(), scale="paper")
    t = sc.topology
    assert (t.S, t.K) == (20, 4)
    assert [a.control.entropy for a in t.actuators] == pytest.approx([10, 100, 60, 40], rel=1e-12)
    assert sum(1 for s in range(t.S) if any(s in e for e in t.effective_sets)) == 15
    assert sc.budgets.bandwidth == 1e6 and sc.budgets.dl_power == 4.0
    assert sc.budgets.noise_psd == pytest.approx(10 ** (-174 / 10) * 1e-3)
    assert sc.provenance["scale"] == "paper" and len(sc.provenance["sha256"]) == 64


def test_bundled_desk_scale():
    sc = load_scenario(bundled(), scale="desk")
    assert (sc.topology.S, sc.topology.K) == (8, 3)
    assert sc.experiment.values == (3e5, 5e5, 8e5, 1.2e6, 1.6e6)
    assert sc.experiment.realizations == 20 and sc.budgets.cpu == 2e9


def test_exponent_floats_are_numbers(tmp_path, base_doc):
    path = tmp_path / "s.scenario"
    path.write_text(bundled().read_text().replace("bandwidth: 1.0e6", "bandwidth: 2e6"))
    assert load_scenario(path).budgets.bandwidth == 2e6


def test_missing_noise_psd_names_field(tmp_path, base_doc):
    del base_doc["budgets"]["noise_psd_dbm_hz"]
    with pytest.raises(ScenarioError) as exc:
        load_scenario(_write(tmp_path, base_doc))
    msg = str(exc.value)
    assert "noise_psd_dbm_hz" in msg and "line" in msg


def test_unknown_key_rejected_by_name(tmp_path, base_doc):
    base_doc["budgets"]["bandwith"] = 1.0
    with pytest.raises(ScenarioError, match="bandwith"):
        load_scenario(_write(tmp_path, base_doc))


def test_bad_scale_and_count_mismatch(tmp_path, base_doc):
    with pytest.raises(ScenarioError):
        load_scenario(bundled(), scale="huge")
    base_doc["control"]["entropies"] = [10, 20]
    with pytest.raises(ScenarioError, match="entropies"):
        load_scenario(_write(tmp_path, base_doc))


def test_unknown_scheme_rejected(tmp_path, base_doc):
    base_doc["experiment"]["schemes"] = ["loac", "greedy"]
    with pytest.raises(ScenarioError, match="greedy"):
        load_scenario(_write(tmp_path, base_doc))


def test_null_cpu_means_unconstrained(tmp_path, base_doc):
    base_doc["budgets"]["cpu"] = None
    assert math.isinf(load_scenario(_write(tmp_path, base_doc)).budgets.cpu)


def test_defaults_recorded(tmp_path, base_doc):
    del base_doc["loop"]["t_c"]
    sc = load_scenario(_write(tmp_path, base_doc))
    assert "loop.t_c" in sc.provenance["defaults_used"]


def test_with_budget():
    b = load_scenario(bundled()).budgets
    assert with_budget(b, "cpu", 3e9).cpu == 3e9
    assert with_budget(b, "sensing_rate", 5.0) == b
