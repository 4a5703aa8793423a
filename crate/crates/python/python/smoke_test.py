"""Smoke test for the sliceq extension module. Run after `maturin develop`."""

import json

import sliceq


def main():
    gw = sliceq.Gateway(seed=1)
    assert gw.flush_rates == [100.0, 100.0, 100.0]
    gw.apply_action(1, 0.1, "current_rate")
    assert abs(sum(gw.flush_rates) - 300.0) < 1e-9
    report = gw.step([90.0, 90.0, 90.0])
    assert set(report) >= {"arrivals", "departures", "drops", "occupancy"}

    assert sliceq.redistribute([50.0, 30.0, 20.0], 100.0, 1.0, 1, 5.0) == [55.0, 27.0, 18.0]
    assert sliceq.reward([False, False, False], [3.0, 2.0, 1.0]) == 1.0
    assert sliceq.state_index([True, False, False]) == 1

    q = sliceq.QTable(3)
    assert (q.states, q.actions) == (8, 7)
    assert abs(q.update(0, 0, 1.0, 1, 0, 0.2, 0.8) - 0.2) < 1e-12

    run = sliceq.run_scenario(scenario=2, seed=42, series=False)
    summary = run["summary"]
    assert all(e["attempts"] <= 500 for e in run["episodes"])
    assert json.loads(run["json"])["summary"] == summary
    again = sliceq.run_scenario(scenario=2, seed=42, series=False)
    assert again["csv"] == run["csv"]

    doc = {
        "domains": [{"id": "D1", "location": "a", "resources": []}],
        "communication_slices": [],
        "svns": [{"id": "S1", "members": ["r9"]}],
    }
    assert sliceq.validate_model(json.dumps(doc)) == ["unresolved member `r9` in svn `S1`"]

    try:
        sliceq.run_scenario(config="[agent]\nepsilon = 1.5\n")
    except ValueError as e:
        assert "epsilon" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    print("scenario 2 convergence %.3f over %d episodes" % (summary["convergence_rate"], summary["agent_invocations"]))
    print("smoke test ok")


if __name__ == "__main__":
    main()
