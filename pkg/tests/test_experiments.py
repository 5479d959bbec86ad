import json
import math

import numpy as np
import pytest

from pwlab import config as C
from pwlab import experiments as ex


# -- config ----------------------------------------------------------------------


def test_minimal_bell_config_gets_defaults():
    cfg = C.loads('{"kind":"bell"}')
    assert cfg.phases == C.Phases(0.0, math.pi / 2, -math.pi / 4, math.pi / 4)
    assert cfg.ensemble.n == 100_000 and cfg.ensemble.seed == 20150415
    assert [p.center for p in cfg.packets] == [-10.0, 10.0]


def test_unknown_and_duplicate_keys_rejected():
    with pytest.raises(C.SchemaError, match="unknown"):
        C.loads('{"kind":"bell","colour":1}')
    with pytest.raises(C.SchemaError, match="unknown"):
        C.loads('{"kind":"bell","phases":{"z":1}}')
    with pytest.raises(C.SchemaError, match="duplicate"):
        C.loads('{"kind":"bell","kind":"bell"}')


@pytest.mark.parametrize("text", ['{"kind":"bell","phases":{"x":"0"}}', '{"kind":"bell","ensemble":{"n":1.5}}',
                                  '{"kind":"bell","ensemble":{"seed":-1}}', '{"kind":"nope"}',
                                  '{"kind":"semi","kick":{}}', '[1, 2]', '{"kind":"semi",'])
def test_schema_errors(text):
    with pytest.raises(C.SchemaError):
        C.loads(text)


def test_kind_mismatch():
    with pytest.raises(C.SchemaError, match="does not match"):
        C.loads('{"kind":"bell"}', kind="semi")


def test_hash_stable_under_key_order():
    a = C.loads('{"kind":"semi","kick":{"k":3,"t_apply":0},"pointer":{"tau_ratio":2,"sigma":1}}')
    b = C.loads('{"pointer":{"sigma":1,"tau_ratio":2},"kick":{"t_apply":0,"k":3},"kind":"semi"}')
    assert a.hash() == b.hash()
    c = C.loads('{"kind":"semi","kick":{"k":3.5},"pointer":{"tau_ratio":2}}')
    assert c.hash() != a.hash()


def test_jsonable_handles_numpy_and_inf():
    out = C.jsonable({"a": np.float64(1.5), "b": np.arange(2), "c": math.inf, "d": math.nan})
    assert json.dumps(out) == '{"a": 1.5, "b": [0, 1], "c": "inf", "d": null}'


# -- Bell and two-time -------------------------------------------------------------


def test_run_bell_default():
    res = ex.run_bell(C.default_config("bell"))
    assert abs(res.chsh_analytic - 2 * math.sqrt(2)) < 1e-9
    assert abs(res.chsh_sampled - res.chsh_analytic) < 0.02
    assert all(res.verdicts.values())


def test_run_bell_analytic_only():
    cfg = C.default_config("bell")
    cfg.ensemble.n = 0
    res = ex.run_bell(cfg)
    assert res.chsh_sampled is None and res.verdicts == {}
    assert all("sampled" not in r for r in res.settings)


def test_run_bell_zero_probability_never_sampled():
    cfg = C.default_config("bell")
    cfg.phases = C.Phases(0.3, 0.3, -0.3, -0.3)  # x + y = 0 for every pair
    cfg.ensemble.n = 20_000
    for r in ex.run_bell(cfg).settings:
        assert r["analytic"]["P14"] == pytest.approx(0, abs=1e-15)
        assert r["sampled"]["P14"] == 0 and r["sampled"]["P23"] == 0


def test_run_two_time_default():
    res = ex.run_two_time(C.default_config("two-time"))
    assert res.signalling_gap == pytest.approx(0.25, abs=1e-12)
    assert all(res.verdicts.values())
    assert len(res.table) == 8 and res.total == pytest.approx(1, abs=1e-12)


def test_run_two_time_sampler_l1():
    cfg = C.default_config("two-time")
    cfg.phases = C.Phases(math.pi / 3, math.pi / 5, math.pi / 7, 0.0)
    assert ex.run_two_time(cfg).l1 < 0.01


def test_runner_kind_checks():
    with pytest.raises(C.SchemaError):
        ex.run_bell(C.default_config("two-time"))
    with pytest.raises(C.SchemaError):
        ex.run_two_time(C.default_config("bell"))


# -- regimes and statistics --------------------------------------------------------


@pytest.mark.parametrize("r, label", [(0.05, "fast"), (0.1, "fast"), (1, "intermediate"), (10, "slow")])
def test_regime_label(r, label):
    assert ex.regime_label(r) == label


def test_clopper_pearson_all_successes():
    lo, hi = ex.clopper_pearson(5000, 5000)
    assert hi == 1.0 and 1 - lo < 0.002  # (0.025)^(1/5000)
    assert lo == pytest.approx(0.025 ** (1 / 5000), rel=1e-9)


def test_is_intermediate():
    rep = ex.RegimeReport("semi", 100, 0, 100, {}, 0.0, 0.5, (0.4, 0.6), 0, None, False, {}, [], {})
    assert ex.is_intermediate(rep)
    rep.bounce_ci = (0.04, 0.6)
    assert not ex.is_intermediate(rep)


# -- semi-interferometer setup ----------------------------------------------------


def semi(**kw):
    d = {"kind": "semi"}
    d.update(kw)
    return C.config_from_dict(d)


def test_build_semi_defaults():
    s = ex.build_semi(semi())
    assert s.grid.points == (2048,) and s.t_cross == pytest.approx(2.0) and s.t_detect == pytest.approx(4.0)
    assert s.kick is None


def test_build_semi_pointer_timing():
    s = ex.build_semi(semi(kick={}, pointer={"tau_ratio": 1.0}))
    assert s.tau == pytest.approx(2.0) and s.mass == pytest.approx(8.0)
    assert s.t_read == pytest.approx(s.t_meet + 3 * s.tau)
    assert s.grid.dims == 2


@pytest.mark.parametrize("kw, match", [
    ({"packets": [{"center": -10, "momentum": -5}, {"center": 10, "momentum": 5}]}, "fail to cross"),
    ({"packets": [{"center": -10, "momentum": 5}]}, "exactly two"),
    ({"grid": {"points": 128, "extent": 64}, "packets": [{"center": -10, "momentum": 5, "sigma": 0.6},
                                                        {"center": 10, "momentum": -5}]}, "2\\*dx"),
    ({"grid": {"extent": 24}}, "4 sigma"),
    ({"t_final": 1.0}, "packets fail to cross"),
    ({"kick": {"k": 4}, "pointer": {"mass": -1}}, "mass"),
])
def test_build_semi_physics_errors(kw, match):
    with pytest.raises(C.PhysicsError, match=match):
        ex.build_semi(semi(**kw))


def test_sweep_point_config():
    base = C.default_config("pointer-sweep")
    c = ex.sweep_point_config(base, "tau_ratio", 3.0)
    assert c.pointer.tau_ratio == 3.0 and base.pointer.tau_ratio is None
    assert ex.sweep_point_config(base, "k", 2.0).kick.k == 2.0
    with pytest.raises(C.SchemaError):
        ex.sweep_point_config(base, "colour", 1.0)


def test_empty_sweep_rejected():
    with pytest.raises(C.PhysicsError):
        ex.run_pointer_sweep(C.default_config("pointer-sweep"), values=[])


@pytest.fixture(scope="module")
def small_no_pointer():
    cfg = semi(ensemble={"n": 400, "seed": 3})
    return ex.run_semi(cfg)


def test_no_pointer_small_run(small_no_pointer):
    r = small_no_pointer
    assert r.bounce_fraction == 1.0 and r.crossing["config_crossings"] == 0
    assert r.detector_path_anticorrelated and r.detector1_mode2_fraction == 1.0
    assert r.regime is None and r.surrealism is None
    assert all(r.verdicts.values())


def test_report_dict_is_json(small_no_pointer):
    d = small_no_pointer.as_dict()
    assert "ensemble" not in d
    json.dumps(d, allow_nan=False)


def test_semi_deterministic(small_no_pointer):
    again = ex.run_semi(semi(ensemble={"n": 400, "seed": 3}))
    assert np.array_equal(again.ensemble.positions, small_no_pointer.ensemble.positions)


@pytest.mark.slow
def test_single_point_sweep_with_split_pointer():
    # one pointer on each path (plus-minus split) still yields a regime report
    cfg = C.config_from_dict({"kind": "pointer-sweep", "kick": {"sign_rule": "plus-minus-split"},
                              "pointer": {}, "ensemble": {"n": 300}, "sweep": {"values": [0.1]}})
    res = ex.run_pointer_sweep(cfg)
    assert len(res.reports) == 1
    r = res.reports[0]
    assert r.regime == "fast" and r.bounce_fraction <= 0.05
    assert r.pointer_path_correlation > 0.95
