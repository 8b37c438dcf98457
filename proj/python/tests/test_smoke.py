import math

import pytest

import iccl_bench as ib


def test_metric_anchors():
    p_star = [0.7, 0.1, 0.1, 0.1]
    assert ib.normalized_performance(p_star, p_star) == 1.0
    assert ib.normalized_performance([0.25] * 4, p_star) == 0.0
    assert ib.bhattacharyya([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.111572, abs=1e-6)
    with pytest.raises(ib.DegenerateReference):
        ib.normalized_performance(p_star, [0.25] * 4)


def test_statistics():
    mean, ci, n = ib.aggregate([0.0, 1.0])
    assert (mean, n) == (0.5, 2)
    assert ci == pytest.approx(6.353102368216047)
    assert ib.sign_test_p(12, 16) == pytest.approx(0.0384063720703125)


def test_schedule_and_prompt():
    assert ib.practice_times("dp", 2, 2, 1) == [1, 2, 4, 5]
    assert ib.practice_times("dp", 2, 2, 1, convention="literal") == [1, 3, 4, 6]
    target = ib.generate_task(4, 0, "TARGET_TASK", 1)
    inter = ib.generate_task(4, 1, "INTERFERENCE_TASK", 2)
    seq = ib.build_sequence("dp", 3, 2, 2, target, [inter], 1, 7)
    prompt = ib.render_prompt(seq, 2)
    assert prompt.startswith("[TARGET_TASK]\n")
    assert prompt.endswith("[TARGET_TASK] 2 →")


def test_actr_and_hrs():
    params = {"d": 0.5, "s": 1.0, "kappa": 1.0, "gamma": 0.0}
    assert ib.activation(params, [1, 2], 3) == pytest.approx(0.5347999967395704)
    assert ib.retention_hat(params, [1, 2], 3) == pytest.approx(0.6306019374818707)
    assert ib.hrs_md(0.27, 1.62, 0.59) == pytest.approx(287.579, abs=1e-3)
    assert ib.hrs_score(2 * math.log(2)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ib.activation(params, [1, 2], 2)


def test_fit_curves_recovers_clean_data():
    truth = {"d": 0.4, "s": 0.3, "kappa": 1.0, "gamma": 1.5}
    curves = []
    for phi_i in (5, 20, 60):
        times = ib.practice_times("dp", 10, 3, phi_i)
        points = [[times[-1] + g, ib.retention_hat(truth, times, times[-1] + g)] for g in range(10, 200, 20)]
        curves.append({"times": times, "points": points})
    fit = ib.fit_curves(curves, starts=8)
    assert fit["mse"] < 1e-10
    assert fit["d"] == pytest.approx(0.4, abs=1e-3)


def test_run_fit_report(tmp_path):
    config = {"method": "bigram-decay", "phi": 20, "K": 3, "phi_i_grid": [5, 30], "phi_d_grid": [0, 20, 40, 60],
              "repeats": 3, "out": str(tmp_path / "run")}
    rows, manifest = ib.run_experiment(config, jobs=2, write_files=True)
    assert len(rows) == 2 * 4 * 3
    assert manifest["complete"] is True
    again, _ = ib.run_experiment(manifest["config"], jobs=1)
    assert [r["retention"] for r in again] == [r["retention"] for r in rows]

    fit = ib.fit_actr([tmp_path / "run" / "results.csv"], "bigram-decay")
    assert math.isfinite(fit["mse"])
    fit_path = tmp_path / "fit.json"
    fit_path.write_text(__import__("json").dumps(fit))
    ib.report([tmp_path / "run" / "results.csv"], tmp_path / "report", fits=[fit_path])
    assert (tmp_path / "report" / "retention_curves.csv").exists()
    assert (tmp_path / "report" / "actr_overlay.csv").exists()


def test_config_errors_surface_as_value_error():
    with pytest.raises(ib.ConfigError):
        ib.run_experiment({"repeats": 0})
    with pytest.raises(ValueError):
        ib.run_experiment({"no_such_field": 1})
