import math

import numpy as np
import pandas as pd
import pytest
import torch

from vand_rnn.core import trainer
from vand_rnn.core.head import LOG_2PI, head_forward
from vand_rnn.core.rnn import stacked_forward
from vand_rnn.core.tasks import RolloutResult, gen_periodic
from vand_rnn.data import fit_norm
from vand_rnn.models import (
    Batch,
    StackedModel,
    TrainConfig,
    Trajectory,
    VandMode,
    load_model,
    model_filename,
    save_model,
)
from vand_rnn.utils.errors import ConfigError, NoLearnableRegularizersError
from vand_rnn.utils.random_stream import RandomStream


def raw_params(model):
    return {name: p.detach().clone() for name, p in model.named_parameters()}


def test_single_epoch_takes_one_step(tiny_config, periodic_train, periodic_test):
    model, result = trainer.train(tiny_config.updated(epochs=1), periodic_train, periodic_test)
    assert result.steps == 1
    assert len(result.nll_curve) == 1
    assert len(result.eval_curve) == 1
    assert result.mse_norm is not None and result.mse_norm >= 0
    assert not result.diverged


def test_vanilla_excludes_regularizer_parameters(make_model):
    names = make_model("vanilla").learnable_parameters()
    assert not any(n.endswith(("sigma_real", "beta_real")) for n in names)
    assert any(n.endswith("W_hh") for n in names)
    names = make_model("vand").learnable_parameters()
    assert "regularizers.0.sigma_real" in names and "regularizers.1.beta_real" in names


@pytest.mark.parametrize(
    "mode,frozen,moving",
    [("var_noise", "beta_real", "sigma_real"), ("var_dropout", "sigma_real", "beta_real")],
)
def test_learnability_routing(tiny_config, periodic_train, mode, frozen, moving):
    config = tiny_config.updated(mode=mode)
    initial = raw_params(trainer.build_model(config, 2, 2, RandomStream.from_seed(0).split(3)[0]))
    model, _ = trainer.train(config, periodic_train)
    after = raw_params(model)
    for layer in range(config.layers):
        assert torch.equal(after[f"regularizers.{layer}.{frozen}"], initial[f"regularizers.{layer}.{frozen}"])
    assert any(
        not torch.equal(after[f"regularizers.{layer}.{moving}"], initial[f"regularizers.{layer}.{moving}"])
        for layer in range(config.layers)
    )


def test_vand_moves_both_regularizers(tiny_config, periodic_train):
    model, _ = trainer.train(tiny_config, periodic_train)
    params = raw_params(model)
    assert not bool((params["regularizers.0.sigma_real"] == 0).all())
    assert not bool((params["regularizers.0.beta_real"] == 0).all())


def test_loss_is_sum_over_steps_of_batch_means(make_model):
    model = make_model("vanilla", seed=2)
    gen = torch.Generator().manual_seed(0)
    batch = Batch(torch.randn(2, 3, 2, generator=gen, dtype=torch.float64),
                  torch.randn(2, 3, 2, generator=gen, dtype=torch.float64))
    loss = trainer.sequence_loss(model, batch, RandomStream.from_seed(0))

    outs, _ = stacked_forward(batch.x, model, phase="train")
    mu, var = head_forward(outs, model.head)
    mu, var, y = mu.detach().numpy(), var.detach().numpy(), batch.y.numpy()
    expected = 0.0
    for t in range(2):
        per_row = 0.5 * (LOG_2PI + np.log(var[t]) + (y[t] - mu[t]) ** 2 / var[t]).sum(axis=1)
        expected += per_row.sum() / 3
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_training_is_reproducible(tiny_config, periodic_train, periodic_test):
    model_a, result_a = trainer.train(tiny_config, periodic_train, periodic_test)
    model_b, result_b = trainer.train(tiny_config, periodic_train, periodic_test)
    assert result_a.nll_curve == result_b.nll_curve
    assert result_a.eval_curve == result_b.eval_curve
    for (name, a), (_, b) in zip(model_a.named_parameters(), model_b.named_parameters()):
        assert torch.equal(a, b), name


def test_eval_cadence(tiny_config, periodic_train, periodic_test):
    _, result = trainer.train(tiny_config.updated(epochs=5, eval_every=2), periodic_train, periodic_test)
    assert [entry["epoch"] for entry in result.eval_curve] == [2, 4, 5]
    assert result.mse_norm == result.eval_curve[-1]["mse_norm"]


def test_dimension_mismatch_between_sets(tiny_config, periodic_train, ramp_dataset):
    bad = [Trajectory(t.id, np.hstack([t.x, t.x]), t.y) for t in ramp_dataset(2, 30)]
    with pytest.raises(ConfigError):
        trainer.train(tiny_config, periodic_train, bad)


def test_zero_predictor_scores_unit_variance(periodic_train):
    norm = fit_norm(periodic_train)
    model = StackedModel(2, 2, hidden=4, layers=1, mode=VandMode.parse("vanilla"),
                         rng=RandomStream.from_seed(0), norm=norm)
    with torch.no_grad():
        model.head.W_mu.zero_()
        model.head.b_mu.zero_()
    mse_norm, mse_raw = trainer.evaluate(model, periodic_train)
    assert mse_norm == pytest.approx(1.0, abs=1e-9)
    y = np.concatenate([t.y for t in periodic_train])
    assert mse_raw == pytest.approx(float(np.mean((y - norm.y_mean) ** 2)), rel=1e-9)


def test_evaluate_is_deterministic(make_model, periodic_test):
    model = make_model("vand")
    assert trainer.evaluate(model, periodic_test) == trainer.evaluate(model, periodic_test)


def test_evaluate_handles_mixed_lengths(make_model):
    model = make_model("const_dropout")
    data = gen_periodic(2, 100, seed=0) + gen_periodic(1, 130, seed=1)
    mse_norm, mse_raw = trainer.evaluate(model, data)
    assert math.isfinite(mse_norm) and math.isfinite(mse_raw)


def test_matrix_rows_and_determinism(tiny_config, periodic_train, periodic_test, tmp_path):
    config = tiny_config.updated(epochs=2)
    out = tmp_path / "results.csv"
    table = trainer.run_matrix(config, ["vanilla", "vand"], [0, 1], periodic_train, periodic_test,
                               out_csv=out, model_dir=tmp_path / "models")
    assert list(table.columns) == trainer.RESULT_COLUMNS
    assert list(zip(table["mode"], table["seed"])) == [("vanilla", 0), ("vanilla", 1), ("vand", 0), ("vand", 1)]
    assert (tmp_path / "models" / "periodic_vand_1.model.json").exists()
    again = trainer.run_matrix(config, ["vanilla", "vand"], [0, 1], periodic_train, periodic_test)
    columns = ["task", "mode", "seed", "mse_norm", "mse_raw", "diverged"]
    pd.testing.assert_frame_equal(table[columns], again[columns])
    header = out.read_text().splitlines()[0]
    assert header == "task,mode,seed,mse_norm,mse_raw,diverged,wall_s"
    assert "false" in out.read_text()


def test_matrix_records_failures_and_continues(tiny_config, periodic_train, periodic_test, monkeypatch, tmp_path):
    real_train = trainer.train

    def flaky(config, train_set, test_set=None):
        if config.seed == 1:
            raise FloatingPointError("boom")
        return real_train(config, train_set, test_set)

    monkeypatch.setattr(trainer, "train", flaky)
    out = tmp_path / "results.csv"
    table = trainer.run_matrix(tiny_config.updated(epochs=1), ["vand"], [0, 1], periodic_train, periodic_test,
                               out_csv=out)
    assert table["diverged"].tolist() == [False, True]
    assert pd.isna(table.loc[1, "mse_norm"]) and pd.isna(table.loc[1, "mse_raw"])
    assert out.read_text().splitlines()[2].startswith("periodic,vand,1,,,true,")


def test_summary_sorted_by_median():
    table = pd.DataFrame({
        "task": ["t"] * 6,
        "mode": ["vanilla", "vanilla", "vand", "vand", "const_noise", "const_noise"],
        "seed": [0, 1, 0, 1, 0, 1],
        "mse_norm": [0.5, 0.7, 0.1, 0.3, None, 0.25],
        "mse_raw": [0.5, 0.7, 0.1, 0.3, None, 0.25],
        "diverged": [False, False, False, False, True, False],
        "wall_s": [0.0] * 6,
    })
    summary = trainer.summarize_results(table)
    assert summary["mode"].tolist() == ["vand", "const_noise", "vanilla"]
    assert summary.loc[0, "median"] == pytest.approx(0.2)
    assert summary.set_index("mode").loc["const_noise", "diverged"] == 1
    assert summary.set_index("mode").loc["vanilla", "worst"] == pytest.approx(0.7)

    best = trainer.best_runs(table)
    assert dict(zip(best["mode"], best["seed"])) == {"vanilla": 0, "vand": 0, "const_noise": 1}


def test_analysis_of_untrained_vand_model(make_model, tmp_path):
    model = make_model("vand", hidden=100, layers=2)
    out = tmp_path / "analysis.csv"
    table = trainer.analyze_params(model, out)
    units = table[table["unit"] != "summary"]
    assert len(units) == 200 and len(table) == 202
    assert np.allclose(units["sigma"].astype(float), math.log(2))
    assert np.allclose(units["beta"].astype(float), 0.5)
    summary = table[table["unit"] == "summary"]
    assert summary["layer"].tolist() == [0, 1]
    assert np.allclose(summary["sigma_iqr"].astype(float), 0.0)
    assert out.read_text().splitlines()[0] == "layer,unit,sigma,beta,sigma_iqr,beta_iqr"


def test_analysis_ranges_after_training(tiny_config, periodic_train):
    model, _ = trainer.train(tiny_config, periodic_train)
    table = trainer.analyze_params(model)
    assert (table["sigma"].astype(float) > 0).all()
    beta = table["beta"].astype(float)
    assert ((beta > 0) & (beta < 1)).all()


@pytest.mark.parametrize("mode", ["vanilla", "const_noise", "const_dropout"])
def test_analysis_needs_learnable_regularizers(make_model, mode):
    with pytest.raises(NoLearnableRegularizersError, match="no learnable regularizers"):
        trainer.analyze_params(make_model(mode))


def test_metrics_table(tiny_config, periodic_train, periodic_test, tmp_path):
    _, result = trainer.train(tiny_config, periodic_train, periodic_test)
    table = trainer.metrics_table(result)
    assert table["epoch"].tolist() == [1, 2, 3]
    assert pd.isna(table.loc[0, "mse_norm"]) and not pd.isna(table.loc[1, "mse_norm"])
    path = trainer.write_csv(table, tmp_path / "metrics.csv")
    assert path.read_text().splitlines()[0] == "epoch,nll,mse_norm,mse_raw"


def test_rollout_table_columns():
    result = RolloutResult(np.ones((3, 2)), np.zeros((3, 2)))
    table = trainer.rollout_table(result)
    assert list(table.columns) == ["t", "state_0", "state_1", "pred_0", "pred_1"]
    assert table["t"].tolist() == [1, 2, 3]
    empty = trainer.rollout_table(RolloutResult(np.zeros((0, 2)), np.zeros((0, 2))))
    assert len(empty) == 0


def test_trained_model_survives_save_and_load(tiny_config, periodic_train, periodic_test, tmp_path):
    model, _ = trainer.train(tiny_config, periodic_train)
    loaded = load_model(save_model(model, tmp_path / "m.model.json"))
    assert trainer.evaluate(loaded, periodic_test) == trainer.evaluate(model, periodic_test)


@pytest.mark.slow
def test_smoke_training_reduces_nll():
    train_set = gen_periodic(10, 100, seed=0)
    config = TrainConfig(mode="vand", hidden=8, layers=2, epochs=50, eval_every=50, task="periodic")
    improved = 0
    for seed in range(20):
        _, result = trainer.train(config.updated(seed=seed), train_set)
        improved += result.nll_curve[-1] < result.nll_curve[0]
    assert improved >= 18


def test_adaptation_table_counts_moved_units(make_model):
    model = make_model("vand", hidden=4, layers=2)
    with torch.no_grad():
        model.regularizers[0].sigma_real[:2] = 1.0
        model.regularizers[0].beta_real[2] = 0.001
        model.regularizers[1].beta_real[0] = -2.0
    table = trainer.adaptation_table(model)
    assert table["layer"].tolist() == [0, 1]
    assert table["moved"].tolist() == [2, 1]
    assert table["units"].tolist() == [4, 4]
    assert table["fraction"].tolist() == [0.5, 0.25]


def test_adaptation_table_needs_learnable_regularizers(make_model):
    with pytest.raises(NoLearnableRegularizersError):
        trainer.adaptation_table(make_model("const_noise"))


def results_table(rows):
    return pd.DataFrame(
        [{"task": "periodic", "mode": m, "seed": s, "mse_norm": v, "mse_raw": v, "diverged": v is None, "wall_s": 0.1}
         for m, s, v in rows],
        columns=trainer.RESULT_COLUMNS,
    )


def test_compare_modes_median_and_worst_case():
    table = results_table([
        ("vanilla", 0, 0.4), ("vanilla", 1, 0.6), ("vanilla", 2, 2.0),
        ("vand", 0, 0.2), ("vand", 1, 0.3), ("vand", 2, 0.9),
    ])
    verdict = trainer.compare_modes(table)
    assert verdict["median"] == pytest.approx(0.3) and verdict["baseline_median"] == pytest.approx(0.6)
    assert verdict["median_better"] and verdict["worst_better"]


def test_compare_modes_counts_divergence_as_worst():
    table = results_table([
        ("vanilla", 0, 0.4), ("vanilla", 1, 0.6),
        ("vand", 0, 0.1), ("vand", 1, None), ("vand", 2, 0.2),
    ])
    verdict = trainer.compare_modes(table)
    assert verdict["median_better"]
    assert verdict["worst"] == math.inf
    assert not verdict["worst_better"]


def test_compare_modes_needs_both_modes():
    with pytest.raises(ConfigError, match="vanilla"):
        trainer.compare_modes(results_table([("vand", 0, 0.1)]))


def test_rollout_stability_marks_missing_models(tiny_config, periodic_train, periodic_test, tmp_path):
    model, _ = trainer.train(tiny_config, periodic_train)
    save_model(model, tmp_path / model_filename("periodic", "vand", 0))
    table = trainer.rollout_stability(tmp_path, "periodic", "vand", [0, 1], periodic_test[0], horizon=20)
    assert table["seed"].tolist() == [0, 1]
    first, missing = table.iloc[0], table.iloc[1]
    assert bool(first["bounded"]) == (not first["diverged"] and first["within_range"])
    assert first["steps"] == 20 or first["diverged"]
    assert missing["steps"] == 0 and bool(missing["diverged"]) and not bool(missing["bounded"])


@pytest.mark.slow
@pytest.mark.parametrize("task", ["periodic", "sequential"])
def test_vand_beats_vanilla_in_median_and_worst_case(acceptance_sweep, task):
    table, _, _ = acceptance_sweep(task)
    verdict = trainer.compare_modes(table, "vand", "vanilla")
    assert verdict["median_better"], verdict
    assert verdict["worst_better"], verdict


@pytest.mark.slow
def test_vand_regularizers_move_from_initialization(acceptance_sweep, tmp_path):
    table, model_dir, _ = acceptance_sweep("periodic")
    best = trainer.best_runs(table).set_index("mode").loc["vand"]
    model = load_model(model_dir / model_filename("periodic", "vand", int(best["seed"])))
    adaptation = trainer.adaptation_table(model)
    assert (adaptation["fraction"] >= 0.5).all(), adaptation
    analysis = trainer.analyze_params(model, tmp_path / "analysis.csv")
    assert set(analysis["layer"]) == {0, 1}
