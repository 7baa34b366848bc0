"""Acceptance suite: one test per release criterion, at stated tolerances.

Each test prints a single PASS line (visible with `pytest -s` or on
failure); the numbers mirror the criteria list in the README.
"""

import dataclasses
import json
import time

import numpy as np
import pytest

import emofuse.tensor as T
from emofuse import cli, data, dsp, gradcheck, model, training
from emofuse.alignment import temporal_align_pool

from test_dsp import ref_llf


def _ok(num: int, text: str) -> None:
    print(f"ACCEPTANCE {num}: PASS - {text}")


@pytest.fixture(scope="module")
def overfit_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept-overfit")
    ds = data.synth_dataset(out, n_per_class=10, seed=42)
    return ds.records, data.load_embeddings(ds.embeddings_path)


@pytest.fixture(scope="module")
def ablation_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept-ablation")
    ds = data.synth_dataset(out, n_per_class=100, seed=7)
    return ds.records, data.load_embeddings(ds.embeddings_path)


def test_criterion_1_gradient_suite():
    """Every op <= 1e-5 and the full-model loss <= 1e-4, 5 seeds, < 2 min."""
    start = time.monotonic()
    op_errors = gradcheck.check_all_ops(seeds=range(5))
    assert op_errors, "no ops were checked"
    for name, err in sorted(op_errors.items()):
        assert err <= 1e-5, f"{name} gradient error {err:.3e}"
    model_err = max(gradcheck.check_model(seed=s) for s in range(5))
    assert model_err <= 1e-4, f"model gradient error {model_err:.3e}"
    elapsed = time.monotonic() - start
    assert elapsed < 120, f"gradient suite took {elapsed:.0f}s"
    _ok(1, f"{len(op_errors)} op cases <= {max(op_errors.values()):.2e}, "
           f"model <= {model_err:.2e}, {elapsed:.0f}s")


def test_criterion_2_pooling_matches_loop_oracle():
    """Matrix pooling equals explicit per-word summation, bit for bit."""
    rng = np.random.default_rng(2024)
    with T.precision(64):
        for _ in range(100):
            q = int(rng.integers(1, 9))
            n = int(rng.integers(1, 31))
            m = int(rng.integers(1, 7))
            z = rng.standard_normal((q, n))
            inner = np.sort(rng.integers(0, n + 1, size=m - 1)) if m > 1 else np.array([], dtype=int)
            bounds = np.concatenate([[0], inner, [n]])
            a = np.zeros((n, m))
            for j in range(m):
                a[bounds[j]:bounds[j + 1], j] = 1.0
            oracle = np.zeros((q, m))
            for j in range(m):
                for i in range(n):
                    if a[i, j] == 1.0:
                        oracle[:, j] += z[:, i]
            got = temporal_align_pool(T.Tensor(z), a).data
            np.testing.assert_array_equal(got, oracle)
    _ok(2, "100 random instances, exact equality")


def test_criterion_3_gate_law():
    """Zero gate weight == half-scaled acoustic path bit-exactly; saturated
    gates pass the acoustic features through within 1e-8."""
    rng = np.random.default_rng(3)
    n_frames, n_words = 40, 4
    bounds = np.linspace(0, n_frames, n_words + 1).astype(int)
    align = np.zeros((n_frames, n_words))
    for j in range(n_words):
        align[bounds[j]:bounds[j + 1], j] = 1.0
    sample = data.PreparedSample(
        id="gate", features=rng.standard_normal((34, n_frames)), alignment=align,
        token_vectors=rng.standard_normal((300, n_words)) * 0.5,
        tokens=["w"] * n_words, label=0)

    arrays = {name: t.data.copy() for name, t in model.init_params(seed=5).named()}
    arrays["cme_w"] = np.zeros(model.PARAM_SHAPES["cme_w"])
    params = model.ModelParams.from_arrays(arrays)
    gated = model.forward(sample, params, "tempalign-cme").data
    halved = dataclasses.replace(sample, alignment=0.5 * sample.alignment)
    plain = model.forward(halved, params, "tempalign").data
    np.testing.assert_array_equal(gated, plain)

    with T.precision(64):
        sat_arrays = {name: np.zeros(shape) for name, shape in model.PARAM_SHAPES.items()}
        sat_arrays["cme_w"] = np.ones(model.PARAM_SHAPES["cme_w"])
        sat_params = model.ModelParams.from_arrays(sat_arrays)
        z_s = T.Tensor(np.ones((128, 5)))  # pre-activation 128 per entry
        z_a2 = T.Tensor(rng.uniform(-1, 1, size=(128, 5)))
        out = model.cross_modality_excite(z_s, z_a2, sat_params)
        assert np.abs(out.data - z_a2.data).max() <= 1e-8
    _ok(3, "zero-gate bit equality and saturation within 1e-8")


def test_criterion_4_dsp_reference_oracle():
    """All 34 features within 1e-6 of the slow reference on 50 frames, and
    the framing count follows the formula on 20 random lengths."""
    rng = np.random.default_rng(4)
    prev = None
    worst = 0.0
    for _ in range(50):
        frame = rng.uniform(-0.5, 0.5, 400)
        got = dsp.extract_llf(frame, 16000, prev_frame=prev)
        want = ref_llf(frame, 16000, prev_frame=prev)
        worst = max(worst, float(np.abs(got - want).max()))
        assert worst <= 1e-6, f"feature deviation {worst:.2e}"
        prev = frame
    for _ in range(20):
        n_samples = int(rng.integers(400, 50000))
        frames = dsp.frame_signal(dsp.AudioClip(np.zeros(n_samples)))
        assert frames.shape[0] == (n_samples - 400) // 160 + 1
    _ok(4, f"50 frames, max |error| {worst:.2e}; framing formula on 20 lengths")


def test_criterion_5_overfit_check(overfit_set):
    """40 synthetic utterances, tempalign-cme, 200 epochs, default config:
    training accuracy >= 0.95 in under 5 minutes."""
    records, table = overfit_set
    assert len(records) == 40
    start = time.monotonic()
    config = training.TrainConfig(epochs=200, seed=0, fusion_mode="tempalign-cme")
    checkpoint, curve = training.train_fold(records, config, table)
    report = training.evaluate(checkpoint, records, table)
    elapsed = time.monotonic() - start
    assert report.wa >= 0.95, f"train accuracy {report.wa:.3f}"
    assert elapsed < 300, f"overfit run took {elapsed:.0f}s"
    _ok(5, f"train accuracy {report.wa:.3f} in {elapsed:.0f}s "
           f"(loss {curve[0]:.3f} -> {curve[-1]:.5f})")


def test_criterion_6_ablation_ordering(ablation_set):
    """On the XOR-style set (100 per class, 5-fold): fused-gated >= aligned >=
    concat - 0.02, and the gated model beats the best single-factor probe by
    at least 0.15, all inside 15 minutes."""
    records, table = ablation_set
    start = time.monotonic()
    config = training.TrainConfig(epochs=20, seed=0)
    modes = ["uttconcat", "tempalign", "tempalign-cme"]
    reports = training.run_ablation(records, config, table, modes, k=5)
    wa = {mode: reports[mode].mean_wa for mode in modes}

    plan = data.kfold_split(records, k=5, seed=config.seed)
    by_id = {r.id: r for r in records}
    probe = {}
    for factor in ("tone", "content"):
        probe[factor] = float(np.mean([
            data.factor_probe_accuracy([by_id[i] for i in fold["train"]],
                                       [by_id[i] for i in fold["test"]], factor)
            for fold in plan.folds]))
    best_probe = max(probe.values())
    elapsed = time.monotonic() - start

    assert wa["tempalign-cme"] >= wa["tempalign"], wa
    assert wa["tempalign"] >= wa["uttconcat"] - 0.02, wa
    assert wa["tempalign-cme"] - best_probe >= 0.15, (wa, probe)
    assert elapsed < 900, f"ablation took {elapsed:.0f}s"
    print(training.format_ablation_table(reports))
    _ok(6, f"WA {wa['tempalign-cme']:.3f} >= {wa['tempalign']:.3f} >= "
           f"{wa['uttconcat']:.3f} - 0.02; best probe {best_probe:.3f}; {elapsed:.0f}s")


def test_criterion_7_metric_definitions():
    """WA/UA from hand confusions match the definitional values exactly."""
    two_class = training.report_from_confusion(np.array([[2, 0], [1, 1]]))
    assert two_class.wa == 0.75
    assert two_class.ua == 0.75
    four_class = training.report_from_confusion(
        np.array([[3, 1, 0, 0], [0, 4, 0, 0], [1, 1, 1, 1], [0, 0, 0, 2]]))
    assert four_class.wa == 10 / 14
    assert four_class.ua == (0.75 + 1.0 + 0.25 + 1.0) / 4
    _ok(7, "hand confusion matrices match definitions exactly")


def test_criterion_8_cv_determinism(tmp_path, capsys):
    """Two cv runs with the same seed produce byte-identical reports."""
    ds = data.synth_dataset(tmp_path / "data", n_per_class=2, seed=13)
    outputs, reports = [], []
    for run in range(2):
        report_path = tmp_path / f"report-{run}.json"
        code = cli.main(["cv",
                         "--manifest", ds.manifest_path,
                         "--embeddings", ds.embeddings_path,
                         "--modes", "tempalign,tempalign-cme",
                         "--k", "2", "--epochs", "2", "--seed", "5",
                         "--out", str(report_path)])
        assert code == 0
        outputs.append(capsys.readouterr().out)
        reports.append(report_path.read_bytes())
    assert outputs[0] == outputs[1]
    assert reports[0] == reports[1]
    payload = json.loads(reports[0])
    assert set(payload) == {"tempalign", "tempalign-cme"}
    _ok(8, "byte-identical tables and report files")
