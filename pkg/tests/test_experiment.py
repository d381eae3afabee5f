from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from poxbench.augment import AugmentPolicy
from poxbench.classifiers import LogRegConfig, MlpConfig
from poxbench.dataset import split_manifest
from poxbench.errors import ConfigurationError, InputError, LeakageError, UsageError
from poxbench.experiment import (
    LEAKY_RATIOS,
    ExperimentConfig,
    ExperimentReport,
    FeatureSource,
    _HonestRun,
    _Timer,
    compare_variants,
    format_aggregate_table,
    leaky_split_sizes,
    load_config,
    mean_kappa,
    run_experiment,
    run_leaky,
)
from poxbench.stats import mann_whitney_u


def quick_config(**kw) -> ExperimentConfig:
    base = ExperimentConfig(
        name="quick",
        k=3,
        seed=1,
        features=FeatureSource(dim=32),
        augment=AugmentPolicy(copies_per_image=2),
        logreg=LogRegConfig(inv_reg_strength=10.0, max_iter=40),
        mlp=MlpConfig(max_epochs=40, learning_rate=1e-2),
    )
    return replace(base, **kw)


@pytest.fixture(scope="module")
def variant_reports(tmp_path_factory, request):
    corpus = request.getfixturevalue("medium_corpus")
    cache = tmp_path_factory.mktemp("exp_cache")
    return {
        v: run_experiment(quick_config(variant=v, cache=str(cache)), corpus)
        for v in ("original", "smoteenn", "augmented")
    }


def test_report_shape(variant_reports):
    for variant, rep in variant_reports.items():
        assert rep.variant == variant
        assert len(rep.records) == 3 * 3
        assert {r.model for r in rep.records} == {"logreg", "mlp", "svm"}
        assert sorted({r.fold for r in rep.records}) == [0, 1, 2]
        assert rep.audit.passed and rep.audit.mode == "honest"
        assert len(rep.significance.pairs) == 3
        assert set(rep.aggregates["svm"]) >= {"accuracy", "kappa"}
        assert all(r.split == "validation" for r in rep.validation_records)


def test_fixed_test_rows_identical_across_variants(variant_reports):
    digests = {rep.test_digest for rep in variant_reports.values()}
    assert len(digests) == 1
    sizes = {json.dumps(rep.split_summary, sort_keys=True) for rep in variant_reports.values()}
    assert len(sizes) == 1


def test_stage_sizes_reflect_variant(variant_reports):
    orig = variant_reports["original"].stage_sizes
    aug = variant_reports["augmented"].stage_sizes
    pool = orig["train_pool"]
    assert aug["augmented_pool"] == pool * 3
    for f in aug["folds"]:
        assert f["train_rows"] == f["originals"] * 3
    for f in variant_reports["smoteenn"].stage_sizes["folds"]:
        smote_stage, enn_stage = f["resample_stages"]
        assert len(set(smote_stage[2].values())) == 1  # balanced to the majority
        assert f["train_rows"] == sum(enn_stage[2].values())


def test_significance_recomputes_from_kappas(variant_reports):
    rep = variant_reports["original"]
    res = rep.significance.result("logreg", "svm")
    direct = mann_whitney_u(rep.kappas("logreg"), rep.kappas("svm"))
    assert res == direct


def test_compare_variants_matches_direct_calls(variant_reports):
    reps = [variant_reports[v] for v in ("original", "smoteenn", "augmented")]
    out = compare_variants(reps)
    assert len(out) == 3 * 3
    for c in out:
        a = variant_reports[c.first].kappas(c.model)
        b = variant_reports[c.second].kappas(c.model)
        assert c.result == mann_whitney_u(a, b)
        assert c.mean_difference == pytest.approx(np.mean(a) - np.mean(b))


def test_compare_identical_reports_not_significant(variant_reports):
    rep = variant_reports["original"]
    assert not any(c.result.reject for c in compare_variants([rep, rep]))


def test_compare_rejects_mismatched_structure(variant_reports, medium_corpus):
    rep = variant_reports["original"]
    with pytest.raises(InputError):
        compare_variants([rep])
    other = run_experiment(quick_config(models=("logreg",)), medium_corpus)
    with pytest.raises(InputError, match="model sets"):
        compare_variants([rep, other])


def test_run_is_deterministic_and_thread_independent(medium_corpus, monkeypatch):
    cfg = quick_config(variant="smoteenn", models=("logreg", "svm"))
    a = run_experiment(cfg, medium_corpus)
    monkeypatch.setenv("POXBENCH_THREADS", "3")
    b = run_experiment(cfg, medium_corpus)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_report_dict_round_trip(variant_reports):
    rep = variant_reports["augmented"]
    back = ExperimentReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert back.to_dict() == rep.to_dict()
    assert format_aggregate_table(back) == format_aggregate_table(rep)


def test_whole_pool_smoteenn(medium_corpus):
    rep = run_experiment(quick_config(variant="smoteenn", smoteenn_mode="whole-pool", models=("logreg",)), medium_corpus)
    assert rep.audit.passed
    assert "resampled_pool" in rep.stage_sizes


def test_audit_catches_test_rows_in_training(medium_corpus):
    cfg = quick_config(models=("logreg",))
    run = _HonestRun(cfg, medium_corpus, _Timer())
    data = run.fold_data(0)
    assert run.audit_fold(data) == []
    data.origins.add(run.test_ids[0])
    assert any("derive from test images" in v for v in run.audit_fold(data))
    data.checksums.add(medium_corpus.records[run.test_ids[1]].checksum)
    assert len(run.audit_fold(data)) == 2


def test_contaminated_run_raises(medium_corpus, monkeypatch):
    real = _HonestRun.fold_data

    def leaky_fold(self, fold):
        data = real(self, fold)
        data.origins.add(self.test_ids[0])
        return data

    monkeypatch.setattr(_HonestRun, "fold_data", leaky_fold)
    with pytest.raises(LeakageError, match="FAILED"):
        run_experiment(quick_config(models=("logreg",)), medium_corpus)


def test_augmented_copies_never_come_from_test_images(variant_reports, medium_corpus):
    rep = variant_reports["augmented"]
    plan = split_manifest(medium_corpus, 0.1, 3, 1)
    assert rep.split_summary["test"] == len(plan.test_indices)


# --------------------------------------------------------------------------- #
# leaky protocol


def test_leaky_split_sizes_match_ratios():
    assert leaky_split_sizes(8689) == (5560, 1391, 1738)
    assert sum(LEAKY_RATIOS) == 8689
    for total in (100, 777, 5390):
        tr, va, te = leaky_split_sizes(total)
        assert tr + va + te == total


def test_leaky_needs_augmented_variant(small_corpus):
    with pytest.raises(UsageError):
        run_leaky(quick_config(variant="original"), small_corpus)


def test_leaky_report_is_flagged_and_paired(medium_corpus):
    cfg = quick_config(variant="augmented", protocol="leaky", models=("logreg",))
    rep = run_experiment(cfg, medium_corpus)
    assert rep.leaky and not rep.audit.passed
    assert rep.audit.contamination > 0.5
    assert rep.honest is not None and not rep.honest.leaky
    delta = rep.overestimation()["logreg"]
    assert delta["accuracy"] == pytest.approx(
        rep.aggregates["logreg"]["accuracy"].mean - rep.honest.aggregates["logreg"]["accuracy"].mean
    )
    assert "LEAKY" in rep.audit.summary()


def test_leaky_without_copies_has_no_relatives(medium_corpus):
    cfg = quick_config(variant="augmented", protocol="leaky", models=("logreg",),
                       augment=AugmentPolicy(copies_per_image=0))
    rep = run_leaky(cfg, medium_corpus, pair=False)
    assert rep.audit.contamination == 0.0
    assert rep.honest is None


# --------------------------------------------------------------------------- #
# configuration


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(variant="mixup")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(models=())
    with pytest.raises(ConfigurationError):
        ExperimentConfig(models=("logreg", "logreg"))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(k=1)
    with pytest.raises(ConfigurationError):
        FeatureSource(kind="backbone")


def test_config_dict_round_trip_and_digest():
    cfg = quick_config(resample=replace(ExperimentConfig().resample, target={0: 50, 1: 40}))
    back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert back.digest() == cfg.digest()
    assert replace(cfg, seed=2).digest() != cfg.digest()
    assert replace(cfg, cache="/elsewhere").digest() == cfg.digest()


def test_load_config_file(tmp_path):
    (tmp_path / "exp.cfg").write_text(
        "[experiment]\nname = demo\nmanifest = data/manifest.tsv\nvariant = smoteenn\nmodels = logreg, svm\nk = 5\n"
        "[resample]\ntarget = 0:30, 1:30\n[mlp]\nhidden = 50\n[svm]\ngamma = auto\n"
    )
    cfg = load_config(tmp_path / "exp.cfg", {"k": 4, "seed": None})
    assert cfg.name == "demo" and cfg.variant == "smoteenn" and cfg.k == 4
    assert cfg.models == ("logreg", "svm")
    assert cfg.manifest == str((tmp_path / "data" / "manifest.tsv").resolve())
    assert cfg.resample.target == {0: 30, 1: 30}
    assert cfg.mlp.hidden == (50,)
    assert cfg.svm.gamma is None


@pytest.mark.parametrize(
    "text, match",
    [
        ("[experiment]\nbogus = 1\n", "unknown key"),
        ("[nonsense]\nx = 1\n", "unknown section"),
        ("[experiment]\nk = ten\n", "cannot parse"),
        ("[resample]\ntarget = 0-30\n", "class:count"),
        ("no section header\n", "malformed"),
    ],
)
def test_load_config_errors(tmp_path, text, match):
    (tmp_path / "bad.cfg").write_text(text)
    with pytest.raises(ConfigurationError, match=match):
        load_config(tmp_path / "bad.cfg")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "none.cfg")


def test_missing_manifest():
    with pytest.raises(ConfigurationError, match="no manifest"):
        run_experiment(quick_config())


def test_mean_kappa(variant_reports):
    rep = variant_reports["original"]
    assert mean_kappa(rep, "svm") == pytest.approx(np.mean(rep.kappas("svm")))
