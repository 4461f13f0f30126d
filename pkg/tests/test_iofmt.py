import numpy as np
import pytest

from semprobe import iofmt
from semprobe.builtin import builtin_spec
from semprobe.errors import UnknownSpec
from semprobe.fit import GaussianPrior, IfaGroupSpec
from semprobe.items import MISSING, ItemSpec, LatentDist, ResponseData


def test_model_spec_roundtrip(tmp_path):
    for name in ("m2pl5", "m3pl15", "grm20", "cyh1"):
        bm = builtin_spec(name)
        path = tmp_path / f"{name}.yaml"
        iofmt.save_model_spec(path, bm.groups, {"points_per_dim": bm.points_per_dim})
        groups, quad = iofmt.load_model_spec(path)
        assert quad["points_per_dim"] == bm.points_per_dim
        assert len(groups) == len(bm.groups)
        for got, want in zip(groups, bm.groups):
            assert got.n == want.n
            assert np.allclose(got.latent.mean, want.latent.mean)
            assert np.allclose(got.latent.var, want.latent.var)
            assert len(got.items) == len(want.items)
            for gi, wi in zip(got.items, want.items):
                assert gi.kind == wi.kind
                assert np.allclose(gi.natural(), wi.natural())
                assert np.array_equal(gi.free, wi.free)
                assert gi.labels == wi.labels
            assert [
                (p.item, p.param, p.mean, p.sd) for p in got.priors
            ] == [(p.item, p.param, p.mean, p.sd) for p in want.priors]


def test_model_spec_with_prior_roundtrip(tmp_path):
    group = IfaGroupSpec(
        name="g",
        items=[ItemSpec(kind="dichotomous", slopes=[1.0], intercepts=[0.0], g=-1.1)],
        latent=LatentDist(mean=[0.0], var=[1.0]),
        n=100,
        priors=[GaussianPrior(item=0, param=2, mean=-1.1, sd=0.5)],
    )
    path = tmp_path / "m.yaml"
    iofmt.save_model_spec(path, [group])
    groups, _ = iofmt.load_model_spec(path)
    assert groups[0].priors[0].sd == 0.5


def test_load_model_spec_rejects_garbage(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("just: nonsense\n")
    with pytest.raises(UnknownSpec):
        iofmt.load_model_spec(path)


def test_response_data_roundtrip(tmp_path):
    patterns = np.array([[0, 1, 2], [1, MISSING, 0], [0, 1, 2]])
    data = ResponseData(patterns=patterns[:2], freq=np.array([3.0, 1.0]))
    path = tmp_path / "d.csv"
    iofmt.save_response_data(path, data)
    back = iofmt.load_response_data(path)
    assert np.array_equal(back.patterns, data.patterns)
    assert np.array_equal(back.freq, data.freq)


def test_response_data_missing_cell_is_empty(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("i1,i2\n0,\n1,0\n1,0\n")
    data = iofmt.load_response_data(path)
    assert data.n == 3
    assert MISSING in data.patterns


def test_response_data_freq_merging(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("i1,i2,freq\n0,1,2\n0,1,3\n1,1,1\n")
    data = iofmt.load_response_data(path)
    idx = np.where((data.patterns == [0, 1]).all(axis=1))[0][0]
    assert data.freq[idx] == 5.0
    assert data.n == 6


def test_matrix_roundtrip(tmp_path):
    m = np.arange(9.0).reshape(3, 3) / 7
    names = ["a", "b", "c"]
    path = tmp_path / "m.csv"
    iofmt.write_matrix(path, m, names)
    back, back_names = iofmt.read_matrix(path)
    assert back_names == names
    assert np.array_equal(back, m)


def test_study_spec_loading(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("model: m2pl5\nreplications: 4\nestimators: [agile]\n")
    doc = iofmt.load_study_spec(path)
    assert doc["model"] == "m2pl5"
    bad = tmp_path / "s2.yaml"
    bad.write_text("a: 1\n")
    with pytest.raises(UnknownSpec):
        iofmt.load_study_spec(bad)
