from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from xtramac import FormatEncoder, GemvEstimator, MacTransformer
from xtramac.formats import DATATYPES, from_float
from xtramac.gemv import oracle_gemv


def _triples(dt, n, rng):
    return np.stack([rng.integers(0, 1 << f.width, n) for f in (dt.type_a, dt.type_b, dt.type_c)], axis=1)


@pytest.mark.parametrize("name", list(DATATYPES))
def test_mac_transformer_pipeline_equals_oracle(name, rng):
    X = _triples(DATATYPES[name], 2000, rng)
    p = MacTransformer(name).fit_transform(X)
    o = MacTransformer(name, engine="oracle").fit_transform(X)
    assert p.shape == (2000, 1) and np.array_equal(p, o)


def test_mac_transformer_params_and_validation(rng):
    t = MacTransformer("fp8xfp8")
    assert clone(t).get_params() == {"datatype": "fp8xfp8", "engine": "pipeline", "fused": False}
    with pytest.raises(NotFittedError):
        t.transform([[0, 0, 0]])
    t.fit()
    with pytest.raises(ValueError, match="3 columns"):
        t.transform([[0, 0]])
    with pytest.raises(ValueError, match="patterns"):
        t.transform([[256, 0, 0]])
    assert t.transform(np.zeros((0, 3))).shape == (0, 1)
    with pytest.raises(ValueError):
        MacTransformer(fused=True).fit()
    with pytest.raises(ValueError):
        MacTransformer(engine="gpu").fit()
    fused = MacTransformer("bf16xbf16", engine="oracle", fused=True).fit()
    assert fused.transform([[0x3F81, 0x3F81, 0xBF82]])[0, 0] == 0x3880


def test_format_encoder(rng):
    enc = FormatEncoder("bf16").fit(np.zeros((1, 3)))
    x = rng.normal(size=(50, 3)) * 100
    bits = enc.transform(x)
    assert bits.tolist() == [[from_float(v, enc.format_) for v in row] for row in x]
    back = enc.inverse_transform(bits)
    assert np.all(np.abs(back - x) <= np.abs(x) * 2.0 ** -8)
    with pytest.raises(ValueError):
        FormatEncoder("int8").fit([[0.0]])
    fp4 = FormatEncoder("fp4").fit([[0.0]])
    assert fp4.transform([[1.25, 0.75, 100.0]]).tolist() == [[0x2, 0x0, 0x7]]


def test_encoder_feeds_mac_in_sklearn_pipeline():
    enc = FormatEncoder("bf16").fit([[0.0, 0.0, 0.0]])
    pipe = make_pipeline(enc, MacTransformer("bf16xbf16"))
    pipe.fit([[0.0, 0.0, 0.0]])
    out = pipe.transform([[1.5, 2.0, 0.25], [3.0, -1.0, 3.0]])
    assert enc.inverse_transform(out).ravel().tolist() == [3.25, 0.0]


def test_gemv_estimator(rng):
    W = rng.integers(0, 16, (10, 12))
    x = (rng.integers(120, 130, 12) << 7) | rng.integers(0, 128, 12)
    g = GemvEstimator().fit(W)
    y = g.predict(x)
    assert np.array_equal(y, oracle_gemv(W, x, [DATATYPES["int4xbf16"]] * 10))
    assert g.predict(np.stack([x, x])).shape == (2, 10)
    assert g.report_.macs == 120
    assert np.array_equal(GemvEstimator(mode="cycle", verify=True).fit(W).predict(x), y)
    with pytest.raises(ValueError):
        g.predict(x[:5])
    with pytest.raises(ValueError):
        GemvEstimator().fit(W + 16)
    with pytest.raises(NotFittedError):
        GemvEstimator().predict(x)


def test_estimators_in_function_pipeline(rng):
    # a stateless column selector ahead of the MAC
    split = FunctionTransformer(lambda X: np.asarray(X)[:, :3])
    pipe = make_pipeline(split, MacTransformer("int8xint8", engine="oracle"))
    X = np.array([[3, 0xFE, 10, 99]])
    assert pipe.fit_transform(X).tolist() == [[4]]
