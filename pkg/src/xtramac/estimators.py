"""scikit-learn style wrappers.

These expose the simulator through ``fit``/``transform``/``predict`` so it can
sit in a :class:`sklearn.pipeline.Pipeline` or be cloned with
``get_params``/``set_params``. All arrays hold raw bit patterns unless the
class says otherwise.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .formats import get_format, parse_datatype
from .gemv import GemvConfig, load_gemv_config, oracle_gemv, simulate_gemv
from .oracle import float64_table, oracle_mac_batch, quantize_float64, float64_to_bits
from .pipeline import MacConfig, evaluate


def _check_patterns(X, width: int, name: str, ncols: int | None = None) -> np.ndarray:
    X = check_array(X, dtype=np.int64, ensure_2d=True, ensure_min_samples=0)
    if ncols is not None and X.shape[1] != ncols:
        raise ValueError(f"{name} expects {ncols} columns, got {X.shape[1]}")
    if X.size and (X.min() < 0 or X.max() >= 1 << width):
        raise ValueError(f"{name} patterns must lie in [0, 2**{width})")
    return X


class FormatEncoder(TransformerMixin, BaseEstimator):
    """Real values to bit patterns of a float format (RN-even, FTZ) and back."""

    def __init__(self, fmt: str = "bf16"):
        self.fmt = fmt

    def fit(self, X, y=None):
        check_array(X, dtype=np.float64, ensure_all_finite=False, ensure_min_samples=0)
        f = get_format(self.fmt)
        if f.is_int:
            raise ValueError("FormatEncoder handles floating-point formats only")
        self.format_ = f
        self.n_features_in_ = np.shape(X)[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "format_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=False, ensure_min_samples=0)
        if not self.format_.has_nan and np.isnan(X).any():
            raise ValueError(f"{self.format_.name} cannot encode NaN")
        return float64_to_bits(quantize_float64(X, self.format_), self.format_)

    def inverse_transform(self, X):
        check_is_fitted(self, "format_")
        X = _check_patterns(X, self.format_.width, "FormatEncoder")
        return float64_table(self.format_)[X]


class MacTransformer(TransformerMixin, BaseEstimator):
    """Rows ``(a, b, c)`` of bit patterns to the MAC result ``p``.

    ``engine="pipeline"`` runs the four-stage model, ``"oracle"`` the
    reference (``fused`` applies to the oracle only).
    """

    def __init__(self, datatype: str = "bf16xbf16", engine: str = "pipeline", fused: bool = False):
        self.datatype = datatype
        self.engine = engine
        self.fused = fused

    def fit(self, X=None, y=None):
        dt = parse_datatype(self.datatype)
        if self.engine not in ("pipeline", "oracle"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.fused and self.engine == "pipeline":
            raise ValueError("the pipeline implements unfused accumulation only")
        self.datatype_ = dt
        self.config_ = MacConfig((dt,))
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "datatype_")
        dt = self.datatype_
        X = check_array(X, dtype=np.int64, ensure_min_samples=0)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3 columns (a, b, c), got {X.shape[1]}")
        for col, fmt in zip(range(3), (dt.type_a, dt.type_b, dt.type_c)):
            _check_patterns(X[:, col:col + 1], fmt.width, fmt.name)
        if self.engine == "oracle":
            return oracle_mac_batch(X[:, 0], X[:, 1], X[:, 2], dt, fused=self.fused)[:, None]
        if not len(X):
            return np.zeros((0, 1), dtype=np.int64)
        # one MAC per slot, in lane (0, 0)
        p = self.config_.plans[0]
        lane = p.lane_map.index((0, 0))
        c = np.zeros((len(X), self.config_.lanes), dtype=np.int64)
        c[:, lane] = X[:, 2]
        return evaluate(self.config_, 0, X[:, 0], X[:, 1], c)[:, lane:lane + 1]


class GemvEstimator(BaseEstimator):
    """``fit(W)`` loads an ``m x k`` weight matrix; ``predict(x)`` returns ``W @ x`` as patterns.

    ``x`` may be one activation vector or a batch of them (rows). The last
    call's performance report is kept in ``report_``.
    """

    def __init__(self, datatype: str = "int4xbf16", platform: str = "u55c", mode: str = "batch",
                 verify: bool = False):
        self.datatype = datatype
        self.platform = platform
        self.mode = mode
        self.verify = verify

    def fit(self, W, y=None):
        dt = parse_datatype(self.datatype)
        self.weights_ = _check_patterns(W, dt.type_a.width, "weights")
        self.datatype_ = dt
        self.config_: GemvConfig = load_gemv_config(self.platform, datatype=dt.name, lanes_per_mac=None)
        self.n_features_in_ = self.weights_.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        X = np.asarray(X)
        single = X.ndim == 1
        X = _check_patterns(X.reshape(1, -1) if single else X, self.datatype_.type_b.width, "activations",
                            self.n_features_in_)
        m, k = self.weights_.shape
        out = np.zeros((len(X), m), dtype=np.int64)
        for i, x in enumerate(X):
            res = simulate_gemv(self.config_, m, k, self.weights_, x, tile_dtypes=[self.datatype_], mode=self.mode)
            if self.verify and not np.array_equal(res.output, oracle_gemv(self.weights_, x, [self.datatype_] * m)):
                raise AssertionError("pipeline GEMV disagrees with the oracle reduction")
            out[i] = res.output
            self.report_ = res.report
        return out[0] if single else out
