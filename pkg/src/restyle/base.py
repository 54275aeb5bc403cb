"""Estimator plumbing: parameter introspection and input validation helpers.

Mirrors the scikit-learn conventions (``get_params``/``set_params``, fitted
attributes carry a trailing underscore) without importing scikit-learn, so the
models still duck-type into that ecosystem.
"""

from __future__ import annotations

import inspect

import numpy as np


class ParamMixin:
    """get_params/set_params driven by the __init__ signature."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [name for name, p in sig.parameters.items()
                if name != "self" and p.kind != p.VAR_KEYWORD]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for {type(self).__name__}")
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in sorted(self.get_params().items()))
        return f"{type(self).__name__}({args})"


def check_fitted(estimator, attribute: str) -> None:
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted; call fit() first")


def check_token_sequences(X) -> list[list[int]]:
    """Validate a list of integer-id sequences."""
    out = []
    for i, seq in enumerate(X):
        seq = [int(t) for t in seq]
        if not seq:
            raise ValueError(f"sequence {i} is empty")
        if any(t < 0 for t in seq):
            raise ValueError(f"sequence {i} contains negative ids")
        out.append(seq)
    if not out:
        raise ValueError("no sequences given")
    return out


def check_binary_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary (0 or 1)")
    return y
