# Copyright 2025 t54 labs
# SPDX-License-Identifier: Apache-2.0
from __future__ import annotations

from enum import Enum
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

_TINY = np.finfo(float).tiny


class UtilityDomainError(ValueError):
    pass


class Shape(str, Enum):
    concave = "concave"
    convex = "convex"
    linear = "linear"


def _check_domain(lam: np.ndarray) -> None:
    if np.any(lam < 0.0):
        raise UtilityDomainError("utility is defined on [0, inf); got a negative cost")


class _UtilityBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    @property
    def shape(self) -> Shape:  # pragma: no cover - overridden
        raise NotImplementedError

    @property
    def is_concave(self) -> bool:
        return self.shape in (Shape.concave, Shape.linear)

    @property
    def is_convex(self) -> bool:
        return self.shape in (Shape.convex, Shape.linear)

    def eval(self, lam):
        x = np.asarray(lam, dtype=float)
        _check_domain(x)
        return self._eval(x)

    def deriv_left(self, lam):
        """Left derivative; at 0 the right derivative is returned (U lives on [0, inf))."""
        x = np.asarray(lam, dtype=float)
        _check_domain(x)
        return self._deriv(x)

    def deriv_right(self, lam):
        x = np.asarray(lam, dtype=float)
        _check_domain(x)
        return self._deriv(x)

    def inverse(self, y):
        """U^{-1}(y) for y in the range of U on [0, inf); results below 0 are clipped to 0."""
        return np.maximum(self._inv(np.asarray(y, dtype=float)), 0.0)

    def _eval(self, x: np.ndarray):  # pragma: no cover - overridden
        raise NotImplementedError

    def _deriv(self, x: np.ndarray):  # pragma: no cover - overridden
        raise NotImplementedError

    def _inv(self, y: np.ndarray):  # pragma: no cover - overridden
        raise NotImplementedError


class ExponentialUtility(_UtilityBase):
    """U(lam) = exp(gamma * lam) / gamma; risk-averse for gamma > 0."""

    kind: Literal["exponential"] = "exponential"
    gamma: float

    @field_validator("gamma")
    @classmethod
    def _nonzero(cls, v: float) -> float:
        if v == 0.0 or not np.isfinite(v):
            raise ValueError("gamma must be finite and non-zero")
        return v

    @property
    def shape(self) -> Shape:
        return Shape.convex if self.gamma > 0 else Shape.concave

    def _eval(self, x):
        return np.exp(self.gamma * x) / self.gamma

    def _deriv(self, x):
        return np.exp(self.gamma * x)

    def _inv(self, y):
        return np.log(np.maximum(self.gamma * y, _TINY)) / self.gamma


class PowerUtility(_UtilityBase):
    """U(lam) = lam**p for p > 1; (lam + eta)**p - eta**p for p < 1.

    The shift keeps U'(0) finite in the concave branch.
    """

    kind: Literal["power"] = "power"
    p: float = Field(gt=0.0)
    eta: float = Field(default=1e-3, gt=0.0)

    @model_validator(mode="after")
    def _not_linear(self) -> "PowerUtility":
        if self.p == 1.0:
            raise ValueError("power utility with p == 1 is the linear utility")
        return self

    @property
    def shape(self) -> Shape:
        return Shape.convex if self.p > 1.0 else Shape.concave

    def _eval(self, x):
        if self.p > 1.0:
            return np.power(x, self.p)
        return np.power(x + self.eta, self.p) - self.eta**self.p

    def _deriv(self, x):
        if self.p > 1.0:
            return self.p * np.power(x, self.p - 1.0)
        return self.p * np.power(x + self.eta, self.p - 1.0)

    def _inv(self, y):
        if self.p > 1.0:
            return np.power(np.maximum(y, 0.0), 1.0 / self.p)
        return np.power(np.maximum(y + self.eta**self.p, 0.0), 1.0 / self.p) - self.eta


class Log1pUtility(_UtilityBase):
    kind: Literal["log1p"] = "log1p"

    @property
    def shape(self) -> Shape:
        return Shape.concave

    def _eval(self, x):
        return np.log1p(x)

    def _deriv(self, x):
        return 1.0 / (1.0 + x)

    def _inv(self, y):
        return np.expm1(y)


class LinearUtility(_UtilityBase):
    kind: Literal["linear"] = "linear"

    @property
    def shape(self) -> Shape:
        return Shape.linear

    def _eval(self, x):
        return x * 1.0

    def _deriv(self, x):
        return np.ones_like(x)

    def _inv(self, y):
        return y * 1.0


Utility = Annotated[
    Union[ExponentialUtility, PowerUtility, Log1pUtility, LinearUtility],
    Field(discriminator="kind"),
]


def eval(u: _UtilityBase, lam):  # noqa: A001
    return u.eval(lam)


def deriv_left(u: _UtilityBase, lam):
    return u.deriv_left(lam)


def deriv_right(u: _UtilityBase, lam):
    return u.deriv_right(lam)
