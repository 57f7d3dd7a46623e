"""Seeded generators of test histories and input values."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np
from scipy.interpolate import PchipInterpolator

from .dynamics import InputSignal
from .errors import ConfigError
from .history import HistoryFunction, from_function, from_samples

GENERATORS = ("random-cubic-spline", "random-fourier", "constants", "spikes")


def spline_history(controls: np.ndarray, theta: float = 1.0) -> HistoryFunction:
    """PCHIP history through ``controls`` (``K+1`` or ``K+1 x n``) on a uniform grid.

    PCHIP does not overshoot, so the sup norm per coordinate equals the
    largest control magnitude.
    """
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    taus = np.linspace(-theta, 0.0, controls.shape[0])
    d = PchipInterpolator(taus, controls, axis=0).derivative()(taus)
    return from_samples(taus, controls, d)


def bump_history(center: float, width: float, amplitude, theta: float = 1.0) -> HistoryFunction:
    """Smooth Hermite bump of half-width ``width`` peaking at ``center``; zero elsewhere."""
    amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
    pts = [-theta, center - width, center, center + width, 0.0]
    vals = [0 * amp, 0 * amp, amp, 0 * amp, 0 * amp]
    taus, values = [], []
    for t, v in zip(pts, vals):
        # only zero-valued points can coincide, so dropping duplicates is safe
        if taus and t <= taus[-1] + 1e-15:
            continue
        taus.append(t)
        values.append(v)
    return from_samples(np.array(taus), np.array(values), np.zeros((len(taus), amp.size)))


@dataclass(frozen=True)
class SampleSpace:
    """Deterministic sample family; item ``i`` depends only on ``(seed, i)``."""

    seed: int = 0
    history_amplitude: float = 1.0
    history_generator: str = "random-cubic-spline"
    input_amplitude: float = 1.0
    sample_count: int = 100
    theta: float = 1.0
    n: int = 1
    m: int = 1
    n_controls: int = 8

    def __post_init__(self):
        if self.history_generator not in GENERATORS:
            raise ConfigError(f"unknown history generator {self.history_generator!r}")
        if self.sample_count < 1 or self.history_amplitude < 0 or self.input_amplitude < 0:
            raise ConfigError("sample space needs positive count and non-negative amplitudes")

    def with_(self, **kw) -> SampleSpace:
        return replace(self, **kw)

    def rng(self, index: int, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng([int(self.seed) & (2 ** 64 - 1), int(index), int(stream)])

    def controls(self, index: int) -> np.ndarray:
        """Spline control values for the random-cubic-spline generator."""
        rng = self.rng(index)
        bound = self.history_amplitude / np.sqrt(self.n)
        return rng.uniform(-bound, bound, size=(self.n_controls + 1, self.n))

    def history(self, index: int) -> HistoryFunction:
        gen = self.history_generator
        R, theta, n = self.history_amplitude, self.theta, self.n
        if gen == "random-cubic-spline":
            return spline_history(self.controls(index), theta)
        rng = self.rng(index)
        if gen == "constants":
            v = rng.normal(size=n)
            v *= R * rng.uniform() / max(np.linalg.norm(v), 1e-300)
            return from_samples(np.array([-theta, 0.0]), np.stack([v, v]), np.zeros((2, n)))
        if gen == "random-fourier":
            k = np.arange(1, 5)
            a = rng.normal(size=(k.size, n)) / k[:, None]
            b = rng.normal(size=(k.size, n)) / k[:, None]
            c0 = rng.normal(size=n)
            w = np.pi * k / theta

            def f(s):
                s = np.asarray(s)[:, None, None]
                return c0 + np.sum(a * np.sin(w[:, None] * s) + b * np.cos(w[:, None] * s), axis=1)

            def df(s):
                s = np.asarray(s)[:, None, None]
                ww = w[:, None]
                return np.sum(a * ww * np.cos(ww * s) - b * ww * np.sin(ww * s), axis=1)

            phi = from_function(f, theta, 64, derivative=df)
            scale = R * rng.uniform(0.1, 1.0) / max(phi.sup_norm(), 1e-300)
            return phi.map_values(scale)
        # spikes
        width = theta * rng.uniform(0.01, 0.1)
        center = rng.uniform(-theta + width, -width)
        v = rng.normal(size=n)
        v *= R * rng.uniform(0.2, 1.0) / max(np.linalg.norm(v), 1e-300)
        return bump_history(center, width, v, theta)

    def input_value(self, index: int) -> np.ndarray:
        """Random input value with ``|u| <= input_amplitude``."""
        bound = self.input_amplitude / np.sqrt(self.m)
        return self.rng(index, 1).uniform(-bound, bound, size=self.m)

    def input_signal(self, index: int, horizon: float, pieces: int = 8) -> InputSignal:
        """Random piecewise-constant signal with ``sup |u| <= input_amplitude``."""
        rng = self.rng(index, 2)
        cuts = np.sort(rng.uniform(0.0, horizon, size=pieces - 1))
        bound = self.input_amplitude / np.sqrt(self.m)
        vals = rng.uniform(-bound, bound, size=(pieces, self.m))
        return InputSignal(np.concatenate([[0.0], cuts]), vals, horizon)

    def sample(self, index: int) -> tuple[HistoryFunction, np.ndarray]:
        return self.history(index), self.input_value(index)

    def __iter__(self) -> Iterator[tuple[HistoryFunction, np.ndarray]]:
        for i in range(self.sample_count):
            yield self.sample(i)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "history_amplitude": self.history_amplitude,
                "history_generator": self.history_generator,
                "input_amplitude": self.input_amplitude, "sample_count": self.sample_count,
                "theta": self.theta, "n": self.n, "m": self.m, "n_controls": self.n_controls}
