"""Per-step emission rate as a polynomial in speed and acceleration.

rate(v, a) = c0 + c1*v*a + c2*v*a^2 + c3*v + c4*v^2 + c5*v^3, clamped at zero.
Coefficients are configuration inputs per vehicle class; the bundled table
carries placeholder magnitudes (grams per second) and is not an empirical fit.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EmissionCoefficients:
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.c0, self.c1, self.c2, self.c3, self.c4, self.c5)


# Placeholder magnitudes, g/s with v in m/s and a in m/s^2.
DEFAULT_COEFFICIENTS: dict[str, EmissionCoefficients] = {
    "PV": EmissionCoefficients(0.15, 0.030, 0.015, 0.020, 0.0020, 0.00020),
    "bus": EmissionCoefficients(0.45, 0.080, 0.040, 0.060, 0.0060, 0.00050),
    "AV": EmissionCoefficients(0.12, 0.024, 0.012, 0.016, 0.0016, 0.00016),
}


def emission_rate(v: float, a: float, coeffs: EmissionCoefficients) -> float:
    """Instantaneous emission rate; negative polynomial values clamp to 0."""
    if v < 0:
        raise ValueError(f"speed must be non-negative, got {v}")
    c = coeffs
    value = c.c0 + c.c1 * v * a + c.c2 * v * a * a + c.c3 * v + c.c4 * v * v + c.c5 * v ** 3
    return max(0.0, value)


def coefficients_from_dict(doc: dict) -> dict[str, EmissionCoefficients]:
    """Parse a {class: [c0..c5]} table; missing classes fall back to defaults."""
    table = dict(DEFAULT_COEFFICIENTS)
    for cls, row in doc.items():
        table[cls] = EmissionCoefficients(*[float(v) for v in row])
    return table


def coefficients_to_dict(table: dict[str, EmissionCoefficients]) -> dict:
    return {cls: list(c.as_tuple()) for cls, c in table.items()}
