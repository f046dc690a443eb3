"""
Effects Tools: effect sizes, optimal dose, counterfactual and cost-benefit

Turns fitted coefficients into percentage effects, the crime-minimizing blitz
duration, prevented-crime counts and a money summary. Money is held in integer
minor units with a currency tag; conversion is for display only.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import csv
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from blitz_eval.config import EffectsConfig
from blitz_eval.exceptions import InvalidParameterError, NoInteriorMinimumError
from blitz_eval.tools.ingest import MAX_CELL_PERIOD_HOURS
from blitz_eval.utils.logger import get_logger

logger = get_logger()

CENT = Decimal("0.01")
DOSE_CURVE_STEPS = 60
DEFAULT_MURDER_SHARE = 0.05


@dataclass(frozen=True, order=True)
class Money:
    """Amount in integer minor units (cents) of one currency"""

    minor: int
    currency: str

    @classmethod
    def of(cls, amount: Union[Decimal, int, float, str], currency: str) -> "Money":
        value = Decimal(str(amount)) if not isinstance(amount, Decimal) else amount
        return cls(int((value / CENT).to_integral_value(ROUND_HALF_EVEN)), currency)

    @property
    def amount(self) -> Decimal:
        return Decimal(self.minor) * CENT

    def _same(self, other: "Money") -> None:
        if other.currency != self.currency:
            raise ValueError(f"Cannot combine {self.currency} with {other.currency}")

    def __add__(self, other: "Money") -> "Money":
        self._same(other)
        return Money(self.minor + other.minor, self.currency)

    def __sub__(self, other: "Money") -> "Money":
        self._same(other)
        return Money(self.minor - other.minor, self.currency)

    def times(self, factor: Union[Decimal, int, float]) -> "Money":
        return Money.of(self.amount * Decimal(str(factor)), self.currency)

    def convert(self, rate: Decimal, currency: str) -> "Money":
        """Display conversion: amount / rate units of the target currency"""
        return Money.of(self.amount / Decimal(str(rate)), currency)

    def format(self) -> str:
        return f"{self.currency} {self.amount:,.2f}"

    def to_dict(self) -> Dict[str, Any]:
        return {"minor_units": self.minor, "currency": self.currency, "amount": str(self.amount)}


class CostBenefitParams(BaseModel):
    """Inputs of the counterfactual and cost-benefit arithmetic"""

    model_config = ConfigDict(frozen=True)

    currency: str = "BRL"
    value_statistical_life: Decimal
    value_statistical_robbery: Decimal
    murder_share: float = Field(ge=0, le=1)
    treated_cell_periods: int = Field(ge=0)
    avg_treated_outcome: float = Field(ge=0)
    effect_fraction: float = Field(gt=-1, le=0)
    fines_total: Decimal = Decimal("0")
    officers_per_blitz: int = Field(ge=0)
    blitzes_per_day: int = Field(1, ge=0)
    vehicles_needed: int = Field(ge=0)
    salary_per_year: Decimal
    vehicle_unit_cost: Decimal
    years: float = Field(gt=0)

    @property
    def officers(self) -> int:
        return self.officers_per_blitz * self.blitzes_per_day


def dose_effect(delta: float, theta: float, hours: float) -> float:
    """Percent change in expected crime at a dose of ``hours``"""
    return (math.exp(delta * hours + theta * hours**2) - 1.0) * 100.0


def pct_effect(delta: float, theta: float) -> float:
    """One-hour direct effect, including the quadratic term at 1 h"""
    return dose_effect(delta, theta, 1.0)


def spatial_effect(rho: float, avg_neighbors: float) -> float:
    """Effect on a cell of one blitz hour in a single neighbour"""
    if not avg_neighbors > 0:
        raise InvalidParameterError(
            f"Average neighbour count must be positive, got {avg_neighbors}", parameter="avg_neighbors"
        )
    return (math.exp(rho / avg_neighbors) - 1.0) * 100.0


def lag_effect(gamma: float) -> float:
    return (math.exp(gamma) - 1.0) * 100.0


def optimal_duration(
    delta: float, theta: float, maximize: bool = False, max_hours: float = MAX_CELL_PERIOD_HOURS
) -> float:
    """
    Dose at the vertex of delta * h + theta * h^2, clipped to [0, max_hours].

    By default the vertex must be a minimum (theta > 0); with maximize=True
    it must be a maximum (theta < 0), as for outputs such as vehicles stopped.

    Raises:
        NoInteriorMinimumError: the quadratic opens the wrong way
    """
    if (theta <= 0 and not maximize) or (theta >= 0 and maximize):
        kind = "maximum" if maximize else "minimum"
        raise NoInteriorMinimumError(f"No interior {kind}: theta = {theta}")
    return min(max(-delta / (2.0 * theta), 0.0), max_hours)


def dose_curve(delta: float, theta: float) -> List[Tuple[float, float, float]]:
    """(hours, log effect, percent effect) over [0, 6] h in 0.1 h steps"""
    points = []
    for i in range(DOSE_CURVE_STEPS + 1):
        h = i / 10.0
        log_effect = delta * h + theta * h**2
        points.append((h, log_effect, (math.exp(log_effect) - 1.0) * 100.0))
    return points


def write_dose_curve_csv(delta: float, theta: float, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["hours", "log_effect", "pct_effect"])
        for h, log_effect, pct in dose_curve(delta, theta):
            writer.writerow([f"{h:.1f}", f"{log_effect:.10g}", f"{pct:.10g}"])
    return path


def counterfactual_prevented(
    avg_treated_outcome: float, effect_fraction: float, treated_cell_periods: int
) -> Tuple[float, float, float]:
    """
    Crime that treated cell-periods would have had without the blitzes.

    Returns:
        (baseline, prevented per treated cell-period, total prevented)

    Raises:
        InvalidParameterError: effect_fraction <= -1
    """
    if effect_fraction <= -1.0:
        raise InvalidParameterError(
            f"Effect fraction must exceed -1, got {effect_fraction}", parameter="effect_fraction"
        )
    baseline = avg_treated_outcome / (1.0 + effect_fraction)
    per_period = baseline - avg_treated_outcome
    return baseline, per_period, per_period * treated_cell_periods


@dataclass(frozen=True)
class CostBenefit:
    benefit: Money
    fines: Money
    cost: Money

    @property
    def net(self) -> Money:
        return self.benefit + self.fines - self.cost


def cost_benefit(params: CostBenefitParams, total_prevented: float) -> CostBenefit:
    """
    benefit = prevented x (share x VSL + (1 - share) x value of a robbery)
    cost = officers x salary x years + vehicles x unit cost
    """
    share = Decimal(str(params.murder_share))
    per_crime = share * params.value_statistical_life + (1 - share) * params.value_statistical_robbery
    benefit = Money.of(Decimal(str(total_prevented)) * per_crime, params.currency)
    staff = Decimal(params.officers) * params.salary_per_year * Decimal(str(params.years))
    fleet = Decimal(params.vehicles_needed) * params.vehicle_unit_cost
    return CostBenefit(
        benefit=benefit,
        fines=Money.of(params.fines_total, params.currency),
        cost=Money.of(staff + fleet, params.currency),
    )


@dataclass
class EffectsReport:
    direct_pct: float
    spatial_pct: Optional[float]
    lag_pcts: Dict[int, float]
    optimal_hours: Optional[float]
    coefficients: Dict[str, float]
    avg_neighbors: Optional[float] = None
    weights_label: Optional[str] = None
    avg_treated_hours: Optional[float] = None
    effect_fraction: Optional[float] = None
    baseline: Optional[float] = None
    prevented_per_period: Optional[float] = None
    prevented_crimes: Optional[float] = None
    money: Optional[CostBenefit] = None
    exchange_rate: Decimal = Decimal("5.0")
    display_currency: str = "USD"
    reported_total_cost: Optional[Money] = None
    spatial_lag_pcts: Dict[int, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def cost_discrepancy(self) -> Optional[Money]:
        if self.money is None or self.reported_total_cost is None:
            return None
        return self.reported_total_cost - self.money.cost

    def _display(self, money: Money) -> Money:
        return money.convert(self.exchange_rate, self.display_currency)

    def to_dict(self) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            "direct_pct": self.direct_pct,
            "spatial_pct": self.spatial_pct,
            "lag_pcts": {str(j): v for j, v in sorted(self.lag_pcts.items())},
            "spatial_lag_pcts": {str(j): v for j, v in sorted(self.spatial_lag_pcts.items())},
            "optimal_hours": self.optimal_hours,
            "coefficients": dict(self.coefficients),
            "avg_neighbors": self.avg_neighbors,
            "weights": self.weights_label,
            "avg_treated_hours": self.avg_treated_hours,
            "effect_fraction": self.effect_fraction,
            "counterfactual": {
                "baseline": self.baseline,
                "prevented_per_period": self.prevented_per_period,
                "prevented_crimes": self.prevented_crimes,
            },
            "notes": list(self.notes),
        }
        if self.money is not None:
            result["money"] = {
                name: {"value": m.to_dict(), "display": self._display(m).to_dict()}
                for name, m in (
                    ("benefit", self.money.benefit),
                    ("fines", self.money.fines),
                    ("cost", self.money.cost),
                    ("net", self.money.net),
                )
            }
            result["money"]["exchange_rate"] = str(self.exchange_rate)
        discrepancy = self.cost_discrepancy
        if discrepancy is not None:
            result["cost_discrepancy"] = {
                "reported": self.reported_total_cost.to_dict(),
                "computed": self.money.cost.to_dict(),
                "difference": discrepancy.to_dict(),
            }
        return result

    def render_text(self) -> str:
        lines = ["Effects summary", "==============="]
        lines.append(f"Direct effect of one blitz hour:   {self.direct_pct:+.2f}%")
        if self.spatial_pct is not None:
            lines.append(
                f"Spatial effect per neighbour hour: {self.spatial_pct:+.3f}% "
                f"({self.weights_label}, {self.avg_neighbors:.1f} neighbours)"
            )
        for j, pct in sorted(self.lag_pcts.items()):
            lines.append(f"Lag {j:>2} effect:                    {pct:+.2f}%")
        if self.optimal_hours is not None:
            lines.append(f"Crime-minimizing duration:         {self.optimal_hours:.2f} h")
        if self.prevented_crimes is not None:
            dose = f"{self.avg_treated_hours:.2f} h" if self.avg_treated_hours is not None else "the"
            lines.append(f"Effect at {dose} average dose:    {100 * self.effect_fraction:+.2f}%")
            lines.append(f"Counterfactual mean per period:    {self.baseline:.4f}")
            lines.append(f"Prevented per treated period:      {self.prevented_per_period:.4f}")
            lines.append(f"Prevented crimes (total):          {self.prevented_crimes:.1f}")
        if self.money is not None:
            for name, m in (
                ("Benefit", self.money.benefit),
                ("Fines", self.money.fines),
                ("Cost", self.money.cost),
                ("Net", self.money.net),
            ):
                lines.append(f"{name + ':':<35}{m.format()} ({self._display(m).format()})")
        discrepancy = self.cost_discrepancy
        if discrepancy is not None:
            lines.append(
                f"Reported cost {self.reported_total_cost.format()} differs from computed by "
                f"{discrepancy.format()}"
            )
        lines.extend(f"Note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"


def build_effects_report(
    coefficients: Dict[str, float],
    config: EffectsConfig,
    avg_neighbors: Optional[float] = None,
    observed: Optional[Dict[str, float]] = None,
    weights_label: Optional[str] = None,
    treatment: str = "blitz",
) -> EffectsReport:
    """
    Effects of a fitted model.

    Args:
        coefficients: Fitted coefficients by regressor name
        config: Effects section of the run configuration (overrides win over
            ``observed``)
        avg_neighbors: Mean neighbour count of the weight matrix behind w_blitz
        observed: Data-derived inputs (treated_cell_periods, avg_treated_hours,
            avg_treated_outcome, murder_share)
        weights_label: Label of the weight matrix, for display

    Returns:
        EffectsReport; cost-benefit fields are filled when the counterfactual
        inputs are available
    """
    observed = observed or {}
    delta = coefficients[treatment]
    theta = coefficients.get(f"{treatment}_sq", 0.0)
    notes: List[str] = []

    rho = coefficients.get(f"w_{treatment}")
    spatial = spatial_effect(rho, avg_neighbors) if rho is not None and avg_neighbors else None
    lag_prefix, spatial_lag_prefix = f"lag_{treatment}_", f"lag_w_{treatment}_"
    lag_pcts = {
        int(name[len(lag_prefix) :]): lag_effect(value)
        for name, value in coefficients.items()
        if name.startswith(lag_prefix)
    }
    spatial_lag_pcts = {}
    if avg_neighbors:
        spatial_lag_pcts = {
            int(name[len(spatial_lag_prefix) :]): spatial_effect(value, avg_neighbors)
            for name, value in coefficients.items()
            if name.startswith(spatial_lag_prefix)
        }

    try:
        optimal: Optional[float] = optimal_duration(delta, theta)
    except NoInteriorMinimumError as e:
        optimal = None
        notes.append(str(e))

    report = EffectsReport(
        direct_pct=pct_effect(delta, theta),
        spatial_pct=spatial,
        lag_pcts=lag_pcts,
        spatial_lag_pcts=spatial_lag_pcts,
        optimal_hours=optimal,
        coefficients={k: coefficients[k] for k in sorted(coefficients)},
        avg_neighbors=avg_neighbors,
        weights_label=weights_label,
        exchange_rate=config.exchange_rate,
        display_currency=config.display_currency,
        notes=notes,
    )

    def pick(name: str):
        value = getattr(config, name)
        return value if value is not None else observed.get(name)

    hours = pick("avg_treated_hours")
    effect_fraction = config.effect_fraction
    if effect_fraction is None and hours is not None:
        effect_fraction = dose_effect(delta, theta, hours) / 100.0
    avg_outcome = pick("avg_treated_outcome")
    treated = pick("treated_cell_periods")
    if effect_fraction is None or avg_outcome is None or treated is None:
        notes.append("Counterfactual skipped: treated-period inputs unavailable")
        return report
    if effect_fraction > 0:
        notes.append(f"Effect at the average dose is positive ({100 * effect_fraction:+.2f}%); nothing prevented")
        effect_fraction = 0.0

    baseline, per_period, total = counterfactual_prevented(avg_outcome, effect_fraction, int(treated))
    murder_share = pick("murder_share")
    params = CostBenefitParams(
        currency=config.currency,
        value_statistical_life=config.value_statistical_life,
        value_statistical_robbery=config.value_statistical_robbery,
        murder_share=DEFAULT_MURDER_SHARE if murder_share is None else murder_share,
        treated_cell_periods=int(treated),
        avg_treated_outcome=avg_outcome,
        effect_fraction=effect_fraction,
        fines_total=config.fines_total,
        officers_per_blitz=config.officers_per_blitz,
        blitzes_per_day=config.blitzes_per_day,
        vehicles_needed=config.vehicles_needed,
        salary_per_year=config.salary_per_year,
        vehicle_unit_cost=config.vehicle_unit_cost,
        years=config.years,
    )
    report.avg_treated_hours = hours
    report.effect_fraction = effect_fraction
    report.baseline = baseline
    report.prevented_per_period = per_period
    report.prevented_crimes = total
    report.money = cost_benefit(params, total)
    if config.reported_total_cost is not None:
        report.reported_total_cost = Money.of(config.reported_total_cost, config.currency)
    logger.info(f"Effects: direct {report.direct_pct:+.2f}%, prevented {total:.1f}")
    return report
