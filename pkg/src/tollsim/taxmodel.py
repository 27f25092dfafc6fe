"""Fleet energy-tax projection.

Projects per-powertrain car stocks forward with annual growth rates, then
computes yearly fuel and electricity tax revenues as rate x mileage x
consumption, and the shortfall of a target year against a CPI-adjusted
historical baseline.

Bundled presets live under ``tollsim/data/``: ``berlin_brandenburg`` holds
values transcribed (with rounding) from public statistics for the two-state
region, ``flat_fleet`` is a degenerate constant preset for testing. Plug-in
hybrids are split between fuel and grid driving by a configurable electric
mileage share.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

CLASSES = ("ice_petrol", "ice_diesel", "hev_petrol", "hev_diesel", "phev", "bev")
FUEL_TAXABLE = frozenset(c for c in CLASSES if c != "bev")
GRID_CHARGED = frozenset(("phev", "bev"))

DEFAULT_PHEV_ELECTRIC_SHARE = 0.5
DEFAULT_REFERENCE_YEAR = 2025
DEFAULT_BASELINE_YEARS = 10


class TaxModelError(ValueError):
    pass


@dataclass(frozen=True)
class PowertrainClass:
    name: str
    fuel_taxable: bool
    grid_charged: bool


POWERTRAINS = {name: PowertrainClass(name, name in FUEL_TAXABLE, name in GRID_CHARGED)
               for name in CLASSES}


@dataclass
class FleetYear:
    """Stocks and per-vehicle figures for one year."""
    year: int
    stock: dict = field(default_factory=dict)             # class -> vehicles
    avg_mileage_km: dict = field(default_factory=dict)    # class -> km/yr
    avg_fuel_l_per_km: dict = field(default_factory=dict)  # fuel-taxable classes
    avg_e_kwh_per_km: dict = field(default_factory=dict)   # grid-charged classes

    def validate(self) -> None:
        for name, value in self.stock.items():
            if value < 0:
                raise TaxModelError(f"negative stock for {name} in {self.year}")
        for cls in self.stock:
            if cls not in CLASSES:
                raise TaxModelError(f"unknown powertrain {cls!r}")
            if POWERTRAINS[cls].fuel_taxable and cls not in self.avg_fuel_l_per_km:
                raise TaxModelError(f"{cls} needs a fuel consumption in {self.year}")
            if POWERTRAINS[cls].grid_charged and cls not in self.avg_e_kwh_per_km:
                raise TaxModelError(f"{cls} needs an electricity consumption in {self.year}")


@dataclass
class TaxRates:
    fuel_tax_eur_per_l: dict                 # class -> currency/l
    e_tax_eur_per_kwh: dict                  # class -> currency/kWh
    cpi: dict                                # year -> index (reference year = 100)

    def validate(self) -> None:
        for table in (self.fuel_tax_eur_per_l, self.e_tax_eur_per_kwh):
            for name, value in table.items():
                if value < 0:
                    raise TaxModelError(f"negative tax rate for {name}")


@dataclass
class FleetData:
    """A preset: observed fleet years, growth rates for projection, rates."""
    history: list                 # FleetYear with observed stocks, ascending years
    trajectories: dict            # year -> FleetYear without stocks (mileage/consumption)
    growth: dict                  # class -> {year: rate}
    rates: TaxRates

    @property
    def observed_years(self) -> list:
        return [fy.year for fy in self.history]


# ---------------------------------------------------------------------------
# core arithmetic


def annual_mileage(fleet_year: FleetYear, cls: str) -> float:
    """Total km driven by one powertrain class in one year."""
    return fleet_year.stock[cls] * fleet_year.avg_mileage_km[cls]


def project_stocks(base: FleetYear, growth: dict, horizon: int,
                   trajectories: dict | None = None) -> list:
    """Compound stocks forward from ``base.year + 1`` to ``horizon``.

    Per-vehicle mileage and consumption come from ``trajectories`` where
    available and are carried forward from the base year otherwise.
    """
    years = []
    previous = base
    for year in range(base.year + 1, horizon + 1):
        stock = {}
        for cls, value in previous.stock.items():
            g = growth.get(cls, {}).get(year, 0.0)
            if g <= -1.0:
                raise TaxModelError(f"growth below -100% for {cls} in {year}")
            stock[cls] = value * (1.0 + g)
        template = (trajectories or {}).get(year)
        fy = FleetYear(
            year=year, stock=stock,
            avg_mileage_km=dict(template.avg_mileage_km if template else previous.avg_mileage_km),
            avg_fuel_l_per_km=dict(template.avg_fuel_l_per_km if template
                                   else previous.avg_fuel_l_per_km),
            avg_e_kwh_per_km=dict(template.avg_e_kwh_per_km if template
                                  else previous.avg_e_kwh_per_km))
        fy.validate()
        years.append(fy)
        previous = fy
    return years


def fuel_tax(fleet_years: list, rates: TaxRates,
             phev_electric_share: float = DEFAULT_PHEV_ELECTRIC_SHARE) -> dict:
    """Yearly fuel tax per class and in total: rate x fuel mileage x l/km.

    PHEVs contribute only their fuel-driven mileage share.
    """
    out = {}
    for fy in fleet_years:
        per_class = {}
        for cls in fy.stock:
            if not POWERTRAINS[cls].fuel_taxable:
                continue
            km = annual_mileage(fy, cls)
            if cls == "phev":
                km *= (1.0 - phev_electric_share)
            per_class[cls] = rates.fuel_tax_eur_per_l[cls] * km * fy.avg_fuel_l_per_km[cls]
        per_class["total"] = sum(per_class.values())
        out[fy.year] = per_class
    return out


def electricity_tax(fleet_years: list, rates: TaxRates,
                    phev_electric_share: float = DEFAULT_PHEV_ELECTRIC_SHARE) -> dict:
    """Yearly electricity tax for grid-charged classes: rate x electric
    mileage x kWh/km."""
    out = {}
    for fy in fleet_years:
        per_class = {}
        for cls in fy.stock:
            if not POWERTRAINS[cls].grid_charged:
                continue
            km = annual_mileage(fy, cls)
            if cls == "phev":
                km *= phev_electric_share
            per_class[cls] = rates.e_tax_eur_per_kwh[cls] * km * fy.avg_e_kwh_per_km[cls]
        per_class["total"] = sum(per_class.values())
        out[fy.year] = per_class
    return out


def energy_tax_series(fleet_years: list, rates: TaxRates,
                      phev_electric_share: float = DEFAULT_PHEV_ELECTRIC_SHARE) -> dict:
    """Total yearly energy tax: fuel plus electricity."""
    ft = fuel_tax(fleet_years, rates, phev_electric_share)
    et = electricity_tax(fleet_years, rates, phev_electric_share)
    return {y: ft[y]["total"] + et[y]["total"] for y in ft}


def cpi_adjust(value: float, from_year: int, to_year: int, rates: TaxRates) -> float:
    """Express a nominal value of ``from_year`` in ``to_year`` money."""
    for year in (from_year, to_year):
        if year not in rates.cpi:
            raise TaxModelError(f"no CPI entry for {year}")
    return value * rates.cpi[to_year] / rates.cpi[from_year]


def shortfall(series: dict, rates: TaxRates, target_year: int, baseline_years: list,
              reference_year: int = DEFAULT_REFERENCE_YEAR) -> float:
    """Baseline-average energy tax minus the target year's energy tax, with
    every value CPI-adjusted to the reference year before differencing."""
    missing = [y for y in list(baseline_years) + [target_year] if y not in series]
    if missing:
        raise TaxModelError(f"tax series lacks years {missing}")
    baseline = float(np.mean([cpi_adjust(series[y], y, reference_year, rates)
                              for y in baseline_years]))
    return baseline - cpi_adjust(series[target_year], target_year, reference_year, rates)


def effective_rates_per_km(fleet_year: FleetYear, rates: TaxRates,
                           phev_electric_share: float = DEFAULT_PHEV_ELECTRIC_SHARE) -> tuple:
    """(fuel tax per fuel-driven km, electricity tax per grid-driven km)."""
    ft = fuel_tax([fleet_year], rates, phev_electric_share)[fleet_year.year]["total"]
    et = electricity_tax([fleet_year], rates, phev_electric_share)[fleet_year.year]["total"]
    fuel_km = sum((annual_mileage(fleet_year, c) * ((1 - phev_electric_share) if c == "phev" else 1))
                  for c in fleet_year.stock if POWERTRAINS[c].fuel_taxable)
    e_km = sum((annual_mileage(fleet_year, c) * (phev_electric_share if c == "phev" else 1))
               for c in fleet_year.stock if POWERTRAINS[c].grid_charged)
    return (ft / fuel_km if fuel_km else 0.0, et / e_km if e_km else 0.0)


# ---------------------------------------------------------------------------
# preset loading


def preset_path(name: str) -> Path:
    return Path(str(resources.files("tollsim") / "data" / name))


def load_fleet_dir(path: str | Path) -> FleetData:
    """Read fleet.csv, growth.csv, rates.csv and cpi.csv from a table
    directory (or a bundled preset name)."""
    path = Path(path)
    if not path.is_dir():
        candidate = preset_path(str(path))
        if candidate.is_dir():
            path = candidate
        else:
            raise TaxModelError(f"no such table directory or preset: {path}")
    for name in ("fleet.csv", "growth.csv", "rates.csv", "cpi.csv"):
        if not (path / name).exists():
            raise TaxModelError(f"missing table {name} in {path}")

    by_year: dict = {}
    with open(path / "fleet.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            year = int(row["year"])
            cls = row["powertrain"]
            if cls not in CLASSES:
                raise TaxModelError(f"unknown powertrain {cls!r} in fleet.csv")
            fy = by_year.setdefault(year, FleetYear(year=year))
            if row["stock"]:
                fy.stock[cls] = float(row["stock"])
            fy.avg_mileage_km[cls] = float(row["avg_mileage_km"])
            if row["avg_fuel_l_per_km"]:
                fy.avg_fuel_l_per_km[cls] = float(row["avg_fuel_l_per_km"])
            if row["avg_e_kwh_per_km"]:
                fy.avg_e_kwh_per_km[cls] = float(row["avg_e_kwh_per_km"])

    growth: dict = {}
    with open(path / "growth.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            growth.setdefault(row["powertrain"], {})[int(row["year"])] = float(row["growth_rate"])

    fuel_rates, e_rates = {}, {}
    with open(path / "rates.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["fuel_tax_eur_per_l"]:
                fuel_rates[row["powertrain"]] = float(row["fuel_tax_eur_per_l"])
            if row["e_tax_eur_per_kwh"]:
                e_rates[row["powertrain"]] = float(row["e_tax_eur_per_kwh"])

    cpi = {}
    with open(path / "cpi.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            cpi[int(row["year"])] = float(row["cpi"])

    rates = TaxRates(fuel_tax_eur_per_l=fuel_rates, e_tax_eur_per_kwh=e_rates, cpi=cpi)
    rates.validate()
    history = [by_year[y] for y in sorted(by_year) if by_year[y].stock]
    trajectories = {y: by_year[y] for y in by_year}
    for fy in history:
        fy.validate()
    return FleetData(history=history, trajectories=trajectories, growth=growth, rates=rates)


def full_series(data: FleetData, horizon: int,
                phev_electric_share: float = DEFAULT_PHEV_ELECTRIC_SHARE) -> list:
    """Observed fleet years plus the projection up to ``horizon``."""
    if not data.history:
        raise TaxModelError("no observed fleet years in the tables")
    base = data.history[-1]
    if horizon <= base.year:
        return [fy for fy in data.history if fy.year <= horizon]
    return data.history + project_stocks(base, data.growth, horizon, data.trajectories)


@dataclass
class TaxReport:
    years: list                   # FleetYear, observed + projected
    fuel: dict                    # year -> {class: tax, 'total': tax}
    electricity: dict
    total: dict                   # year -> fuel + electricity
    total_adjusted: dict          # year -> CPI-adjusted to reference year
    shortfall: float
    baseline_years: list
    target_year: int
    reference_year: int
    effective_fuel_per_km: float      # at the target year
    effective_e_per_km: float


def tax_report(data: FleetData, target_year: int,
               baseline_years: int | list = DEFAULT_BASELINE_YEARS,
               reference_year: int = DEFAULT_REFERENCE_YEAR,
               phev_electric_share: float = DEFAULT_PHEV_ELECTRIC_SHARE) -> TaxReport:
    """Full projection and shortfall report for a preset.

    An integer ``baseline_years`` selects that many most recent observed
    years; an explicit list is used as given.
    """
    years = full_series(data, target_year, phev_electric_share)
    if isinstance(baseline_years, int):
        observed = data.observed_years
        baseline = observed[-baseline_years:]
    else:
        baseline = list(baseline_years)
    ft = fuel_tax(years, data.rates, phev_electric_share)
    et = electricity_tax(years, data.rates, phev_electric_share)
    total = {y: ft[y]["total"] + et[y]["total"] for y in ft}
    adjusted = {y: cpi_adjust(total[y], y, reference_year, data.rates) for y in total}
    gap = shortfall(total, data.rates, target_year, baseline, reference_year)
    target_fy = next(fy for fy in years if fy.year == target_year)
    eff_fuel, eff_e = effective_rates_per_km(target_fy, data.rates, phev_electric_share)
    return TaxReport(years=years, fuel=ft, electricity=et, total=total,
                     total_adjusted=adjusted, shortfall=gap, baseline_years=baseline,
                     target_year=target_year, reference_year=reference_year,
                     effective_fuel_per_km=eff_fuel, effective_e_per_km=eff_e)


def write_tax_report(report: TaxReport, path: str | Path) -> None:
    """Per-year delimited report: stocks per class, taxes, adjusted totals."""
    header = (["year"] + [f"stock_{c}" for c in CLASSES]
              + ["fuel_tax", "electricity_tax", "total", "total_cpi_adjusted"])
    lines = [",".join(header)]
    for fy in report.years:
        row = [str(fy.year)]
        row += [repr(float(fy.stock.get(c, 0.0))) for c in CLASSES]
        row += [repr(report.fuel[fy.year]["total"]),
                repr(report.electricity[fy.year]["total"]),
                repr(report.total[fy.year]),
                repr(report.total_adjusted[fy.year])]
        lines.append(",".join(row))
    lines.append(f"# shortfall_{report.target_year}_vs_baseline_mean,"
                 f"{report.shortfall!r}")
    Path(path).write_text("\n".join(lines) + "\n")
