import copy

import numpy as np
import pytest

from tollsim.taxmodel import (CLASSES, FleetYear, TaxModelError, TaxRates, annual_mileage,
                              cpi_adjust, electricity_tax, effective_rates_per_km,
                              energy_tax_series, fuel_tax, load_fleet_dir, project_stocks,
                              shortfall, tax_report)


def fleet_year(year=2023, **overrides):
    fy = FleetYear(
        year=year,
        stock={"ice_petrol": 1000.0, "bev": 0.0},
        avg_mileage_km={"ice_petrol": 10000.0, "bev": 12000.0},
        avg_fuel_l_per_km={"ice_petrol": 0.07},
        avg_e_kwh_per_km={"bev": 0.18},
    )
    for key, value in overrides.items():
        setattr(fy, key, value)
    return fy


def simple_rates(cpi=None):
    return TaxRates(
        fuel_tax_eur_per_l={"ice_petrol": 0.65, "ice_diesel": 0.47, "hev_petrol": 0.65,
                            "hev_diesel": 0.47, "phev": 0.65},
        e_tax_eur_per_kwh={"bev": 0.0205, "phev": 0.0205},
        cpi=cpi or {y: 100.0 for y in range(2010, 2035)},
    )


class TestProjection:
    def test_zero_growth_constant(self):
        base = fleet_year()
        years = project_stocks(base, {"ice_petrol": {}, "bev": {}}, 2026)
        assert [fy.stock["ice_petrol"] for fy in years] == [1000.0] * 3

    def test_compound_growth(self):
        base = fleet_year()
        growth = {"ice_petrol": {2024: 0.10, 2025: 0.10}}
        years = project_stocks(base, growth, 2025)
        assert years[-1].stock["ice_petrol"] == pytest.approx(1210.0)

    def test_growth_below_minus_one_rejected(self):
        with pytest.raises(TaxModelError):
            project_stocks(fleet_year(), {"ice_petrol": {2024: -1.5}}, 2024)

    def test_consumption_carried_from_trajectories(self):
        base = fleet_year()
        template = fleet_year(year=2024, avg_fuel_l_per_km={"ice_petrol": 0.05})
        years = project_stocks(base, {}, 2024, trajectories={2024: template})
        assert years[0].avg_fuel_l_per_km["ice_petrol"] == 0.05


class TestMileage:
    def test_zero_stock(self):
        fy = fleet_year(stock={"ice_petrol": 0.0, "bev": 0.0})
        assert annual_mileage(fy, "ice_petrol") == 0.0

    def test_product(self):
        assert annual_mileage(fleet_year(), "ice_petrol") == pytest.approx(1e7)

    def test_linearity(self):
        fy = fleet_year()
        double = copy.deepcopy(fy)
        double.stock["ice_petrol"] *= 2
        assert annual_mileage(double, "ice_petrol") == 2 * annual_mileage(fy, "ice_petrol")


class TestFuelTax:
    def test_closed_form(self):
        # 1000 cars * 10000 km * 0.07 l/km * 0.65 EUR/l
        out = fuel_tax([fleet_year()], simple_rates())
        assert out[2023]["ice_petrol"] == pytest.approx(455000.0)
        assert out[2023]["total"] == pytest.approx(455000.0)

    def test_all_bev_fleet_pays_none(self):
        fy = fleet_year(stock={"bev": 5000.0})
        out = fuel_tax([fy], simple_rates())
        assert out[2023]["total"] == 0.0

    def test_linear_in_each_input(self):
        fy = fleet_year()
        base = fuel_tax([fy], simple_rates())[2023]["total"]
        for attr, cls in (("stock", "ice_petrol"), ("avg_mileage_km", "ice_petrol"),
                          ("avg_fuel_l_per_km", "ice_petrol")):
            scaled = copy.deepcopy(fy)
            getattr(scaled, attr)[cls] *= 3.0
            assert fuel_tax([scaled], simple_rates())[2023]["total"] == \
                pytest.approx(3.0 * base)

    def test_phev_split(self):
        fy = fleet_year(stock={"phev": 100.0},
                        avg_mileage_km={"phev": 10000.0},
                        avg_fuel_l_per_km={"phev": 0.05},
                        avg_e_kwh_per_km={"phev": 0.2})
        rates = simple_rates()
        half = fuel_tax([fy], rates, phev_electric_share=0.5)[2023]["total"]
        none = fuel_tax([fy], rates, phev_electric_share=0.0)[2023]["total"]
        assert half == pytest.approx(0.5 * none)


class TestElectricityTax:
    def test_closed_form(self):
        # 1000 BEV * 10000 km * 0.18 kWh/km * 0.0205 EUR/kWh
        fy = fleet_year(stock={"bev": 1000.0}, avg_mileage_km={"bev": 10000.0})
        out = electricity_tax([fy], simple_rates())
        assert out[2023]["bev"] == pytest.approx(36900.0)

    def test_zero_ev_stock(self):
        out = electricity_tax([fleet_year(stock={"ice_petrol": 1000.0})], simple_rates())
        assert out[2023]["total"] == 0.0

    def test_total_is_fuel_plus_electricity(self):
        fy = fleet_year(stock={"ice_petrol": 1000.0, "bev": 500.0})
        rates = simple_rates()
        total = energy_tax_series([fy], rates)[2023]
        assert total == pytest.approx(fuel_tax([fy], rates)[2023]["total"]
                                      + electricity_tax([fy], rates)[2023]["total"])

    def test_bev_swap_monotone(self):
        fy = fleet_year(stock={"ice_petrol": 1000.0, "bev": 0.0})
        swapped = copy.deepcopy(fy)
        swapped.stock["ice_petrol"] -= 1
        swapped.stock["bev"] += 1
        rates = simple_rates()
        assert fuel_tax([swapped], rates)[2023]["total"] < \
            fuel_tax([fy], rates)[2023]["total"]
        assert electricity_tax([swapped], rates)[2023]["total"] >= \
            electricity_tax([fy], rates)[2023]["total"]


class TestCpi:
    def test_identity(self):
        assert cpi_adjust(123.0, 2020, 2020, simple_rates()) == 123.0

    def test_published_revenue_factor(self):
        # 2008 money scaled to the 2025 index: 554.40M becomes 784.26M
        rates = simple_rates(cpi={2008: 70.6915, 2025: 100.0})
        daily = 151891.75
        annual = cpi_adjust(daily * 3650.0, 2008, 2025, rates)
        assert round(annual / 1e6, 2) == 784.26

    def test_transitivity(self):
        rates = simple_rates(cpi={2010: 80.0, 2018: 92.0, 2025: 100.0})
        via = cpi_adjust(cpi_adjust(50.0, 2010, 2018, rates), 2018, 2025, rates)
        assert via == pytest.approx(cpi_adjust(50.0, 2010, 2025, rates))

    def test_missing_year_rejected(self):
        with pytest.raises(TaxModelError):
            cpi_adjust(1.0, 1999, 2025, simple_rates())


class TestShortfall:
    def test_flat_series_zero(self):
        series = {y: 500.0 for y in range(2014, 2031)}
        assert shortfall(series, simple_rates(), 2030, list(range(2014, 2024))) == \
            pytest.approx(0.0)

    def test_definition(self):
        series = {2021: 100.0, 2022: 100.0, 2030: 80.0}
        assert shortfall(series, simple_rates(), 2030, [2021, 2022]) == pytest.approx(20.0)

    def test_missing_years_rejected(self):
        with pytest.raises(TaxModelError):
            shortfall({2030: 1.0}, simple_rates(), 2030, [2014])


class TestBundledPresets:
    def test_flat_preset_zero_shortfall(self):
        report = tax_report(load_fleet_dir("flat_fleet"), 2030)
        assert report.shortfall == pytest.approx(0.0)

    def test_dynamic_preset_2030_shares(self):
        data = load_fleet_dir("berlin_brandenburg")
        report = tax_report(data, 2030)
        final = report.years[-1]
        total = sum(final.stock.values())
        shares = {c: final.stock[c] / total for c in final.stock}
        assert shares["ice_petrol"] + shares["ice_diesel"] == pytest.approx(0.63, abs=0.005)
        assert shares["hev_petrol"] + shares["hev_diesel"] == pytest.approx(0.08, abs=0.005)
        assert shares["phev"] == pytest.approx(0.12, abs=0.005)
        assert shares["bev"] == pytest.approx(0.17, abs=0.005)

    def test_dynamic_preset_fuel_falls_electricity_rises(self):
        data = load_fleet_dir("berlin_brandenburg")
        report = tax_report(data, 2030)
        assert report.fuel[2030]["total"] < report.fuel[2023]["total"]
        assert report.electricity[2030]["total"] > report.electricity[2023]["total"]

    def test_unknown_preset_rejected(self):
        with pytest.raises(TaxModelError):
            load_fleet_dir("atlantis")

    def test_report_file(self, tmp_path):
        from tollsim.taxmodel import write_tax_report
        report = tax_report(load_fleet_dir("flat_fleet"), 2026)
        write_tax_report(report, tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].startswith("year,")
        assert any(line.startswith("# shortfall") for line in lines)
