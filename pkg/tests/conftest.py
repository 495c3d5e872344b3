"""Shared fixtures: deterministic synthetic tables and graphs.

All fixture content is generated, never random-at-test-time; the layouts
mirror the statistical-portal families the toolkit targets (wide
country x year matrices, hierarchical stat tables, ranking tables).
"""

from __future__ import annotations

import string

import pytest

from cellfact.table import CsvTable, parse_csv_text


def make_table(header: list[str], rows: list[list[str]], source: str = "<fixture>") -> CsvTable:
    return CsvTable(
        source_path=source,
        header=tuple(header),
        rows=tuple(tuple(row) for row in rows),
    )


def country_codes(n: int) -> list[str]:
    """Deterministic distinct 3-letter codes, CHN first."""
    codes = ["CHN"]
    letters = string.ascii_uppercase
    for a in letters:
        for b in letters:
            for c in letters:
                code = a + b + c
                if code != "CHN":
                    codes.append(code)
                if len(codes) == n:
                    return codes
    raise ValueError("too many codes requested")


@pytest.fixture(scope="session")
def who_table() -> CsvTable:
    """WHO-layout matrix: 192 country rows x 22 year columns + 1 key column.

    Dense (no missing cells); the CHN row carries the documented
    2020 -> 77.4 and 2021 -> 78.2 values.
    """
    years = [str(y) for y in range(2000, 2022)]
    header = ["Country Code"] + years
    rows = []
    for r, code in enumerate(country_codes(192)):
        row = [code]
        for c, year in enumerate(years):
            if code == "CHN" and year == "2020":
                row.append("77.4")
            elif code == "CHN" and year == "2021":
                row.append("78.2")
            else:
                row.append(f"{50 + ((r * 7 + c * 13) % 350) / 10:.1f}")
        rows.append(row)
    return make_table(header, rows, source="who_fixture.csv")


@pytest.fixture(scope="session")
def who_csv_path(tmp_path_factory, who_table) -> str:
    from cellfact.table import to_csv_text

    path = tmp_path_factory.mktemp("fixtures") / "who_fixture.csv"
    path.write_text(to_csv_text(who_table), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="session")
def mini_who_table() -> CsvTable:
    return parse_csv_text("Country Code,2020,2021\nCHN,77.4,78.2\nIND,70.1,70.5\n")


@pytest.fixture(scope="session")
def dense_table() -> CsvTable:
    """10 subjects x 6 years with globally unique numeric cell values."""
    years = [str(y) for y in range(2000, 2006)]
    header = ["Area Code"] + years
    codes = [f"Z{ch}{ch2}" for ch, ch2 in zip("ABCDEFGHIJ", "KLMNOPQRST")]
    rows = [
        [codes[r]] + [f"{100 * (r + 1) + c}.{r + 1}" for c in range(len(years))]
        for r in range(10)
    ]
    return make_table(header, rows, source="dense_fixture.csv")


@pytest.fixture(scope="session")
def wide_matrix_table() -> CsvTable:
    """The standard wide-matrix coupling fixture: 8 entities x 12 year columns.

    Wider than it is tall, so numeric-cell proliferation necessarily exceeds
    the faithful run's node count.
    """
    years = [str(y) for y in range(2000, 2012)]
    header = ["Region Code"] + years
    codes = ["RGA", "RGB", "RGC", "RGD", "RGE", "RGF", "RGG", "RGH"]
    rows = [
        [codes[r]] + [f"{500 + r * 20 + c}.{r + 1}" for c in range(len(years))]
        for r in range(8)
    ]
    return make_table(header, rows, source="wide_matrix.csv")


@pytest.fixture(scope="session")
def inpatient_table() -> CsvTable:
    """Hierarchical Type-III layout: 2 key levels over 3 numeric columns, 25 rows."""
    header = ["Disease Category", "Disease Subcategory", "Total", "Male", "Female"]
    rows = []
    for i in range(25):
        cat = f"Category {chr(ord('A') + i % 5)}"
        sub = f"Subtype {i:02d}"
        rows.append([cat, sub, str(1000 + i), str(400 + i), str(600 + i)])
    return make_table(header, rows, source="inpatient_fixture.csv")


@pytest.fixture(scope="session")
def small_type3_table(inpatient_table) -> CsvTable:
    """Same shape, 19 rows: under the small-Type-III schema-skip threshold."""
    return make_table(
        list(inpatient_table.header),
        [list(r) for r in inpatient_table.rows[:19]],
        source="small_type3.csv",
    )


@pytest.fixture(scope="session")
def fortune_table() -> CsvTable:
    """Compact revenue matrix: 25 company rows x 5 year columns, dense."""
    years = [str(y) for y in range(2018, 2023)]
    header = ["Company"] + years
    rows = [
        [f"Conglomerate {chr(ord('A') + i)}"]
        + [f"{900 + i * 11 + c}.{(i + c) % 10}" for c in range(5)]
        for i in range(25)
    ]
    return make_table(header, rows, source="fortune_fixture.csv")


@pytest.fixture(scope="session")
def the_table() -> CsvTable:
    """Ranking-table layout: rank stored as text ('=1'), 3 year columns."""
    header = ["University Name", "World Rank", "2020", "2021", "2022"]
    rows = [
        [f"University of Placeholder {i:02d}", f"={i + 1}",
         f"{96 - i * 0.2:.1f}", f"{95.8 - i * 0.2:.1f}", f"{95.6 - i * 0.2:.1f}"]
        for i in range(25)
    ]
    return make_table(header, rows, source="the_fixture.csv")


@pytest.fixture(scope="session")
def oecd_discharge_table() -> CsvTable:
    """Two leading text columns over 9 year columns (the guard regression case)."""
    years = [str(y) for y in range(2010, 2019)]
    header = ["Country", "ICD Chapter"] + years
    rows = [
        ["Germany", f"Chapter {i:02d}"] + [f"{10 + i + c}.{c}" for c in range(9)]
        for i in range(12)
    ]
    return make_table(header, rows, source="oecd_fixture.csv")


@pytest.fixture(scope="session")
def transposed_table() -> CsvTable:
    header = ["Year", "Sex Ratio"]
    rows = [[str(y), f"1.0{y % 7}"] for y in range(2000, 2012)]
    return make_table(header, rows, source="transposed_fixture.csv")
