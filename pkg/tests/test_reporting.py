import csv
import subprocess
import sys

import numpy as np
import pytest

from bel_gradients.reporting import (
    TableSpec,
    csv_body,
    format_cell,
    write_csv,
    write_plot_companion,
    write_summary,
)


class TestFormatCell:
    def test_float_round_trips(self):
        for v in (0.1, 1e-300, -3.5, 2.0 / 3.0, 1e17 + 2):
            assert float(format_cell(v)) == v

    def test_float_uses_dot_decimal_and_no_comma(self):
        s = format_cell(1234567.25)
        assert "." in s and "," not in s

    def test_numpy_scalars(self):
        assert format_cell(np.float64(0.5)) == "0.5"
        assert format_cell(np.int64(7)) == "7"
        assert format_cell(np.bool_(True)) == "true"

    def test_bool_lowercase(self):
        assert format_cell(True) == "true"
        assert format_cell(False) == "false"

    def test_vector_joins_with_semicolon(self):
        assert format_cell(np.array([1.5, -2.0])) == "1.5;-2.0"
        assert format_cell((1, 2)) == "1;2"

    def test_string_passthrough(self):
        assert format_cell("ou") == "ou"


class TestCsvBody:
    def test_header_and_lf_endings(self):
        body = csv_body(["a", "b"], [(1, 2.5), (3, 0.1)])
        assert body == "a,b\n1,2.5\n3,0.1\n"
        assert "\r" not in body

    def test_byte_identical_for_identical_rows(self):
        rows = [(0.1 + 0.2, "x"), (1e-9, "y")]
        assert csv_body(["v", "k"], rows) == csv_body(["v", "k"], list(rows))

    def test_round_trip_through_csv_reader(self):
        body = csv_body(["x", "y"], [(2.0 / 3.0, -1e-17)])
        row = next(csv.DictReader(body.splitlines()))
        assert float(row["x"]) == 2.0 / 3.0
        assert float(row["y"]) == -1e-17


class TestFiles:
    def test_write_csv_bytes(self, tmp_path):
        p = write_csv(tmp_path / "t.csv", ["n", "v"], [(1, 0.5)])
        assert p.read_bytes() == b"n,v\n1,0.5\n"

    def test_write_csv_creates_parents(self, tmp_path):
        p = write_csv(tmp_path / "deep" / "t.csv", ["n"], [(1,)])
        assert p.exists()

    def test_summary_header_carries_title(self, tmp_path):
        p = write_summary(tmp_path / "s.txt", "demo", ["line one", "ok"])
        text = p.read_text()
        first, *rest = text.splitlines()
        assert first.startswith("# demo (generated ")
        assert rest == ["line one", "ok"]

    def test_summary_body_is_stamp_free(self, tmp_path):
        a = write_summary(tmp_path / "a.txt", "t", ["x"]).read_text()
        b = write_summary(tmp_path / "b.txt", "t", ["x"]).read_text()
        assert a.splitlines()[1:] == b.splitlines()[1:]

    def test_unstamped_summary_is_fully_deterministic(self, tmp_path):
        a = write_summary(tmp_path / "a.txt", "t", ["x"], stamped=False)
        b = write_summary(tmp_path / "b.txt", "t", ["x"], stamped=False)
        assert a.read_bytes() == b.read_bytes()


class TestPlotCompanion:
    def test_script_written_next_to_table(self, tmp_path):
        table = write_csv(tmp_path / "growth.csv", ["n", "proxy"],
                          [(1, 0.5), (2, 0.7)])
        script = write_plot_companion(
            table, TableSpec(x="n", ys=("proxy",), title="growth"))
        assert script.name == "growth_plot.py"
        assert script.parent == table.parent

    def test_script_runs_without_matplotlib_assumption(self, tmp_path):
        table = write_csv(tmp_path / "g.csv", ["n", "p"],
                          [(1, 0.5), (2, 0.7), (3, 1.1)])
        script = write_plot_companion(
            table, TableSpec(x="n", ys=("p",), title="g"))
        proc = subprocess.run([sys.executable, str(script)],
                              capture_output=True, text=True, check=True)
        out = proc.stdout
        assert ("wrote" in out) or ("raw columns" in out)
        if "raw columns" in out:
            assert "[1.0, 2.0, 3.0]" in out

    def test_package_never_imports_plotting(self):
        code = ("import sys, bel_gradients.reporting; "
                "sys.exit(1 if 'matplotlib' in sys.modules else 0)")
        subprocess.run([sys.executable, "-c", code], check=True)

    def test_script_content_deterministic(self, tmp_path):
        table = write_csv(tmp_path / "g.csv", ["n", "p"], [(1, 0.5)])
        spec = TableSpec(x="n", ys=("p",), title="g", logy=True)
        first = write_plot_companion(table, spec).read_bytes()
        second = write_plot_companion(table, spec).read_bytes()
        assert first == second
        assert b"log" in first
