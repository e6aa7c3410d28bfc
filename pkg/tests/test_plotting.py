import pytest

pytest.importorskip("matplotlib")

from polysize.cli import main  # noqa: E402


def test_plot_files_written_and_listed(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["simulate", "--steps", "20", "--plot", "--out", str(out)]) == 0
    png = out.with_suffix(".png")
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert str(png) in (tmp_path / "t.csv.manifest.json").read_text()


def test_plot_needs_out(capsys):
    assert main(["simulate", "--steps", "5", "--plot"]) == 2
    assert "code=usage_error" in capsys.readouterr().err
