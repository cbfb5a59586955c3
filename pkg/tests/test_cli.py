"""Tests for the flowfactor command line."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from flowfactor.cli import cli
from flowfactor.core.fileio import write_diffeo, write_factors, write_family
from flowfactor.core.grid import DiffeoGrid, VectorField
from flowfactor.core.models import FactorList, Family


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def workdir(runner, tmp_path):
    with runner.isolated_filesystem(temp_dir=tmp_path) as path:
        yield Path(path)


def _circle_family(n=64):
    return Family([VectorField.constant((n,), [1.0])], ["dx"])


def _torus_family(vectors, n=16):
    return Family([VectorField.constant((n, n), v) for v in vectors], [f"f{i}" for i in range(len(vectors))])


class TestDemo:
    def test_writes_family_and_targets(self, runner, workdir):
        result = runner.invoke(cli, ["demo", "t1-basic"])
        assert result.exit_code == 0, result.output
        names = sorted(p.name for p in (workdir / "t1-basic").iterdir())
        assert names == ["family.json", "identity.json", "localized.json", "random.json", "rotation.json", "smooth.json"]

    def test_custom_grid_and_directory(self, runner, workdir):
        result = runner.invoke(cli, ["demo", "t2-translations", "--grid", "16", "-o", "fixtures"])
        assert result.exit_code == 0, result.output
        data = json.loads((workdir / "fixtures" / "family.json").read_text())
        assert data["grid"] == [16, 16]

    def test_same_seed_same_files(self, runner, workdir):
        runner.invoke(cli, ["demo", "t1-basic", "-o", "a", "--seed", "3"])
        runner.invoke(cli, ["demo", "t1-basic", "-o", "b", "--seed", "3"])
        assert (workdir / "a" / "random.json").read_bytes() == (workdir / "b" / "random.json").read_bytes()

    def test_unknown_demo(self, runner, workdir):
        result = runner.invoke(cli, ["demo", "t3-cube"])
        assert result.exit_code == 1
        assert "t1-basic" in result.output


class TestFactor:
    def test_identity_gives_empty_factor_list(self, runner, workdir):
        write_family(workdir / "family.json", _circle_family())
        write_diffeo(workdir / "id.json", DiffeoGrid.identity((64,)))
        result = runner.invoke(cli, ["factor", "id.json", "family.json", "-o", "out.json"])
        assert result.exit_code == 0, result.output
        assert json.loads((workdir / "out.json").read_text())["factors"] == []
        report = json.loads((workdir / "out.report.json").read_text())
        assert report["status"] == "ok"
        assert report["factor_count"] == 0
        assert report["residual_C0"] == 0.0

    def test_malformed_json_names_byte_offset(self, runner, workdir):
        write_family(workdir / "family.json", _circle_family())
        (workdir / "bad.json").write_text('{"dim": x}')
        result = runner.invoke(cli, ["factor", "bad.json", "family.json"])
        assert result.exit_code == 1
        assert "byte 8" in result.output

    def test_missing_file(self, runner, workdir):
        write_family(workdir / "family.json", _circle_family())
        result = runner.invoke(cli, ["factor", "nope.json", "family.json"])
        assert result.exit_code == 1

    def test_grid_mismatch(self, runner, workdir):
        write_family(workdir / "family.json", _circle_family(64))
        write_diffeo(workdir / "p.json", DiffeoGrid.identity((32,)))
        result = runner.invoke(cli, ["factor", "p.json", "family.json"])
        assert result.exit_code == 1

    def test_too_large_input_is_an_input_error(self, runner, workdir):
        write_family(workdir / "family.json", _circle_family())
        write_diffeo(workdir / "p.json", DiffeoGrid.translation((64,), [0.5]))
        result = runner.invoke(cli, ["factor", "p.json", "family.json"])
        assert result.exit_code == 1
        assert not (workdir / "factors.json").exists()
        report = json.loads((workdir / "factors.report.json").read_text())
        assert report["status"] == "failed"
        assert report["stage"] == "fragment"
        assert report["residual_C0"] == pytest.approx(0.5)
        assert report["factor_count"] == 0

    def test_out_of_range_eps_is_an_input_error(self, runner, workdir):
        write_family(workdir / "family.json", _circle_family())
        write_diffeo(workdir / "id.json", DiffeoGrid.identity((64,)))
        result = runner.invoke(cli, ["factor", "id.json", "family.json", "--eps", "0.9"])
        assert result.exit_code == 1
        assert "eps must lie" in result.output

    @pytest.mark.slow
    def test_factor_then_verify(self, runner, workdir):
        runner.invoke(cli, ["demo", "t1-basic", "-o", "fx"])
        result = runner.invoke(cli, ["factor", "fx/smooth.json", "fx/family.json", "-o", "f.json"])
        assert result.exit_code == 0, result.output
        report = json.loads((workdir / "f.report.json").read_text())
        assert report["residual_C0"] <= 1e-4
        assert set(report["timings"]) >= {"fragment", "frame", "solve_local"}
        result = runner.invoke(cli, ["verify", "f.json", "fx/smooth.json"])
        assert result.exit_code == 0, result.output

    @pytest.mark.slow
    def test_factor_files_are_reproducible(self, runner, workdir):
        runner.invoke(cli, ["demo", "t1-basic", "-o", "fx"])
        for out in ("a.json", "b.json"):
            result = runner.invoke(cli, ["factor", "fx/random.json", "fx/family.json", "-o", out])
            assert result.exit_code == 0, result.output
        assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()


class TestVerify:
    def _setup(self, workdir, target):
        family = _circle_family()
        write_factors(workdir / "empty.json", FactorList(), family)
        write_diffeo(workdir / "target.json", target)

    def test_empty_list_matches_identity(self, runner, workdir):
        self._setup(workdir, DiffeoGrid.identity((64,)))
        result = runner.invoke(cli, ["verify", "empty.json", "target.json"])
        assert result.exit_code == 0
        assert json.loads(result.output)["residual_C0"] == 0.0

    def test_empty_list_misses_rotation(self, runner, workdir):
        self._setup(workdir, DiffeoGrid.translation((64,), [0.1]))
        result = runner.invoke(cli, ["verify", "empty.json", "target.json"])
        assert result.exit_code == 2
        report = json.loads(result.output)
        assert report["status"] == "mismatch"
        assert report["residual_C0"] == pytest.approx(0.1)

    def test_loose_tolerance_accepts(self, runner, workdir):
        self._setup(workdir, DiffeoGrid.translation((64,), [0.1]))
        result = runner.invoke(cli, ["verify", "empty.json", "target.json", "--tol", "0.2"])
        assert result.exit_code == 0

    def test_csv_dump(self, runner, workdir):
        self._setup(workdir, DiffeoGrid.translation((64,), [0.1]))
        runner.invoke(cli, ["verify", "empty.json", "target.json", "--csv", "res.csv"])
        lines = (workdir / "res.csv").read_text().splitlines()
        assert lines[0] == "x,dx"
        assert len(lines) == 65

    def test_wrong_file_kind(self, runner, workdir):
        self._setup(workdir, DiffeoGrid.identity((64,)))
        result = runner.invoke(cli, ["verify", "target.json", "target.json"])
        assert result.exit_code == 1


class TestCheckFamily:
    def test_translations_are_transitive(self, runner, workdir):
        write_family(workdir / "family.json", _torus_family([[1.0, 0.0], [0.0, 1.0]]))
        result = runner.invoke(cli, ["check-family", "family.json", "--samples", "4", "-o", "rank.json"])
        assert result.exit_code == 0, result.output
        data = json.loads((workdir / "rank.json").read_text())
        assert data["transitive"] is True
        assert len(data["entries"]) == 16

    def test_single_direction_is_not_transitive(self, runner, workdir):
        write_family(workdir / "family.json", _torus_family([[1.0, 0.0]]))
        result = runner.invoke(cli, ["check-family", "family.json", "--samples", "4", "-o", "rank.json"])
        assert result.exit_code == 2
        data = json.loads((workdir / "rank.json").read_text())
        assert data["min_rank"] == 1

    def test_rejects_negative_depth(self, runner, workdir):
        write_family(workdir / "family.json", _torus_family([[1.0, 0.0]]))
        result = runner.invoke(cli, ["check-family", "family.json", "--depth", "-1"])
        assert result.exit_code == 1


class TestConfig:
    def test_shows_sections(self, runner, workdir):
        result = runner.invoke(cli, ["config"])
        assert result.exit_code == 0
        assert "newton" in result.output

    def test_save_writes_yaml(self, runner, workdir):
        result = runner.invoke(cli, ["config", "--save"])
        assert result.exit_code == 0
        assert (workdir / ".flowfactor" / "config.yaml").exists()

    def test_config_file_is_read(self, runner, workdir):
        (workdir / ".flowfactor").mkdir()
        (workdir / ".flowfactor" / "config.yaml").write_text("factorize:\n  tolerance: 0.5\n")
        write_factors(workdir / "empty.json", FactorList(), _circle_family())
        write_diffeo(workdir / "target.json", DiffeoGrid.translation((64,), [0.1]))
        result = runner.invoke(cli, ["verify", "empty.json", "target.json"])
        assert result.exit_code == 0
