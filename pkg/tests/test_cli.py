"""Command line behavior: config resolution, spec grammar, subcommands,
exit codes, and report files."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from pshkit.cli import CliError, parse_spec, run
from pshkit.grid import (
    INTERIOR,
    GridField,
    build_disc_domain,
    read_field,
    read_label_file,
    write_field,
    write_mask,
)
from pshkit.jets import (
    Dual,
    ObstacleRestrict,
    PshAlmostComplex,
    PshStandard,
    Pullback,
    SigmaM,
)

H = 1.0 / 32


def radii(grid):
    return np.sqrt(sum(c ** 2 for c in grid.coordinate_arrays()))


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Disc workspace with the input files every test reuses."""
    d = tmp_path_factory.mktemp("cli")
    grid = build_disc_domain(1, 1.0, H)
    r = radii(grid)
    write_mask(grid, d / "disc1.grid")
    write_field(GridField(grid, r ** 4 - r ** 2 + 0.3), d / "obstacle.fld")
    write_field(GridField(grid, 1.0 - r ** 2), d / "dome.fld")
    ring = (np.abs(r - 0.5) <= H / 2 + 1e-12) & (grid.mask == INTERIOR)
    write_mask(grid, d / "ring.mask", labels=np.where(ring, 2, 0))
    quarter = (r <= 0.25 + 1e-12) & (grid.mask == INTERIOR)
    write_mask(grid, d / "quarter.mask", labels=np.where(quarter, 2, 0))
    write_field(GridField(grid, r ** 2 - 1.0), d / "rho.fld")
    write_field(GridField(grid, np.maximum(-0.5, 3 * r ** 2 - 2)), d / "sample.fld")
    return d


def report_lines(outdir):
    with open(os.path.join(outdir, "report.jsonl")) as f:
        return [json.loads(line) for line in f]


def audits(lines):
    return {a["invariant"]: a for a in lines if a["event"] == "audit"}


class TestConfigResolution:
    def test_config_file_supplies_options(self, ws, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# envelope of a quartic obstacle\n"
            "grid = %s\n" "g = %s\n" "spec = psh\n" "tol = 1e-6\n" "out = %s\n"
            % (ws / "disc1.grid", ws / "obstacle.fld", tmp_path / "o")
        )
        assert run(["envelope", "--config", str(cfg)]) == 0
        first = report_lines(tmp_path / "o")[0]
        assert first["event"] == "config"
        assert first["tol"] == 1e-6
        assert os.path.isabs(first["grid"])

    def test_flags_override_config(self, ws, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "grid=%s\ng=%s\nspec=psh\ntol=1e-6\nout=%s\n"
            % (ws / "disc1.grid", ws / "obstacle.fld", tmp_path / "o")
        )
        assert run(["envelope", "--config", str(cfg), "--tol", "1e-9"]) == 0
        assert report_lines(tmp_path / "o")[0]["tol"] == 1e-9

    def test_unknown_key_names_file_line_key(self, ws, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("grid=x\n\n# comment\nbogus=1\n")
        assert run(["envelope", "--config", str(cfg)]) == 1
        err = capsys.readouterr().err
        assert str(cfg) + ":4" in err and "bogus" in err and "envelope" in err

    def test_missing_required_option(self, ws, capsys):
        assert run(["envelope", "--g", str(ws / "obstacle.fld"), "--spec", "psh"]) == 1
        assert "--grid" in capsys.readouterr().err

    def test_invalid_numeric_value_names_source(self, ws, capsys):
        rc = run(["envelope", "--grid", str(ws / "disc1.grid"),
                  "--g", str(ws / "obstacle.fld"), "--spec", "psh",
                  "--tol", "abc"])
        assert rc == 1
        err = capsys.readouterr().err
        assert "--tol" in err and "abc" in err

    def test_missing_input_file(self, ws, capsys):
        rc = run(["envelope", "--grid", str(ws / "nope.grid"),
                  "--g", str(ws / "obstacle.fld"), "--spec", "psh"])
        assert rc == 1
        assert "nope.grid" in capsys.readouterr().err

    def test_missing_subcommand_and_bad_flag(self, capsys):
        assert run([]) == 1
        assert run(["envelope", "--frobnicate", "3"]) == 1

    def test_help_and_version_exit_zero(self, capsys):
        assert run(["--version"]) == 0
        assert run(["hull", "--help"]) == 0

    def test_relative_paths_resolve_against_cwd(self, ws, monkeypatch):
        monkeypatch.chdir(ws)
        assert run(["envelope", "--grid", "disc1.grid", "--g", "obstacle.fld",
                    "--spec", "psh", "--max-iter", "50", "--out", "rel"]) == 2
        assert (ws / "rel" / "h.fld").exists()


class TestSpecGrammar:
    def test_primitives(self):
        assert isinstance(parse_spec("psh", 1), PshStandard)
        s = parse_spec("sigma:2", 2)
        assert isinstance(s, SigmaM) and s.describe() == "sigma:2"

    def test_nested_combinators(self, ws):
        s = parse_spec("dual(dual(psh))", 1)
        assert isinstance(s, Dual) and s.describe() == "dual(dual(psh))"
        grid = read_field(str(ws / "dome.fld")).grid
        s = parse_spec("obstacle(psh,%s)" % (ws / "dome.fld"), 1, grid)
        assert isinstance(s, ObstacleRestrict)

    def test_pullback_and_almost_complex(self, tmp_path):
        eq = tmp_path / "eq.man"
        eq.write_text("#pshmanifest v1\nkind=jet-equivalence\nn=1\n"
                      "h[0][0]=2.0\nh[1][1]=2.0\n")
        s = parse_spec("pullback(psh,%s)" % eq, 1)
        assert isinstance(s, Pullback)
        jm = tmp_path / "J.man"
        jm.write_text("#pshmanifest v1\nkind=almost-complex\nn=1\n"
                      "J[0][0]=0.0\nJ[0][1]=-1.0\nJ[1][0]=1.0\nJ[1][1]=0.0\n")
        s = parse_spec("psh-j:%s" % jm, 1)
        assert isinstance(s, PshAlmostComplex)

    def test_comma_split_respects_nesting(self, ws, tmp_path):
        eq = tmp_path / "eq.man"
        eq.write_text("#pshmanifest v1\nkind=jet-equivalence\nn=1\n")
        grid = read_field(str(ws / "dome.fld")).grid
        s = parse_spec("pullback(obstacle(psh,%s),%s)" % (ws / "dome.fld", eq), 1, grid)
        assert s.describe() == "pullback(obstacle(psh))"

    def test_errors_name_the_offender(self, ws, tmp_path):
        with pytest.raises(CliError, match="grammar"):
            parse_spec("bogus(psh)", 1)
        with pytest.raises(CliError, match="sigma:9"):
            parse_spec("sigma:9", 2)
        with pytest.raises(CliError, match="no such file"):
            parse_spec("psh-j:/nowhere/J.man", 1)
        with pytest.raises(CliError, match="grid context"):
            parse_spec("obstacle(psh,%s)" % (ws / "dome.fld"), 1, None)
        bad = tmp_path / "bad.man"
        bad.write_text("#pshmanifest v1\nkind=almost-complex\nn=1\n"
                       "J[0][0]=1.0\nJ[0][1]=0.0\nJ[1][0]=0.0\nJ[1][1]=1.0\n")
        with pytest.raises(CliError, match="bad.man"):
            parse_spec("psh-j:%s" % bad, 1)


class TestEnvelope:
    def test_quartic_obstacle_run(self, ws, tmp_path):
        out = tmp_path / "env"
        rc = run(["envelope", "--grid", str(ws / "disc1.grid"),
                  "--g", str(ws / "obstacle.fld"), "--spec", "psh",
                  "--tol", "1e-8", "--out", str(out)])
        assert rc == 0
        lines = report_lines(out)
        assert lines[0]["event"] == "config" and lines[0]["threads"] >= 1
        byname = audits(lines)
        for name in ("converged", "subharmonic", "obstacle", "boundary"):
            assert byname[name]["pass"], name
        h = read_field(str(out / "h.fld"))
        g = read_field(str(ws / "obstacle.fld"))
        assert float((h.values - g.values).max()) <= 1e-9

    def test_phi_scalar_pins_boundary(self, ws, tmp_path):
        out = tmp_path / "env"
        rc = run(["envelope", "--grid", str(ws / "disc1.grid"),
                  "--g", str(ws / "dome.fld"), "--spec", "psh",
                  "--phi", "-0.125", "--out", str(out)])
        assert rc == 0
        h = read_field(str(out / "h.fld"))
        assert (h.values.ravel()[h.grid.boundary_flat] == -0.125).all()

    def test_phi_field_file_and_bad_phi(self, ws, tmp_path, capsys):
        zero = tmp_path / "zero.fld"
        g = read_field(str(ws / "dome.fld"))
        write_field(GridField(g.grid, np.zeros(g.grid.dims)), zero)
        rc = run(["envelope", "--grid", str(ws / "disc1.grid"),
                  "--g", str(ws / "dome.fld"), "--spec", "psh",
                  "--phi", str(zero), "--out", str(tmp_path / "a")])
        assert rc == 0
        rc = run(["envelope", "--grid", str(ws / "disc1.grid"),
                  "--g", str(ws / "dome.fld"), "--spec", "psh",
                  "--phi", "not-a-number.fld"])
        assert rc == 1
        assert "--phi" in capsys.readouterr().err

    def test_init_choices_agree(self, ws, tmp_path):
        outs = []
        for init in ("minphi", "obstacle"):
            out = tmp_path / init
            assert run(["envelope", "--grid", str(ws / "disc1.grid"),
                        "--g", str(ws / "obstacle.fld"), "--spec", "psh",
                        "--init", init, "--out", str(out)]) == 0
            outs.append(read_field(str(out / "h.fld")).values)
        # sweeps stop on per-iteration change <= tol, so each run sits
        # within ~tol/h^2 of the unique fixed point (measured 5.6e-6)
        assert float(np.abs(outs[0] - outs[1]).max()) <= 2e-5

    def test_non_convergence_exits_2_with_outputs(self, ws, tmp_path):
        out = tmp_path / "short"
        rc = run(["envelope", "--grid", str(ws / "disc1.grid"),
                  "--g", str(ws / "obstacle.fld"), "--spec", "psh",
                  "--max-iter", "3", "--out", str(out)])
        assert rc == 2
        assert (out / "h.fld").exists()
        byname = audits(report_lines(out))
        assert byname["converged"]["pass"] is False

    def test_mismatched_field_lattice(self, ws, tmp_path, capsys):
        other = build_disc_domain(1, 1.0, 1.0 / 16)
        write_field(GridField(other, np.zeros(other.dims)), tmp_path / "g16.fld")
        rc = run(["envelope", "--grid", str(ws / "disc1.grid"),
                  "--g", str(tmp_path / "g16.fld"), "--spec", "psh"])
        assert rc == 1
        assert "g16.fld" in capsys.readouterr().err

    def test_reruns_are_byte_identical(self, ws, tmp_path):
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run(["envelope", "--grid", str(ws / "disc1.grid"),
                        "--g", str(ws / "obstacle.fld"), "--spec", "psh",
                        "--out", str(out)]) == 0
            blobs.append((out / "h.fld").read_bytes())
        assert blobs[0] == blobs[1]


class TestHull:
    def test_circle_with_radial_oracle(self, ws, tmp_path):
        out = tmp_path / "hull"
        rc = run(["hull", "--grid", str(ws / "disc1.grid"),
                  "--K", str(ws / "ring.mask"), "--spec", "psh",
                  "--oracle", "radial", "--oracle-tol", "0.07",
                  "--out", str(out)])
        assert rc == 0
        lines = report_lines(out)
        byname = audits(lines)
        assert byname["oracle_extremal"]["pass"]
        assert byname["oracle_hull_mask"]["worst"] == 0.0
        result = [l for l in lines if l["event"] == "result"][0]
        assert result["hull_cells"] == 861
        n, dims, h, origin, lab = read_label_file(str(out / "hull.mask"))
        assert int((lab == 2).sum()) == 861

    def test_agreement_report(self, ws, tmp_path):
        out = tmp_path / "agree"
        rc = run(["hull", "--grid", str(ws / "disc1.grid"),
                  "--K", str(ws / "quarter.mask"), "--spec", "psh",
                  "--agree-radius", "0.05", "--out", str(out)])
        assert rc == 0
        byname = audits(report_lines(out))
        assert byname["agreement_smoothing"]["pass"]
        agree = byname["class_agreement"]
        assert agree["worst"] == 28 and agree["ring"] == 44
        assert (out / "hull_family.mask").exists()

    def test_header_mismatch_and_bad_theta(self, ws, tmp_path, capsys):
        other = build_disc_domain(1, 1.0, 1.0 / 16)
        r = radii(other)
        write_mask(other, tmp_path / "k16.mask",
                   labels=np.where((r <= 0.25) & (other.mask == INTERIOR), 2, 0))
        rc = run(["hull", "--grid", str(ws / "disc1.grid"),
                  "--K", str(tmp_path / "k16.mask"), "--spec", "psh"])
        assert rc == 1
        assert "k16.mask" in capsys.readouterr().err
        rc = run(["hull", "--grid", str(ws / "disc1.grid"),
                  "--K", str(ws / "ring.mask"), "--spec", "psh",
                  "--theta", "1.5"])
        assert rc == 1
        rc = run(["hull", "--grid", str(ws / "disc1.grid"),
                  "--K", str(ws / "ring.mask"), "--spec", "psh",
                  "--oracle", "midpoint"])
        assert rc == 1


class TestAudits:
    def test_double_dual_spec_example(self, tmp_path):
        out = tmp_path / "as"
        rc = run(["audit-spec", "--spec", "dual(dual(psh))",
                  "--samples", "10000", "--seed", "7", "--out", str(out)])
        assert rc == 0
        byname = audits(report_lines(out))
        assert byname["double_dual"]["agreement"] == 1.0
        assert byname["positivity"]["violations"] == 0

    def test_sigma_nesting_direction(self, tmp_path):
        rc = run(["audit-spec", "--spec", "sigma:2", "--n", "2",
                  "--samples", "2000", "--nest-into", "sigma:1",
                  "--out", str(tmp_path / "ok")])
        assert rc == 0
        rc = run(["audit-spec", "--spec", "sigma:1", "--n", "2",
                  "--samples", "2000", "--nest-into", "sigma:2",
                  "--out", str(tmp_path / "bad")])
        assert rc == 2
        byname = audits(report_lines(tmp_path / "bad"))
        assert byname["nesting"]["violations"] > 0

    def test_psh_n1_self_dual_exact(self, tmp_path):
        out = tmp_path / "sd"
        rc = run(["audit-spec", "--spec", "psh", "--n", "1",
                  "--samples", "5000", "--self-dual", "true", "--out", str(out)])
        assert rc == 0
        assert audits(report_lines(out))["self_dual"]["worst"] == 0.0

    def test_jet_membership_pass_and_fail(self, ws, tmp_path):
        g = read_field(str(ws / "dome.fld")).grid
        r = radii(g)
        write_field(GridField(g, r ** 2 - 1.0), tmp_path / "member.fld")
        rc = run(["audit-jet", "--u", str(tmp_path / "member.fld"),
                  "--spec", "psh", "--out", str(tmp_path / "a")])
        assert rc == 0
        rc = run(["audit-jet", "--u", str(ws / "dome.fld"),
                  "--spec", "psh", "--out", str(tmp_path / "b")])
        assert rc == 2
        worst = audits(report_lines(tmp_path / "b"))["jet_membership"]
        assert worst["worst_margin"] == pytest.approx(-2.0, abs=1e-9)

    def test_audit_jet_grid_crosscheck(self, ws, tmp_path, capsys):
        other = build_disc_domain(1, 1.0, 1.0 / 16)
        write_field(GridField(other, np.zeros(other.dims)), tmp_path / "z16.fld")
        rc = run(["audit-jet", "--u", str(tmp_path / "z16.fld"),
                  "--grid", str(ws / "disc1.grid"), "--spec", "psh"])
        assert rc == 1
        assert "z16.fld" in capsys.readouterr().err


class TestSmoothAndApproximate:
    def test_smooth_strict_field_passes(self, ws, tmp_path):
        g = read_field(str(ws / "dome.fld")).grid
        r = radii(g)
        write_field(GridField(g, r ** 2), tmp_path / "strict.fld")
        out = tmp_path / "sm"
        rc = run(["smooth", "--u", str(tmp_path / "strict.fld"), "--spec", "psh",
                  "--radius", "0.1", "--budget", "0.5", "--out", str(out)])
        assert rc == 0
        assert (out / "smoothed.fld").exists()
        assert audits(report_lines(out))["budget_margin"]["pass"]

    def test_smooth_kinked_field_flagged(self, ws, tmp_path):
        g = read_field(str(ws / "dome.fld")).grid
        r = radii(g)
        write_field(GridField(g, np.maximum(r ** 2 - 0.8, -0.3)), tmp_path / "kink.fld")
        out = tmp_path / "sm"
        rc = run(["smooth", "--u", str(tmp_path / "kink.fld"), "--spec", "psh",
                  "--radius", "0.1", "--budget", "0.05", "--out", str(out)])
        assert rc == 2
        assert (out / "smoothed.fld").exists()
        rep = audits(report_lines(out))["budget_margin"]
        assert rep["pass"] is False and rep["stage"] == "pre"

    def test_approximate_pipeline_run(self, ws, tmp_path):
        out = tmp_path / "ap"
        rc = run(["approximate", "--grid", str(ws / "disc1.grid"),
                  "--u", str(ws / "sample.fld"), "--rho", str(ws / "rho.fld"),
                  "--spec", "psh", "--ks", "1,2", "--eps", "0.5,0.25",
                  "--tol", "1e-9", "--out", str(out)])
        assert rc == 0
        for name in ("tamed.fld", "stage_1.fld", "strict_1.fld",
                     "stage_2.fld", "strict_2.fld"):
            assert (out / name).exists(), name
        lines = report_lines(out)
        byname = audits(lines)
        for inv in ("taming_growth", "monitor_nonincreasing",
                    "below_family", "strict_margin"):
            assert byname[inv]["pass"], inv
        stages = [l for l in lines if l["event"] == "stage"]
        assert [s["k"] for s in stages] == [1, 2]
        assert all(s["converged"] for s in stages)

    def test_bad_schedule_is_input_error(self, ws, tmp_path, capsys):
        rc = run(["approximate", "--grid", str(ws / "disc1.grid"),
                  "--u", str(ws / "sample.fld"), "--rho", str(ws / "rho.fld"),
                  "--spec", "psh", "--ks", "2,1", "--eps", "0.5,0.25"])
        assert rc == 1
        assert "k_schedule" in capsys.readouterr().err


class TestReportFile:
    def test_every_line_is_json_with_event(self, ws, tmp_path):
        out = tmp_path / "env"
        run(["envelope", "--grid", str(ws / "disc1.grid"),
             "--g", str(ws / "dome.fld"), "--spec", "psh", "--out", str(out)])
        lines = report_lines(out)
        assert all("event" in l for l in lines)
        kinds = [l["event"] for l in lines]
        assert kinds[0] == "config" and "result" in kinds and "audit" in kinds

    def test_outputs_are_listed(self, ws, tmp_path):
        out = tmp_path / "hull"
        run(["hull", "--grid", str(ws / "disc1.grid"),
             "--K", str(ws / "quarter.mask"), "--spec", "psh", "--out", str(out)])
        listed = [l["path"] for l in report_lines(out) if l["event"] == "output"]
        assert str(out / "u_K.fld") in listed and str(out / "hull.mask") in listed


class TestConsoleScript:
    def test_installed_entry_point(self, ws, tmp_path):
        env = dict(os.environ, PSHKIT_THREADS="4")
        out = tmp_path / "sub"
        proc = subprocess.run(
            ["pshkit", "envelope", "--grid", str(ws / "disc1.grid"),
             "--g", str(ws / "obstacle.fld"), "--spec", "psh",
             "--out", str(out)],
            capture_output=True, text=True, env=env, timeout=600)
        assert proc.returncode == 0, proc.stderr
        ref = tmp_path / "ref"
        assert run(["envelope", "--grid", str(ws / "disc1.grid"),
                    "--g", str(ws / "obstacle.fld"), "--spec", "psh",
                    "--out", str(ref)]) == 0
        assert (out / "h.fld").read_bytes() == (ref / "h.fld").read_bytes()
        assert json.loads((out / "report.jsonl").read_text().splitlines()[0])["threads"] == 4
