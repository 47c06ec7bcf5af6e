"""
CylinderLab Command Tests
==========================
Configuration validation, serialisation and end-to-end runs of the four
commands on small meshes.
"""

import json

import pytest
import pandas as pd
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.schemas import ConfigError
from src import cli


def _config(**overrides) -> dict:
    base = {
        "command": "sweep",
        "integrand": {"kind": "power", "q": 2, "dim": 2},
        "domain": {"ells": [3, 4, 5], "omega2": [[0.0, 1.0]], "h": 0.25},
        "source": {"form": "constant", "value": 1.0},
    }
    base.update(overrides)
    return base


def _parse(data: dict) -> cli.RunConfig:
    return cli.parse_config(json.dumps(data))


# ============================================================
# CONFIG VALIDATION TESTS
# ============================================================

class TestParseConfig:

    def test_defaults_filled_from_builtin(self):
        """Missing constants default to the built-in values."""
        config = _parse(_config())
        assert config.integrand.alpha == 0.5
        assert config.integrand.beta == 0.5
        assert config.domain.ells == (3.0, 4.0, 5.0)
        assert config.solver.max_iters == 20000
        assert config.output.formats == ("csv", "text", "json")

    def test_declared_constants_kept(self):
        """Declared constants override the defaults."""
        config = _parse(_config(integrand={"kind": "power", "q": 4, "dim": 2, "alpha": 0.1}))
        assert config.integrand.alpha == 0.1
        assert config.integrand.beta is None

    def test_all_issues_reported(self):
        """Every issue is reported in one error."""
        data = _config(integrand={"kind": "power", "q": 1.5, "dim": 2, "colour": "red"})
        del data["domain"]
        with pytest.raises(ConfigError) as info:
            _parse(data)
        paths = {issue.path for issue in info.value.issues}
        assert "integrand.colour" in paths
        assert "integrand.q" in paths
        assert "$.domain" in paths
        assert info.value.exit_code == 2

    def test_q_below_two_message(self):
        """q < 2 gets an explanatory message."""
        with pytest.raises(ConfigError, match="q must be >= 2"):
            _parse(_config(integrand={"kind": "power", "q": 1.5, "dim": 2}))

    def test_unknown_kind(self):
        """Unknown integrand kinds should fail."""
        with pytest.raises(ConfigError, match="must be one of"):
            _parse(_config(integrand={"kind": "cubic", "dim": 2}))

    def test_sweep_ells_must_exceed_two(self):
        """Sweep ells must exceed 2."""
        with pytest.raises(ConfigError, match="every ell must be > 2"):
            _parse(_config(domain={"ells": [2, 3], "omega2": [[0.0, 1.0]], "h": 0.25}))

    def test_sweep_ells_must_increase(self):
        """Sweep ells must increase."""
        with pytest.raises(ConfigError, match="strictly increasing"):
            _parse(_config(domain={"ells": [4, 3], "omega2": [[0.0, 1.0]], "h": 0.25}))

    def test_integrand_dimension_matches_domain(self):
        """Integrand dim must match the cross-section."""
        with pytest.raises(ConfigError, match="must equal 2"):
            _parse(_config(integrand={"kind": "power", "q": 2, "dim": 3}))

    def test_default_beta_dropped_below_declared_alpha(self):
        """Declared alpha above the built-in beta leaves beta undeclared."""
        config = _parse({"command": "audit", "integrand": {"kind": "power", "q": 2, "dim": 2, "alpha": 0.6}})
        assert config.integrand.alpha == 0.6
        assert config.integrand.beta is None

    def test_quadratic_form_matrix_checked(self):
        """Indefinite matrices are configuration errors."""
        with pytest.raises(ConfigError, match="positive definite"):
            _parse(_config(integrand={"kind": "quadratic-form", "params": {"matrix": [[1, 0], [0, -1]]}}))

    def test_degenerate_cross_section(self):
        """Zero-length cross-sections are configuration errors."""
        with pytest.raises(ConfigError, match="no positive length"):
            _parse(_config(domain={"ells": [3], "omega2": [[1.0, 1.0]], "h": 0.25}))

    def test_invalid_json(self):
        """Malformed JSON is a configuration error."""
        with pytest.raises(ConfigError, match="not valid JSON"):
            cli.parse_config("{command: sweep")

    def test_onedim_requires_block(self):
        """onedim needs its onedim block."""
        with pytest.raises(ConfigError, match="block is required"):
            _parse({"command": "onedim", "integrand": {"kind": "power", "q": 2, "dim": 1}})

    def test_serialized_config_parses_back(self):
        """Serialised config parses back to the same config."""
        config = _parse(_config(
            integrand={"kind": "aniso-max", "q": 2, "dim": 2, "params": {"weight": 0.5}},
            solver={"method": "iterative", "window": 20},
            output={"formats": ["csv"]},
        ))
        text = cli.serialize_config(config)
        assert cli.parse_config(text) == config
        assert cli.serialize_config(cli.parse_config(text)) == text

    def test_seed_override(self):
        """Seed override reaches the solver options."""
        config = cli.with_overrides(_parse(_config()), seed=11)
        assert config.seed == 11
        assert config.solver.seed == 11

    def test_command_mismatch(self):
        """Subcommand must match the file's command."""
        with pytest.raises(ConfigError, match="invoked as"):
            cli.with_overrides(_parse(_config()), command="solve")

    def test_missing_file(self, tmp_path):
        """Unreadable files are configuration errors."""
        with pytest.raises(ConfigError, match="cannot read"):
            cli.load_config(tmp_path / "absent.json")


# ============================================================
# RUN TESTS
# ============================================================

class TestRun:

    def test_audit_run(self, tmp_path):
        """Audit writes its report and passes."""
        config = _parse({"command": "audit", "integrand": {"kind": "power", "q": 2, "dim": 2},
                         "audit": {"n_samples": 500}})
        outcome = cli.run(config, out_dir=tmp_path)
        assert outcome.exit_code == cli.EXIT_OK
        report = (tmp_path / "audit_report.txt").read_text()
        assert "uniform_convexity.passed = True" in report
        assert "alpha_from_monotonicity.alpha_derived" in report
        assert (tmp_path / "metadata.json").exists()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["exit_code"] == 0
        assert {a["name"] for a in summary["audits"]} >= {"growth", "uniform_convexity", "upper_modulus"}

    def test_audit_rejects_overclaimed_alpha(self, tmp_path):
        """Overclaimed alpha fails the audit."""
        config = _parse({"command": "audit", "integrand": {"kind": "power", "q": 4, "dim": 2, "alpha": 0.5},
                         "audit": {"n_samples": 500}})
        outcome = cli.run(config, out_dir=tmp_path)
        assert outcome.exit_code == cli.EXIT_CHECK_FAILED
        assert "uniform_convexity" in outcome.message

    def test_audit_rejects_overclaimed_quadratic_alpha(self, tmp_path):
        """alpha = 0.6 for the square norm fails the convexity audit, not parsing."""
        config = _parse({"command": "audit", "integrand": {"kind": "power", "q": 2, "dim": 2, "alpha": 0.6},
                         "audit": {"n_samples": 500}})
        outcome = cli.run(config, out_dir=tmp_path)
        assert outcome.exit_code == cli.EXIT_CHECK_FAILED
        assert "uniform_convexity" in outcome.message

    def test_failed_audit_blocks_solve(self, tmp_path):
        """Failed audit stops the run before solving."""
        config = _parse(_config(command="solve",
                                integrand={"kind": "power", "q": 4, "dim": 2, "alpha": 0.5},
                                domain={"ell": 2, "omega2": [[0.0, 1.0]], "h": 0.25},
                                audit={"n_samples": 200}))
        outcome = cli.run(config, out_dir=tmp_path)
        assert outcome.exit_code == cli.EXIT_CHECK_FAILED
        assert outcome.checks == []
        assert not (tmp_path / "u_ell.txt").exists()

    def test_solve_run(self, tmp_path):
        """Solve writes the three fields and its checks."""
        config = _parse(_config(command="solve",
                                domain={"ell": 2, "omega2": [[0.0, 1.0]], "h": 0.25},
                                audit={"n_samples": 200}))
        outcome = cli.run(config, out_dir=tmp_path)
        assert outcome.exit_code == cli.EXIT_OK, outcome.message
        for name in ("u_infty.txt", "u_ell.txt", "w_ell.txt", "summary.json"):
            assert (tmp_path / name).exists()
        names = {c.name for c in outcome.checks}
        assert {"tied_ends", "pointwise_bound", "collar_gradient", "distance_half"} <= names

    def test_sweep_run(self, tmp_path):
        """Sweep writes the CSV, rates and summary."""
        config = _parse(_config(audit={"n_samples": 200}))
        outcome = cli.run(config, out_dir=tmp_path)
        assert outcome.exit_code == cli.EXIT_OK, outcome.message
        frame = pd.read_csv(tmp_path / "sweep.csv")
        assert frame["ell"].tolist() == [3.0, 4.0, 5.0]
        assert frame["wall_seconds"].isna().all()
        assert (tmp_path / "rates.txt").exists()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["exit_code"] == outcome.exit_code
        check_names = {c["name"] for c in summary["checks"]}
        assert {"distance_decay", "exponential_rate", "energy_sandwich", "monotone_in_ell"} <= check_names
        assert summary["extra"]["source"]["q_dual_norm"] == pytest.approx(1.0)

    def test_sweep_rerun_is_byte_identical(self, tmp_path):
        """Same config run twice writes identical sweep CSVs."""
        config = _parse(_config(audit={"n_samples": 200}))
        cli.run(config, out_dir=tmp_path / "a")
        cli.run(config, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()

    def test_onedim_run(self, tmp_path):
        """onedim coercive run passes."""
        config = _parse({
            "command": "onedim",
            "integrand": {"kind": "power", "q": 2, "dim": 1},
            "onedim": {"problem": "coercive", "ells": [2, 4, 6], "h": 0.125},
            "audit": {"n_samples": 200},
        })
        outcome = cli.run(config, out_dir=tmp_path)
        assert outcome.exit_code == cli.EXIT_OK, outcome.message
        frame = pd.read_csv(tmp_path / "onedim.csv")
        assert frame["ell"].tolist() == [2.0, 4.0, 6.0]
        assert (frame["max_v"] <= 1.0 + 1e-10).all()

    def test_app_reports_config_errors(self, tmp_path):
        """Entry point returns 2 for a bad configuration."""
        import app

        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"command": "audit", "integrand": {"kind": "power", "q": 1}}))
        assert app.main(["audit", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
