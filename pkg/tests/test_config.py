"""
Tests for run configuration: defaults, config files, flags and validation.
"""

import pytest

from mepack.config import THREADS_ENV, parse_config, read_config_file
from mepack.errors import ConfigError, InvalidParameterError


class TestSources:
    """Tests for REQ-CLI-001: layered configuration sources."""

    @pytest.mark.req("REQ-CLI-001")
    def test_flags(self):
        """Verify flags populate the packet and potential blocks."""
        config = parse_config(["evolve", "--dQ", "1", "--dP", "2", "--V", "0,0,1",
                               "--t-max", "3"], environ={})
        assert config.params.packet().nu == pytest.approx(4.0)
        assert config.potential.coeffs == (0.0, 0.0, 1.0)
        assert config.numerics.t_max == 3.0
        assert config.numerics.engine == "quantum"

    @pytest.mark.req("REQ-CLI-001")
    def test_flag_beats_file(self, config_file):
        """Verify a flag overrides the same key from the config file."""
        path = config_file("dQ = 1\ndP = 1\nV = 0,0,1\nt_max = 1\ndt = 1e-2\n")
        config = parse_config(["evolve", "--config", str(path), "--dt", "1e-3"], environ={})
        assert config.numerics.dt == 1e-3
        assert config.numerics.t_max == 1.0

    @pytest.mark.req("REQ-CLI-001")
    def test_file_comments_and_hyphens(self, config_file):
        """Verify '#' comments and hyphenated keys are accepted."""
        path = config_file("# packet\ndQ = 2   # wide\ndP = 1\nmax-iter = 7\n")
        config = parse_config(["maxent", "--config", str(path)], environ={})
        assert config.params.dQ == 2.0
        assert config.numerics.max_iter == 7

    @pytest.mark.req("REQ-CLI-001")
    def test_unknown_file_key(self, config_file):
        """Verify unknown keys in the file raise ConfigError naming the key."""
        path = config_file("dQ = 1\nwidth = 3\n")
        with pytest.raises(ConfigError) as excinfo:
            read_config_file(path)
        assert excinfo.value.key == "width"

    @pytest.mark.req("REQ-CLI-001")
    def test_file_key_unused_by_command(self, config_file):
        """Verify a known key the subcommand never reads is rejected from the file."""
        path = config_file("dQ = 1\ndP = 1\nV = 0,0,1\nt_max = 1\nN = 5\n")
        with pytest.raises(ConfigError) as excinfo:
            parse_config(["evolve", "--config", str(path)], environ={})
        assert excinfo.value.key == "N"
        with pytest.raises(ConfigError):
            read_config_file(path, allowed=("dQ", "dP", "V", "t_max"))

    @pytest.mark.req("REQ-CLI-001")
    def test_threads_from_environment(self):
        """Verify the environment sets the thread count and caps a larger request."""
        argv = ["scan", "--V", "0,0,0,1"]
        assert parse_config(argv, environ={THREADS_ENV: "3"}).numerics.threads == 3
        assert parse_config(argv + ["--threads", "2"],
                            environ={THREADS_ENV: "3"}).numerics.threads == 2
        assert parse_config(argv + ["--threads", "8"],
                            environ={THREADS_ENV: "2"}).numerics.threads == 2
        assert parse_config(argv + ["--threads", "8"], environ={}).numerics.threads == 8

    @pytest.mark.req("REQ-CLI-001")
    def test_bad_thread_environment(self):
        """Verify a non-positive thread count in the environment is a ConfigError."""
        with pytest.raises(ConfigError) as excinfo:
            parse_config(["scan", "--V", "0,0,0,1"], environ={THREADS_ENV: "0"})
        assert excinfo.value.key == "threads"

    @pytest.mark.req("REQ-CLI-001")
    def test_threads_not_echoed(self):
        """Verify the result header echo leaves out the thread count."""
        config = parse_config(["scan", "--V", "0,0,0,1", "--threads", "4"], environ={})
        assert "threads" not in config.echo()["numerics"]

    @pytest.mark.req("REQ-CLI-001")
    def test_scan_defaults_to_minimum_uncertainty(self):
        """Verify scan uses dQ = dP = sqrt(hbar / 2) by default."""
        config = parse_config(["scan", "--V", "0,0,0,1", "--hbar", "2"], environ={})
        assert config.params.packet().nu == pytest.approx(1.0)

    @pytest.mark.req("REQ-CLI-001")
    def test_json_inferred_from_extension(self, tmp_path):
        """Verify a .json output path selects JSON output."""
        config = parse_config(["packet", "--dQ", "1", "--dP", "1",
                               "--out", str(tmp_path / "r.json")], environ={})
        assert config.output.format == "json"

    @pytest.mark.req("REQ-CLI-001")
    def test_maxent_defaults_to_json(self):
        """Verify maxent writes JSON unless CSV is asked for."""
        argv = ["maxent", "--dQ", "1", "--dP", "1"]
        assert parse_config(argv, environ={}).output.format == "json"
        assert parse_config(argv + ["--format", "csv"], environ={}).output.format == "csv"


class TestValidation:
    """Tests for REQ-CLI-002: configuration validation before any computation."""

    @pytest.mark.req("REQ-CLI-002")
    def test_missing_required_key(self):
        """Verify a missing dQ raises ConfigError naming dQ."""
        with pytest.raises(ConfigError) as excinfo:
            parse_config(["evolve", "--dP", "1", "--V", "0", "--t-max", "1"], environ={})
        assert excinfo.value.key == "dQ"

    @pytest.mark.req("REQ-CLI-002")
    def test_malformed_value(self):
        """Verify unparsable numbers raise ConfigError."""
        with pytest.raises(ConfigError) as excinfo:
            parse_config(["packet", "--dQ", "wide", "--dP", "1"], environ={})
        assert excinfo.value.key == "dQ"

    @pytest.mark.req("REQ-CLI-002")
    def test_rod_needs_one_temperature_source(self):
        """Verify rod needs exactly one of lambda and energy."""
        with pytest.raises(ConfigError):
            parse_config(["rod", "--N", "10"], environ={})
        with pytest.raises(ConfigError):
            parse_config(["rod", "--N", "10", "--lambda", "1", "--energy", "9"], environ={})

    @pytest.mark.req("REQ-CLI-002")
    def test_evolve_needs_times(self):
        """Verify evolve needs t_max or explicit times."""
        with pytest.raises(ConfigError) as excinfo:
            parse_config(["evolve", "--dQ", "1", "--dP", "1", "--V", "0"], environ={})
        assert excinfo.value.key == "t_max"

    @pytest.mark.req("REQ-CLI-002")
    def test_descending_times(self):
        """Verify explicit times must be ascending."""
        with pytest.raises(ConfigError):
            parse_config(["evolve", "--dQ", "1", "--dP", "1", "--V", "0",
                          "--times", "2,1"], environ={})

    @pytest.mark.req("REQ-CLI-002")
    def test_domain_values_checked(self):
        """Verify non-positive spreads are rejected at configuration time."""
        with pytest.raises(InvalidParameterError):
            parse_config(["packet", "--dQ", "-1", "--dP", "1"], environ={})
