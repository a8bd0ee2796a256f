"""Config parsing/validation and the file-writing command front end."""

import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import pytest

import ssabc
from ssabc.cli import main
from ssabc.config import (
    AbcSettings,
    ExperimentConfig,
    GridSettings,
    config_from_dict,
    config_to_dict,
    load_config,
)
from ssabc.errors import ConfigError
from ssabc.experiments import Experiment

# ---------------------------------------------------------------------------
# config documents
# ---------------------------------------------------------------------------


class TestConfigDefaults:
    def test_empty_document(self):
        cfg = config_from_dict({})
        assert cfg.model == "lg"
        assert cfg.T == 400
        assert cfg.sn_ratio == 20.0
        assert cfg.true_params == (0.7, 0.1, 1.0)
        assert cfg.unknown_params == ("rho", "delta", "sigma_v")
        assert cfg.methods == ("summ-euclid", "fp", "joint-score", "marginal-score")
        assert cfg.prior_lower == (0.0, -0.5, 0.1)
        assert cfg.prior_upper == (0.99, 0.7, 2.0)
        assert cfg.two_stage is False
        assert cfg.abc == AbcSettings()
        assert cfg.grids == GridSettings()

    def test_heston_defaults(self):
        cfg = config_from_dict({"model": "heston"})
        assert cfg.sn_ratio is None
        assert cfg.true_params == (0.92, 0.0024, 0.062)
        assert cfg.prior_lower == (0.5, 1e-4, 0.01)
        assert cfg.two_stage is True  # all three unknown

    def test_two_stage_heuristic(self):
        single = config_from_dict({"model": "heston", "unknown_params": ["rho"]})
        assert single.two_stage is False
        dual = config_from_dict({"model": "heston", "unknown_params": ["rho", "sigma_v"]})
        assert dual.two_stage is True
        forced = config_from_dict(
            {"model": "heston", "unknown_params": ["rho", "sigma_v"], "two_stage": False}
        )
        assert forced.two_stage is False

    def test_unknown_params_canonical_order(self):
        cfg = config_from_dict({"unknown_params": ["sigma_v", "rho"]})
        assert cfg.unknown_params == ("rho", "sigma_v")

    def test_round_trip(self):
        cfg = config_from_dict(
            {
                "model": "heston",
                "T": 250,
                "seed": 7,
                "unknown_params": ["rho", "sigma_v"],
                "methods": ["joint-score"],
                "abc": {"R": 500, "accept_quantile": 0.2},
                "grids": {"nuisance_points": 9},
                "table1": {"panels": ["a", "B"]},
            }
        )
        assert config_from_dict(config_to_dict(cfg)) == cfg
        assert cfg.table1_panels == ("A", "B")


class TestConfigValidation:
    def test_unknown_keys_rejected_everywhere(self):
        with pytest.raises(ConfigError, match="typo_key"):
            config_from_dict({"typo_key": 1})
        with pytest.raises(ConfigError, match="abc"):
            config_from_dict({"abc": {"R": 500, "quantile": 0.1}})
        with pytest.raises(ConfigError, match="prior"):
            config_from_dict({"prior": {"low": [0, 0, 0]}})
        with pytest.raises(ConfigError, match="grids"):
            config_from_dict({"grids": {"reference": 10}})
        with pytest.raises(ConfigError, match="table1"):
            config_from_dict({"table1": {"panel": ["A"]}})

    def test_schema_version_gate(self):
        config_from_dict({"schema_version": 1})
        with pytest.raises(ConfigError, match="schema_version"):
            config_from_dict({"schema_version": 2})

    def test_document_must_be_object(self):
        with pytest.raises(ConfigError, match="JSON object"):
            config_from_dict([1, 2, 3])

    def test_sn_ratio_is_lg_only(self):
        with pytest.raises(ConfigError, match="sn_ratio"):
            config_from_dict({"model": "heston", "sn_ratio": 10.0})

    def test_cross_field_truth_validation(self):
        """Model-level parameter checks run before any compute."""
        with pytest.raises(ConfigError, match="true_params invalid"):
            config_from_dict({"model": "heston", "true_params": [0.9, 0.001, 0.2]})  # Feller fails
        with pytest.raises(ConfigError, match="true_params invalid"):
            config_from_dict({"model": "lg", "true_params": [1.2, 0.1, 1.0]})  # non-stationary

    def test_parameter_name_checks(self):
        with pytest.raises(ConfigError, match="valid names"):
            config_from_dict({"unknown_params": ["rho", "kappa"]})
        with pytest.raises(ConfigError, match="duplicates"):
            config_from_dict({"unknown_params": ["rho", "rho"]})
        with pytest.raises(ConfigError, match="nonempty"):
            config_from_dict({"unknown_params": []})

    def test_method_checks(self):
        with pytest.raises(ConfigError, match="valid methods"):
            config_from_dict({"methods": ["nearest-neighbour"]})
        with pytest.raises(ConfigError, match="nonempty"):
            config_from_dict({"methods": []})

    def test_prior_checks(self):
        with pytest.raises(ConfigError, match="lower < upper"):
            config_from_dict({"prior": {"lower": [0.9, 0, 0.1], "upper": [0.5, 0.7, 2.0]}})
        with pytest.raises(ConfigError, match="3 values"):
            config_from_dict({"prior": {"lower": [0.0, 0.0], "upper": [1.0, 1.0]}})

    def test_scalar_guards(self):
        config_from_dict({"T": 2})  # the simulator's own floor
        for doc in (
            {"T": 1},
            {"n_runs": 0},
            {"threads": 0},
            {"seed": -1},
            {"model": "japanese"},
            {"table1": {"panels": ["E"]}},
        ):
            with pytest.raises(ConfigError):
                config_from_dict(doc)

    def test_abc_block_guards(self):
        AbcSettings(R=100, accept_quantile=1.0)
        with pytest.raises(ConfigError, match="R"):
            AbcSettings(R=99)
        with pytest.raises(ConfigError, match="accept_quantile"):
            AbcSettings(accept_quantile=0.0)
        with pytest.raises(ConfigError, match="accept_quantile"):
            AbcSettings(accept_quantile=1.5)
        with pytest.raises(ConfigError, match="sim_multiplier"):
            AbcSettings(sim_multiplier=0)

    def test_grids_block_guards(self):
        with pytest.raises(ConfigError, match="nuisance_points"):
            GridSettings(nuisance_points=4)

    def test_load_config_io_errors(self, tmp_path):
        missing = tmp_path / "nope.json"
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(missing)
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(bad)


# ---------------------------------------------------------------------------
# command front end
# ---------------------------------------------------------------------------


def _write_config(tmp_path: Path, doc: dict, name: str = "config.json") -> str:
    doc = dict(doc)
    doc.setdefault("output_dir", str(tmp_path / "out"))
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _read_csv(path: Path):
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


class TestSimulateCommand:
    def test_paper_settings_lg(self, tmp_path, capsys):
        cfg_path = _write_config(tmp_path, {"model": "lg"})
        assert main(["simulate", "--config", cfg_path]) == 0
        header, rows = _read_csv(tmp_path / "out" / "observed.csv")
        assert header == ["t", "y", "x"]
        assert len(rows) == 400
        meta = json.loads((tmp_path / "out" / "meta.json").read_text())
        assert meta["model"] == "lg" and meta["T"] == 400 and meta["seed"] == 0
        assert set(meta["params"]) == {"rho", "delta", "sigma_v", "sigma_e"}
        summary = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
        assert summary["written"] == ["observed.csv", "meta.json"]

    def test_heston_latent_column(self, tmp_path):
        cfg_path = _write_config(tmp_path, {"model": "heston", "T": 5})
        assert main(["simulate", "--config", cfg_path]) == 0
        header, rows = _read_csv(tmp_path / "out" / "observed.csv")
        assert header == ["t", "y", "V"]
        assert len(rows) == 5

    def test_minimal_length(self, tmp_path):
        cfg_path = _write_config(tmp_path, {"model": "lg", "T": 2})
        assert main(["simulate", "--config", cfg_path]) == 0
        _, rows = _read_csv(tmp_path / "out" / "observed.csv")
        assert len(rows) == 2

    @pytest.mark.invariant
    def test_idempotent_bytes(self, tmp_path):
        cfg_path = _write_config(tmp_path, {"model": "lg", "T": 50})
        main(["simulate", "--config", cfg_path])
        first = {f: (tmp_path / "out" / f).read_bytes() for f in ("observed.csv", "meta.json")}
        main(["simulate", "--config", cfg_path])
        for f, blob in first.items():
            assert (tmp_path / "out" / f).read_bytes() == blob

    def test_seed_and_out_overrides(self, tmp_path):
        cfg_path = _write_config(tmp_path, {"model": "lg", "T": 30})
        main(["simulate", "--config", cfg_path])
        base = (tmp_path / "out" / "observed.csv").read_text()
        other = tmp_path / "elsewhere"
        main(["simulate", "--config", cfg_path, "--seed", "1", "--out", str(other)])
        assert (other / "observed.csv").read_text() != base
        assert json.loads((other / "meta.json").read_text())["seed"] == 1


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path, capsys):
        cfg_path = _write_config(tmp_path, {"model": "lg", "bogus": True})
        assert main(["simulate", "--config", cfg_path]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_is_2(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == 2

    def test_unwritable_output_is_4(self, tmp_path, capsys):
        blocked = tmp_path / "blocked"
        blocked.write_text("a file, not a directory")
        cfg_path = _write_config(tmp_path, {"model": "lg", "T": 20, "output_dir": str(blocked)})
        assert main(["simulate", "--config", cfg_path]) == 4
        assert "i/o error" in capsys.readouterr().err


class TestFitAndExactPosterior:
    def test_fit_writes_anchor_document(self, tmp_path):
        cfg_path = _write_config(
            tmp_path,
            {"model": "lg", "T": 60, "unknown_params": ["rho", "sigma_v"]},
        )
        assert main(["fit", "--config", cfg_path]) == 0
        doc = json.loads((tmp_path / "out" / "fit.json").read_text())
        assert list(doc["beta_hat"]) == ["rho", "sigma_v"]
        assert np.asarray(doc["sigma_weight"]).shape == (2, 2)
        assert set(doc["marginal_anchors"]) == {"rho", "sigma_v"}

    def test_exact_posterior_files(self, tmp_path):
        cfg_path = _write_config(
            tmp_path,
            {
                "model": "lg",
                "T": 60,
                "unknown_params": ["rho"],
                "grids": {"reference_points": 50},
            },
        )
        assert main(["exact-posterior", "--config", cfg_path]) == 0
        header, rows = _read_csv(tmp_path / "out" / "posterior_exact_rho.csv")
        assert header == ["rho", "ordinate"]
        assert len(rows) == 50
        x = np.array([float(r[0]) for r in rows])
        p = np.array([float(r[1]) for r in rows])
        assert abs(np.trapezoid(p, x) - 1.0) < 1e-6


_RUN_DOC = {
    "model": "lg",
    "T": 60,
    "unknown_params": ["rho", "sigma_v"],
    "methods": ["summ-euclid", "joint-score"],
    "abc": {"R": 120, "accept_quantile": 0.25},
    "grids": {"reference_points": 40},
    "n_runs": 2,
}


class TestRunCommand:
    @pytest.fixture(scope="class")
    def run_dir(self, tmp_path_factory):
        tmp_path = tmp_path_factory.mktemp("run")
        cfg_path = _write_config(tmp_path, _RUN_DOC)
        assert main(["run", "--config", cfg_path]) == 0
        return tmp_path / "out"

    def test_report_shape(self, run_dir):
        report = json.loads((run_dir / "report.json").read_text())
        assert report["schema_version"] == 1
        for method in ("summ-euclid", "joint-score"):
            assert set(report["rmse"][method]) == {"rho", "sigma_v"}
            for name in ("rho", "sigma_v"):
                block = report["rmse"][method][name]
                assert len(block["per_run"]) == 2
                assert block["mean"] == pytest.approx(np.mean(block["per_run"]))
                assert all(len(p) == 5 for p in report["percentiles"][method][name])

    @pytest.mark.invariant
    def test_report_validates_against_shipped_schema(self, run_dir):
        schema = json.loads((Path(ssabc.__file__).parent / "report.schema.json").read_text())
        jsonschema.Draft7Validator.check_schema(schema)
        report = json.loads((run_dir / "report.json").read_text())
        jsonschema.validate(report, schema)

    def test_accepted_row_count_matches_quantile(self, run_dir):
        """ceil(quantile * R) accepted rows per method."""
        want = math.ceil(0.25 * 120)
        for method in ("summ-euclid", "joint-score"):
            _, rows = _read_csv(run_dir / f"draws_{method}.csv")
            assert len(rows) == want

    def test_posterior_files_normalized(self, run_dir):
        header, rows = _read_csv(run_dir / "posterior_joint-score_rho.csv")
        assert header == ["rho", "ordinate"]
        x = np.array([float(r[0]) for r in rows])
        p = np.array([float(r[1]) for r in rows])
        assert x.size == 40
        assert abs(np.trapezoid(p, x) - 1.0) < 1e-6

    @pytest.mark.invariant
    def test_csv_floats_round_trip(self, run_dir):
        """17-significant-digit serialization reparses to the exact doubles."""
        cfg = config_from_dict({**_RUN_DOC, "output_dir": str(run_dir)})
        exp = Experiment(cfg)
        draws, _ = exp.run_pool(0, 1)
        _, rows = _read_csv(run_dir / "draws_summ-euclid.csv")
        for row in rows:
            i = int(float(row[0]))
            assert float(row[1]) == draws[i, 0]
            assert float(row[2]) == draws[i, 1]

    @pytest.mark.invariant
    def test_rerun_identical_minus_timings(self, run_dir, tmp_path):
        cfg_path = _write_config(tmp_path, {**_RUN_DOC, "output_dir": str(tmp_path / "out2")})
        assert main(["run", "--config", cfg_path]) == 0
        first = json.loads((run_dir / "report.json").read_text())
        second = json.loads((tmp_path / "out2" / "report.json").read_text())
        first.pop("timings")
        second.pop("timings")
        assert first == second
        for f in ("draws_summ-euclid.csv", "draws_joint-score.csv", "posterior_joint-score_rho.csv"):
            assert (tmp_path / "out2" / f).read_bytes() == (run_dir / f).read_bytes()


class TestTable1Command:
    @pytest.fixture(scope="class")
    def table_dir(self, tmp_path_factory):
        tmp_path = tmp_path_factory.mktemp("table1")
        doc = {
            "model": "heston",
            "T": 60,
            "abc": {"R": 1000, "accept_quantile": 0.2},
            "grids": {"reference_points": 30, "filter_points": 40, "nuisance_points": 7},
            "n_runs": 1,
        }
        cfg_path = _write_config(tmp_path, doc)
        assert main(["table1", "--config", cfg_path]) == 0
        return tmp_path, cfg_path

    def test_smoke_csv_well_formed(self, table_dir):
        tmp_path, _ = table_dir
        header, rows = _read_csv(tmp_path / "out" / "table1.csv")
        assert header == ["row", "A:rho", "A:delta", "A:sigma_v"]
        names = [r[0] for r in rows]
        assert names == ["AUKF", "Euler", "ABC-Joint Score", "ABC-Marginal Score", "ABC-SS", "ABC-FP"]
        for row in rows:
            for cell in row[1:]:
                if row[0] == "ABC-Joint Score":
                    assert cell == "-"  # not defined for single-unknown columns
                else:
                    assert np.isfinite(float(cell)) and float(cell) >= 0.0

    @pytest.mark.invariant
    def test_rerun_identical(self, table_dir):
        tmp_path, cfg_path = table_dir
        blob = (tmp_path / "out" / "table1.csv").read_bytes()
        assert main(["table1", "--config", cfg_path]) == 0
        assert (tmp_path / "out" / "table1.csv").read_bytes() == blob
