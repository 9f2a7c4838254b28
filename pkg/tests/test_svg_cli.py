import json
import re

import numpy as np
import pytest

from synthmix import cli, scaling, svgreport
from synthmix.scaling import RunRecord

WORDS = [f"word{i}" for i in range(40)]


def write_corpus(path, rng, n_docs, shift=0):
    with open(path, "w") as fh:
        for i in range(n_docs):
            n = int(rng.integers(8, 25))
            idx = (rng.integers(0, 40, size=n) + shift) % 40
            fh.write(json.dumps({"id": f"d{i}", "text": " ".join(WORDS[j] for j in idx)}) + "\n")


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(0)
    write_corpus(tmp_path / "cc.jsonl", rng, 200)
    write_corpus(tmp_path / "hq.jsonl", rng, 120, shift=5)
    write_corpus(tmp_path / "eval.jsonl", rng, 20)
    out = tmp_path / "out"
    config = f"""
seed = 11
output_dir = "{out}"
tokenizer = "ws-punct-v1"

[[corpora]]
label = "CC"
path = "{tmp_path / 'cc.jsonl'}"
format = "jsonl"

[[corpora]]
label = "HQ"
path = "{tmp_path / 'hq.jsonl'}"
format = "jsonl"

[[corpora]]
label = "EVAL"
path = "{tmp_path / 'eval.jsonl'}"
format = "jsonl"

[[mixtures]]
id = "natural"
token_budget = 1200
[mixtures.components]
CC = 1.0

[[mixtures]]
id = "blend"
token_budget = 1200
[mixtures.components]
CC = 0.8
HQ = 0.2

[stats]
test_corpus = "EVAL"

[surrogate]
budgets = [400, 800, 1200]
capacities = [[1, 1], [2, 1]]
eval_corpus = "EVAL"
natural_corpus = "CC"
order = 2

[sweep]
synthetic_labels = ["HQ"]
capacities = [2]
budgets = [800]
evaluator = "surrogate"
grid = [0.0, 0.1, 0.5, 1.0]
"""
    cfg = tmp_path / "config.toml"
    cfg.write_text(config)
    return cfg, out, tmp_path


class TestConfig:
    def test_dry_run(self, workspace, capsys):
        cfg, out, _ = workspace
        assert cli.main(["ingest", "--config", str(cfg), "--dry-run"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["valid"] is True
        assert len(payload["config_digest"]) == 64
        assert not out.exists()  # dry run writes nothing

    def test_validation_collects_all_violations(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(
            """
tokenizer = "nope"

[[corpora]]
label = "X"
path = "/does/not/exist"
format = "jsonl"

[[corpora]]
label = "X"
path = "/also/missing"
format = "jsonl"

[[mixtures]]
id = "m"
token_budget = -5
[mixtures.components]
X = 0.5
Y = 0.2
"""
        )
        assert cli.main(["ingest", "--config", str(cfg)]) == 1
        err = json.loads(capsys.readouterr().err)
        details = "\n".join(err["details"])
        assert "not distinct" in details
        assert "does not exist" in details
        assert "fractions sum" in details
        assert "unknown corpus 'Y'" in details
        assert "bad token_budget" in details
        assert "unknown tokenizer" in details
        assert "output_dir missing" in details

    def test_missing_config_file(self, tmp_path, capsys):
        assert cli.main(["mix", "--config", str(tmp_path / "none.toml")]) == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config"

    def test_seed_override_changes_digest(self, workspace, capsys):
        cfg, _, _ = workspace
        cli.main(["ingest", "--config", str(cfg), "--dry-run"])
        d1 = json.loads(capsys.readouterr().out)["config_digest"]
        cli.main(["ingest", "--config", str(cfg), "--dry-run", "--seed", "99"])
        d2 = json.loads(capsys.readouterr().out)["config_digest"]
        assert d1 != d2

    def test_env_interpolation(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SM_KEY", "abc123")
        cfg = tmp_path / "c.toml"
        cfg.write_text('[generation]\napi_key = "env:SM_KEY"\n')
        config = cli.load_config(str(cfg))
        assert config["generation"]["api_key"] == "abc123"


class TestPipeline:
    def test_ingest_mix_stats(self, workspace, capsys):
        cfg, out, _ = workspace
        assert cli.main(["ingest", "--config", str(cfg)]) == 0
        summary = json.loads((out / "ingest_summary.json").read_text())
        assert summary["corpora"]["CC"]["doc_count"] == 200
        assert "config_digest" in summary

        assert cli.main(["mix", "--config", str(cfg)]) == 0
        man = json.loads((out / "mixture_blend.manifest.json").read_text())
        assert man["prng_id"] == "philox4x64-numpy"
        assert len(man["output_digest"]) == 64

        assert cli.main(["stats", "--config", str(cfg)]) == 0
        assert (out / "zipf_CC.svg").exists()
        assert (out / "kl_divergence.csv").exists()
        assert (out / "kl_bar.svg").exists()
        capsys.readouterr()

    def test_mix_deterministic_across_runs(self, workspace, capsys):
        cfg, out, _ = workspace
        cli.main(["mix", "--config", str(cfg)])
        first = (out / "mixture_blend.manifest.json").read_bytes()
        cli.main(["mix", "--config", str(cfg)])
        assert (out / "mixture_blend.manifest.json").read_bytes() == first
        capsys.readouterr()

    def test_train_fit_roundtrip(self, workspace, capsys):
        cfg, out, _ = workspace
        assert cli.main(["train", "--config", str(cfg)]) == 0
        records = scaling.load_records(out / "run_records.csv")
        # 2 mixtures x 3 budgets x 2 capacities
        assert len(records) == 12

        assert (
            cli.main(
                ["fit", "--config", str(cfg), "--form", "data",
                 "--records", str(out / "run_records.csv")]
            )
            == 0
        )
        fit = json.loads((out / "fit_data_blend.json").read_text())
        assert fit["form"] == "data"
        assert fit["weighting"] == "uniform"
        assert (out / "scaling_curves_data.svg").exists()
        assert (out / "extrapolation_data_natural.csv").exists()
        capsys.readouterr()

    def test_search_surrogate_and_artifacts(self, workspace, capsys):
        cfg, out, _ = workspace
        assert cli.main(["search", "--config", str(cfg)]) == 0
        cells = json.loads((out / "sweep_cells.json").read_text())
        assert cells[0]["synthetic_label"] == "HQ"
        assert cells[0]["best_ratio"] in (0.0, 0.1, 0.5, 1.0)
        assert (out / "sweep.csv").exists()
        assert (out / "sweep_ledger.jsonl").exists()
        assert (out / "ratio_heatmap.svg").exists()

        # second invocation replays the ledger byte-identically
        ledger = (out / "sweep_ledger.jsonl").read_bytes()
        sweep = (out / "sweep.csv").read_bytes()
        assert cli.main(["search", "--config", str(cfg)]) == 0
        assert (out / "sweep_ledger.jsonl").read_bytes() == ledger
        assert (out / "sweep.csv").read_bytes() == sweep
        capsys.readouterr()

    def test_report_heatmap_consistent_with_search(self, workspace, capsys):
        cfg, out, _ = workspace
        cli.main(["search", "--config", str(cfg)])
        heat_direct = (out / "ratio_heatmap.svg").read_bytes()
        assert (
            cli.main(
                ["report", "--config", str(cfg), "--kind", "ratio_heatmap",
                 "--in", str(out / "sweep.csv")]
            )
            == 0
        )
        assert (out / "ratio_heatmap.svg").read_bytes() == heat_direct
        capsys.readouterr()

    def test_report_token_loss(self, workspace, capsys, tmp_path):
        from synthmix import stats as stats_mod

        cfg, out, _ = workspace
        recs = [
            stats_mod.TokenLossRecord(i, f"t{i}", 2.0 + 0.1 * (i % 5))
            for i in range(50)
        ]
        log = tmp_path / "loss.jsonl"
        stats_mod.save_loss_log(recs, log)
        assert (
            cli.main(
                ["report", "--config", str(cfg), "--kind", "token_loss",
                 "--in", str(log), "--window", "5"]
            )
            == 0
        )
        assert (out / "token_loss.svg").exists()
        capsys.readouterr()

    def test_unknown_report_kind(self, workspace, capsys):
        cfg, _, _ = workspace
        assert (
            cli.main(
                ["report", "--config", str(cfg), "--kind", "bogus", "--in", "x"]
            )
            == 1
        )
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "usage"

    def test_runtime_error_is_json(self, workspace, capsys):
        cfg, _, _ = workspace
        rc = cli.main(
            ["fit", "--config", str(cfg), "--form", "data",
             "--records", "/no/such/records.csv"]
        )
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert "message" in err


class TestSvg:
    def fits_series(self):
        rng = np.random.default_rng(1)
        ds = np.round(np.geomspace(1e4, 1e7, 6)).astype(int)
        pts = [(float(d), 1.5 + 2.0 / float(d) ** 0.3) for d in ds]
        return {
            "m0": {
                "curve": pts,
                "fit_points": pts[:4],
                "holdout_points": pts[4:],
            }
        }

    def test_formatters(self):
        assert svgreport.fmt_loss(2.3456789012) == "2.34568"
        assert svgreport.fmt_loss(0.000123456) == "0.000123456"
        assert svgreport.fmt_percent(12.3456) == "12.35"

    def test_scaling_curves_structure(self):
        svg = svgreport.scaling_curves_svg(
            self.fits_series(), "data budget D (tokens)",
            config_digest="c" * 64, tool_version="0.1.0",
        )
        assert svg.startswith("<svg")
        assert 'width="720" height="480"' in svg
        assert "cccccccc" in svg  # digest comment embedded
        assert "monospace" in svg
        assert "<circle" in svg  # fit markers
        assert "<polygon" in svg  # holdout markers

    def test_byte_determinism(self):
        kwargs = dict(config_digest="d" * 64, tool_version="0.1.0")
        a = svgreport.scaling_curves_svg(self.fits_series(), "D", **kwargs)
        b = svgreport.scaling_curves_svg(self.fits_series(), "D", **kwargs)
        assert a == b
        bars = [("m1", 2.5), ("m0", 1.5)]
        assert svgreport.bar_chart_svg(bars, "t", "y", **kwargs) == (
            svgreport.bar_chart_svg(list(bars), "t", "y", **kwargs)
        )

    def test_bar_chart_sorted_and_formatted(self):
        svg = svgreport.bar_chart_svg(
            [("worse", 2.345678), ("better", 1.234567)],
            "Irreducible loss", "E (nats)",
            config_digest="0" * 64, tool_version="0.1.0",
        )
        assert svg.index("better") < svg.index("worse")
        assert "1.23457" in svg and "2.34568" in svg

    def test_heatmap_percent_labels(self):
        svg = svgreport.heatmap_svg(
            {(100, 1000): 0.05, (100, 2000): 0.2, (200, 1000): 0.0, (200, 2000): 1.0},
            config_digest="0" * 64, tool_version="0.1.0",
        )
        assert "5.00" in svg and "20.00" in svg and "100.00" in svg

    def test_escaping(self):
        svg = svgreport.bar_chart_svg(
            [("a<b&c", 1.0), ("d", 2.0)], "t", "y",
            config_digest="0" * 64, tool_version="0.1.0",
        )
        assert "a<b" not in svg
        assert "a&lt;b&amp;c" in svg

    def test_write_svg(self, tmp_path):
        p = tmp_path / "x.svg"
        svgreport.write_svg("<svg></svg>", p)
        assert p.read_text().startswith("<svg")
