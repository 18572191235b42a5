import json

import pytest

from conftest import SMALL
from rgatcoref import pipeline
from rgatcoref.cli import main
from rgatcoref.depgraph import to_conllu
from rgatcoref.embedstore import load_table


@pytest.fixture
def workspace(tmp_path, corpus):
    tsv = tmp_path / "gap.tsv"
    conllu = tmp_path / "graphs.conllu"
    pipeline.write_gap_tsv(corpus.instances, tsv)
    conllu.write_text(to_conllu(corpus.graphs))
    config = tmp_path / "config.json"
    config.write_text(json.dumps(SMALL))
    return tmp_path, tsv, conllu, config


def _prepare(workspace):
    root, tsv, conllu, config = workspace
    emb = root / "emb.rgeb"
    assert main(["synth", "--conllu", str(conllu), "--dim", "8", "--seed", "1", "--signal", "A:A:0:6,B:B:1:6,NEITHER:P:2:6",
                 "--tsv", str(tsv), "--out", str(emb)]) == 0
    assert main(["ingest-gap", "--tsv", str(tsv), "--conllu", str(conllu), "--embeddings", str(emb), "--out", str(root / "data")]) == 0
    return root / "data"


class TestCommands:
    def test_full_flow(self, workspace, capsys):
        root, tsv, _, config = workspace
        data = _prepare(workspace)
        assert sorted(p.name for p in data.iterdir()) == ["embeddings.rgeb", "gap.tsv", "graphs.conllu", "manifest.json"]
        assert main(["train", "--data", str(data), "--config", str(config), "--out", str(root / "models")]) == 0
        assert (root / "models" / "fold0.rgck").exists() and (root / "models" / "report.json").exists()
        assert main(["predict", "--data", str(data), "--models", str(root / "models"), "--out", str(root / "p.tsv")]) == 0
        header = (root / "p.tsv").read_text().splitlines()[0]
        assert header == "ID\tp_A\tp_B\tp_NEITHER\tpredicted_label"
        capsys.readouterr()
        assert main(["score", "--gold", str(tsv), "--pred", str(root / "p.tsv")]) == 0
        assert "micro-F1" in capsys.readouterr().out

    def test_synth_without_signal(self, workspace):
        root, _, conllu, _ = workspace
        assert main(["synth", "--conllu", str(conllu), "--dim", "6", "--seed", "2", "--out", str(root / "e.rgeb")]) == 0
        assert load_table(root / "e.rgeb").dim == 6

    def test_signal_needs_tsv(self, workspace):
        root, _, conllu, _ = workspace
        assert main(["synth", "--conllu", str(conllu), "--dim", "6", "--signal", "A:A:0:1", "--out", str(root / "e.rgeb")]) == 1

    def test_stats(self, workspace, capsys):
        _, _, conllu, _ = workspace
        assert main(["stats", "--conllu", str(conllu)]) == 0
        assert "HeadToDep" in capsys.readouterr().out

    def test_gradcheck(self, capsys):
        assert main(["gradcheck"]) == 0
        assert "head.out.weight" in capsys.readouterr().out

    def test_score_clusters(self, tmp_path, capsys):
        key = tmp_path / "k.json"
        resp = tmp_path / "r.json"
        key.write_text(json.dumps({"doc": "d", "clusters": [["a", "b", "c"], ["d", "e"]]}))
        resp.write_text(json.dumps({"doc": "d", "clusters": [["a", "b"], ["c"], ["d", "e"]]}))
        assert main(["score-clusters", "--key", str(key), "--response", str(resp), "--mode", "standard"]) == 0
        out = capsys.readouterr().out
        assert "MUC" in out and "0.8000" in out
        assert main(["score-clusters", "--key", str(key), "--response", str(resp), "--mode", "paper"]) == 0

    def test_ablate_subset(self, workspace):
        root, _, _, config = workspace
        data = _prepare(workspace)
        cfg = root / "tiny.json"
        cfg.write_text(json.dumps(dict(SMALL, epochs=1)))
        out = root / "table.tsv"
        assert main(["ablate", "--data", str(data), "--config", str(cfg), "--links", "Concat", "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("Model\t")


class TestExitCodes:
    def test_missing_file_is_validation_error(self, tmp_path):
        assert main(["stats", "--conllu", str(tmp_path / "nope.conllu")]) == 1

    def test_bad_config(self, workspace):
        root, _, _, _ = workspace
        data = _prepare(workspace)
        bad = root / "bad.json"
        bad.write_text(json.dumps({"epochs": 0}))
        assert main(["train", "--data", str(data), "--config", str(bad), "--out", str(root / "m")]) == 1

    def test_divergence_is_exit_two(self, workspace):
        root, _, _, _ = workspace
        data = _prepare(workspace)
        cfg = root / "wild.json"
        cfg.write_text(json.dumps(dict(SMALL, lr=1e30)))
        assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(root / "m")]) == 2

    def test_usage_error(self):
        assert main(["train"]) == 1

    def test_coverage_error(self, workspace):
        root, tsv, conllu, _ = workspace
        other = root / "other.conllu"
        other.write_text("# newdoc id = lonely\n1\tx\t_\t_\t_\t_\t0\t_\t_\t_\n\n")
        emb = root / "e.rgeb"
        assert main(["synth", "--conllu", str(other), "--dim", "4", "--out", str(emb)]) == 0
        assert main(["ingest-gap", "--tsv", str(tsv), "--conllu", str(other), "--embeddings", str(emb), "--out", str(root / "d")]) == 1
