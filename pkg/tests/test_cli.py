import csv
import json

import numpy as np
import pytest

from personality_ncf import cli
from personality_ncf.evaluation import read_ranks_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


def text_review(user, item, words):
    return json.dumps({"reviewerID": user, "asin": item, "reviewText": " ".join(["great"] * words), "overall": 4.0})


@pytest.fixture
def reviews(tmp_path):
    lines = [text_review("keep", f"i{k}", 40) for k in range(10)]
    lines += [text_review("short", f"i{k}", 10) for k in range(10)]
    lines += [text_review("few", f"i{k}", 40) for k in range(3)]
    path = tmp_path / "reviews.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    data = root / "data"
    assert run("synth", "--users", 60, "--items", 50, "--per-user", 8, "--seed", 1, "--out", data) == 0
    assert run("train", "--data", data, "--mode", "hard", "--epochs", 3, "--batch-size", 64,
               "--seed", 1, "--out", root / "m.ckpt") == 0
    assert run("eval", "--data", data, "--checkpoint", root / "m.ckpt", "--out", root / "metrics.csv") == 0
    return root, data


class TestIngest:
    def test_report(self, reviews, tmp_path, capsys):
        assert run("ingest", reviews, "--out", tmp_path / "d") == 0
        report = dict(csv.reader(open(tmp_path / "d" / "filter_report.csv")))
        assert report["users_before"] == "3"
        assert report["users_retained"] == "1"
        assert "users_retained" in capsys.readouterr().out

    def test_rerun_identical(self, reviews, tmp_path):
        run("ingest", reviews, "--out", tmp_path / "a")
        run("ingest", reviews, "--out", tmp_path / "b")
        for name in ("interactions.csv", "index.csv", "documents.jsonl", "filter_report.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_empty_file(self, tmp_path, capsys):
        (tmp_path / "empty.jsonl").write_text("")
        assert run("ingest", tmp_path / "empty.jsonl", "--out", tmp_path / "d") == 2
        assert "empty dataset" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("ingest", tmp_path / "nope.jsonl", "--out", tmp_path / "d") == 2

    def test_does_not_touch_input(self, reviews, tmp_path):
        before = reviews.read_bytes()
        run("ingest", reviews, "--out", tmp_path / "d")
        assert reviews.read_bytes() == before


class TestPersonality:
    def test_import_rescales(self, tmp_path):
        src = tmp_path / "q.csv"
        src.write_text("user_id,openness,conscientiousness,extroversion,agreeableness,neuroticism\nu,4,1,7,4,4\n")
        assert run("personality", "--source", "import", "--csv", src, "--range", "1,7", "--out", tmp_path / "p.csv") == 0
        row = next(csv.DictReader(open(tmp_path / "p.csv")))
        assert float(row["openness"]) == 50.0 and float(row["extroversion"]) == 100.0
        assert row["provenance"] == "imported"

    def test_import_round_trip(self, tmp_path):
        src = tmp_path / "q.csv"
        src.write_text("user_id,openness,conscientiousness,extroversion,agreeableness,neuroticism\nu,4,1,7,4,4\n")
        run("personality", "--source", "import", "--csv", src, "--range", "1,7", "--out", tmp_path / "a.csv")
        run("personality", "--source", "import", "--csv", tmp_path / "a.csv", "--out", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_bad_row(self, tmp_path, capsys):
        src = tmp_path / "q.csv"
        src.write_text("user_id,openness,conscientiousness,extroversion,agreeableness,neuroticism\nu,4,1,9,4,4\n")
        assert run("personality", "--source", "import", "--csv", src, "--range", "1,7", "--out", tmp_path / "p.csv") == 3
        assert "line 2" in capsys.readouterr().err

    def test_lexicon(self, reviews, tmp_path):
        run("ingest", reviews, "--out", tmp_path / "d")
        assert run("personality", "--data", tmp_path / "d") == 0
        rows = list(csv.DictReader(open(tmp_path / "d" / "personality.csv")))
        assert [r["user_id"] for r in rows] == ["keep"]
        assert rows[0]["provenance"] == "lexicon"

    def test_lexicon_empty_doc(self, tmp_path):
        d = tmp_path / "d"
        d.mkdir()
        (d / "documents.jsonl").write_text(json.dumps(
            {"user_id": "u", "qualifying_review_count": 0, "total_words": 0, "reviewed_items": [], "text": ""}) + "\n")
        assert run("personality", "--data", d) == 0
        row = next(csv.DictReader(open(d / "personality.csv")))
        assert [float(row[t]) for t in ("openness", "neuroticism")] == [50.0, 50.0]


class TestSynth:
    def test_generator_flags(self, tmp_path):
        base = ["synth", "--users", 20, "--items", 30, "--per-user", 5, "--seed", 4]
        assert run(*base, "--out", tmp_path / "a") == 0
        assert run(*base, "--alpha", 2.0, "--weight-temperature", 50, "--out", tmp_path / "b") == 0
        a, b = ((tmp_path / d / "interactions.csv").read_bytes() for d in "ab")
        assert a != b and len(a.splitlines()) == len(b.splitlines()) == 101

    def test_bad_alpha(self, tmp_path):
        assert run("synth", "--alpha", 0, "--out", tmp_path) == 4


class TestStats:
    def test_table(self, pipeline, capsys, tmp_path):
        _, data = pipeline
        assert run("stats", "--data", data, "--csv", tmp_path / "s.csv") == 0
        out = capsys.readouterr().out
        assert "density_pct" in out
        rows = dict(csv.reader(open(tmp_path / "s.csv")))
        assert rows["ratings"] == "480"

    def test_env_default(self, pipeline, monkeypatch, capsys):
        _, data = pipeline
        monkeypatch.setenv(cli.DATA_ENV, str(data))
        assert run("stats") == 0
        assert "480" in capsys.readouterr().out

    def test_no_data(self, tmp_path):
        assert run("stats", "--data", tmp_path) == 2


class TestTrainEval:
    def test_artifacts(self, pipeline):
        root, _ = pipeline
        assert (root / "m.ckpt").read_bytes()[:4] == b"PNCF"
        log = list(csv.DictReader(open(root / "m.epochs.csv")))
        assert [r["epoch"] for r in log] == ["0", "1", "2"]
        lines = (root / "metrics.csv").read_text().splitlines()
        assert lines[0] == "metric,K,value" and len(lines) == 7

    def test_rerun_identical(self, pipeline, tmp_path):
        root, data = pipeline
        assert run("train", "--data", data, "--mode", "hard", "--epochs", 3, "--batch-size", 64,
                   "--seed", 1, "--out", tmp_path / "m.ckpt") == 0
        assert (tmp_path / "m.ckpt").read_bytes() == (root / "m.ckpt").read_bytes()
        assert (tmp_path / "m.epochs.csv").read_bytes() == (root / "m.epochs.csv").read_bytes()
        assert run("eval", "--data", data, "--checkpoint", tmp_path / "m.ckpt", "--out", tmp_path / "metrics.csv") == 0
        assert (tmp_path / "metrics.csv").read_bytes() == (root / "metrics.csv").read_bytes()
        assert (tmp_path / "metrics.ranks.csv").read_bytes() == (root / "metrics.ranks.csv").read_bytes()

    def test_custom_k_and_exhaustive(self, pipeline, tmp_path):
        root, data = pipeline
        assert run("eval", "--data", data, "--checkpoint", root / "m.ckpt", "--k", "1,20",
                   "--eval-negatives", "all", "--out", tmp_path / "m.csv") == 0
        ks = [line.split(",")[1] for line in (tmp_path / "m.csv").read_text().splitlines()[1:]]
        assert ks == ["1", "20", "1", "20"]

    def test_mode_mismatch(self, pipeline, tmp_path, capsys):
        root, data = pipeline
        assert run("eval", "--data", data, "--checkpoint", root / "m.ckpt", "--mode", "soft",
                   "--out", tmp_path / "m.csv") == 4
        assert "drop --mode" in capsys.readouterr().err

    def test_missing_personality(self, pipeline, tmp_path):
        _, data = pipeline
        assert run("train", "--data", data, "--mode", "soft", "--epochs", 1,
                   "--personality", tmp_path / "none.csv", "--out", tmp_path / "m.ckpt") == 4
        assert not (tmp_path / "m.ckpt").exists()

    def test_plain_smoke(self, pipeline, tmp_path):
        _, data = pipeline
        assert run("train", "--data", data, "--mode", "plain", "--epochs", 1, "--out", tmp_path / "p.ckpt") == 0

    def test_corrupt_checkpoint(self, pipeline, tmp_path):
        _, data = pipeline
        (tmp_path / "bad.ckpt").write_bytes(b"nope")
        assert run("eval", "--data", data, "--checkpoint", tmp_path / "bad.ckpt", "--out", tmp_path / "m.csv") == 3

    def test_bad_flag(self):
        with pytest.raises(SystemExit) as e:
            run("train", "--mode", "bogus")
        assert e.value.code == 2


class TestBreakdown:
    def test_counts_match_eval(self, pipeline, tmp_path):
        root, data = pipeline
        assert run("breakdown", "--data", data, "--ranks", root / "metrics.ranks.csv", "--out", tmp_path / "b.csv") == 0
        rows = list(csv.DictReader(open(tmp_path / "b.csv")))
        users, _ = read_ranks_csv(root / "metrics.ranks.csv")
        assert sum(int(r["count"]) for r in rows) == len(users)
        assert [r["trait"] for r in rows] == ["openness", "conscientiousness", "extroversion", "agreeableness", "neuroticism"]


class TestPlot:
    def test_outputs_and_determinism(self, pipeline, tmp_path):
        _, data = pipeline
        assert run("plot", "--data", data, "--out", tmp_path / "a") == 0
        assert run("plot", "--data", data, "--out", tmp_path / "b") == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == ["agreeableness.svg", "conscientiousness.svg", "extroversion.svg",
                         "neuroticism.svg", "openness.svg", "summary.csv"]
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        svg = (tmp_path / "a" / "openness.svg").read_text()
        assert svg.startswith("<svg") and 'stroke="red"' in svg

    def test_single_user(self, tmp_path):
        p = tmp_path / "p.csv"
        p.write_text("user_id,openness,conscientiousness,extroversion,agreeableness,neuroticism\nu,54.39,1,2,3,4\n")
        assert run("plot", "--personality", p, "--out", tmp_path / "o") == 0
        rows = {r["trait"]: r for r in csv.DictReader(open(tmp_path / "o" / "summary.csv"))}
        assert float(rows["openness"]["median"]) == 54.39
        assert (tmp_path / "o" / "openness.svg").read_text().count('fill="#4c72b0"') == 20

    def test_uniform_is_flat(self, tmp_path):
        rng = np.random.default_rng(0)
        p = tmp_path / "p.csv"
        rows = "\n".join(f"u{i}," + ",".join(f"{v:.4f}" for v in rng.uniform(0, 100, 5)) for i in range(20_000))
        p.write_text("user_id,openness,conscientiousness,extroversion,agreeableness,neuroticism\n" + rows + "\n")
        from personality_ncf.personality import Trait, import_scores_csv, trait_distribution

        counts = trait_distribution(import_scores_csv(p, (0, 100)), bins=20)[Trait.OPENNESS].counts
        assert counts.min() > 0.85 * 1000 and counts.max() < 1.15 * 1000

    def test_empty(self, tmp_path):
        p = tmp_path / "p.csv"
        p.write_text("user_id,openness,conscientiousness,extroversion,agreeableness,neuroticism\n")
        assert run("plot", "--personality", p, "--out", tmp_path / "o") == 2
