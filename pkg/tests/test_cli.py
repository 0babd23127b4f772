import csv
import json

import pytest

from htgn import cli
from htgn.graph import load_events
from helpers import TG1


def run(tmp_path, command, cfg_text, *extra, name="run"):
    cfg = tmp_path / f"{name}.yaml"
    cfg.write_text(cfg_text)
    out = tmp_path / name
    rc = cli.main([command, "-c", str(cfg), "--set", f"output.directory={out}", *extra])
    return rc, out


def write_events(path, events):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "t"])
        w.writerows(events)
    return path


def live_sets(out):
    lines = (out / "hyperedges.jsonl").read_text().splitlines()
    return sorted(sorted(json.loads(x)["members"]) for x in lines)


TRIANGLE = ("data: {seed: 0, htsbm: {n: 6, K: 2, noise_scale: 0.0, horizon: 10.0,\n"
            "       planted: [{members: [0, 1, 2], low: 2.0, high: 3.0}]}}\n")


def test_generate_single_noise_free_triangle(tmp_path):
    rc, out = run(tmp_path, "generate", TRIANGLE)
    assert rc == 0
    g = load_events(out / "events.csv")
    assert len(g) == 3
    raw = g.id_map
    assert sorted(tuple(sorted((raw[a], raw[b]))) for a, b in zip(g.src, g.dst)) == [(0, 1), (0, 2), (1, 2)]
    assert all(2.0 <= x <= 3.0 for x in g.t)
    planted = [json.loads(x) for x in (out / "planted.jsonl").read_text().splitlines()]
    assert [p["members"] for p in planted] == [[0, 1, 2]]


def test_generate_needs_a_seed(tmp_path, capsys):
    rc, _ = run(tmp_path, "generate", "data: {htsbm: {n: 6, K: 2}}\n")
    assert rc == 2 and "seed" in capsys.readouterr().err


def test_generate_planted_triangles_plus_background(tmp_path):
    rc, out = run(tmp_path, "generate",
                  "data: {seed: 3, htsbm: {n: 60, K: 3, horizon: 100.0, noise_scale: 0.01,\n"
                  "       disjoint: {count: 10, size: 3, seed: 0}}}\n")
    assert rc == 0
    g = load_events(out / "events.csv")
    params = json.loads((out / "htsbm_params.json").read_text())
    planted = [json.loads(x) for x in (out / "planted.jsonl").read_text().splitlines()]
    assert len(planted) == 10 and params["n"] == 60
    burst_pairs = {tuple(sorted((a, b))) for p in planted
                   for i, a in enumerate(p["members"]) for b in p["members"][i + 1:]}
    raw = g.id_map  # loading densifies ids
    pairs = [tuple(sorted((raw[a], raw[b]))) for a, b in zip(g.src, g.dst)]
    assert sum(p in burst_pairs for p in pairs) >= 30
    assert len(pairs) > 30


def test_build_triangle(tmp_path):
    path = write_events(tmp_path / "tri.csv", [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
    rc, out = run(tmp_path, "build", f"data: {{path: {path}}}\nbuilder: {{b: 3}}\n")
    assert rc == 0
    assert live_sets(out) == [[0, 1, 2]]
    assert json.loads((out / "build.json").read_text())["sizes"] == {"3": 1}


def test_build_two_triangles(tmp_path):
    path = write_events(tmp_path / "tg1.csv", TG1)
    rc, out = run(tmp_path, "build", f"data: {{path: {path}}}\nbuilder: {{b: 6}}\n", "--debug")
    assert rc == 0
    assert live_sets(out) == [[0, 1, 2], [3, 4, 5]]


def test_build_empty_dataset(tmp_path):
    path = write_events(tmp_path / "empty.csv", [])
    rc, out = run(tmp_path, "build", f"data: {{path: {path}}}\n")
    assert rc == 0
    assert (out / "hyperedges.jsonl").read_text() == ""


def test_build_rejects_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("src,dst,t\n0,1,1.0\n0,x,2.0\n")
    rc, _ = run(tmp_path, "build", f"data: {{path: {bad}}}\n")
    assert rc == 2 and "line 3" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    rc, _ = run(tmp_path, "build", f"data: {{path: {tmp_path / 'nope.csv'}}}\n")
    assert rc == 2


def test_sweep_noise_free_is_flat(tmp_path):
    # four triangles in separate communities, bursts 50 apart
    planted = ", ".join(f"{{members: [{15 * k}, {15 * k + 1}, {15 * k + 2}], low: {50.0 * k}, high: {50.0 * k + 2}}}"
                        for k in range(4))
    rc, out = run(tmp_path, "sweep",
                  "data: {htsbm: {n: 60, K: 4, noise_scale: 0.0, lam: 0.001, horizon: 1000.0, jitter: 1.0,\n"
                  f"       planted: [{planted}]}}}}\n"
                  "sweep: {durations: [1.0, 3.0, 8.0, 20.0], seeds: 20}\n")
    assert rc == 0
    with open(out / "sweep_summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert len(summary) == 4 and all(float(r["mean_jaccard"]) == 1.0 for r in summary)
    res = json.loads((out / "sweep.json").read_text())
    assert res["spearman"] is None and res["passed"] is False  # flat, so no rank correlation
    assert cli.main(["report", "--set", f"output.directory={out}"]) == 0


def test_sweep_rows_and_summary(tmp_path):
    rc, out = run(tmp_path, "sweep", "data: {htsbm: {preset: sweep}}\nsweep: {durations: [0.5, 1, 2, 4], seeds: 20}\n")
    assert rc == 0
    with open(out / "sweep_rows.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 80
    res = json.loads((out / "sweep.json").read_text())
    assert res["passed"] == (res["spearman"] <= -0.8)


def test_sweep_default_durations_pass_the_gate(tmp_path):
    rc, out = run(tmp_path, "sweep", "data: {htsbm: {preset: sweep}}\nsweep: {seeds: 5}\n")
    assert rc == 0
    assert json.loads((out / "sweep.json").read_text())["passed"] is True


def test_train_zero_epochs_writes_only_the_initial_checkpoint(tmp_path):
    rc, out = run(tmp_path, "train",
                  "data: {seed: 0, htsbm: {preset: learning}}\n"
                  "model: {d_m: 8, d_t: 4, d_h: 8, hidden: 8}\ntrain: {epochs: 0}\n")
    assert rc == 0
    assert (out / "model_init.ckpt").exists()
    assert not (out / "model_final.ckpt").exists() and not (out / "model_best.ckpt").exists()
    assert json.loads((out / "report.json").read_text())["epochs_run"] == 0


def test_eval_with_oracle(tmp_path):
    rc, out = run(tmp_path, "eval", "data: {seed: 0, htsbm: {preset: learning}}\n", "--oracle", "--split", "val")
    assert rc == 0
    assert json.loads((out / "eval_val.json").read_text())["mrr"] == 1.0


def test_eval_missing_checkpoint(tmp_path, capsys):
    rc, _ = run(tmp_path, "eval", "data: {seed: 0, htsbm: {preset: learning}}\n",
                "--checkpoint", str(tmp_path / "none.ckpt"))
    assert rc == 2 and "not found" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    rc, _ = run(tmp_path, "build", "data: {seed: 0}\nmodle: {d_m: 3}\n")
    assert rc == 2 and "modle" in capsys.readouterr().err


def test_bad_override_value(tmp_path):
    rc, _ = run(tmp_path, "build", "data: {seed: 0}\n", "--set", "train.neg_mix=7")
    assert rc == 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    text = ("data: {seed: 0, htsbm: {preset: learning}}\n"
            "model: {d_m: 16, d_t: 8, d_h: 16, hidden: 16, neighbor_cap: 10}\n"
            "train: {epochs: 6, lr: 0.003, eval_every: 2}\n")
    rc, out = run(tmp, "train", text)
    assert rc == 0
    return tmp, out, text


def test_trained_model_beats_random(trained):
    tmp, out, text = trained
    rc, ev = run(tmp, "eval", text, "--checkpoint", str(out / "model_best.ckpt"), "--split", "test", name="ev")
    assert rc == 0
    res = json.loads((ev / "eval_test.json").read_text())
    assert res["mrr"] > 0.0514 and res["n_negatives"] == 100


def test_train_outputs_and_report(trained, capsys):
    tmp, out, text = trained
    assert {"config.yaml", "metrics.csv", "report.json", "model_best.ckpt", "model_final.ckpt"} <= \
        {p.name for p in out.iterdir()}
    report = json.loads((out / "report.json").read_text())
    assert len(report["run_id"]) == 12 and report["epochs_run"] >= 1
    capsys.readouterr()
    rc, _ = run(tmp, "report", text)
    assert rc == 0
    md = (out / "report.md").read_text()
    assert "best val MRR" in md


def test_report_on_empty_directory(tmp_path):
    rc, _ = run(tmp_path, "report", "data: {seed: 0}\n")
    assert rc == 1


def test_config_numbers_without_a_dot():
    from htgn.config import load_config
    cfg = load_config(None, ["train.lr=3e-3", "model.alpha=2", "builder.t_prime=1e3"])
    assert cfg.train.lr == 0.003 and isinstance(cfg.model.alpha, float) and cfg.builder.t_prime == 1000.0


@pytest.mark.parametrize("item", ["train.epochs=ten", "train.lr=fast", "model.d_m=2.5", "builder.cliques=1"])
def test_config_rejects_mistyped_values(item):
    from htgn.config import ConfigError, load_config
    with pytest.raises(ConfigError, match=item.split("=")[0]):
        load_config(None, [item])


def test_config_echo_round_trips(tmp_path):
    from htgn.config import dump_config, load_config
    cfg = load_config(None, ["train.lr=3e-3", "model.d_m=16"])
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml").to_dict() == cfg.to_dict()
