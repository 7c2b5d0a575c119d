import argparse
import csv
import io
import json
import statistics

import pytest

from ftnoc import cli
from ftnoc.flit import ConfigError, Coord3
from ftnoc.metrics import (
    MetricsRecord, aggregate, combine, is_collapsed, packets_csv, records_from_events, summarize_network,
    summary_from_log,
)
from ftnoc.network import MeshConfig, Mode, simulate
from ftnoc.traffic import gen_uniform

O = Coord3(0, 0, 0)


def rec(pid, inject, eject, length=10, **kw):
    return MetricsRecord(pid, O, Coord3(1, 0, 0), length, inject, eject, **kw)


def test_aggregate_examples():
    s = aggregate([rec(0, 0, 12)], cycles=13, nodes=2)
    assert s.avg_latency == 12 and s.delivery_ratio == 1.0 and s.throughput == 10 / 26
    z = aggregate([rec(0, 0, None)], cycles=5, nodes=1)
    assert z.collapsed and z.avg_latency is None and z.delivery_ratio == 0


def test_undelivered_excluded_from_latency():
    s = aggregate([rec(0, 0, 10), rec(1, 0, 30), rec(2, 0, None), rec(3, 0, 99, corrupted=True)], 100, 4)
    assert s.avg_latency == 20 and s.delivery_ratio == 0.5 and s.delivered == 2


def test_collapse_predicate():
    assert is_collapsed(0.49, 10, 10)
    assert is_collapsed(1.0, 101, 10)
    assert not is_collapsed(1.0, 100, 10)
    assert is_collapsed(1.0, None, 10)


def test_combine_mean_std():
    a = aggregate([rec(0, 0, 10)], 10, 1)
    b = aggregate([rec(0, 0, 20)], 10, 1)
    c = combine([a, b])
    assert c["avg_latency"]["mean"] == 15
    assert c["avg_latency"]["std"] == pytest.approx(statistics.stdev([10, 20]))
    assert c["seeds"] == 2


def test_summary_recomputable_from_log():
    dims = (2, 2, 2)
    cfg = MeshConfig(dims=dims, mode=Mode.FETO, hard_rate=0.2, soft_rate=0.2, seed=1)
    sched = gen_uniform(dims, 1, 10)
    net = simulate(cfg, sched)
    live = summarize_network(net)
    offline = summary_from_log(net.event_lines(), sched, net.cycle, len(net.routers))
    assert (offline.avg_latency, offline.throughput, offline.delivery_ratio, offline.delivered) == \
        (live.avg_latency, live.throughput, live.delivery_ratio, live.delivered)
    assert offline.counters == live.counters
    recs = records_from_events(net.event_lines(), sched)
    assert all(r.eject >= r.inject for r in recs if r.delivered)


def test_packets_csv_rows():
    dims = (2, 2, 2)
    net = simulate(MeshConfig(dims=dims), gen_uniform(dims, 0, 5))
    rows = list(csv.DictReader(io.StringIO(packets_csv(MetricsRecord.from_packet(p) for p in net.packets))))
    assert len(rows) == len(net.packets)
    assert all(int(r["hops"]) >= 1 and int(r["latency_cycles"]) > 0 for r in rows)


# --- CLI -----------------------------------------------------------------------------

def test_profile_mapping():
    p = cli.profile("paper-transpose-fto-33")
    assert p["traffic"] == "transpose" and p["mode"] is Mode.FTO and p["hard_rate"] == 0.33
    assert p["seeds"] == tuple(range(10)) and p["fault_sites"] == ("slot", "link")
    f = cli.profile("paper-uniform-feto-33")
    assert f["hard_rate"] == f["soft_rate"] == 0.33 and f["ct_mode"] == "conservative"
    assert cli.profile("paper-transpose-ser-10")["soft_rate"] == 0.10
    with pytest.raises(ConfigError):
        cli.profile("paper-transpose-xyz-10")
    assert "paper-h264-feto-20" in cli.profile_names()


def test_run_writes_outputs_and_is_deterministic(tmp_path):
    args = ["run", "--traffic", "pip", "--mode", "feto", "--hard-rate", "0.1", "--soft-rate", "0.1",
            "--seeds", "1", "--ct-mode", "conservative"]
    assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    for name in ("summary.json", "series.csv", "seed0/events.log", "seed0/packets.csv", "seed0/faultplan.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    summary = json.loads((tmp_path / "a" / "seed0" / "summary.json").read_text())
    assert summary["config"]["mode"] == "feto" and summary["units"]["avg_latency"] == "cycles"
    rows = (tmp_path / "a" / "seed0" / "packets.csv").read_text().splitlines()
    assert len(rows) - 1 == 512


def test_replay_loads_plan_verbatim(tmp_path):
    base = ["run", "--traffic", "pip", "--mode", "fto", "--hard-rate", "0.2", "--seeds", "3"]
    assert cli.main(base + ["--out-dir", str(tmp_path / "a")]) == 0
    plan = tmp_path / "a" / "seed2" / "faultplan.json"
    assert cli.main(base + ["--replay", str(plan), "--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/seed2/events.log").read_text() == (tmp_path / "b/seed2/events.log").read_text()


def test_config_file_and_bad_key(tmp_path, capsys):
    good = tmp_path / "ok.cfg"
    good.write_text("traffic = pip\nmode = baseline  # comment\nseeds = 0,2\n")
    s = cli.build_settings(argparse.Namespace(
        profile=None, config=str(good), **{k: None for k in (
            "traffic", "dims", "mode", "hard_rate", "soft_rate", "seeds", "ct_mode", "bypass_count",
            "replay", "out_dir", "packets_per_node", "fault_sites", "max_cycles")}))
    assert s.mode is Mode.BASELINE and s.seeds == (0, 2)
    bad = tmp_path / "bad.cfg"
    bad.write_text("trafic = pip\n")
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert "trafic" in capsys.readouterr().err
    assert cli.main(["run", "--traffic", "pip", "--hard-rate", "abc"]) == 2
    assert "hard_rate" in capsys.readouterr().err


def test_sweep_table(tmp_path):
    base = cli.Settings(traffic="pip", seeds=(0,), out_dir=str(tmp_path))
    rows = cli.sweep(base, rates=(0.0, 0.1), modes=(Mode.BASELINE, Mode.FTO))
    assert len(rows) == 4
    b0 = next(r for r in rows if r["mode"] == "baseline" and r["rate"] == 0)
    assert b0["latency_delta_pct"] == 0
    f0 = next(r for r in rows if r["mode"] == "fto" and r["rate"] == 0)
    assert abs(f0["latency_delta_pct"]) < 1
    assert (tmp_path / "series.csv").read_text().count("\n") == 5
    assert "mode" in cli.format_table(rows)
