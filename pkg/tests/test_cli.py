"""CLI subcommands, exit codes and end-to-end determinism."""

import numpy as np
import pytest

from spdnn.cli import main
from spdnn.data import load_set
from spdnn.merge import parse_merged
from spdnn.nets import read_net

SMALL_NET_A = """network small_a
input 16 16 1
conv k=3 c=4 bn=true act=relu
conv k=3 c=4 bn=true act=relu
conv k=3 c=1 act=sigmoid
"""

SMALL_NET_B = """network small_b
input 16 16 1
conv k=3 c=3 bn=true act=relu
conv k=5 c=2 bn=true act=relu
conv k=5 c=1 act=sigmoid
"""


@pytest.fixture
def net_files(tmp_path):
    a = tmp_path / "a.net"
    b = tmp_path / "b.net"
    a.write_text(SMALL_NET_A)
    b.write_text(SMALL_NET_B)
    return a, b


def run_pipeline(tmp_path, tag, seed=13):
    """gen-data -> merge -> train -> eval; returns the artifact paths."""
    a = tmp_path / f"{tag}_a.net"
    b = tmp_path / f"{tag}_b.net"
    a.write_text(SMALL_NET_A)
    b.write_text(SMALL_NET_B)
    data = tmp_path / f"{tag}.dat"
    merged = tmp_path / f"{tag}.merged"
    ckpt = tmp_path / f"{tag}.ckpt"
    losses = tmp_path / f"{tag}_loss.csv"
    metrics = tmp_path / f"{tag}_metrics.csv"
    assert main(["gen-data", "--seed", str(seed), "--count", "30", "--size", "16",
                 "-o", str(data)]) == 0
    assert main(["merge", str(a), str(b), "-o", str(merged)]) == 0
    assert main(["train", str(merged), str(data), "--epochs", "2", "--batch", "8",
                 "--seed", str(seed), "--loss-csv", str(losses), "-o", str(ckpt)]) == 0
    assert main(["eval", str(ckpt), str(merged), str(data), "-o", str(metrics)]) == 0
    return data, merged, ckpt, losses, metrics


class TestMerge:
    def test_merge_writes_parseable_file(self, net_files, tmp_path, capsys):
        a, b = net_files
        out = tmp_path / "m.merged"
        assert main(["merge", str(a), str(b), "-o", str(out)]) == 0
        merged = parse_merged(out.read_text())
        assert merged.name == "spdnn_small_a_small_b"
        printed = capsys.readouterr().out
        assert "parity" in printed and "small_a" in printed

    def test_single_input_is_passthrough(self, net_files, tmp_path):
        a, _ = net_files
        out = tmp_path / "m.merged"
        assert main(["merge", str(a), "-o", str(out)]) == 0
        assert "outmerge kind=pass" in out.read_text()

    def test_parse_error_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.net"
        bad.write_text("network x\ninput 16 16 1\nconv k=4 c=2\n")
        out = tmp_path / "m.merged"
        assert main(["merge", str(bad), "-o", str(out)]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["merge", str(tmp_path / "nope.net"), "-o", str(tmp_path / "m")]) == 2

    def test_no_inputs_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["merge", "-o", str(tmp_path / "m")])
        assert exc.value.code == 2

    def test_infeasible_parity_exits_3(self, net_files, tmp_path):
        a, b = net_files
        out = tmp_path / "m.merged"
        code = main(["merge", str(a), str(b), "--tolerance", "1e-9", "-o", str(out)])
        assert code == 3

    def test_shipped_triple_merges(self, tmp_path):
        paths = []
        for name in ("net1", "net2", "net3"):
            p = tmp_path / f"{name}.net"
            p.write_text(read_net(name))
            paths.append(str(p))
        out = tmp_path / "spdnn.merged"
        assert main(["merge", *paths, "-o", str(out)]) == 0
        merged = parse_merged(out.read_text())
        assert len(merged.nodes) == 17


class TestParams:
    def test_prints_counts(self, net_files, capsys):
        a, b = net_files
        assert main(["params", str(a), str(b)]) == 0
        out = capsys.readouterr().out
        assert "small_a:" in out and "small_b:" in out


class TestGenData:
    def test_writes_loadable_dataset(self, tmp_path):
        out = tmp_path / "d.dat"
        assert main(["gen-data", "--seed", "1", "--count", "20", "--size", "16",
                     "-o", str(out)]) == 0
        ds = load_set(out)
        assert ds.count == 20 and ds.size == 16

    def test_bad_size_exits_2(self, tmp_path):
        assert main(["gen-data", "--seed", "1", "--count", "5", "--size", "4",
                     "-o", str(tmp_path / "d.dat")]) == 2


class TestTrainEval:
    def test_train_writes_csv_and_checkpoint(self, tmp_path, capsys):
        data, merged, ckpt, losses, metrics = run_pipeline(tmp_path, "t1")
        lines = losses.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        assert len(lines) == 3
        assert ckpt.read_bytes()[:5] == b"SPDW1"
        head = metrics.read_text().splitlines()[0]
        assert head == "metric,mean,min,max,zero_denominator_count"

    def test_plain_network_file_trainable(self, net_files, tmp_path):
        a, _ = net_files
        data = tmp_path / "d.dat"
        assert main(["gen-data", "--seed", "2", "--count", "20", "--size", "16",
                     "-o", str(data)]) == 0
        ckpt = tmp_path / "a.ckpt"
        assert main(["train", str(a), str(data), "--epochs", "1", "--batch", "8",
                     "-o", str(ckpt)]) == 0
        out = tmp_path / "m.csv"
        assert main(["eval", str(ckpt), str(a), str(data), "-o", str(out)]) == 0

    def test_mismatched_checkpoint_exits_4(self, net_files, tmp_path):
        a, b = net_files
        data = tmp_path / "d.dat"
        main(["gen-data", "--seed", "3", "--count", "20", "--size", "16", "-o", str(data)])
        ckpt = tmp_path / "a.ckpt"
        main(["train", str(a), str(data), "--epochs", "1", "--batch", "8", "-o", str(ckpt)])
        assert main(["eval", str(ckpt), str(b), str(data),
                     "-o", str(tmp_path / "m.csv")]) == 4

    def test_degenerate_threshold_flags(self, net_files, tmp_path):
        a, _ = net_files
        data = tmp_path / "d.dat"
        main(["gen-data", "--seed", "4", "--count", "20", "--size", "16", "-o", str(data)])
        ckpt = tmp_path / "a.ckpt"
        main(["train", str(a), str(data), "--epochs", "1", "--batch", "8", "-o", str(ckpt)])
        out = tmp_path / "m.csv"
        assert main(["eval", str(ckpt), str(a), str(data), "--threshold", "1e-9",
                     "-o", str(out)]) == 0
        rows = {l.split(",")[0]: l.split(",") for l in out.read_text().strip().splitlines()[1:]}
        # every pixel predicted positive
        assert float(rows["sensitivity"][1]) == 1.0
        assert float(rows["specificity"][1]) == 0.0


class TestGraphDump:
    def test_three_net_dump_counts(self, tmp_path, capsys):
        paths = []
        for name in ("net1", "net2", "net3"):
            p = tmp_path / f"{name}.net"
            p.write_text(read_net(name))
            paths.append(str(p))
        assert main(["graph-dump", *paths]) == 0
        out = capsys.readouterr().out
        parallel, contracted = out.split("# stage: contracted")
        contracted_nodes = [l for l in contracted.splitlines() if "depth=" in l]
        parallel_nodes = [l for l in parallel.splitlines() if "depth=" in l]
        assert len(parallel_nodes) == 19
        assert len(contracted_nodes) == 17

    def test_single_net_pre_equals_post(self, net_files, capsys):
        a, _ = net_files
        assert main(["graph-dump", str(a)]) == 0
        out = capsys.readouterr().out
        parallel, contracted = out.split("# stage: contracted")
        parallel = parallel.replace("# stage: parallel", "").strip()
        assert parallel == contracted.strip()

    def test_identical_nets_contract_to_single(self, tmp_path, capsys):
        a = tmp_path / "a.net"
        b = tmp_path / "b.net"
        a.write_text(SMALL_NET_A)
        b.write_text(SMALL_NET_A.replace("small_a", "small_c"))
        main(["graph-dump", str(a), str(b)])
        two = capsys.readouterr().out
        main(["graph-dump", str(a)])
        one = capsys.readouterr().out
        post_two = two.split("# stage: contracted")[1]
        post_one = one.split("# stage: contracted")[1]
        # same structure; only the origin annotations differ
        strip = lambda text: [l.split(" origins=")[0] for l in post_two.strip().splitlines()]
        assert strip(post_two) == strip(post_one)


class TestDeterminism:
    def test_identical_seeds_identical_artifacts(self, tmp_path):
        one = tmp_path / "one"
        two = tmp_path / "two"
        one.mkdir()
        two.mkdir()
        first = run_pipeline(one, "r", seed=77)
        second = run_pipeline(two, "r", seed=77)
        for f1, f2 in zip(first, second):
            assert f1.read_bytes() == f2.read_bytes(), f1.name
