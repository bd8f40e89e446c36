"""Smoke test for the edgeinv extension module.

Build and run from the repository root:

    cargo build --release -p edgeinv-py --features extension-module
    cp target/release/libedgeinv_py.so python/edgeinv.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import edgeinv  # noqa: E402


def check_multiplicities():
    assert edgeinv.MODELS == ["GMM", "SSM", "K81", "K80", "JC69"]
    assert edgeinv.multiplicities("JC69", 1) == [1, 0, 0, 1, 0]
    assert edgeinv.multiplicities("JC69", 2) == [2, 0, 1, 3, 1]
    assert edgeinv.multiplicities("K80", 2) == [3, 1, 3, 1, 4]
    table = edgeinv.character_table("JC69")
    assert sum(row[0] ** 2 for row in table) == 24


def check_catalog():
    cat = edgeinv.generator_catalog("K81", 2, 2)
    assert cat["total"] == 144
    cat = edgeinv.generator_catalog("JC69", 2, 2)
    assert cat["total"] == 12


def check_quartet():
    psi = edgeinv.simulate("K81", "((1,2),(3,4));", seed=7)
    assert psi.n == 4 and psi.stochastic
    assert math.isclose(sum(psi.values()), 1.0, abs_tol=1e-12)
    assert psi["AAAA"] > psi["ACGT"]
    assert edgeinv.thin_rank(psi, "1,2|3,4", "K81") == [1, 1, 1, 1]
    assert edgeinv.thin_rank(psi, "1,3|2,4", "K81") == [4, 4, 4, 4]
    assert edgeinv.split_score(psi, "1,2|3,4", "K81") < 1e-10
    assert edgeinv.split_score(psi, "1,3|2,4", "K81") > 1e-4

    report = edgeinv.reconstruct(psi, "K81")
    assert report["tree"] == "(1,2,(3,4));", report["tree"]
    assert report["warnings"] == []

    fits = [edgeinv.model_fit_score(psi, m) for m in ["JC69", "K80", "K81", "GMM"]]
    assert all(b <= a + 1e-15 for a, b in zip(fits, fits[1:])), fits
    assert fits[2] < 1e-12


def check_alignment():
    psi = edgeinv.simulate("GMM", "((1,2),(3,4));", seed=3)
    text = psi.sample_fasta(50_000, seed=4)
    emp, taxa = edgeinv.read_fasta(text)
    assert taxa == ["1", "2", "3", "4"]
    assert emp.l1_distance(psi) < 0.1
    report = edgeinv.reconstruct(emp, "GMM", tol="data")
    assert report["tree"] == "(1,2,(3,4));", report


def check_errors():
    for call in [
        lambda: edgeinv.multiplicities("HKY", 1),
        lambda: edgeinv.Tensor(2, [0.5, 0.5]),
        lambda: edgeinv.read_fasta(">a\nACN\n>b\nACG\n"),
        lambda: edgeinv.reconstruct(edgeinv.simulate("GMM", "((1,2),(3,4));", 1), "GMM", tol="loose"),
    ]:
        try:
            call()
        except ValueError:
            continue
        raise AssertionError("expected ValueError")


if __name__ == "__main__":
    check_multiplicities()
    check_catalog()
    check_quartet()
    check_alignment()
    check_errors()
    print("smoke test passed")
