import json
import multiprocessing as mp
import subprocess
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from dprdm import ledger as ledger_mod
from dprdm.ledger import (BudgetExhausted, BudgetTarget, LedgerMismatch, MiscalibratedLedger,
                          ledger_open, read_ledger_header)
from dprdm.mechanism import PrivacyParams

LOOSE = PrivacyParams(10, 0.01, 0.5, 1.0)


def target(t):
    return BudgetTarget(100.0, 1e-6, t)


def test_fresh_ledger(tmp_path):
    led = ledger_open(tmp_path / "l.jsonl", target(5), LOOSE)
    assert led.charged == 0 and led.remaining == 5
    assert led.spent().epsilon == 0.0


def test_refuses_after_t(tmp_path):
    led = ledger_open(tmp_path / "l.jsonl", target(3), LOOSE)
    assert [led.charge().seq for _ in range(3)] == [1, 2, 3]
    with pytest.raises(BudgetExhausted) as info:
        led.charge()
    assert info.value.remaining == 0
    assert led.charged == 3


def test_spent_grows(tmp_path):
    led = ledger_open(tmp_path / "l.jsonl", target(3), LOOSE)
    led.charge()
    one = led.spent().epsilon
    led.charge()
    assert 0 < one < led.spent().epsilon <= 100.0


def test_reopen_mismatch(tmp_path):
    p = tmp_path / "l.jsonl"
    ledger_open(p, target(3), LOOSE)
    with pytest.raises(LedgerMismatch, match="params"):
        ledger_open(p, target(3), PrivacyParams(10, 0.01, 0.6, 1.0))
    with pytest.raises(LedgerMismatch, match="target"):
        ledger_open(p, target(4), LOOSE)


def test_reopen_keeps_count(tmp_path):
    p = tmp_path / "l.jsonl"
    led = ledger_open(p, target(3), LOOSE)
    led.charge()
    assert ledger_open(p, target(3), LOOSE).charged == 1
    t, params = read_ledger_header(p)
    assert t == target(3) and params == LOOSE.to_dict()


def test_miscalibrated(tmp_path):
    with pytest.raises(MiscalibratedLedger) as info:
        ledger_open(tmp_path / "l.jsonl", BudgetTarget(1.0, 1e-6, 10_000),
                    PrivacyParams(34, 0.01, 0.05, 1.0))
    assert info.value.epsilon > 1.0
    assert not (tmp_path / "l.jsonl").exists()


def test_table_row_opens(tmp_path):
    led = ledger_open(tmp_path / "l.jsonl", BudgetTarget(11.0, 1e-6, 10_000),
                      PrivacyParams(34, 0.01, 0.05, 1.0))
    assert led.remaining == 10_000


def test_crash_after_persist_counts(tmp_path, monkeypatch):
    p = tmp_path / "l.jsonl"
    led = ledger_open(p, target(2), LOOSE)

    def boom(_):
        raise SystemExit("crash")

    monkeypatch.setattr(ledger_mod, "_after_persist_hook", boom)
    with pytest.raises(SystemExit):
        led.charge()
    monkeypatch.undo()
    again = ledger_open(p, target(2), LOOSE)
    assert again.charged == 1


CRASHER = """
import os, sys
from dprdm import ledger
from dprdm.ledger import BudgetTarget, ledger_open
from dprdm.mechanism import PrivacyParams
led = ledger_open(sys.argv[1], BudgetTarget(100.0, 1e-6, 2), PrivacyParams(10, 0.01, 0.5, 1.0))
ledger._after_persist_hook = lambda _: os._exit(9)
led.charge()
"""


def test_hard_crash_never_grants_extra(tmp_path):
    p = tmp_path / "l.jsonl"
    ledger_open(p, target(2), LOOSE)
    for _ in range(3):
        rc = subprocess.run([sys.executable, "-c", CRASHER, str(p)]).returncode
        assert rc in (9, 1)
    led = ledger_open(p, target(2), LOOSE)
    assert led.charged == 2
    with pytest.raises(BudgetExhausted):
        led.charge()


def test_torn_line_counts(tmp_path):
    p = tmp_path / "l.jsonl"
    led = ledger_open(p, target(3), LOOSE)
    led.charge()
    with open(p, "a") as fh:
        fh.write('{"seq": 2, "tim')
    assert ledger_open(p, target(3), LOOSE).charged == 2


def test_thread_stress(tmp_path):
    led = ledger_open(tmp_path / "l.jsonl", target(100), LOOSE)
    granted = []
    lock = threading.Lock()

    def worker():
        for _ in range(20):
            try:
                a = led.charge()
            except BudgetExhausted:
                continue
            with lock:
                granted.append(a.seq)

    with ThreadPoolExecutor(8) as ex:
        for f in [ex.submit(worker) for _ in range(8)]:
            f.result()
    assert sorted(granted) == list(range(1, 101))


def _proc_worker(path, out):
    led = ledger_open(path, target(100), LOOSE)
    n = 0
    for _ in range(20):
        try:
            led.charge()
            n += 1
        except BudgetExhausted:
            pass
    out.put(n)


def test_process_stress(tmp_path):
    p = str(tmp_path / "l.jsonl")
    ledger_open(p, target(100), LOOSE)
    ctx = mp.get_context("fork")
    out = ctx.Queue()
    procs = [ctx.Process(target=_proc_worker, args=(p, out)) for _ in range(8)]
    for pr in procs:
        pr.start()
    total = sum(out.get(timeout=60) for _ in procs)
    for pr in procs:
        pr.join()
    assert total == 100
    assert ledger_open(p, target(100), LOOSE).charged == 100


def test_file_roundtrip_bit_exact(tmp_path):
    p = tmp_path / "l.jsonl"
    led = ledger_open(p, target(5), LOOSE)
    led.charge()
    led.charge()
    before = p.read_bytes()
    again = ledger_open(p, target(5), LOOSE)
    assert p.read_bytes() == before
    assert again.charged == 2
    lines = before.decode().splitlines()
    assert [json.loads(x)["seq"] for x in lines[1:]] == [1, 2]


def test_compact(tmp_path):
    p = tmp_path / "l.jsonl"
    led = ledger_open(p, target(5), LOOSE)
    for _ in range(3):
        led.charge()
    led.compact()
    assert len(p.read_text().splitlines()) == 1
    assert json.loads(p.read_text())["base"] == 3
    again = ledger_open(p, target(5), LOOSE)
    assert again.charged == 3
    again.charge()
    again.charge()
    with pytest.raises(BudgetExhausted):
        led.charge()


def test_bad_target():
    with pytest.raises(ValueError):
        BudgetTarget(1.0, 1.5, 3)
    with pytest.raises(ValueError):
        BudgetTarget(1.0, 1e-6, 0)
