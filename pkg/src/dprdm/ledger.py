"""Persistent query budget.

The journal is line-delimited JSON: a header line
``{"version", "target", "params", "base"}`` followed by one ``{"seq",
"timestamp"}`` line per charge. ``base`` counts charges folded into the
header by :meth:`BudgetLedger.compact`.

A charge is appended and fsynced before authorization is returned. A crash
can therefore waste budget but never grant an extra query. A torn trailing
line still counts as a charge for the same reason.
"""

import fcntl
import json
import logging
import math
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from . import accountant

logger = logging.getLogger(__name__)

VERSION = 1


class LedgerError(RuntimeError):
    pass


class LedgerMismatch(LedgerError):
    pass


class MiscalibratedLedger(LedgerError):
    def __init__(self, epsilon, target):
        super().__init__(
            f"parameters give epsilon={epsilon:.6g} after {target.t} queries, "
            f"exceeding target {target.epsilon:.6g}")
        self.epsilon = epsilon


class BudgetExhausted(LedgerError):
    def __init__(self, charged, t):
        super().__init__(f"query budget exhausted ({charged}/{t} used)")
        self.charged = charged
        self.remaining = 0


@dataclass(frozen=True)
class BudgetTarget:
    epsilon: float
    delta: float
    t: int

    def __post_init__(self):
        if not self.epsilon >= 0 or math.isnan(self.epsilon):
            raise ValueError("target epsilon must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("target delta must lie in (0, 1)")
        if int(self.t) != self.t or self.t < 1:
            raise ValueError("query budget T must be a positive integer")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "t", int(self.t))


@dataclass(frozen=True)
class Authorization:
    seq: int
    remaining: int


def _params_dict(params):
    return {"k": params.k, "q": params.q, "sigma": params.sigma, "lambda": params.lam}


class BudgetLedger:
    """Handle on an open journal; use :func:`ledger_open` to construct."""

    def __init__(self, path, target, params, curve):
        self.path = Path(path)
        self.target = target
        self.params = params
        self.curve = curve
        self._lock = threading.Lock()
        self._charged, self.created_at, self.updated_at = self._scan()

    @property
    def charged(self):
        return self._charged

    @property
    def remaining(self):
        return self.target.t - self._charged

    def spent(self):
        """(epsilon, delta) guarantee for the queries charged so far."""
        return accountant.to_approx_dp(accountant.compose(self.curve, self._charged),
                                       self.target.delta)

    def _scan(self):
        with open(self.path, "rb") as fh:
            lines = fh.read().split(b"\n")
        header = json.loads(lines[0])
        n = int(header.get("base", 0))
        updated = header.get("created_at")
        for raw in lines[1:]:
            if not raw.strip():
                continue
            n += 1
            try:
                updated = json.loads(raw)["timestamp"]
            except (ValueError, KeyError):
                logger.warning("%s: torn journal line counted as a charge", self.path)
        return n, header.get("created_at"), updated

    def charge(self):
        """Atomically consume one query; raises :class:`BudgetExhausted` at T."""
        with self._lock:
            while True:
                fh = open(self.path, "ab")
                fcntl.flock(fh, fcntl.LOCK_EX)
                # compact() may have swapped the file while we waited
                if os.fstat(fh.fileno()).st_ino == os.stat(self.path).st_ino:
                    break
                fh.close()
            with fh:
                return self._charge_locked(fh)

    def _charge_locked(self, fh):
        try:
            # another process may have charged since our last look
            self._charged, _, _ = self._scan()
            if self._charged >= self.target.t:
                raise BudgetExhausted(self._charged, self.target.t)
            seq = self._charged + 1
            now = time.time()
            line = json.dumps({"seq": seq, "timestamp": now}) + "\n"
            try:
                fh.write(line.encode())
                fh.flush()
                os.fsync(fh.fileno())
            except OSError as exc:
                raise LedgerError(f"could not persist charge: {exc}") from exc
            self._charged = seq
            self.updated_at = now
            _after_persist_hook(self)
            return Authorization(seq, self.target.t - seq)
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)

    def compact(self):
        """Fold charge lines into the header's ``base`` count."""
        with self._lock, open(self.path, "ab") as lockfh:
            fcntl.flock(lockfh, fcntl.LOCK_EX)
            try:
                self._charged, _, _ = self._scan()
                header = _read_header(self.path)
                header["base"] = self._charged
                header["updated_at"] = self.updated_at
                tmp = self.path.with_name(self.path.name + ".tmp")
                with open(tmp, "w") as out:
                    out.write(json.dumps(header, sort_keys=True) + "\n")
                    out.flush()
                    os.fsync(out.fileno())
                os.replace(tmp, self.path)
            finally:
                fcntl.flock(lockfh, fcntl.LOCK_UN)


def _after_persist_hook(ledger):
    """Test seam: called after a charge is durable, before it is returned."""


def _read_header(path):
    with open(path) as fh:
        return json.loads(fh.readline())


def ledger_open(path, target, params, orders=accountant.DEFAULT_ORDERS):
    """Open or create the journal at ``path``.

    Refuses when an existing journal disagrees with ``target``/``params`` or
    when ``params`` composed over ``target.t`` queries exceed the target.
    """
    path = Path(path)
    curve = accountant.mechanism_rdp(params, orders)
    eps = accountant.to_approx_dp(accountant.compose(curve, target.t), target.delta).epsilon
    if eps > target.epsilon:
        raise MiscalibratedLedger(eps, target)

    header = {"version": VERSION, "target": asdict(target), "params": _params_dict(params)}
    if path.exists():
        stored = _read_header(path)
        if stored.get("version") != VERSION:
            raise LedgerMismatch(f"{path}: unsupported ledger version {stored.get('version')}")
        for key in ("target", "params"):
            if stored.get(key) != header[key]:
                raise LedgerMismatch(
                    f"{path}: stored {key} {stored.get(key)} differs from requested {header[key]}")
    else:
        header.update(base=0, created_at=time.time())
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
        with os.fdopen(fd, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
    return BudgetLedger(path, target, params, curve)


def read_ledger_header(path):
    """Stored ``(target, params_dict)`` of an existing journal."""
    h = _read_header(path)
    return BudgetTarget(**h["target"]), h["params"]
