"""Harmonic phasors, simulation traces and synchronized DFT extraction.

Phasor convention: ``x(theta) = Re{sum_k X_k exp(j*k*theta)}`` where ``theta``
is the controller's Park angle. DC is stored at order 0 as a real number.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

TRACE_CHANNELS = ("i_a", "i_b", "i_c", "v_d*", "v_q*", "v_a*", "v_b*", "v_c*", "theta")
SPECTRUM_COLUMNS = ("channel", "order", "magnitude", "phase_deg")


class SpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    channel: str
    orders: tuple[int, ...]
    phasors: np.ndarray

    def __post_init__(self):
        orders = tuple(int(k) for k in self.orders)
        if any(k < 0 for k in orders):
            raise SpectrumError("harmonic orders must be >= 0")
        if len(set(orders)) != len(orders):
            raise SpectrumError("duplicate harmonic orders")
        ph = np.array(self.phasors, dtype=complex).reshape(-1)
        if ph.shape[0] != len(orders):
            raise SpectrumError("orders and phasors differ in length")
        for n, k in enumerate(orders):
            if k == 0:
                ph[n] = ph[n].real
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "phasors", ph)

    def __getitem__(self, k: int) -> complex:
        try:
            return complex(self.phasors[self.orders.index(k)])
        except ValueError:
            raise KeyError(f"order {k} not in spectrum {self.channel!r}") from None

    def __contains__(self, k) -> bool:
        return k in self.orders

    @property
    def k_max(self) -> int:
        return max(self.orders)

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.phasors)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.phasors)

    def select(self, orders: Iterable[int]) -> "Spectrum":
        orders = tuple(orders)
        return Spectrum(self.channel, orders, np.array([self[k] for k in orders]))

    def scaled(self, alpha: complex) -> "Spectrum":
        return Spectrum(self.channel, self.orders, self.phasors * alpha)

    def renamed(self, channel: str) -> "Spectrum":
        return Spectrum(channel, self.orders, self.phasors)

    def _check_compatible(self, other: "Spectrum"):
        if self.orders != other.orders:
            raise SpectrumError(f"mismatched order sets {self.orders} vs {other.orders}")

    def __add__(self, other: "Spectrum") -> "Spectrum":
        self._check_compatible(other)
        return Spectrum(self.channel, self.orders, self.phasors + other.phasors)

    def __sub__(self, other: "Spectrum") -> "Spectrum":
        self._check_compatible(other)
        return Spectrum(self.channel, self.orders, self.phasors - other.phasors)

    def synthesize(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.zeros_like(theta)
        for k, x in zip(self.orders, self.phasors):
            out += (x * np.exp(1j * k * theta)).real
        return out


def delta_spectrum(healthy: Spectrum, degraded: Spectrum) -> Spectrum:
    """Degraded minus healthy, order by order (phasors share the Park-angle reference)."""
    if healthy.channel != degraded.channel:
        raise SpectrumError(f"channel mismatch {healthy.channel!r} vs {degraded.channel!r}")
    return degraded - healthy


@dataclass
class SimTrace:
    dt: float
    samples_per_cycle: int
    settle_cycles: int
    n_cycles: int
    channels: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise SpectrumError("trace channels differ in length")

    def __len__(self):
        return len(next(iter(self.channels.values()))) if self.channels else 0

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise SpectrumError(f"unknown channel {name!r}") from None

    @property
    def analysis_slice(self) -> slice:
        n0 = self.settle_cycles * self.samples_per_cycle
        return slice(n0, n0 + self.n_cycles * self.samples_per_cycle)

    # -- persistence ----------------------------------------------------------

    def to_csv(self, path) -> None:
        """Header row of channel names, then one ``# k=v ...`` metadata comment line, then data."""
        names = list(self.channels)
        data = np.column_stack([self.channels[n] for n in names])
        header_meta = {
            "dt": repr(self.dt),
            "samples_per_cycle": self.samples_per_cycle,
            "settle_cycles": self.settle_cycles,
            "n_cycles": self.n_cycles,
            **{k: v for k, v in self.meta.items() if isinstance(v, (str, int, float, bool))},
        }
        buf = io.StringIO()
        buf.write(",".join(names) + "\n")
        buf.write("# " + " ".join(f"{k}={v}" for k, v in header_meta.items()) + "\n")
        np.savetxt(buf, data, delimiter=",", fmt="%.17g")
        Path(path).write_text(buf.getvalue())

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            meta_line = fh.readline()
            if not meta_line.startswith("#"):
                raise SpectrumError(f"{path}: missing metadata comment line")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        if data.shape[1] != len(header):
            raise SpectrumError(f"{path}: {data.shape[1]} columns but {len(header)} names")
        meta = dict(tok.split("=", 1) for tok in meta_line[1:].split())
        channels = {name: data[:, n].copy() for n, name in enumerate(header)}
        return cls(
            dt=float(meta.pop("dt")),
            samples_per_cycle=int(meta.pop("samples_per_cycle")),
            settle_cycles=int(meta.pop("settle_cycles")),
            n_cycles=int(meta.pop("n_cycles")),
            channels=channels,
            meta=meta,
        )


def samples_per_cycle(f_sa: float, f_g: float) -> int:
    ratio = f_sa / f_g
    if abs(ratio - round(ratio)) > 1e-9 * ratio:
        raise SpectrumError(f"f_sa/f_g = {ratio} is not an integer; window would leak")
    return int(round(ratio))


def dft_phasors(x: np.ndarray, theta: np.ndarray, orders: Iterable[int]) -> np.ndarray:
    """Phasors of ``x`` against angle samples ``theta`` spanning whole cycles."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    out = []
    for k in orders:
        if k == 0:
            out.append(complex(x.mean()))
        else:
            out.append(2.0 / n * np.sum(x * np.exp(-1j * k * theta)))
    return np.array(out, dtype=complex)


def sync_dft(trace: SimTrace, channel: str, orders: Iterable[int], n_cycles: int | None = None,
             settle_cycles: int | None = None) -> Spectrum:
    """Extract phasors over an integer number of fundamental cycles.

    The window starts after ``settle_cycles`` and spans ``n_cycles`` (both
    default to the trace's own values). Phases are referenced to the trace's
    ``theta`` channel.
    """
    orders = tuple(orders)
    if not orders:
        raise SpectrumError("no orders requested")
    n_cycles = trace.n_cycles if n_cycles is None else n_cycles
    settle_cycles = trace.settle_cycles if settle_cycles is None else settle_cycles
    if n_cycles < 1 or settle_cycles < 0:
        raise SpectrumError("n_cycles >= 1 and settle_cycles >= 0 required")
    spc = trace.samples_per_cycle
    if spc <= 0 or int(spc) != spc:
        raise SpectrumError("non-integer samples per cycle")
    n0 = settle_cycles * spc
    n1 = n0 + n_cycles * spc
    if n1 > len(trace):
        raise SpectrumError(f"trace has {len(trace)} samples, window needs {n1}")
    x = trace[channel][n0:n1]
    theta = trace["theta"][n0:n1]
    return Spectrum(channel, orders, dft_phasors(x, theta, orders))


def spectra_to_csv(spectra: Iterable[Spectrum], path) -> None:
    buf = io.StringIO()
    buf.write(",".join(SPECTRUM_COLUMNS) + "\n")
    for s in spectra:
        for k, x in zip(s.orders, s.phasors):
            buf.write(f"{s.channel},{k},{abs(x):.17g},{math.degrees(np.angle(x)):.17g}\n")
    Path(path).write_text(buf.getvalue())


def spectra_from_csv(path) -> dict[str, Spectrum]:
    rows: dict[str, list[tuple[int, complex]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SPECTRUM_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise SpectrumError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                k = int(row["order"])
                mag = float(row["magnitude"])
                ph = math.radians(float(row["phase_deg"]))
            except ValueError as exc:
                raise SpectrumError(f"{path}: bad row {row}") from exc
            rows.setdefault(row["channel"], []).append((k, mag * complex(math.cos(ph), math.sin(ph))))
    return {
        ch: Spectrum(ch, tuple(k for k, _ in items), np.array([x for _, x in items]))
        for ch, items in rows.items()
    }


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
