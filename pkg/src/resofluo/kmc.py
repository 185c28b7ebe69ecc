"""Kinetic Monte Carlo of quantum-dot carrier dynamics (Gillespie algorithm).

The dot has two ground-state spin slots per carrier type (Pauli exclusion)
and an unbounded excited reservoir per carrier type. The state vector used
by the compiled kernels is ``[e_up, e_dn, h_up, h_dn, e_exc, h_exc]``.
Bright recombination pairs are (e_up, h_dn) and (e_dn, h_up).

Processes (rates in 1/ns, already multiplied by the laser powers):

* radiative recombination of each bright ground pair (``gamma_rad``);
* above-band generation of e-h pairs into the excited reservoirs
  (``gen_ab``), optionally with unequal electron and hole fluxes;
* resonant creation of a bright pair in free ground slots (``pump_res``);
* relaxation of each excited carrier into a free ground slot (``relax``);
* ejection of each ground carrier (``loss_res``), or of excited carriers
  only when ``loss_excited_only`` is set;
* optional excited-state recombination and ground-state spin flips.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, replace

import numba as nb
import numpy as np

from . import InvalidParameterError, NoPeakError, ResofluoError

# the TBB shipped on many systems is too old for numba and only produces a warning
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# event catalogue (indices into the propensity vector)
EVENTS = (
    "recombine_up_dn",      # e_up + h_dn
    "recombine_dn_up",      # e_dn + h_up
    "generate_pair",
    "generate_e",
    "generate_h",
    "pump_up_dn",
    "pump_dn_up",
    "relax_e_up",
    "relax_e_dn",
    "relax_h_up",
    "relax_h_dn",
    "eject_e_up",
    "eject_e_dn",
    "eject_h_up",
    "eject_h_dn",
    "eject_e_exc",
    "eject_h_exc",
    "recombine_excited",
    "flip_e_up",
    "flip_e_dn",
    "flip_h_up",
    "flip_h_dn",
)
N_EVENTS = len(EVENTS)

TAGS = ("exciton", "positive_trion", "negative_trion", "other")
EXCITON, POSITIVE_TRION, NEGATIVE_TRION, OTHER = range(4)
N_GROUND_CONFIGS = 16


class AbsorbingStateError(ResofluoError):
    """No event is enabled; the state will never change."""


@dataclass(frozen=True)
class QdState:
    e_up: int = 0
    e_dn: int = 0
    h_up: int = 0
    h_dn: int = 0
    e_excited: int = 0
    h_excited: int = 0

    def __post_init__(self):
        for name in ("e_up", "e_dn", "h_up", "h_dn"):
            if getattr(self, name) not in (0, 1):
                raise InvalidParameterError(f"{name} must be 0 or 1 (Pauli exclusion)")
        if self.e_excited < 0 or self.h_excited < 0:
            raise InvalidParameterError("excited occupations must be >= 0")

    def to_array(self):
        return np.array(
            [self.e_up, self.e_dn, self.h_up, self.h_dn, self.e_excited, self.h_excited],
            dtype=np.int64,
        )

    @classmethod
    def from_array(cls, a):
        return cls(*(int(v) for v in a))

    @property
    def ground_electrons(self):
        return self.e_up + self.e_dn

    @property
    def ground_holes(self):
        return self.h_up + self.h_dn


@dataclass(frozen=True)
class RateParams:
    """Process rates. ``gen_ab`` is per unit above-band power and
    ``pump_res``/``loss_res`` per unit resonant power; use :meth:`at_powers`
    to obtain absolute rates. ``asym_gen`` is the electron:hole capture
    ratio (1 = balanced pairs)."""

    gamma_rad: float = 1.5
    gen_ab: float = 0.0
    pump_res: float = 0.0
    relax: float = 0.0
    loss_res: float = 0.0
    rad_excited: float = 0.0
    spin_flip: float = 0.0
    asym_gen: float = 1.0
    loss_excited_only: bool = False

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k == "loss_excited_only":
                continue
            if not np.isfinite(v) or v < 0:
                raise InvalidParameterError(f"{k} must be finite and >= 0")
        if self.asym_gen <= 0:
            raise InvalidParameterError("asym_gen must be > 0")

    def at_powers(self, p_hene, p_res):
        if p_hene < 0 or p_res < 0:
            raise InvalidParameterError("powers must be >= 0")
        return replace(
            self,
            gen_ab=self.gen_ab * p_hene,
            pump_res=self.pump_res * p_res,
            loss_res=self.loss_res * p_res,
        )

    def to_array(self):
        return np.array(
            [self.gamma_rad, self.gen_ab, self.pump_res, self.relax, self.loss_res,
             self.rad_excited, self.spin_flip, self.asym_gen,
             1.0 if self.loss_excited_only else 0.0],
            dtype=np.float64,
        )


# Order-of-magnitude defaults that give an interior intensity maximum shifting
# with resonant power; not fitted values.
DEFAULT_RATES = RateParams(gamma_rad=1.5, gen_ab=1.0, pump_res=2.0, relax=10.0, loss_res=0.5)


@nb.njit(cache=True)
def _propensities(s, r, a):
    """Fill ``a`` with the propensity of every catalogue event in state ``s``."""
    gamma_rad, gen, pump, relax, loss = r[0], r[1], r[2], r[3], r[4]
    rad_exc, flip, asym, exc_only = r[5], r[6], r[7], r[8] > 0.5
    e_up, e_dn, h_up, h_dn, ne, nh = s[0], s[1], s[2], s[3], s[4], s[5]
    for k in range(a.size):
        a[k] = 0.0
    a[0] = gamma_rad * e_up * h_dn
    a[1] = gamma_rad * e_dn * h_up
    if asym == 1.0:
        a[2] = gen
    else:
        # same total carrier flux, split e:h = asym:1
        a[3] = gen * 2.0 * asym / (1.0 + asym)
        a[4] = gen * 2.0 / (1.0 + asym)
    n_free = (1 - e_up) * (1 - h_dn) + (1 - e_dn) * (1 - h_up)
    if n_free > 0:
        a[5] = pump * (1 - e_up) * (1 - h_dn) / n_free
        a[6] = pump * (1 - e_dn) * (1 - h_up) / n_free
    fe = (1 - e_up) + (1 - e_dn)
    if fe > 0 and ne > 0:
        a[7] = relax * ne * (1 - e_up) / fe
        a[8] = relax * ne * (1 - e_dn) / fe
    fh = (1 - h_up) + (1 - h_dn)
    if fh > 0 and nh > 0:
        a[9] = relax * nh * (1 - h_up) / fh
        a[10] = relax * nh * (1 - h_dn) / fh
    if exc_only:
        a[15] = loss * ne
        a[16] = loss * nh
    else:
        a[11] = loss * e_up
        a[12] = loss * e_dn
        a[13] = loss * h_up
        a[14] = loss * h_dn
    a[17] = rad_exc * min(ne, nh)
    a[18] = flip * e_up * (1 - e_dn)
    a[19] = flip * e_dn * (1 - e_up)
    a[20] = flip * h_up * (1 - h_dn)
    a[21] = flip * h_dn * (1 - h_up)


@nb.njit(cache=True)
def _emission_tag(s):
    ne = s[0] + s[1]
    nh = s[2] + s[3]
    if ne == 1 and nh == 1:
        return 0
    if ne == 1 and nh == 2:
        return 1
    if ne == 2 and nh == 1:
        return 2
    return 3


@nb.njit(cache=True)
def _apply(s, k):
    """Update state ``s`` in place for event ``k``; return emission tag or -1."""
    tag = -1
    if k == 0:
        tag = _emission_tag(s)
        s[0] -= 1
        s[3] -= 1
    elif k == 1:
        tag = _emission_tag(s)
        s[1] -= 1
        s[2] -= 1
    elif k == 2:
        s[4] += 1
        s[5] += 1
    elif k == 3:
        s[4] += 1
    elif k == 4:
        s[5] += 1
    elif k == 5:
        s[0] += 1
        s[3] += 1
    elif k == 6:
        s[1] += 1
        s[2] += 1
    elif k == 7:
        s[4] -= 1
        s[0] += 1
    elif k == 8:
        s[4] -= 1
        s[1] += 1
    elif k == 9:
        s[5] -= 1
        s[2] += 1
    elif k == 10:
        s[5] -= 1
        s[3] += 1
    elif k <= 14:
        s[k - 11] -= 1
    elif k == 15:
        s[4] -= 1
    elif k == 16:
        s[5] -= 1
    elif k == 17:
        s[4] -= 1
        s[5] -= 1
    elif k == 18:
        s[0] -= 1
        s[1] += 1
    elif k == 19:
        s[1] -= 1
        s[0] += 1
    elif k == 20:
        s[2] -= 1
        s[3] += 1
    else:
        s[3] -= 1
        s[2] += 1
    return tag


@nb.njit(cache=True)
def _ground_index(s):
    return s[0] + 2 * s[1] + 4 * s[2] + 8 * s[3]


@nb.njit(cache=True)
def _run(state, rates, t_max, seed, counts, occupancy, log_t, log_tag):
    """Gillespie loop until ``t_max``. Returns (events taken, emissions logged).

    ``counts[tag]`` accumulates emissions, ``occupancy[g]`` the time spent in
    ground configuration ``g``; the first ``log_t.size`` emissions are logged.
    """
    np.random.seed(seed)
    a = np.empty(N_EVENTS)
    t = 0.0
    n_events = 0
    n_log = 0
    while True:
        _propensities(state, rates, a)
        total = a.sum()
        if total <= 0.0:
            occupancy[_ground_index(state)] += t_max - t
            break
        dt = np.random.exponential(1.0 / total)
        if t + dt >= t_max:
            occupancy[_ground_index(state)] += t_max - t
            break
        occupancy[_ground_index(state)] += dt
        t += dt
        u = np.random.random() * total
        k = 0
        acc = a[0]
        while acc <= u and k < N_EVENTS - 1:
            k += 1
            acc += a[k]
        # guard against round-off selecting a disabled trailing event
        while a[k] == 0.0:
            k -= 1
        tag = _apply(state, k)
        n_events += 1
        if tag >= 0:
            counts[tag] += 1
            if n_log < log_t.size:
                log_t[n_log] = t
                log_tag[n_log] = tag
                n_log += 1
    return n_events, n_log


@nb.njit(cache=True, parallel=True)
def _run_many(init, rates, t_max, seeds, out):
    for i in nb.prange(seeds.size):
        s = init.copy()
        occ = np.zeros(N_GROUND_CONFIGS)
        c = np.zeros(4, dtype=np.int64)
        empty_t = np.empty(0)
        empty_tag = np.empty(0, dtype=np.int64)
        _run(s, rates, t_max, seeds[i], c, occ, empty_t, empty_tag)
        for j in range(4):
            out[i, j] = c[j]


# ---- Python-level API


@dataclass(frozen=True)
class Event:
    name: str
    index: int


@dataclass(frozen=True)
class EmissionRecord:
    time: float
    tag: str


def enumerate_events(state: QdState, rates: RateParams):
    """All enabled events with their propensities (1/ns)."""
    a = np.empty(N_EVENTS)
    _propensities(state.to_array(), rates.to_array(), a)
    return [(Event(EVENTS[k], k), float(a[k])) for k in range(N_EVENTS) if a[k] > 0]


def emission_tag(state: QdState) -> str:
    """Species emitting from this ground configuration."""
    return TAGS[_emission_tag(state.to_array())]


def step(state: QdState, rates: RateParams, rng: np.random.Generator):
    """One Gillespie step: returns (new state, event, dt, emission record or None).

    The emission record's ``time`` is the waiting time ``dt`` of this step;
    callers accumulate absolute time.
    """
    events = enumerate_events(state, rates)
    if not events:
        raise AbsorbingStateError("no enabled events")
    props = np.array([p for _, p in events])
    total = props.sum()
    dt = rng.exponential(1.0 / total)
    k = int(np.searchsorted(np.cumsum(props), rng.random() * total, side="right"))
    k = min(k, len(events) - 1)
    ev = events[k][0]
    s = state.to_array()
    tag = _apply(s, ev.index)
    new = QdState.from_array(s)
    record = EmissionRecord(dt, TAGS[tag]) if tag >= 0 else None
    return new, ev, dt, record


def trajectory_seed(seed, *indices):
    """Deterministic 32-bit seed for a substream identified by ``indices``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in indices))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True, eq=False)
class SimulationResult:
    records: list
    counts: dict
    occupancy: np.ndarray
    n_events: int
    t_max: float


def simulate(rates: RateParams, p_hene, p_res, t_max, seed, max_records=100_000,
             state: QdState | None = None) -> SimulationResult:
    """Run one trajectory from the empty dot (or ``state``) up to ``t_max`` ns.

    ``occupancy`` is the fraction of time spent in each of the 16 ground
    configurations, indexed ``e_up + 2 e_dn + 4 h_up + 8 h_dn``.
    """
    if t_max <= 0:
        raise InvalidParameterError("t_max must be > 0")
    r = rates.at_powers(p_hene, p_res).to_array()
    s = (state or QdState()).to_array()
    counts = np.zeros(4, dtype=np.int64)
    occ = np.zeros(N_GROUND_CONFIGS)
    log_t = np.empty(max_records)
    log_tag = np.empty(max_records, dtype=np.int64)
    n_events, n_log = _run(s, r, float(t_max), trajectory_seed(seed), counts, occ, log_t, log_tag)
    records = [EmissionRecord(float(log_t[i]), TAGS[log_tag[i]]) for i in range(n_log)]
    return SimulationResult(
        records=records,
        counts=dict(zip(TAGS, (int(c) for c in counts))),
        occupancy=occ / t_max,
        n_events=int(n_events),
        t_max=float(t_max),
    )


def run_cell(rates: RateParams, p_hene, p_res, t_max, trajectories, seed, cell_index=0,
             initial_state: QdState | None = None):
    """Emission counts per tag for ``trajectories`` independent runs of one cell.

    Returns an (trajectories, 4) integer array. Trajectory ``j`` of cell ``c``
    uses the ``j``-th word of the substream ``(seed, c)``.
    """
    r = rates.at_powers(p_hene, p_res).to_array()
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(cell_index),))
    seeds = ss.generate_state(int(trajectories), dtype=np.uint32).astype(np.int64)
    out = np.zeros((int(trajectories), 4), dtype=np.int64)
    init = (initial_state or QdState()).to_array()
    _run_many(init, r, float(t_max), seeds, out)
    return out


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Mean emission rate per tag (photons per simulated second) on a power grid.

    ``rates[tag]`` has shape (len(p_res), len(p_hene)).
    """

    p_hene: np.ndarray
    p_res: np.ndarray
    rates: dict
    trajectories: int
    t_max: float
    seed: int

    def trion(self):
        return self.rates["positive_trion"] + self.rates["negative_trion"]

    def rows(self):
        tr = self.trion()
        for i, pr in enumerate(self.p_res):
            for j, ph in enumerate(self.p_hene):
                row = {"p_hene": float(ph), "p_res": float(pr)}
                row.update({t: float(self.rates[t][i, j]) for t in TAGS})
                row["trion"] = float(tr[i, j])
                row["trajectories"] = self.trajectories
                row["seed"] = self.seed
                yield row


# one resident electron: the dot hosts a charged exciton once pumped
RESIDENT_ELECTRON = QdState(e_up=1)


def sweep_intensity(rates: RateParams, p_hene, p_res, t_max, trajectories, seed,
                    threads=0, initial_state: QdState | None = RESIDENT_ELECTRON) -> SweepResult:
    """Simulate every (P_res, P_HeNe) cell and average over trajectories.

    Trajectories start from ``initial_state`` (a singly charged dot by
    default; pass ``None`` for the empty dot).
    """
    p_hene = np.asarray(p_hene, dtype=float)
    p_res = np.asarray(p_res, dtype=float)
    if p_hene.size == 0 or p_res.size == 0:
        raise InvalidParameterError("power grids must be non-empty")
    if trajectories < 1 or t_max <= 0:
        raise InvalidParameterError("need trajectories >= 1 and t_max > 0")
    if threads:
        nb.set_num_threads(min(int(threads), nb.config.NUMBA_NUM_THREADS))
    out = {t: np.zeros((p_res.size, p_hene.size)) for t in TAGS}
    per_second = 1e9 / t_max
    for i, pr in enumerate(p_res):
        for j, ph in enumerate(p_hene):
            cell = i * p_hene.size + j
            c = run_cell(rates, ph, pr, t_max, trajectories, seed, cell, initial_state)
            # integer sums are order-independent, so threading cannot change them
            tot = c.sum(axis=0)
            for k, t in enumerate(TAGS):
                out[t][i, j] = tot[k] / trajectories * per_second
    return SweepResult(p_hene, p_res, out, int(trajectories), float(t_max), int(seed))


@dataclass(frozen=True)
class IntensityMaximum:
    p_hene: float
    value: float
    index: int
    at_boundary: bool


def find_intensity_maximum(p_hene, counts) -> IntensityMaximum:
    """Location of the maximum after a 3-point moving average.

    The end points are averaged over their two available neighbours.
    A maximum on the first or last grid point is flagged.
    """
    x = np.asarray(p_hene, dtype=float)
    y = np.asarray(counts, dtype=float)
    if x.size < 5 or x.shape != y.shape:
        raise InvalidParameterError("need at least 5 points of matching length")
    sm = np.convolve(y, np.ones(3) / 3.0, mode="same")
    sm[0] = 0.5 * (y[0] + y[1])
    sm[-1] = 0.5 * (y[-1] + y[-2])
    if np.ptp(sm) == 0:
        raise NoPeakError("flat curve has no maximum")
    i = int(np.argmax(sm))
    return IntensityMaximum(float(x[i]), float(sm[i]), i, i in (0, x.size - 1))


def write_trace(path, result: SimulationResult):
    """Raw emission trace as CSV (time_ns, tag)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ns", "tag"])
        for rec in result.records:
            w.writerow([f"{rec.time:.9g}", rec.tag])
