"""Synthetic queue simulator with injected, known mimicry.

A population of persons (some joined into habitual pairs) visits shops over
a span of days.  A pair visit serializes as partner-then-focal at one
register with a configurable inter-transaction gap; solo visitors interleave
and break some of those adjacencies, as strangers do in real queues.  The
focal's purchase probability for item i is

    clip(p_i + delta_i * [partner bought i] * decay(gap) * susceptibility)

with decay(g) = exp(-g/tau) when a decay constant is set.  In pre_agreement
mode the joint outcome is drawn once before queue order is decided, so the
purchase carries no order asymmetry for the coordination probe to find.

Everything is driven by one mandatory seed through a single generator in a
fixed draw order; equal configs give byte-identical outputs.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import ConfigError
from .model import (
    Demographics,
    ItemCatalog,
    ItemCategory,
    PersonRecord,
    TransactionLog,
    serialize_transactions,
)

DAYPART_LABELS = ("breakfast", "lunch", "afternoon")
_WINDOWS = {
    "breakfast": (6 * 3600, 11 * 3600),
    "lunch": (11 * 3600, 14 * 3600 + 1800),
    "afternoon": (14 * 3600 + 1800, 20 * 3600),
}
_ANCHOR_CODES = ("MEAL_V", "MEAL_NV", "COFFEE", "TEA")


def _default_base_probs() -> dict:
    per = {"dessert": 0.25, "fruit": 0.15, "soup": 0.10}
    return {dp: dict(per) for dp in DAYPART_LABELS}


@dataclass
class SimulationConfig:
    seed: int
    n_persons: int = 2000
    n_shops: int = 2
    n_registers_per_shop: int = 3
    n_days: int = 250
    start_date: str = "2018-01-08"
    # population
    status_mix: dict = field(
        default_factory=lambda: {"student": 0.65, "staff": 0.30, "other": 0.05}
    )
    demographics_known_fraction: float = 1.0
    pair_fraction: float = 0.8
    pairs: Optional[list] = None  # explicit [(i, j), ...] person indices
    assortative_pairs: bool = True
    visit_rate: float = 0.4
    solo_rate: float = 0.2
    daypart_weights: tuple = (0.25, 0.5, 0.25)
    status_signatures: bool = True
    # purchasing
    base_probs: dict = field(default_factory=_default_base_probs)
    veg_share: float = 0.35
    coffee_share: float = 0.65
    propensity_sd: float = 0.15
    homophily: float = 0.0
    delta: dict = field(default_factory=dict)
    decay_tau: Optional[float] = None
    anchor_delta: dict = field(default_factory=dict)
    coordination_mode: str = "none"
    leader_first_prob: float = 0.5
    susceptibility_asymmetry: float = 0.0
    availability_dropout: float = 0.0
    popularity_shock_sd: float = 0.0
    gap_dist: str = "lognormal"
    gap_median_s: float = 40.0
    gap_sigma: float = 0.75
    gap_max_s: int = 300

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if self.n_persons < 1 or self.n_shops < 1 or self.n_registers_per_shop < 1:
            raise ConfigError("population and shop counts must be positive")
        if self.n_days < 1:
            raise ConfigError("n_days must be positive")
        for name in (
            "demographics_known_fraction",
            "pair_fraction",
            "visit_rate",
            "solo_rate",
            "veg_share",
            "coffee_share",
            "homophily",
            "leader_first_prob",
            "susceptibility_asymmetry",
            "availability_dropout",
        ):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if abs(sum(self.status_mix.values()) - 1.0) > 1e-9:
            raise ConfigError("status_mix must sum to 1")
        if abs(sum(self.daypart_weights) - 1.0) > 1e-9 or len(self.daypart_weights) != 3:
            raise ConfigError("daypart_weights must be 3 values summing to 1")
        from .model import ADDITION_KEYS

        for dp, probs in self.base_probs.items():
            if dp not in DAYPART_LABELS:
                raise ConfigError(f"unknown daypart {dp!r} in base_probs")
            for item, p in probs.items():
                if item not in ADDITION_KEYS:
                    raise ConfigError(f"unknown addition {item!r}; choose from {ADDITION_KEYS}")
                if not (0.0 <= p <= 1.0):
                    raise ConfigError(f"base prob of {item!r} out of range: {p}")
        for item, d in {**self.delta, **self.anchor_delta}.items():
            if not (-1.0 <= d <= 1.0):
                raise ConfigError(f"delta of {item!r} out of [-1, 1]: {d}")
        for key in self.anchor_delta:
            if key not in ("meal_vegetarian", "coffee"):
                raise ConfigError(f"anchor_delta keys are meal_vegetarian/coffee, got {key!r}")
        if self.decay_tau is not None and not self.decay_tau > 0:
            raise ConfigError("decay_tau must be positive when set")
        if self.coordination_mode not in ("none", "pre_agreement"):
            raise ConfigError(f"unknown coordination_mode {self.coordination_mode!r}")
        if self.gap_dist not in ("lognormal", "uniform"):
            raise ConfigError(f"unknown gap_dist {self.gap_dist!r}")
        if not (1 <= self.gap_max_s <= 300):
            raise ConfigError("gap_max_s must lie in [1, 300]")
        if self.pairs is not None:
            seen = set()
            for a, b in self.pairs:
                if not (0 <= a < self.n_persons and 0 <= b < self.n_persons) or a == b:
                    raise ConfigError(f"infeasible pair ({a}, {b})")
                if a in seen or b in seen:
                    raise ConfigError(f"person {a if a in seen else b} appears in two pairs")
                seen.update((a, b))

    @property
    def items(self) -> list[str]:
        keys = set()
        for probs in self.base_probs.values():
            keys.update(probs)
        return sorted(keys)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        if "pairs" in data and data["pairs"] is not None:
            data = dict(data, pairs=[tuple(p) for p in data["pairs"]])
        if "daypart_weights" in data:
            data = dict(data, daypart_weights=tuple(data["daypart_weights"]))
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown simulation config keys: {sorted(extra)}")
        return cls(**data)


def simulation_catalog(config: SimulationConfig) -> ItemCatalog:
    cats = {
        "MEAL_V": ItemCategory("anchor_meal", "vegetarian"),
        "MEAL_NV": ItemCategory("anchor_meal", "non_vegetarian"),
        "COFFEE": ItemCategory("anchor_beverage", "coffee"),
        "TEA": ItemCategory("anchor_beverage", "tea"),
    }
    for item in config.items:
        cats[item.upper()] = ItemCategory("addition", item)
    return ItemCatalog(cats)


_BIRTH_RANGES = {"student": (1992, 2000), "staff": (1958, 1990), "other": (1950, 2000)}


@dataclass
class Population:
    person_ids: list[str]
    statuses: list[str]  # class names, indexed by status_idx
    status_idx: np.ndarray
    gender: list[str]
    birth_year: np.ndarray
    pairs: np.ndarray  # [n_pairs, 2]; column 0 is the habitual leader
    propensity_z: dict  # item key -> per-person z-score (unclipped)

    @property
    def n(self) -> int:
        return len(self.person_ids)

    def status_of(self, i: int) -> str:
        return self.statuses[self.status_idx[i]]

    def demographics(self, known_fraction: float = 1.0, rng=None) -> Demographics:
        """Person table; a 1-known_fraction share gets no status label."""
        known = np.ones(self.n, bool)
        if known_fraction < 1.0:
            if rng is None:
                rng = np.random.default_rng(0)
            known = rng.random(self.n) < known_fraction
        recs = []
        for i, pid in enumerate(self.person_ids):
            recs.append(
                PersonRecord(
                    pid,
                    gender=self.gender[i],
                    status=self.status_of(i) if known[i] else None,
                    birth_year=int(self.birth_year[i]),
                )
            )
        return Demographics(recs)


def generate_population(config: SimulationConfig) -> Population:
    """Persons, demographics, pair graph, and correlated purchase propensities."""
    rng = np.random.default_rng(int(config.seed))
    n = config.n_persons
    person_ids = [f"P{i:05d}" for i in range(n)]
    statuses = list(config.status_mix)
    probs = np.asarray([config.status_mix[s] for s in statuses])
    status_idx = rng.choice(len(statuses), size=n, p=probs)
    gender = ["female" if g else "male" for g in rng.random(n) < 0.5]
    birth_year = np.empty(n, np.int64)
    for s, name in enumerate(statuses):
        lo, hi = _BIRTH_RANGES.get(name, (1950, 2000))
        rows = status_idx == s
        birth_year[rows] = rng.integers(lo, hi + 1, int(rows.sum()))

    if config.pairs is not None:
        pairs = np.asarray(config.pairs, np.int64).reshape(-1, 2)
    else:
        chunks = []
        if config.assortative_pairs:
            groups = [np.nonzero(status_idx == s)[0] for s in range(len(statuses))]
        else:
            groups = [np.arange(n)]
        for members in groups:
            perm = members[rng.permutation(members.shape[0])]
            take = int(perm.shape[0] * config.pair_fraction) // 2 * 2
            chunks.append(perm[:take].reshape(-1, 2))
        pairs = np.concatenate(chunks) if chunks else np.empty((0, 2), np.int64)

    h = config.homophily
    prop = {}
    in_pair = np.full(n, -1, np.int64)
    if pairs.shape[0]:
        in_pair[pairs[:, 0]] = np.arange(pairs.shape[0])
        in_pair[pairs[:, 1]] = np.arange(pairs.shape[0])
    for item in config.items + ["meal_vegetarian", "coffee"]:
        z_pair = rng.normal(size=max(pairs.shape[0], 1))
        eps = rng.normal(size=n)
        z = eps.copy()
        if pairs.shape[0]:
            # members share a pair component; marginal variance stays 1
            paired = in_pair >= 0
            z[paired] = (
                math.sqrt(h) * z_pair[in_pair[paired]]
                + math.sqrt(1.0 - h) * eps[paired]
            )
        prop[item] = z
    return Population(person_ids, statuses, status_idx, gender, birth_year, pairs, prop)


@dataclass
class GroundTruth:
    expected_rd: dict  # item -> mean clipped uplift over realized treated events
    n_treated_events: dict
    delta: dict
    decay_tau: Optional[float]
    coordination_mode: str

    def to_dict(self) -> dict:
        return {
            "expected_rd": self.expected_rd,
            "n_treated_events": self.n_treated_events,
            "delta": self.delta,
            "decay_tau": self.decay_tau,
            "coordination_mode": self.coordination_mode,
        }


def _visit_seconds(rng, daypart_idx, status_sig, is_staff, room):
    """Start second within the daypart window, leaving `room` for the gap."""
    lo = np.asarray([_WINDOWS[DAYPART_LABELS[d]][0] for d in daypart_idx])
    hi = np.asarray([_WINDOWS[DAYPART_LABELS[d]][1] for d in daypart_idx])
    span = hi - lo - room
    u = rng.random(daypart_idx.shape[0])
    if status_sig:
        # staff come early in the window, students late
        u = np.where(is_staff, u * 0.45, 0.55 + u * 0.45)
    return lo + np.floor(u * span).astype(np.int64)


def _gaps(rng, config: SimulationConfig, size: int) -> np.ndarray:
    if config.gap_dist == "uniform":
        return rng.integers(5, config.gap_max_s + 1, size)
    raw = np.exp(rng.normal(math.log(config.gap_median_s), config.gap_sigma, size))
    return np.clip(np.rint(raw), 1, config.gap_max_s).astype(np.int64)


def simulate_log(
    population: Population, config: SimulationConfig
) -> tuple[TransactionLog, GroundTruth]:
    """Generate the transaction log and the injected-effect bookkeeping."""
    rng = np.random.default_rng(int(config.seed) + 1)
    n_days = config.n_days
    day0 = np.datetime64(config.start_date, "D").astype(np.int64)
    month_of_day = (
        (day0 + np.arange(n_days)).astype("datetime64[D]").astype("datetime64[M]").astype(np.int64)
        % 12
        + 1
    )
    items = config.items
    n_items = len(items)
    statuses = population.statuses
    student_code = statuses.index("student") if "student" in statuses else -1
    staff_code = statuses.index("staff") if "staff" in statuses else -1

    def month_factor(status_codes: np.ndarray, day_idx: np.ndarray) -> np.ndarray:
        if not config.status_signatures or student_code < 0:
            return np.ones(day_idx.shape[0])
        summer = np.isin(month_of_day[day_idx], (7, 8))
        return np.where((status_codes == student_code) & summer, 0.1, 1.0)

    # cell-level availability and popularity shocks, one value per
    # (shop, day, daypart, item)
    shock = np.zeros((config.n_shops, n_days, 3, n_items))
    if config.popularity_shock_sd > 0:
        shock = rng.normal(0.0, config.popularity_shock_sd, shock.shape)
    available = np.ones((config.n_shops, n_days, 3, n_items), bool)
    if config.availability_dropout > 0:
        available = rng.random(available.shape) >= config.availability_dropout

    pairs = population.pairs
    n_pairs = pairs.shape[0]
    sidx = population.status_idx

    # -- pair visits --------------------------------------------------------
    if n_pairs:
        base = rng.random((n_pairs, n_days))
        rate = config.visit_rate * month_factor(
            np.repeat(sidx[pairs[:, 0]], n_days),
            np.tile(np.arange(n_days), n_pairs),
        ).reshape(n_pairs, n_days)
        p_vis, p_day = np.nonzero(base < rate)
    else:
        p_vis = p_day = np.empty(0, np.int64)
    V = p_vis.shape[0]
    leader = pairs[p_vis, 0] if V else np.empty(0, np.int64)
    follower = pairs[p_vis, 1] if V else np.empty(0, np.int64)
    v_shop = rng.integers(0, config.n_shops, V)
    v_reg = rng.integers(0, config.n_registers_per_shop, V)
    dp_cum = np.cumsum(config.daypart_weights)
    v_dp = np.searchsorted(dp_cum, rng.random(V), side="right").astype(np.int64)
    v_dp = np.minimum(v_dp, 2)
    gaps = _gaps(rng, config, V)
    t_partner = _visit_seconds(
        rng, v_dp, config.status_signatures, sidx[leader] == staff_code, config.gap_max_s + 2
    )
    leader_first = rng.random(V) < config.leader_first_prob
    partner = np.where(leader_first, leader, follower)
    focal = np.where(leader_first, follower, leader)

    def cell_prob(item_k: int, item: str, persons: np.ndarray) -> np.ndarray:
        base_p = np.asarray([config.base_probs[DAYPART_LABELS[d]].get(item, 0.0) for d in v_dp])
        p = base_p + config.propensity_sd * population.propensity_z[item][persons]
        p = p + shock[v_shop, p_day, v_dp, item_k]
        p[~available[v_shop, p_day, v_dp, item_k]] = 0.0
        return np.clip(p, 0.0, 1.0)

    decay = np.ones(V)
    if config.decay_tau is not None:
        decay = np.exp(-gaps / config.decay_tau)

    partner_buys = {}
    focal_buys = {}
    gt_sum = {item: 0.0 for item in items}
    gt_n = {item: 0 for item in items}
    pre = config.coordination_mode == "pre_agreement"
    if pre:
        # agreement happens before queueing: uplift flows between members in
        # a random internal direction, independent of eventual queue order
        src_is_partner = rng.random(V) < 0.5
    susct = np.where(
        leader_first, 1.0, 1.0 - config.susceptibility_asymmetry
    )  # focal=follower when the leader goes first
    for k, item in enumerate(items):
        d = float(config.delta.get(item, 0.0))
        p_partner = cell_prob(k, item, partner)
        p_focal = cell_prob(k, item, focal)
        if pre:
            p_src = np.where(src_is_partner, p_partner, p_focal)
            p_dst = np.where(src_is_partner, p_focal, p_partner)
            b_src = rng.random(V) < p_src
            p_dst_up = np.clip(p_dst + d * b_src, 0.0, 1.0)
            b_dst = rng.random(V) < p_dst_up
            b_p = np.where(src_is_partner, b_src, b_dst)
            b_f = np.where(src_is_partner, b_dst, b_src)
            treated = b_p & src_is_partner
            gt_sum[item] += float(np.sum((p_dst_up - np.clip(p_dst, 0, 1))[treated]))
            gt_n[item] += int(np.sum(b_p))
        else:
            b_p = rng.random(V) < p_partner
            uplift = d * b_p * decay * susct
            p_up = np.clip(p_focal + uplift, 0.0, 1.0)
            b_f = rng.random(V) < p_up
            gt_sum[item] += float(np.sum((p_up - p_focal)[b_p]))
            gt_n[item] += int(np.sum(b_p))
        partner_buys[item] = b_p
        focal_buys[item] = b_f

    # anchors: meals at lunch, a beverage otherwise; the anchor subtype can
    # itself be mimicked (vegetarian meals, beverage kind)
    def anchor_pair(base_share: float, z_key: str, delta_key: str):
        d = float(config.anchor_delta.get(delta_key, 0.0))
        zp = population.propensity_z[z_key][partner]
        zf = population.propensity_z[z_key][focal]
        pp = np.clip(base_share + config.propensity_sd * zp, 0.0, 1.0)
        pf = np.clip(base_share + config.propensity_sd * zf, 0.0, 1.0)
        if pre:
            p_src = np.where(src_is_partner, pp, pf)
            p_dst = np.where(src_is_partner, pf, pp)
            b_src = rng.random(V) < p_src
            b_dst = rng.random(V) < np.clip(p_dst + d * b_src, 0.0, 1.0)
            return (
                np.where(src_is_partner, b_src, b_dst),
                np.where(src_is_partner, b_dst, b_src),
            )
        b_p = rng.random(V) < pp
        b_f = rng.random(V) < np.clip(pf + d * b_p * decay * susct, 0.0, 1.0)
        return b_p, b_f

    veg_p, veg_f = anchor_pair(config.veg_share, "meal_vegetarian", "meal_vegetarian")
    cof_p, cof_f = anchor_pair(config.coffee_share, "coffee", "coffee")

    # -- solo visits ---------------------------------------------------------
    n = population.n
    s_base = rng.random((n, n_days))
    s_rate = config.solo_rate * month_factor(
        np.repeat(sidx, n_days), np.tile(np.arange(n_days), n)
    ).reshape(n, n_days)
    s_person, s_day = np.nonzero(s_base < s_rate)
    S = s_person.shape[0]
    s_shop = rng.integers(0, config.n_shops, S)
    s_reg = rng.integers(0, config.n_registers_per_shop, S)
    s_dp = np.minimum(
        np.searchsorted(dp_cum, rng.random(S), side="right").astype(np.int64), 2
    )
    s_t = _visit_seconds(rng, s_dp, config.status_signatures, sidx[s_person] == staff_code, 2)
    solo_buys = {}
    for k, item in enumerate(items):
        base_p = np.asarray([config.base_probs[DAYPART_LABELS[d]].get(item, 0.0) for d in s_dp])
        p = base_p + config.propensity_sd * population.propensity_z[item][s_person]
        p = p + shock[s_shop, s_day, s_dp, k]
        p[~available[s_shop, s_day, s_dp, k]] = 0.0
        solo_buys[item] = rng.random(S) < np.clip(p, 0.0, 1.0)
    veg_s = rng.random(S) < np.clip(
        config.veg_share + config.propensity_sd * population.propensity_z["meal_vegetarian"][s_person],
        0.0,
        1.0,
    )
    cof_s = rng.random(S) < np.clip(
        config.coffee_share + config.propensity_sd * population.propensity_z["coffee"][s_person],
        0.0,
        1.0,
    )

    # -- assemble rows -------------------------------------------------------
    person_rows = np.concatenate([partner, focal, s_person])
    day_rows = np.concatenate([p_day, p_day, s_day])
    secs_rows = np.concatenate([t_partner, t_partner + gaps, s_t])
    shop_rows = np.concatenate([v_shop, v_shop, s_shop])
    reg_rows = np.concatenate([v_reg, v_reg, s_reg])
    dp_rows = np.concatenate([v_dp, v_dp, s_dp])
    veg_rows = np.concatenate([veg_p, veg_f, veg_s])
    cof_rows = np.concatenate([cof_p, cof_f, cof_s])
    buy_cols = np.stack(
        [np.concatenate([partner_buys[i], focal_buys[i], solo_buys[i]]) for i in items],
        axis=1,
    )

    ts = (day0 + day_rows) * 86400 + secs_rows
    order = np.lexsort((reg_rows, shop_rows, ts))
    N = ts.shape[0]
    item_codes = [i.upper() for i in items]
    shops_vocab = [f"S{j + 1:02d}" for j in range(config.n_shops)]
    regs_vocab = [f"R{j + 1}" for j in range(config.n_registers_per_shop)]
    tx_ids = [""] * N
    person_col = [""] * N
    shop_col = [""] * N
    reg_col = [""] * N
    baskets = [()] * N
    pid = population.person_ids
    for rank, r in enumerate(order):
        tx_ids[rank] = f"T{rank:08d}"
        person_col[rank] = pid[person_rows[r]]
        shop_col[rank] = shops_vocab[shop_rows[r]]
        reg_col[rank] = regs_vocab[reg_rows[r]]
        if dp_rows[r] == 1:
            basket = ["MEAL_V" if veg_rows[r] else "MEAL_NV"]
        else:
            basket = ["COFFEE" if cof_rows[r] else "TEA"]
        row_buys = buy_cols[r]
        for k in range(n_items):
            if row_buys[k]:
                basket.append(item_codes[k])
        baskets[rank] = tuple(basket)

    catalog = simulation_catalog(config)
    log = TransactionLog(
        tx_ids, person_col, ts[order], shop_col, reg_col, baskets, catalog
    )
    truth = GroundTruth(
        expected_rd={
            item: (gt_sum[item] / gt_n[item] if gt_n[item] else 0.0) for item in items
        },
        n_treated_events=dict(gt_n),
        delta={item: float(config.delta.get(item, 0.0)) for item in items},
        decay_tau=config.decay_tau,
        coordination_mode=config.coordination_mode,
    )
    return log, truth


@dataclass
class SimResult:
    config: SimulationConfig
    population: Population
    log: TransactionLog
    ground_truth: GroundTruth
    catalog: ItemCatalog

    def demographics(self) -> Demographics:
        rng = np.random.default_rng(int(self.config.seed) + 2)
        return self.population.demographics(self.config.demographics_known_fraction, rng)


def simulate(config: SimulationConfig) -> SimResult:
    population = generate_population(config)
    log, truth = simulate_log(population, config)
    return SimResult(config, population, log, truth, simulation_catalog(config))


def write_simulation(result: SimResult, out_dir: Union[str, os.PathLike]) -> dict:
    """Write transactions/catalog/demographics CSVs plus ground_truth.json."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "transactions": os.path.join(out_dir, "transactions.csv"),
        "catalog": os.path.join(out_dir, "catalog.csv"),
        "demographics": os.path.join(out_dir, "demographics.csv"),
        "ground_truth": os.path.join(out_dir, "ground_truth.json"),
    }
    serialize_transactions(result.log, paths["transactions"], fmt="csv")
    result.catalog.to_csv(paths["catalog"])
    result.demographics().to_csv(paths["demographics"])
    with open(paths["ground_truth"], "w", encoding="utf-8") as fh:
        json.dump(result.ground_truth.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
