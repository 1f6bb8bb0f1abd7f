"""Random downlink network realizations and their graph representation.

A scenario is one frozen snapshot: base stations on a hexagonal grid,
UEs dropped uniformly, distances, per-PRB and wideband SINR, RSRP, and
per-UE-per-cell PRB demand. The graph view connects UEs that share at
least one cell where both clear an SINR threshold, with node features
built from the PRB, distance, and SINR rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError

SPEED_OF_LIGHT = 299792458.0
SUBCARRIERS_PER_PRB = 12
THERMAL_NOISE_DBM_HZ = -174.0
SPECTRAL_EFFICIENCY_CAP = 7.4  # bit/s/Hz, keeps demand finite at huge SINR


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs for one family of random network realizations."""

    n_cells: int = 7
    inter_site_distance: float = 1000.0   # m
    region: tuple = (3000.0, 3000.0)      # m x m, BS grid centered inside
    n_ues: int = 50
    bandwidth_mhz: float = 20.0
    subcarrier_spacing_khz: float = 30.0
    guard_khz: float = 800.0              # per carrier edge
    carrier_ghz: float = 3.5
    n_tx_antennas: int = 4
    h_tx_m: float = 25.0
    h_ue_m: float = 1.5
    tx_power_dbm: float = 30.0            # per PRB
    noise_figure_db: float = 7.0
    pathloss_exponent: float = 3.0
    shadowing_sigma_db: float = 6.0
    reuse_factor: float = 1.0 / 3.0
    gamma_th_db: float = 0.0
    ue_demand_mbps: float = 5.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_cells < 1:
            raise ConfigError(f"n_cells must be >= 1, got {self.n_cells}")
        if self.n_ues < 1:
            raise ConfigError(f"n_ues must be >= 1, got {self.n_ues}")
        if self.bandwidth_mhz <= 0:
            raise ConfigError(f"bandwidth_mhz must be > 0, got {self.bandwidth_mhz}")
        if self.subcarrier_spacing_khz <= 0:
            raise ConfigError("subcarrier_spacing_khz must be > 0")
        if not 0.0 < self.reuse_factor <= 1.0:
            raise ConfigError(f"reuse_factor must be in (0, 1], got {self.reuse_factor}")
        if len(self.region) != 2 or min(self.region) <= 0:
            raise ConfigError(f"region must be two positive extents, got {self.region}")
        if self.inter_site_distance <= 0:
            raise ConfigError("inter_site_distance must be > 0")
        if self.h_tx_m <= 0 or self.h_ue_m <= 0 or self.h_tx_m == self.h_ue_m:
            raise ConfigError("antenna heights must be positive and distinct")
        if self.ue_demand_mbps <= 0:
            raise ConfigError(f"ue_demand_mbps must be > 0, got {self.ue_demand_mbps}")
        if self.n_prb_total < 1:
            raise ConfigError(
                f"bandwidth {self.bandwidth_mhz} MHz leaves no usable PRB "
                f"after twice the {self.guard_khz} kHz guard"
            )

    @property
    def prb_bandwidth_hz(self) -> float:
        return SUBCARRIERS_PER_PRB * self.subcarrier_spacing_khz * 1e3

    @property
    def n_prb_total(self) -> int:
        usable_hz = self.bandwidth_mhz * 1e6 - 2.0 * self.guard_khz * 1e3
        return int(usable_hz // self.prb_bandwidth_hz)

    @property
    def n_reuse_groups(self) -> int:
        return math.ceil(1.0 / self.reuse_factor - 1e-9)


@dataclass(frozen=True)
class Scenario:
    """One realized network: geometry, channel quality, PRB demand."""

    seed: int
    bs_positions: np.ndarray       # (N, 2) m
    ue_positions: np.ndarray       # (K, 2) m
    distance: np.ndarray           # (K, N) m, 3-D including antenna heights
    sinr_wideband_db: np.ndarray   # (K, N)
    sinr_per_prb_db: np.ndarray    # (K, N, n_prb_total)
    rsrp_dbm: np.ndarray           # (K, N)
    prb_demand: np.ndarray         # (K, N) int, in [1, n_prb_total]
    n_prb_total: int

    @property
    def n_ues(self) -> int:
        return self.ue_positions.shape[0]

    @property
    def n_cells(self) -> int:
        return self.bs_positions.shape[0]


@dataclass(frozen=True)
class GraphInstance:
    """UE graph over one scenario: features, adjacency, PRB demand."""

    features: np.ndarray     # (K, 3N)
    adjacency: np.ndarray    # (K, K) binary symmetric, unit diagonal
    prb_matrix: np.ndarray   # (K, N) float copy of the demand
    n_prb_total: int
    scenario_ref: str


def hex_layout(n_cells: int, inter_site_distance: float, region) -> np.ndarray:
    """The n_cells grid points nearest the region center, spaced one
    inter-site distance apart on a hexagonal lattice.

    Sites fill outward ring by ring in angle order, so the layout is
    deterministic and compact for any cell count.
    """
    width, height = float(region[0]), float(region[1])
    max_ring = int(math.ceil(math.sqrt(n_cells))) + 2
    pts = []
    for q in range(-max_ring, max_ring + 1):
        for r in range(-max_ring, max_ring + 1):
            if max(abs(q), abs(r), abs(q + r)) > max_ring:
                continue
            x = inter_site_distance * (q + 0.5 * r)
            y = inter_site_distance * (math.sqrt(3.0) / 2.0) * r
            dist = math.hypot(x, y)
            angle = math.atan2(y, x) % (2.0 * math.pi)
            pts.append((round(dist, 6), round(angle, 9), x, y))
    pts.sort()
    chosen = np.array([(x, y) for _, _, x, y in pts[:n_cells]])
    chosen += np.array([width / 2.0, height / 2.0])
    if (
        chosen[:, 0].min() < 0.0
        or chosen[:, 0].max() > width
        or chosen[:, 1].min() < 0.0
        or chosen[:, 1].max() > height
    ):
        raise ConfigError(
            f"region {region} cannot hold {n_cells} sites at "
            f"inter-site distance {inter_site_distance}"
        )
    return chosen


def free_space_reference_db(carrier_ghz: float) -> float:
    """Path loss of the first meter at the carrier frequency."""
    f_hz = carrier_ghz * 1e9
    return 20.0 * math.log10(4.0 * math.pi * f_hz / SPEED_OF_LIGHT)


def noise_power_dbm(cfg: ScenarioConfig) -> float:
    """Thermal noise plus receiver noise figure over one PRB."""
    return (
        THERMAL_NOISE_DBM_HZ
        + 10.0 * math.log10(cfg.prb_bandwidth_hz)
        + cfg.noise_figure_db
    )


def reuse_groups(cfg: ScenarioConfig) -> np.ndarray:
    """Co-channel group id per cell; same-group cells interfere."""
    return np.arange(cfg.n_cells) % cfg.n_reuse_groups


def generate_scenario(
    cfg: ScenarioConfig,
    seed: int,
    shadowing: bool = True,
    fading: bool = True,
) -> Scenario:
    """Draw one network realization, fully determined by (cfg, seed).

    The two switches silence shadowing or per-PRB fading without changing
    how many random numbers are drawn, so a scenario stays comparable to
    its noisy twin at the same seed.
    """
    rng = np.random.default_rng(seed)
    bs = hex_layout(cfg.n_cells, cfg.inter_site_distance, cfg.region)
    ue = rng.uniform((0.0, 0.0), cfg.region, size=(cfg.n_ues, 2))

    dh = np.linalg.norm(ue[:, None, :] - bs[None, :, :], axis=2)
    dz = cfg.h_tx_m - cfg.h_ue_m
    dist = np.sqrt(dh**2 + dz**2)

    pl0 = free_space_reference_db(cfg.carrier_ghz)
    pathloss_db = pl0 + 10.0 * cfg.pathloss_exponent * np.log10(dist)
    shadow_db = rng.normal(0.0, cfg.shadowing_sigma_db, size=dist.shape)
    if not shadowing:
        shadow_db = np.zeros_like(shadow_db)

    t = cfg.n_prb_total
    fade_gain = rng.exponential(1.0, size=(cfg.n_ues, cfg.n_cells, t))
    if not fading:
        fade_gain = np.ones_like(fade_gain)

    array_gain_db = 10.0 * math.log10(cfg.n_tx_antennas)
    rx_mean_dbm = cfg.tx_power_dbm + array_gain_db - pathloss_db - shadow_db
    rx_mw = 10.0 ** (rx_mean_dbm[:, :, None] / 10.0) * fade_gain

    noise_mw = 10.0 ** (noise_power_dbm(cfg) / 10.0)
    groups = reuse_groups(cfg)
    same_group = groups[None, :] == groups[:, None]  # (N, N)
    interferers = same_group & ~np.eye(cfg.n_cells, dtype=bool)
    # interference at UE k for serving cell n: co-channel received powers
    interf_mw = np.einsum("kmt,nm->knt", rx_mw, interferers.astype(float))
    sinr_lin = rx_mw / (noise_mw + interf_mw)

    sinr_per_prb_db = 10.0 * np.log10(sinr_lin)
    sinr_wideband_db = 10.0 * np.log10(sinr_lin.mean(axis=2))
    rsrp_dbm = cfg.tx_power_dbm - pathloss_db - shadow_db

    partial = Scenario(
        seed=seed,
        bs_positions=bs,
        ue_positions=ue,
        distance=dist,
        sinr_wideband_db=sinr_wideband_db,
        sinr_per_prb_db=sinr_per_prb_db,
        rsrp_dbm=rsrp_dbm,
        prb_demand=np.zeros_like(dist, dtype=np.int64),
        n_prb_total=t,
    )
    return replace(partial, prb_demand=compute_prb_demand(partial, cfg.ue_demand_mbps, cfg))


def compute_prb_demand(
    s: Scenario, demand_mbps: float, cfg: ScenarioConfig
) -> np.ndarray:
    """PRBs UE k would need at cell n to carry its demand.

    Capped-Shannon rate per PRB from the wideband SINR; always at least
    one PRB, never more than a full carrier.
    """
    if demand_mbps <= 0:
        raise ContractError(f"demand_mbps must be > 0, got {demand_mbps}")
    sinr_lin = 10.0 ** (s.sinr_wideband_db / 10.0)
    se = np.minimum(np.log2(1.0 + sinr_lin), SPECTRAL_EFFICIENCY_CAP)
    rate_per_prb = cfg.prb_bandwidth_hz * se
    demand_bps = demand_mbps * 1e6
    with np.errstate(divide="ignore", over="ignore"):
        need = np.ceil(demand_bps / rate_per_prb)
    need = np.where(np.isfinite(need), need, s.n_prb_total)
    return np.clip(need, 1, s.n_prb_total).astype(np.int64)


def build_graph(s: Scenario, gamma_th_db: float) -> GraphInstance:
    """Assemble the UE graph: two UEs are adjacent when some cell hears
    both above the threshold. Features are the raw [PRB, distance, SINR]
    rows; normalization is applied later with training-split statistics.
    """
    passing = s.sinr_wideband_db > gamma_th_db
    adj = (passing @ passing.T) > 0
    np.fill_diagonal(adj, True)
    features = np.concatenate(
        [s.prb_demand.astype(np.float64), s.distance, s.sinr_wideband_db], axis=1
    )
    return GraphInstance(
        features=features,
        adjacency=adj.astype(np.float64),
        prb_matrix=s.prb_demand.astype(np.float64),
        n_prb_total=s.n_prb_total,
        scenario_ref=f"seed:{s.seed}",
    )


@dataclass(frozen=True)
class FeatureStats:
    """Per-column mean and spread used to z-score node features."""

    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
        )


def feature_stats(graphs) -> FeatureStats:
    """Column statistics pooled over all nodes of the given graphs."""
    stacked = np.concatenate([g.features for g in graphs], axis=0)
    std = stacked.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)  # constant columns stay untouched
    return FeatureStats(mean=stacked.mean(axis=0), std=std)


def normalize_features(g: GraphInstance, stats: FeatureStats) -> GraphInstance:
    feat = (g.features - stats.mean) / stats.std
    if not np.isfinite(feat).all():
        raise ContractError("normalized features contain non-finite values")
    return replace(g, features=feat)


# ---------------------------------------------------------------------------
# dataset serialization: one self-describing record per line


def to_record(s: Scenario, g: GraphInstance, config_digest: str = "") -> dict:
    return {
        "seed": int(s.seed),
        "config_digest": config_digest,
        "bs_xy": s.bs_positions.tolist(),
        "ue_xy": s.ue_positions.tolist(),
        "sinr_db": s.sinr_wideband_db.tolist(),
        "sinr_prb_db": s.sinr_per_prb_db.tolist(),
        "rsrp_dbm": s.rsrp_dbm.tolist(),
        "prb": s.prb_demand.tolist(),
        "adj": g.adjacency.astype(int).tolist(),
        "feat": g.features.tolist(),
    }


def from_record(rec: dict, cfg: ScenarioConfig) -> tuple[Scenario, GraphInstance]:
    """Rebuild the scenario/graph pair; distance comes back from geometry."""
    bs = np.asarray(rec["bs_xy"], dtype=np.float64)
    ue = np.asarray(rec["ue_xy"], dtype=np.float64)
    dh = np.linalg.norm(ue[:, None, :] - bs[None, :, :], axis=2)
    dist = np.sqrt(dh**2 + (cfg.h_tx_m - cfg.h_ue_m) ** 2)
    s = Scenario(
        seed=int(rec["seed"]),
        bs_positions=bs,
        ue_positions=ue,
        distance=dist,
        sinr_wideband_db=np.asarray(rec["sinr_db"], dtype=np.float64),
        sinr_per_prb_db=np.asarray(rec["sinr_prb_db"], dtype=np.float64),
        rsrp_dbm=np.asarray(rec["rsrp_dbm"], dtype=np.float64),
        prb_demand=np.asarray(rec["prb"], dtype=np.int64),
        n_prb_total=cfg.n_prb_total,
    )
    g = GraphInstance(
        features=np.asarray(rec["feat"], dtype=np.float64),
        adjacency=np.asarray(rec["adj"], dtype=np.float64),
        prb_matrix=s.prb_demand.astype(np.float64),
        n_prb_total=cfg.n_prb_total,
        scenario_ref=f"seed:{rec['seed']}",
    )
    return s, g


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_jsonl(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
