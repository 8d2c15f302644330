"""Cell layout, terminal placement/mobility and the large-scale channel.

Geometry is 2D with fixed antenna heights. Azimuths are degrees measured
counter-clockwise from +x; elevations are degrees above the horizon (a
terminal below a mast has a negative elevation).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

SECTOR_BORESIGHTS = (30.0, 150.0, 270.0)
D_MIN = 10.0


@dataclass(frozen=True)
class NetworkLayout:
    sites: np.ndarray
    inter_site_distance: float = 200.0
    sectors_per_site: int = 3
    sector_boresights: tuple = SECTOR_BORESIGHTS
    panels_per_sector: int = 3
    panel_boresights: tuple = (-30.0, 0.0, 30.0)
    carrier_freq: float = 30.0
    bandwidth: float = 200e6
    tx_power: float = 40.0
    noise_density: float = -174.0
    noise_figure: float = 3.0
    bs_height: float = 25.0
    mt_height: float = 1.5
    shadowing_std: float = 4.0
    d_min: float = D_MIN
    region_radius: float = field(default=0.0)

    def __post_init__(self):
        sites = np.atleast_2d(np.asarray(self.sites, dtype=float))
        object.__setattr__(self, "sites", sites)
        if self.inter_site_distance <= 0:
            raise ValueError("inter_site_distance must be positive")
        if self.panels_per_sector < 1:
            raise ValueError("panels_per_sector must be >= 1")
        if len(self.panel_boresights) != self.panels_per_sector:
            raise ValueError("need one boresight offset per panel")
        if len(self.sector_boresights) != self.sectors_per_site:
            raise ValueError("need one boresight per sector")
        b = np.sort(np.mod(self.sector_boresights, 360.0))
        gaps = np.diff(np.append(b, b[0] + 360.0))
        if not np.allclose(gaps, 360.0 / self.sectors_per_site):
            raise ValueError("sector boresights must be evenly spaced")
        if self.region_radius <= 0:
            rings = 0 if len(sites) == 1 else 1
            r = rings * self.inter_site_distance + self.inter_site_distance / np.sqrt(3)
            object.__setattr__(self, "region_radius", float(r))

    @property
    def n_sectors(self) -> int:
        return len(self.sites) * self.sectors_per_site

    def sector_site(self, sector: int) -> int:
        return sector // self.sectors_per_site

    def sector_azimuth(self, sector: int) -> float:
        return float(self.sector_boresights[sector % self.sectors_per_site])

    def sector_positions(self) -> np.ndarray:
        return np.repeat(self.sites, self.sectors_per_site, axis=0)

    def noise_mw(self, bandwidth: float | None = None) -> float:
        w = self.bandwidth if bandwidth is None else bandwidth
        return 10 ** ((self.noise_density + 10 * np.log10(w) + self.noise_figure) / 10)


def hex_sites(n_sites: int, isd: float) -> np.ndarray:
    if n_sites == 1:
        return np.zeros((1, 2))
    if n_sites == 7:
        ang = np.deg2rad(30.0 + 60.0 * np.arange(6))
        ring = isd * np.column_stack([np.cos(ang), np.sin(ang)])
        return np.vstack([np.zeros((1, 2)), ring])
    raise ValueError(f"unsupported site count {n_sites} (1 or 7)")


def make_layout(n_sites: int = 7, isd: float = 200.0, **kw) -> NetworkLayout:
    return NetworkLayout(sites=hex_sites(n_sites, isd), inter_site_distance=isd, **kw)


# hexagonal service region, flat-top, centred at the origin
_EDGE_NORMALS = np.column_stack([np.cos(np.deg2rad(30.0 + 60.0 * np.arange(6))),
                                 np.sin(np.deg2rad(30.0 + 60.0 * np.arange(6)))])


def _apothem(radius: float) -> float:
    return radius * np.cos(np.pi / 6)


def inside_region(points, radius: float) -> np.ndarray:
    p = np.atleast_2d(points)
    return np.all(p @ _EDGE_NORMALS.T <= _apothem(radius), axis=1)


@dataclass
class MobileTerminal:
    id: int
    position: np.ndarray
    speed: float  # km/h
    heading: float  # radians
    serving_sector: int = -1
    serving_beam: int = -1


@dataclass(frozen=True)
class LinkState:
    """Per (MT, sector) large-scale quantities for one snapshot of positions."""

    pathloss: np.ndarray  # dB, (U, S)
    shadowing: np.ndarray  # dB, (U, S)
    azimuth: np.ndarray  # deg, (U, S), global frame
    elevation: np.ndarray  # deg, (U, S)


def pathloss_db(distance, freq):
    """UMa-LOS style pathloss ``28 + 22 log10(d) + 20 log10(f_GHz)``.

    Distances below ``D_MIN`` are clamped.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d < D_MIN):
        log.debug("clamping %d distance(s) below %.1f m", int(np.sum(d < D_MIN)), D_MIN)
        d = np.maximum(d, D_MIN)
    out = 28.0 + 22.0 * np.log10(d) + 20.0 * np.log10(freq)
    return float(out) if out.ndim == 0 else out


def shadowing_db(seed: int, mt_ids, n_sectors: int, std: float) -> np.ndarray:
    """Log-normal shadowing, one frozen draw per (seed, MT id, sector id)."""
    out = np.empty((len(mt_ids), n_sectors))
    for i, u in enumerate(mt_ids):
        for s in range(n_sectors):
            out[i, s] = np.random.default_rng([seed, 7, int(u), s]).normal(0.0, std)
    return out


def element_attenuation_db(az_local, el_local, beamwidth=65.0, max_att=30.0):
    """Single-element pattern loss (dB, <= 0), horizontal plus vertical cut."""
    if beamwidth is None:
        return np.zeros(np.broadcast(az_local, el_local).shape)
    a_h = np.minimum(12.0 * (np.asarray(az_local) / beamwidth) ** 2, max_att)
    a_v = np.minimum(12.0 * (np.asarray(el_local) / beamwidth) ** 2, max_att)
    return -np.minimum(a_h + a_v, max_att)


def wrap_deg(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


def compute_links(layout: NetworkLayout, positions: np.ndarray, shadowing: np.ndarray) -> LinkState:
    pos = np.atleast_2d(positions)
    bs = layout.sector_positions()
    delta = pos[:, None, :] - bs[None, :, :]
    d2 = np.hypot(delta[..., 0], delta[..., 1])
    dh = layout.bs_height - layout.mt_height
    d3 = np.hypot(np.maximum(d2, layout.d_min), dh)
    az = np.rad2deg(np.arctan2(delta[..., 1], delta[..., 0]))
    el = -np.rad2deg(np.arctan2(dh, np.maximum(d2, 1e-9)))
    return LinkState(pathloss=pathloss_db(d3, layout.carrier_freq), shadowing=np.asarray(shadowing),
                     azimuth=az, elevation=el)


def rx_power_dbm(layout: NetworkLayout, links: LinkState, codebooks) -> np.ndarray:
    """Received power of every beam of every sector at full transmit power, (U, S, B).

    ``codebooks[s]`` must provide ``gain_matrix(az, el)`` for sector ``s``.
    """
    n_mt = links.azimuth.shape[0]
    out = np.empty((n_mt, layout.n_sectors, len(codebooks[0])))
    for s, cb in enumerate(codebooks):
        g = cb.gain_matrix(links.azimuth[:, s], links.elevation[:, s])
        out[:, s, :] = layout.tx_power + g - (links.pathloss[:, s] + links.shadowing[:, s])[:, None]
    return out


def wideband_rx_dbm(layout: NetworkLayout, links: LinkState, codebooks=None) -> np.ndarray:
    """Sector-level received power used for attachment, (U, S).

    With codebooks this is the strongest sweep beam of each sector; without,
    the best panel's element pattern stands in for the beam gain.
    """
    if codebooks is not None:
        return rx_power_dbm(layout, links, codebooks).max(axis=2)
    sec_az = np.array([layout.sector_azimuth(s) for s in range(layout.n_sectors)])
    best = np.full(links.azimuth.shape, -np.inf)
    for off in layout.panel_boresights:
        att = element_attenuation_db(wrap_deg(links.azimuth - (sec_az + off)[None, :]), 0.0)
        best = np.maximum(best, att)
    return layout.tx_power + best - links.pathloss - links.shadowing


def place_terminals(layout: NetworkLayout, count: int, seed: int, speed: float = 3.0,
                    codebooks=None) -> list[MobileTerminal]:
    """Drop ``count`` terminals uniformly in the service hexagon and attach each one."""
    if count == 0:
        return []
    rng = np.random.default_rng([seed, 1])
    r = layout.region_radius
    pts = np.empty((0, 2))
    while len(pts) < count:
        cand = rng.uniform(-r, r, size=(2 * count, 2))
        pts = np.vstack([pts, cand[inside_region(cand, r)]])
    pts = pts[:count]
    headings = rng.uniform(0.0, 2 * np.pi, size=count)
    shadow = shadowing_db(seed, range(count), layout.n_sectors, layout.shadowing_std)
    links = compute_links(layout, pts, shadow)
    serving = np.argmax(wideband_rx_dbm(layout, links, codebooks), axis=1)
    return [MobileTerminal(i, pts[i].copy(), speed, float(headings[i]), int(serving[i])) for i in range(count)]


def advance_positions(pos: np.ndarray, heading: np.ndarray, speed_kmh, dt: float, radius: float):
    """Vectorised straight-line motion with specular reflection at the hexagon edge."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    pos = np.array(pos, dtype=float, ndmin=2)
    heading = np.array(heading, dtype=float, ndmin=1)
    v = np.column_stack([np.cos(heading), np.sin(heading)])
    step = np.asarray(speed_kmh, dtype=float)[..., None] / 3.6 * dt
    a = _apothem(radius)
    # sub-steps no longer than the apothem need at most a couple of reflections each
    n_sub = max(1, int(np.ceil(float(np.max(step, initial=0.0)) / a)))
    new = pos.copy()
    for _ in range(n_sub):
        new += v * (step / n_sub)
        for _ in range(12):
            proj = new @ _EDGE_NORMALS.T - a
            out = proj > 0
            if not out.any():
                break
            k = np.argmax(proj, axis=1)
            rows = np.flatnonzero(out.any(axis=1))
            n = _EDGE_NORMALS[k[rows]]
            over = proj[rows, k[rows]]
            new[rows] -= 2 * (over + 1e-9)[:, None] * n
            v[rows] -= 2 * np.sum(v[rows] * n, axis=1)[:, None] * n
        else:
            raise RuntimeError("reflection did not converge")
    return new, np.arctan2(v[:, 1], v[:, 0])


def step_mobility(mt: MobileTerminal, dt: float, region_radius: float) -> MobileTerminal:
    pos, hd = advance_positions(mt.position, [mt.heading], [mt.speed], dt, region_radius)
    return replace(mt, position=pos[0], heading=float(hd[0]))
