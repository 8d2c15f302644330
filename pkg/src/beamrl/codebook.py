"""DFT grid-of-beams codebooks on square planar panels and beam cross-correlation."""
from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .topology import element_attenuation_db, wrap_deg

PATTERN_FLOOR_DB = -50.0


@dataclass(frozen=True)
class PanelConfig:
    elements_per_dim: int = 8
    element_spacing: float = 0.5  # wavelengths
    boresight_azimuth: float = 0.0  # deg, global frame
    element_gain: float = 5.0  # dBi at element boresight
    downtilt: float = 0.0  # deg, positive tilts the panel towards the ground
    element_beamwidth: float | None = 65.0  # None -> isotropic element

    def __post_init__(self):
        if self.elements_per_dim < 1:
            raise ValueError("elements_per_dim must be >= 1")
        if self.element_spacing <= 0:
            raise ValueError("element_spacing must be positive")


@dataclass(frozen=True, eq=False)
class Beam:
    panel: int
    local_index: int
    global_index: int
    steering_weights: np.ndarray
    pointing: tuple  # (azimuth, elevation) deg, global frame
    panel_cfg: PanelConfig = field(repr=False, default_factory=PanelConfig)


def encode_beam(panel: int, local: int, beams_per_panel: int) -> int:
    return panel * beams_per_panel + local


def decode_beam(b: int, beams_per_panel: int) -> tuple[int, int]:
    return divmod(b, beams_per_panel)


def default_grid(beams_per_panel: int) -> tuple[int, int]:
    """Azimuth-dominant factorisation: two elevation rows when possible."""
    if beams_per_panel % 2 == 0 and beams_per_panel >= 4:
        return beams_per_panel // 2, 2
    return beams_per_panel, 1


def _dft_points(n: int, count: int) -> np.ndarray:
    # central `count` points of the (half-bin rotated) n-point DFT, in units of 1/n
    idx = np.arange(n) - (n - 1) / 2.0
    start = (n - count) // 2
    return idx[start:start + count] / n


def _element_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    m, k = np.meshgrid(np.arange(n) - (n - 1) / 2.0, np.arange(n) - (n - 1) / 2.0, indexing="ij")
    return m.ravel(), k.ravel()


def array_response(panel: PanelConfig, az, el) -> np.ndarray:
    """Unit-norm array response for global angles, shape (n_points, N^2)."""
    az = np.atleast_1d(np.asarray(az, dtype=float))
    el = np.atleast_1d(np.asarray(el, dtype=float))
    phi = np.deg2rad(wrap_deg(az - panel.boresight_azimuth))
    theta = np.deg2rad(el + panel.downtilt)
    m, k = _element_grid(panel.elements_per_dim)
    d = panel.element_spacing
    ph = 2 * np.pi * d * (np.outer(np.sin(phi) * np.cos(theta), m) + np.outer(np.sin(theta), k))
    return np.exp(1j * ph) / panel.elements_per_dim


def build_codebook(panels: Sequence[PanelConfig], beams_per_panel: int, grid: tuple[int, int] | None = None
                   ) -> "Codebook":
    """One DFT grid of beams per panel; beam ``b = p * L_p + j``, az-major local order."""
    l_az, l_el = grid if grid is not None else default_grid(beams_per_panel)
    if l_az * l_el != beams_per_panel:
        raise ValueError(f"grid {l_az}x{l_el} does not factor L_p={beams_per_panel}")
    beams = []
    for p, cfg in enumerate(panels):
        n = cfg.elements_per_dim
        if l_az > n or l_el > n:
            raise ValueError(f"grid {l_az}x{l_el} exceeds the {n}x{n} panel")
        m, k = _element_grid(n)
        for ia, fu in enumerate(_dft_points(n, l_az)):
            for ie, fv in enumerate(_dft_points(n, l_el)):
                w = np.exp(2j * np.pi * (m * fu + k * fv)) / n
                v = fv / cfg.element_spacing
                theta = np.arcsin(np.clip(v, -1, 1))
                u = fu / cfg.element_spacing / np.cos(theta)
                phi = np.arcsin(np.clip(u, -1, 1))
                pointing = (float(wrap_deg(np.rad2deg(phi) + cfg.boresight_azimuth)),
                            float(np.rad2deg(theta) - cfg.downtilt))
                j = ia * l_el + ie
                beams.append(Beam(p, j, encode_beam(p, j, beams_per_panel), w, pointing, cfg))
    return Codebook(tuple(beams), tuple(panels), beams_per_panel, (l_az, l_el))


@dataclass(frozen=True, eq=False)
class Codebook(Sequence):
    beams: tuple
    panels: tuple
    beams_per_panel: int
    grid: tuple

    def __len__(self):
        return len(self.beams)

    def __getitem__(self, i):
        return self.beams[i]

    @property
    def n_panels(self) -> int:
        return len(self.panels)

    def panel_of(self, b):
        return np.asarray(b) // self.beams_per_panel

    def gain_matrix(self, az, el) -> np.ndarray:
        """Gain in dBi of every beam towards each (az, el) point, shape (n_points, B)."""
        az = np.atleast_1d(np.asarray(az, dtype=float))
        el = np.broadcast_to(np.asarray(el, dtype=float), az.shape)
        out = np.empty((az.size, len(self.beams)))
        lp = self.beams_per_panel
        for p, (cfg, w) in enumerate(zip(self.panels, self._panel_weights)):
            out[:, p * lp:(p + 1) * lp] = _gain_db(cfg, w, az.ravel(), el.ravel())
        return out

    @cached_property
    def _panel_weights(self) -> list[np.ndarray]:
        lp = self.beams_per_panel
        return [np.stack([b.steering_weights for b in self.beams[p * lp:(p + 1) * lp]], axis=1)
                for p in range(len(self.panels))]

    def rotated(self, degrees: float) -> "Codebook":
        """Same codebook with every panel turned by ``degrees`` in azimuth."""
        panels = [PanelConfig(c.elements_per_dim, c.element_spacing, c.boresight_azimuth + degrees,
                              c.element_gain, c.downtilt, c.element_beamwidth) for c in self.panels]
        return build_codebook(panels, self.beams_per_panel, self.grid)


def _gain_db(cfg: PanelConfig, weights: np.ndarray, az, el) -> np.ndarray:
    a = array_response(cfg, az, el)
    af = np.abs(a.conj() @ weights) ** 2 * cfg.elements_per_dim ** 2
    att = element_attenuation_db(wrap_deg(np.asarray(az) - cfg.boresight_azimuth),
                                 np.asarray(el) + cfg.downtilt, cfg.element_beamwidth)
    return 10 * np.log10(np.maximum(af, 1e-30)) + cfg.element_gain + np.reshape(att, (-1, 1))


def beam_gain_dbi(beam: Beam, azimuth, elevation):
    g = _gain_db(beam.panel_cfg, beam.steering_weights[:, None], azimuth, elevation)[:, 0]
    return float(g[0]) if np.ndim(azimuth) == 0 and np.ndim(elevation) == 0 else g


@dataclass(frozen=True)
class AngularGrid:
    az_step: float = 1.0
    el_step: float = 1.0
    el_span: float = 30.0

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        az = np.arange(-180.0, 180.0, self.az_step)
        el = np.arange(-self.el_span, self.el_span + 1e-9, self.el_step)
        a, e = np.meshgrid(az, el, indexing="ij")
        return a.ravel(), e.ravel()


def _patterns(gains_db: np.ndarray) -> np.ndarray:
    # linear power patterns, one column per beam, floored relative to each peak
    g = 10 ** ((gains_db - gains_db.max(axis=0, keepdims=True)) / 10)
    return np.maximum(g, 10 ** (PATTERN_FLOOR_DB / 10))


def overlap(g_b: np.ndarray, g_j: np.ndarray) -> float:
    return float(np.dot(g_b, g_j) / np.sqrt(np.dot(g_b, g_b) * np.dot(g_j, g_j)))


def cross_correlation(beam_b: Beam, beam_j: Beam, grid: AngularGrid = AngularGrid()) -> float:
    if beam_b is beam_j:
        return 1.0
    az, el = grid.points()
    g = _patterns(np.column_stack([beam_gain_dbi(beam_b, az, el), beam_gain_dbi(beam_j, az, el)]))
    return min(1.0, max(0.0, overlap(g[:, 0], g[:, 1])))


def correlation_matrix(codebook: Codebook, grid: AngularGrid = AngularGrid()) -> np.ndarray:
    """B x B normalised pattern overlap; unit diagonal, symmetric, in [0, 1]."""
    az, el = grid.points()
    g = _patterns(codebook.gain_matrix(az, el))
    gram = g.T @ g
    norm = np.sqrt(np.diag(gram))
    rho = gram / np.outer(norm, norm)
    rho = np.clip(0.5 * (rho + rho.T), 0.0, 1.0)
    np.fill_diagonal(rho, 1.0)
    return rho


def write_rho_csv(rho: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for b in range(rho.shape[0]):
            for j in range(rho.shape[1]):
                w.writerow([b, j, f"{rho[b, j]:.6f}"])
