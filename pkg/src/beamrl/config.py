"""Simulation configuration: dataclass, presets and the flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

MODES = ("train", "eval", "baseline")


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    # deployment
    sites: int = 7
    sectors_per_site: int = 3
    inter_site_distance: float = 200.0
    panels_per_sector: int = 3
    beams_per_panel: int = 16
    beam_grid_az: int = 0  # 0 -> automatic factorisation
    beam_grid_el: int = 0
    elements_per_dim: int = 8
    element_spacing: float = 0.5
    element_gain_dbi: float = 8.0
    element_beamwidth_deg: float = 65.0
    panel_offsets_deg: tuple = (-30.0, 0.0, 30.0)
    downtilt_deg: float = 10.0
    bs_height_m: float = 25.0
    mt_height_m: float = 1.5
    carrier_ghz: float = 30.0
    bandwidth_hz: float = 200e6
    scs_khz: float = 60.0
    n_rb: int = 0  # 0 -> floor(bandwidth / (12 * scs))
    tx_power_dbm: float = 40.0
    noise_figure_db: float = 3.0
    noise_density_dbm_hz: float = -174.0
    shadowing_std_db: float = 4.0
    d_min_m: float = 10.0
    rsrp_per_re: bool = True  # report RSRP per resource element rather than full-band power
    # terminals and traffic
    mt_count: int = 210
    mt_speed_kmh: float = 3.0
    traffic_rate_bps: float = 21e6
    packet_size_bytes: int = 600
    # radio resource management
    t_bs_ms: float = 40.0
    correlation_threshold: float = 0.4
    se_cap: float = 7.8
    pf_ema: float = 0.01
    pf_floor_bps: float = 1e3
    reward_scope: str = "sector"
    # learning
    net_input_dim: int = 0  # 0 -> 3 * panels_per_sector * beams_per_panel
    net_hidden: tuple = (128, 256)
    batch_size: int = 32
    replay_size: int = 5000
    learning_rate: float = 1e-4
    epochs: int = 4
    gamma: float = 0.9
    target_sync_period: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    loss: str = "mse"
    # run control
    seed: int = 1
    duration_s: float = 60.0
    mode: str = "baseline"
    output_dir: str = "out"
    checkpoint: str = ""
    debug_dumps: bool = False
    export_rho: bool = False

    @property
    def n_beams(self) -> int:
        return self.panels_per_sector * self.beams_per_panel

    @property
    def tti_s(self) -> float:
        # 14-symbol slot
        return 1e-3 * 15.0 / self.scs_khz

    @property
    def ttis_per_interval(self) -> int:
        return int(round(self.t_bs_ms * 1e-3 / self.tti_s))

    @property
    def n_intervals(self) -> int:
        return int(round(self.duration_s * 1e3 / self.t_bs_ms))

    @property
    def rb_bandwidth(self) -> float:
        return 12 * self.scs_khz * 1e3

    @property
    def resource_blocks(self) -> int:
        return self.n_rb if self.n_rb > 0 else int(self.bandwidth_hz // self.rb_bandwidth)

    @property
    def state_dim(self) -> int:
        return 3 * self.n_beams

    @property
    def layer_dims(self) -> tuple:
        return (self.state_dim, *self.net_hidden, self.n_beams)

    def replace(self, **kw) -> "SimConfig":
        cfg = dataclasses.replace(self, **kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        errs = []

        def need(cond, name, msg):
            if not cond:
                errs.append(f"{name}: {msg} (got {getattr(self, name)!r})")

        for name in ("sites", "sectors_per_site", "panels_per_sector", "beams_per_panel", "elements_per_dim",
                     "batch_size", "replay_size", "epochs", "target_sync_period", "packet_size_bytes"):
            need(getattr(self, name) >= 1, name, "must be >= 1")
        for name in ("inter_site_distance", "element_spacing", "carrier_ghz", "bandwidth_hz", "scs_khz",
                     "t_bs_ms", "duration_s", "learning_rate", "d_min_m", "se_cap"):
            need(getattr(self, name) > 0, name, "must be positive")
        for name in ("mt_count", "mt_speed_kmh", "traffic_rate_bps", "shadowing_std_db", "n_rb", "beam_grid_az",
                     "beam_grid_el", "net_input_dim", "pf_floor_bps"):
            need(getattr(self, name) >= 0, name, "must be non-negative")
        need(self.sites in (1, 7), "sites", "must be 1 or 7")
        need(self.mode in MODES, "mode", f"must be one of {MODES}")
        need(self.loss in ("mse", "huber"), "loss", "must be mse or huber")
        need(self.reward_scope in ("sector", "network"), "reward_scope", "must be sector or network")
        need(0.0 <= self.gamma < 1.0, "gamma", "must lie in [0, 1)")
        need(0.0 <= self.correlation_threshold <= 1.0, "correlation_threshold", "must lie in [0, 1]")
        need(0.0 < self.pf_ema <= 1.0, "pf_ema", "must lie in (0, 1]")
        need(0.0 <= self.eps_end <= self.eps_start <= 1.0, "eps_start", "need 0 <= eps_end <= eps_start <= 1")
        need(0.0 < self.eps_decay_fraction <= 1.0, "eps_decay_fraction", "must lie in (0, 1]")
        need(len(self.panel_offsets_deg) == self.panels_per_sector, "panel_offsets_deg",
             "needs one entry per panel")
        need(all(h >= 1 for h in self.net_hidden), "net_hidden", "hidden widths must be >= 1")
        need(self.net_input_dim in (0, self.state_dim), "net_input_dim",
             f"must equal 3 * panels_per_sector * beams_per_panel = {self.state_dim}")
        g_az, g_el = self.beam_grid_az, self.beam_grid_el
        if g_az or g_el:
            need(g_az * g_el == self.beams_per_panel, "beam_grid_az", "beam_grid_az * beam_grid_el must equal L_p")
        need(abs(self.ttis_per_interval * self.tti_s - self.t_bs_ms * 1e-3) < 1e-9, "t_bs_ms",
             "must be a whole number of TTIs")
        need(abs(self.n_intervals * self.t_bs_ms - self.duration_s * 1e3) < 1e-6, "duration_s",
             "must be a whole number of beam-switching intervals")
        if errs:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))


def desk_preset(**kw) -> SimConfig:
    """One three-sector site, 3 panels x 8 beams, 24 terminals."""
    base = dict(sites=1, beams_per_panel=8, mt_count=24, duration_s=60.0)
    base.update(kw)
    cfg = SimConfig(**base)
    cfg.validate()
    return cfg


def full_preset(**kw) -> SimConfig:
    """Seven three-sector sites, 3 panels x 16 beams, 210 terminals."""
    cfg = SimConfig(**kw)
    cfg.validate()
    return cfg


PRESETS = {"desk": desk_preset, "full": full_preset}


def _parse_value(f: dataclasses.Field, text: str):
    text = text.strip()
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            items = [x for x in text.strip("()[] ").split(",") if x.strip()]
            elem = type(f.default[0]) if f.default else float
            return tuple(elem(x) for x in items)
        return text.strip("\"'")
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse {text!r} as {kind}") from None


def parse_config(text: str, base: SimConfig | None = None) -> SimConfig:
    """Read ``key = value`` lines (``#`` comments). ``preset = desk|full`` selects the defaults."""
    known = {f.name: f for f in fields(SimConfig)}
    values, unknown = {}, []
    preset = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        if key == "preset":
            preset = val.strip()
            if preset not in PRESETS:
                raise ConfigError(f"preset: unknown preset {preset!r} (choose from {sorted(PRESETS)})")
            continue
        if key not in known:
            unknown.append(key)
            continue
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = _parse_value(known[key], val)
    if unknown:
        raise ConfigError("unknown configuration keys: " + ", ".join(unknown))
    if base is None:
        base = PRESETS[preset]() if preset else SimConfig()
    cfg = dataclasses.replace(base, **values)
    cfg.validate()
    return cfg


def load_config(path) -> SimConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: SimConfig) -> str:
    out = []
    for f in fields(SimConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"
