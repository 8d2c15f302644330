"""Experiment orchestration: the interval/TTI loop for baseline, training and evaluation runs."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .codebook import PanelConfig, build_codebook, correlation_matrix, write_rho_csv
from .config import ConfigError, SimConfig, dump_config
from .ddqn import Hyperparams, Learner, Mlp, ReplayBuffer, epsilon_at, load_checkpoint, save_checkpoint, train_step
from .measurement import RsrpReport, re_power_offset_db
from .metrics import (MetricsReport, geometric_mean, throughputs, write_cosched_cdf, write_per_mt, write_summary,
                      write_timeseries, write_train_log)
from .policy import BaselinePolicy, QPolicy, assign_interval, close_transitions, compute_rewards
from .scheduler import REC_COLS, run_interval
from .topology import (advance_positions, compute_links, make_layout, place_terminals, rx_power_dbm,
                       shadowing_db)
from .traffic import LatencyStats, TrafficConfig, arrivals_batch, latency_stats

log = logging.getLogger(__name__)

# log-spaced latency histogram used when per-packet records are not kept
HIST_EDGES = np.logspace(-6, 1, 2801)


class PacketQueues:
    """FIFO packet queues of all terminals in one CSR block (every packet has the same size).

    Terminal ``u`` owns slots ``offsets[u]:offsets[u+1]``; ``head[u]`` is its
    oldest unfinished packet with ``head_rem[u]`` bytes left and ``avail[u]``
    marks the first packet that has not arrived yet.
    """

    def __init__(self, n_mt: int, packet_size: int):
        self.n_mt = n_mt
        self.packet_size = packet_size
        self.arr_t = np.zeros(0)
        self.pkt_mt = np.zeros(0, np.int64)
        self.offsets = np.zeros(n_mt + 1, np.int64)
        self.head = np.zeros(n_mt, np.int64)
        self.head_rem = np.full(n_mt, packet_size, np.int64)
        self.avail = np.zeros(n_mt, np.int64)
        self.generated = np.zeros(n_mt, np.int64)

    def add(self, mt: np.ndarray, t: np.ndarray) -> None:
        """Drop finished packets and append new arrivals (sorted by terminal, then time)."""
        keep = np.arange(self.arr_t.size) >= self.head[self.pkt_mt]
        all_mt = np.concatenate([self.pkt_mt[keep], mt])
        all_t = np.concatenate([self.arr_t[keep], t])
        # pending packets precede this interval's arrivals, so a stable sort on terminal keeps time order
        order = np.argsort(all_mt, kind="stable")
        self.pkt_mt, self.arr_t = all_mt[order], all_t[order]
        counts = np.bincount(self.pkt_mt, minlength=self.n_mt)
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.head = self.offsets[:-1].copy()
        self.avail = self.head.copy()
        self.generated += np.bincount(mt, minlength=self.n_mt) * self.packet_size

    def backlog(self) -> np.ndarray:
        n = self.offsets[1:] - self.head
        return np.where(n > 0, self.head_rem + (n - 1) * self.packet_size, 0)


class LatencyLog:
    """Completed-packet latencies, either kept exactly or binned per terminal."""

    def __init__(self, n_mt: int, exact: bool):
        self.n_mt = n_mt
        self.exact = exact
        self.chunks_mt, self.chunks_lat = [], []
        self.hist = None if exact else np.zeros((n_mt, HIST_EDGES.size + 1), np.int64)
        self.total = np.zeros(n_mt)
        self.count = np.zeros(n_mt, np.int64)

    def add(self, mt: np.ndarray, lat: np.ndarray) -> None:
        if lat.size and lat.min() <= 0:
            raise RuntimeError("non-positive packet latency")
        self.total += np.bincount(mt, weights=lat, minlength=self.n_mt)
        self.count += np.bincount(mt, minlength=self.n_mt)
        if self.exact:
            self.chunks_mt.append(mt.astype(np.int32))
            self.chunks_lat.append(lat)
        else:
            np.add.at(self.hist, (mt, np.searchsorted(HIST_EDGES, lat)), 1)

    def _hist_quantile(self, h: np.ndarray, pct: float) -> float:
        n = h.sum()
        k = max(int(np.ceil(pct / 100.0 * n)), 1)
        i = int(np.searchsorted(np.cumsum(h), k))
        lo = HIST_EDGES[max(i - 1, 0)]
        hi = HIST_EDGES[min(i, HIST_EDGES.size - 1)]
        return float(np.sqrt(lo * hi))

    def all_latencies(self) -> np.ndarray:
        return np.concatenate(self.chunks_lat) if self.chunks_lat else np.zeros(0)

    def network_stats(self) -> LatencyStats | None:
        if self.exact:
            return latency_stats(self.all_latencies())
        if self.count.sum() == 0:
            return None
        h = self.hist.sum(axis=0)
        return LatencyStats(float(self.total.sum() / self.count.sum()),
                            *(self._hist_quantile(h, p) for p in (50, 95, 99)))

    def per_mt(self) -> tuple[np.ndarray, np.ndarray]:
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(self.count > 0, self.total / np.maximum(self.count, 1), np.nan)
        p95 = np.full(self.n_mt, np.nan)
        if self.exact:
            lat = self.all_latencies()
            mt = np.concatenate(self.chunks_mt) if self.chunks_mt else np.zeros(0, np.int32)
            order = np.argsort(mt, kind="stable")
            bounds = np.searchsorted(mt[order], np.arange(self.n_mt + 1))
            for u in range(self.n_mt):
                x = lat[order[bounds[u]:bounds[u + 1]]]
                if x.size:
                    s = latency_stats(x)
                    p95[u] = s.p95
        else:
            for u in range(self.n_mt):
                if self.count[u]:
                    p95[u] = self._hist_quantile(self.hist[u], 95)
        return mean, p95

    def cdf_points(self, n: int = 1001) -> tuple[np.ndarray, np.ndarray]:
        q = np.linspace(0.0, 1.0, n)
        if self.exact:
            lat = self.all_latencies()
            if lat.size == 0:
                return np.zeros(0), np.zeros(0)
            return np.quantile(lat, q, method="inverted_cdf"), q
        h = self.hist.sum(axis=0)
        if h.sum() == 0:
            return np.zeros(0), np.zeros(0)
        return np.array([self._hist_quantile(h, max(p * 100, 1e-9)) for p in q]), q


def build_network(cfg: SimConfig):
    """Layout, one codebook per sector and the beam correlation matrix."""
    layout = make_layout(cfg.sites, cfg.inter_site_distance, panels_per_sector=cfg.panels_per_sector,
                         panel_boresights=tuple(cfg.panel_offsets_deg), carrier_freq=cfg.carrier_ghz,
                         bandwidth=cfg.bandwidth_hz, tx_power=cfg.tx_power_dbm,
                         noise_density=cfg.noise_density_dbm_hz, noise_figure=cfg.noise_figure_db,
                         bs_height=cfg.bs_height_m, mt_height=cfg.mt_height_m,
                         shadowing_std=cfg.shadowing_std_db, d_min=cfg.d_min_m)
    grid = (cfg.beam_grid_az, cfg.beam_grid_el) if cfg.beam_grid_az else None
    codebooks = []
    for s in range(layout.n_sectors):
        az0 = layout.sector_azimuth(s)
        panels = [PanelConfig(cfg.elements_per_dim, cfg.element_spacing, az0 + off, cfg.element_gain_dbi,
                              cfg.downtilt_deg, cfg.element_beamwidth_deg or None)
                  for off in cfg.panel_offsets_deg]
        codebooks.append(build_codebook(panels, cfg.beams_per_panel, grid))
    # correlation is rotation invariant, every sector shares sector 0's matrix
    rho = correlation_matrix(codebooks[0])
    return layout, codebooks, rho


def hyperparams(cfg: SimConfig) -> Hyperparams:
    return Hyperparams(gamma=cfg.gamma, learning_rate=cfg.learning_rate, target_sync_period=cfg.target_sync_period,
                       eps_start=cfg.eps_start, eps_end=cfg.eps_end,
                       decay_horizon=max(int(round(cfg.eps_decay_fraction * cfg.n_intervals)), 1),
                       epochs=cfg.epochs, batch_size=cfg.batch_size, replay_size=cfg.replay_size, loss=cfg.loss)


class Simulation:
    """One run of a configuration. ``run()`` returns the :class:`MetricsReport`."""

    def __init__(self, cfg: SimConfig, qnet: Mlp | None = None, keep_latencies: bool | None = None,
                 record_schedule: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.layout, self.codebooks, self.rho = build_network(cfg)
        self.hp = hyperparams(cfg)
        seed = cfg.seed
        if qnet is None and cfg.mode == "eval" and cfg.checkpoint:
            qnet, _ = load_checkpoint(cfg.checkpoint)
        if qnet is not None and tuple(qnet.layer_dims) != tuple(cfg.layer_dims):
            raise ConfigError(f"net_input_dim: checkpoint layer dims {qnet.layer_dims} do not match "
                              f"configuration {cfg.layer_dims}")
        if cfg.mode != "baseline" and qnet is None:
            qnet = Mlp(cfg.layer_dims, np.random.default_rng([seed, 3]))
        self.qnet = qnet
        self.learner = Learner(qnet, self.hp) if cfg.mode == "train" else None
        self.replay = ReplayBuffer(cfg.replay_size, cfg.state_dim) if cfg.mode == "train" else None
        self.rng_policy = np.random.default_rng([seed, 4])
        self.rng_replay = np.random.default_rng([seed, 5])
        self.rng_traffic = np.random.default_rng([seed, 2])
        if cfg.mode == "baseline":
            self.policy = BaselinePolicy()
        else:
            self.policy = QPolicy(qnet, self.rng_policy, 0.0, "rl_train" if cfg.mode == "train" else "rl_eval")
        self.keep_latencies = cfg.mode != "train" if keep_latencies is None else keep_latencies
        self.record_schedule = record_schedule or cfg.debug_dumps
        self.schedule_rows = []
        self.state_rows = []
        self.assignments = []

    def run(self) -> MetricsReport:
        cfg, layout = self.cfg, self.layout
        n_mt, n_sec, n_beams = cfg.mt_count, layout.n_sectors, cfg.n_beams
        m_p, l_p = cfg.panels_per_sector, cfg.beams_per_panel
        n_tti, tti = cfg.ttis_per_interval, cfg.tti_s
        n_int = cfg.n_intervals
        rb_bw, n_rb = cfg.rb_bandwidth, cfg.resource_blocks
        noise_mw = layout.noise_mw(cfg.bandwidth_hz)
        rsrp_off = re_power_offset_db(n_rb) if cfg.rsrp_per_re else 0.0
        traffic = TrafficConfig(cfg.traffic_rate_bps, cfg.packet_size_bytes)

        mts = place_terminals(layout, n_mt, cfg.seed, cfg.mt_speed_kmh, self.codebooks)
        pos = np.array([m.position for m in mts]).reshape(n_mt, 2)
        heading = np.array([m.heading for m in mts])
        speed = np.full(n_mt, cfg.mt_speed_kmh)
        shadow = shadowing_db(cfg.seed, range(n_mt), n_sec, cfg.shadowing_std_db)

        queues = PacketQueues(n_mt, cfg.packet_size_bytes)
        lat = LatencyLog(n_mt, self.keep_latencies)
        avg = np.zeros(n_mt)
        last_beams = np.full((n_sec, m_p), -1, np.int64)
        last_k = np.zeros(n_sec, np.int64)
        delivered = np.zeros(n_mt, np.int64)
        sched = np.zeros(n_mt, np.int64)
        backlogged = np.zeros(n_mt, np.int64)
        cosched = np.zeros(max(m_p, n_mt) + 2, np.int64)
        viol = np.zeros(3, np.int64)
        act = np.zeros((n_sec, n_beams), np.int64)
        h_prev = np.zeros((n_sec, n_beams))
        rec = np.zeros((n_tti * n_sec * m_p if self.record_schedule else 1, REC_COLS))
        rho = np.ascontiguousarray(self.rho)

        n_sec_ts = int(np.ceil(cfg.duration_s))
        ts_bits = np.zeros((n_sec_ts, n_mt))
        ts_act = np.zeros((n_sec_ts, n_mt), np.int64)
        ts_eps = np.full(n_sec_ts, np.nan)
        beam_log = np.zeros((n_int, n_mt), np.int64)
        train_log = {"step": [], "loss": [], "epsilon": [], "replay_size": []}
        reward_stats = {"count": 0, "out_of_range": 0, "min": np.inf, "max": -np.inf}
        prev_log = None
        prev_groups = None

        for i in range(n_int):
            t0 = i * n_tti * tti
            if i > 0:
                pos, heading = advance_positions(pos, heading, speed, cfg.t_bs_ms * 1e-3, layout.region_radius)
            links = compute_links(layout, pos, shadow)
            rx_dbm = rx_power_dbm(layout, links, self.codebooks)
            # same rule as wideband_rx_dbm with codebooks: strongest sweep beam wins
            serving = np.argmax(rx_dbm.max(axis=2), axis=1)
            rx_full = 10.0 ** (rx_dbm / 10.0)

            eps = 0.0
            if cfg.mode == "train":
                eps = epsilon_at(i, self.hp.eps_start, self.hp.eps_end, self.hp.decay_horizon)
                self.policy.epsilon = eps
            sec_idx = int(t0 + 1e-9)
            if sec_idx < n_sec_ts and np.isnan(ts_eps[sec_idx]):
                ts_eps[sec_idx] = eps

            order = np.argsort(-avg, kind="stable")
            reports = {u: RsrpReport.from_raw(u, rx_dbm[u, serving[u]] - rsrp_off, i) for u in range(n_mt)}
            histories = {s: h_prev[s] for s in range(n_sec)}
            assignment, alog = assign_interval(order, reports, histories, serving, self.rho, m_p, self.policy, i)
            beams = np.array([assignment.beams[u] for u in range(n_mt)], np.int64)
            beam_log[i] = beams
            if cfg.debug_dumps:
                self.state_rows.extend((i, u, a, st.flattened) for u, st, a in alog)

            if cfg.mode == "train":
                if prev_log is not None:
                    self._learn(prev_log, prev_groups, delivered_iv, {u: st for u, st, _ in alog}, False,
                                reward_stats, train_log, eps)

            # traffic for this interval; independent of the policy stream
            a_mt, a_t = arrivals_batch(traffic, n_tti, tti, n_mt, self.rng_traffic, t0)
            queues.add(a_mt, a_t)

            groups = {}
            for u in range(n_mt):
                groups.setdefault(int(serving[u]) if cfg.reward_scope == "sector" else 0, []).append(u)
            sector_mts = np.full((n_sec, max(n_mt, 1)), -1, np.int64)
            n_in = np.zeros(n_sec, np.int64)
            for u in range(n_mt):
                s = serving[u]
                sector_mts[s, n_in[s]] = u
                n_in[s] += 1
            sig_full = rx_full[np.arange(n_mt), serving, beams]

            d0, b0 = delivered.copy(), backlogged.copy()
            act[:] = 0
            done_idx = np.zeros(queues.arr_t.size, np.int64)
            done_tti = np.zeros(queues.arr_t.size, np.int64)
            n_done, n_rec = run_interval(
                n_tti, i * n_tti, tti, sector_mts, n_in, beams, sig_full, rx_full, rho,
                cfg.correlation_threshold, l_p, m_p, noise_mw, n_rb, rb_bw, cfg.se_cap, cfg.pf_ema,
                cfg.pf_floor_bps, avg, last_beams, last_k,
                queues.arr_t, queues.offsets, queues.head, queues.head_rem, queues.avail, cfg.packet_size_bytes,
                delivered, sched, backlogged, act, cosched, done_idx, done_tti, 0, rec, 0,
                self.record_schedule, viol)
            if n_done:
                idx = done_idx[:n_done]
                lat.add(queues.pkt_mt[idx], done_tti[:n_done] * tti - queues.arr_t[idx])
            if self.record_schedule and n_rec:
                self.schedule_rows.append(rec[:n_rec].copy())
            if act.max(initial=0) > n_tti:
                raise RuntimeError("beam activation count exceeds the TTIs of one interval")
            h_prev = act / n_tti

            delivered_iv = delivered - d0
            if sec_idx < n_sec_ts:
                ts_bits[sec_idx] += 8.0 * delivered_iv
                ts_act[sec_idx] += backlogged - b0
            prev_log, prev_groups = alog, groups

        if cfg.mode == "train" and prev_log is not None:
            self._learn(prev_log, prev_groups, delivered_iv, None, True, reward_stats, train_log,
                        self.policy.epsilon)

        overall, effective = throughputs(delivered, backlogged, sched, tti)
        mean_lat, p95_lat = lat.per_mt()
        with np.errstate(invalid="ignore", divide="ignore"):
            per_mt_ts = np.where(ts_act > 0, ts_bits / np.maximum(ts_act, 1) / tti, np.nan)
        has = np.any(ts_act > 0, axis=1)
        ts_thpt = np.zeros(n_sec_ts)
        ts_thpt[has] = np.nanmean(per_mt_ts[has], axis=1)
        ts_eps = np.where(np.isnan(ts_eps), 0.0, ts_eps)

        self.latency_log = lat
        return MetricsReport(
            mode=cfg.mode, seed=cfg.seed, duration_s=cfg.duration_s, tti_s=tti,
            overall_bps=overall, effective_bps=effective, mean_latency_s=mean_lat, p95_latency_s=p95_lat,
            scheduled_ttis=sched.copy(), active_ttis=backlogged.copy(), delivered_bytes=delivered.copy(),
            generated_bytes=queues.generated.copy(), backlog_bytes=queues.backlog(),
            gm_overall=geometric_mean(overall), gm_effective=geometric_mean(np.nan_to_num(effective)),
            latency=lat.network_stats(), latency_exact=lat.exact,
            cosched_counts=cosched[:m_p + 1].copy() if cosched[m_p + 1:].sum() == 0 else cosched.copy(),
            ts_t=np.arange(n_sec_ts, dtype=float), ts_thpt_bps=ts_thpt, ts_epsilon=ts_eps,
            beam_log=beam_log,
            violations={"panel": int(viol[0]), "count": int(viol[1]), "rho": int(viol[2])},
            rewards=reward_stats, scheduler_bytes=int(delivered.sum()),
            train_log={k: np.asarray(v) for k, v in train_log.items()},
        )

    def _learn(self, prev_log, groups, delivered_iv, next_states, done, reward_stats, train_log, eps):
        rewards = compute_rewards({u: int(delivered_iv[u]) for u, _, _ in prev_log},
                                  {g: [u for u in m] for g, m in groups.items()})
        r = np.array([x.reward for x in rewards])
        reward_stats["count"] += r.size
        reward_stats["out_of_range"] += int(np.sum((r < 0) | (r > 1)))
        if r.size:
            reward_stats["min"] = min(reward_stats["min"], float(r.min()))
            reward_stats["max"] = max(reward_stats["max"], float(r.max()))
        for e in close_transitions(prev_log, rewards, next_states, done):
            self.replay.add(e)
        for _ in range(self.hp.epochs):
            loss = train_step(self.replay, self.learner, self.rng_replay)
            if loss is not None:
                train_log["step"].append(self.learner.steps)
                train_log["loss"].append(loss)
                train_log["epsilon"].append(eps)
                train_log["replay_size"].append(len(self.replay))


def run_experiment(cfg: SimConfig, qnet: Mlp | None = None, out_dir=None, keep_latencies: bool | None = None,
                   record_schedule: bool = False) -> MetricsReport:
    """Run one configuration; write every output file when ``out_dir`` is given."""
    sim = Simulation(cfg, qnet, keep_latencies, record_schedule)
    report = sim.run()
    report.qnet = sim.qnet
    report.schedule = np.concatenate(sim.schedule_rows) if sim.schedule_rows else np.zeros((0, REC_COLS))
    if out_dir is not None:
        write_outputs(sim, report, Path(out_dir))
    return report


def write_outputs(sim: Simulation, report: MetricsReport, out: Path) -> None:
    cfg = sim.cfg
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    write_per_mt(report, out / "per_mt_metrics.csv")
    write_timeseries(report, out / "timeseries.csv")
    write_cosched_cdf(report, out / "coscheduled_cdf.csv")
    write_summary(report, out / "summary.txt")
    x, q = sim.latency_log.cdf_points()
    with open(out / "latency.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["latency_ms", "cdf"])
        w.writerows([f"{a * 1e3:.6g}", f"{b:.6g}"] for a, b in zip(x, q))
    with open(out / "assignments.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "mt_id", "beam"])
        for i, row in enumerate(report.beam_log):
            w.writerows((i, u, int(b)) for u, b in enumerate(row))
    if cfg.mode == "train":
        write_train_log(report, out / "train.csv")
    if sim.qnet is not None and cfg.mode == "train":
        save_checkpoint(sim.qnet, out / "qnet.ckpt", sim.hp)
    if cfg.export_rho:
        write_rho_csv(sim.rho, out / "rho.csv")
    if cfg.debug_dumps:
        with open(out / "states.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            n = cfg.n_beams
            w.writerow(["interval", "mt_id", "action"] + [f"z{b}" for b in range(n)] + [f"h{b}" for b in range(n)]
                       + [f"c{b}" for b in range(n)])
            for i, u, a, s in sim.state_rows:
                w.writerow([i, u, a] + [f"{v:.6g}" for v in s])
        with open(out / "schedule.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tti", "sector", "mt_id", "beam", "rbs", "sinr_db", "bytes"])
            for r in report.schedule:
                w.writerow([int(r[0]), int(r[1]), int(r[2]), int(r[3]), int(r[4]), f"{r[5]:.6g}", int(r[6])])
