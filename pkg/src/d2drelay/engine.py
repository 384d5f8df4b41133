"""Drop orchestration and the subframe loop of the relay system."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import LinkTable, build_link_table, generate_shadow_field
from .config import ScenarioConfig
from .deployment import ROLE_DL, ROLE_UL, NetworkLayout, associate, build_layout, drop_ues
from .mac import PfState, build_conflict_graph, pf_select, yield_decisions
from .metrics import DropMetrics, MetricsAccumulator
from .power import access_tx_power, db2lin, lin2db, rate_from_sinr, sinr_dl, ul_tx_power
from .relaying import (
    NO_RELAY,
    ContractViolation,
    RateEstimate,
    RelayAssignment,
    assign_relays,
    buffer_step,
    prune_relays,
)

log = logging.getLogger(__name__)

LINK_STATES = ("transmitting", "yielded", "gated-halfduplex", "gated-buffer", "gated-radio")


class HalfDuplexViolation(ContractViolation):
    pass


# ---------------------------------------------------------------------------
# RNG streams and world construction


@dataclass(frozen=True)
class DropStreams:
    layout: np.random.Generator
    shadow: np.random.Generator
    mac: np.random.Generator
    study: np.random.Generator


def drop_streams(seed: int, drop: int) -> DropStreams:
    """Independent generators for one drop; identical across modes for paired comparisons."""
    ss = np.random.SeedSequence(seed, spawn_key=(drop,))
    return DropStreams(*(np.random.default_rng(s) for s in ss.spawn(4)))


@dataclass
class World:
    """Static large-scale state of one drop."""

    cfg: ScenarioConfig
    layout: NetworkLayout
    table: LinkTable
    shadow: object
    dl_sinr: np.ndarray  # dB, capped, all sectors transmitting
    coupling_loss: np.ndarray  # dB to the serving sector
    p_ul: np.ndarray  # dBm, full-band UL power
    p_acc: np.ndarray  # dBm, access-link power


def build_world(cfg: ScenarioConfig, streams: DropStreams) -> World:
    dep, ch = cfg.deployment, cfg.channel
    layout = build_layout(dep.isd, dep.tiers, dep.enb_height, dep.ue_height)
    layout = drop_ues(layout, cfg.idle_per_sector, dep.dl_active_per_sector, dep.ul_active_per_sector,
                      streams.layout, dep.max_ues_per_sector)
    shadow = generate_shadow_field(layout.ue_positions, layout, ch.shadow_sigma, ch.d_corr, streams.shadow,
                                   ch.cross_corr, ch.dense_limit, ch.grid_flag, ch.grid_spacing or None)
    table = build_link_table(layout, shadow, ch.antenna)
    layout = layout.with_serving(associate(table.wan_gain))
    table = LinkTable(layout, table.wan_gain)
    rows = np.arange(layout.n_ues)
    cl = -table.wan_gain[rows, layout.serving_sector]
    return World(
        cfg=cfg,
        layout=layout,
        table=table,
        shadow=shadow,
        dl_sinr=sinr_dl(table.wan_gain, layout.serving_sector, cfg.power),
        coupling_loss=cl,
        p_ul=ul_tx_power(cl, cfg.power.rbs_fullband, cfg.power),
        p_acc=access_tx_power(cl, cfg.power),
    )


# ---------------------------------------------------------------------------
# relay-system simulator


@dataclass
class _Flows:
    """One traffic direction: a flow per active UE."""

    edge: np.ndarray
    sector: np.ndarray
    relay: np.ndarray
    level: np.ndarray
    total_in: np.ndarray
    total_out: np.ndarray
    direct_bits: np.ndarray
    relay_bits: np.ndarray
    sinr_sum: np.ndarray
    sinr_count: np.ndarray
    grants: np.ndarray  # warm-up grant counter

    @classmethod
    def create(cls, edges: np.ndarray, sectors: np.ndarray, relays: np.ndarray) -> "_Flows":
        n = len(edges)
        z = lambda: np.zeros(n)  # noqa: E731
        return cls(edges, sectors, relays, z(), z(), z(), z(), z(), z(), z(), z())

    @property
    def relayed(self) -> np.ndarray:
        return self.relay != NO_RELAY


@dataclass
class TraceRecorder:
    grants: list = field(default_factory=list)
    links: list = field(default_factory=list)
    assignments: list = field(default_factory=list)  # after pruning
    dl_sinr: np.ndarray | None = None


class RelaySimulator:
    """Subframe-level simulation of one drop in baseline, relay or relay-im mode."""

    def __init__(self, world: World, rng: np.random.Generator, trace: TraceRecorder | None = None):
        self.world = world
        self.cfg = world.cfg
        self.rng = rng
        self.trace = trace
        # whole bits only, so buffer bookkeeping is exact in floating point
        self.capacity = float(np.floor(self.cfg.buffer_capacity))
        lay = world.layout
        self.n_sec = lay.n_sectors
        pc = self.cfg.power
        self.noise_enb = db2lin(pc.enb_noise)
        self.noise_ue = db2lin(pc.ue_noise)

        if self.cfg.mode == "baseline":
            self.assignments = [RelayAssignment(int(u), NO_RELAY, "DL" if lay.ue_roles[u] == ROLE_DL else "UL")
                                for u in np.flatnonzero(lay.ue_roles != 0)]
        else:
            rc = self.cfg.relay
            self.assignments = assign_relays(world.table, world.dl_sinr, world.p_acc, rc.p_acc_max,
                                             rc.same_sector, rc.idle_only)
        by_edge = {a.edge_ue: a.relay_ue for a in self.assignments}
        dl_edges = np.flatnonzero(lay.ue_roles == ROLE_DL)
        ul_edges = np.flatnonzero(lay.ue_roles == ROLE_UL)
        self.dl = _Flows.create(dl_edges, lay.serving_sector[dl_edges],
                                np.array([by_edge[u] for u in dl_edges], dtype=np.int64))
        self.ul = _Flows.create(ul_edges, lay.serving_sector[ul_edges],
                                np.array([by_edge[u] for u in ul_edges], dtype=np.int64))

        # compact node space: every active UE plus every relay
        relays = np.concatenate([self.dl.relay, self.ul.relay])
        self.nodes = np.unique(np.concatenate([dl_edges, ul_edges, relays[relays != NO_RELAY]]))
        self.node_of = np.full(lay.n_ues, -1, dtype=np.int64)
        self.node_of[self.nodes] = np.arange(len(self.nodes))
        self.gain_sec = db2lin(world.table.wan_gain[self.nodes])  # (nodes, sectors)
        self.p_ul_mw = db2lin(world.p_ul[self.nodes])
        self.p_acc_mw = db2lin(world.p_acc[self.nodes])
        self.serving_node = lay.serving_sector[self.nodes]
        self.ul_signal_node = self.p_ul_mw * self.gain_sec[np.arange(len(self.nodes)), self.serving_node]

        self.dl_rate_node = np.floor(rate_from_sinr(world.dl_sinr[self.nodes], 1.0, pc))
        self.dl_sinr_lin_node = db2lin(world.dl_sinr[self.nodes])
        self.interf_prev = np.zeros(self.n_sec)
        self.dl_pf = PfState(np.zeros(len(dl_edges)), self.cfg.mac.pf_time_constant)
        self.ul_pf = PfState(np.zeros(len(ul_edges)), self.cfg.mac.pf_time_constant)
        self._pf_started = False
        self.subframe = 0
        # warm-up sums of per-flow rate estimates (bits per subframe)
        self.warm_n = 0
        self.warm_direct_dl = np.zeros(len(dl_edges))
        self.warm_bh_dl = np.zeros(len(dl_edges))
        self.warm_direct_ul = np.zeros(len(ul_edges))
        self.warm_bh_ul = np.zeros(len(ul_edges))
        self._build_links()

    # -- access links ---------------------------------------------------

    def _build_links(self) -> None:
        dl_idx = np.flatnonzero(self.dl.relayed)
        ul_idx = np.flatnonzero(self.ul.relayed)
        self.l_flow = np.concatenate([dl_idx, ul_idx]).astype(np.int64)
        self.l_dir = np.concatenate([np.zeros(len(dl_idx), np.int64), np.ones(len(ul_idx), np.int64)])
        tx_ue = np.concatenate([self.dl.relay[dl_idx], self.ul.edge[ul_idx]]).astype(np.int64)
        rx_ue = np.concatenate([self.dl.edge[dl_idx], self.ul.relay[ul_idx]]).astype(np.int64)
        self.l_tx_ue, self.l_rx_ue = tx_ue, rx_ue
        self.l_tx = self.node_of[tx_ue]
        self.l_rx = self.node_of[rx_ue]
        self.l_sector = np.concatenate([self.dl.sector[dl_idx], self.ul.sector[ul_idx]]).astype(np.int64)
        n = len(self.l_flow)
        self.l_power = self.p_acc_mw[self.l_tx]
        table = self.world.table
        if n:
            pl_links = table.d2d_pathloss(rx_ue, tx_ue)  # [i, j]: tx of j -> rx of i
            gain = db2lin(-pl_links)
            self.l_signal = self.l_power * np.diag(gain)
            cross = gain * self.l_power[None, :]
            np.fill_diagonal(cross, 0.0)
            self.l_cross = cross
            self.l_from_node = db2lin(-table.d2d_pathloss(rx_ue, self.nodes))  # (links, nodes)
            signal_db = lin2db(self.l_signal)
            with np.errstate(divide="ignore"):
                cross_db = lin2db(cross)
            self.pairs = build_conflict_graph(signal_db, cross_db, self.cfg.gamma_acc)
        else:
            self.l_signal = np.zeros(0)
            self.l_cross = np.zeros((0, 0))
            self.l_from_node = np.zeros((0, len(self.nodes)))
            self.pairs = np.zeros((0, 2), dtype=np.int64)
        # links that share a UE with another link need radio serialization
        ends = np.concatenate([self.l_tx, self.l_rx])
        counts = np.bincount(ends, minlength=len(self.nodes)) if n else np.zeros(len(self.nodes), np.int64)
        self.l_shared = (counts[self.l_tx] > 1) | (counts[self.l_rx] > 1) if n else np.zeros(0, bool)
        self.acc_sinr_sum = np.zeros(n)
        self.acc_sinr_count = np.zeros(n)
        self.acc_rate_sum = np.zeros(n)

    def _serialize(self, eligible: np.ndarray) -> np.ndarray:
        """Round-robin: a UE takes part in at most one access link per subframe."""
        if not self.l_shared.any():
            return eligible
        out = eligible.copy()
        n = len(out)
        busy = set()
        start = self.subframe % n
        for k in range(n):
            i = (start + k) % n
            if not eligible[i] or not self.l_shared[i]:
                continue
            if self.l_tx[i] in busy or self.l_rx[i] in busy:
                out[i] = False
            else:
                busy.update((int(self.l_tx[i]), int(self.l_rx[i])))
        return out

    # -- one subframe -----------------------------------------------------

    def step(self, measure: bool, warmup: bool = False) -> dict:
        cap = self.capacity
        dl, ul = self.dl, self.ul
        pc = self.cfg.power
        n_nodes = len(self.nodes)

        # DL grants: backhaul unless the relay buffer is full
        dl_free = cap - dl.level
        dl_use_relay = dl.relayed & (dl_free > 0)
        dl_tx_node = np.where(dl_use_relay, self.node_of[np.where(dl.relayed, dl.relay, dl.edge)],
                              self.node_of[dl.edge])
        dl_rate = self.dl_rate_node[dl_tx_node]
        dl_cand = np.where(dl_use_relay, np.minimum(dl_rate, dl_free), dl_rate)

        # UL grants: relay backhaul unless the relay buffer is empty
        ul_use_relay = ul.relayed & (ul.level > 0)
        ul_tx_node = np.where(ul_use_relay, self.node_of[np.where(ul.relayed, ul.relay, ul.edge)],
                              self.node_of[ul.edge])
        est_sinr = np.minimum(lin2db(self.ul_signal_node[ul_tx_node] /
                                     (self.noise_enb + self.interf_prev[ul.sector])), pc.sinr_cap)
        ul_est = rate_from_sinr(est_sinr, 1.0, pc)
        ul_cand = np.where(ul_use_relay, np.minimum(ul_est, ul.level), ul_est)

        if not self._pf_started:
            self.dl_pf.average = np.maximum(dl_cand.astype(float), 1e-9)
            self.ul_pf.average = np.maximum(ul_cand.astype(float), 1e-9)
            self._pf_started = True
        dl_grant = pf_select(dl.sector, dl_cand, self.dl_pf.average, dl.edge, self.n_sec)
        ul_grant = pf_select(ul.sector, ul_cand, self.ul_pf.average, ul.edge, self.n_sec)

        ul_on = ul_grant >= 0
        ul_flow = ul_grant[ul_on]
        ul_secs = np.flatnonzero(ul_on)
        tx_nodes = ul_tx_node[ul_flow]
        ul_mask = np.zeros(n_nodes, dtype=bool)
        ul_mask[tx_nodes] = True

        # access-link gates
        n_links = len(self.l_flow)
        is_dl = self.l_dir == 0
        level_l = np.where(is_dl, dl.level[self.l_flow] if n_links else 0.0,
                           ul.level[self.l_flow] if n_links else 0.0)
        buf_ok = np.where(is_dl, level_l > 0, level_l < cap)
        hd_ok = ~(ul_mask[self.l_tx] | ul_mask[self.l_rx])
        eligible = self._serialize(buf_ok & hd_ok)
        transmit = yield_decisions(self.pairs, eligible, self.rng, self.cfg.mac.yield_rule)
        if transmit.any():
            busy = np.zeros(n_nodes, dtype=bool)
            busy[self.l_tx[transmit]] = True
            busy[self.l_rx[transmit]] = True
            if (busy & ul_mask).any():
                raise HalfDuplexViolation(f"subframe {self.subframe}: UE on WAN UL and an access link")

        # UL SINR at every sector
        p_tx = self.p_ul_mw[tx_nodes]
        rx_sec = p_tx[:, None] * self.gain_sec[tx_nodes]  # (granted, sectors)
        total = rx_sec.sum(axis=0)
        signal = np.zeros(self.n_sec)
        signal[ul_secs] = rx_sec[np.arange(len(ul_secs)), ul_secs]
        ici = total - signal
        acc_tx = self.l_tx[transmit]
        access_i = (self.l_power[transmit][:, None] * self.gain_sec[acc_tx]).sum(axis=0) if len(acc_tx) \
            else np.zeros(self.n_sec)
        ul_sinr = np.full(self.n_sec, np.nan)
        ul_sinr[ul_secs] = np.minimum(lin2db(signal[ul_secs] / (ici[ul_secs] + access_i[ul_secs] + self.noise_enb)),
                                      pc.sinr_cap)
        self.interf_prev = ici + access_i

        # access-link SINR (for every link, as if it transmitted)
        if n_links:
            i_acc = self.l_cross @ transmit.astype(float)
            i_ul = self.l_from_node[:, tx_nodes] @ p_tx
            acc_sinr = np.minimum(lin2db(self.l_signal / (i_acc + i_ul + self.noise_ue)), pc.sinr_cap)
            acc_rate = np.floor(rate_from_sinr(acc_sinr, 1.0, pc))
            acc_bits = np.where(transmit, acc_rate, 0.0)
        else:
            acc_sinr = acc_rate = acc_bits = np.zeros(0)

        # DL: backhaul fills, access drains
        dl_flow = dl_grant[dl_grant >= 0]
        dl_bh = np.zeros(len(dl.edge))
        dl_direct = np.zeros(len(dl.edge))
        relay_granted = dl_use_relay[dl_flow]
        dl_bh[dl_flow[relay_granted]] = dl_rate[dl_flow[relay_granted]]
        dl_direct[dl_flow[~relay_granted]] = dl_rate[dl_flow[~relay_granted]]
        dl_out = np.zeros(len(dl.edge))
        dl_links = np.flatnonzero(is_dl)
        dl_out[self.l_flow[dl_links]] = acc_bits[dl_links]
        dl_level, dl_drained, dl_admitted = buffer_step(dl.level, cap, dl_bh, dl_out)

        # UL: access fills, backhaul drains
        ul_bits_tx = np.zeros(len(ul.edge))
        ul_bits_tx[ul_flow] = np.floor(rate_from_sinr(ul_sinr[ul_secs], 1.0, pc))
        ul_relay_granted = ul_use_relay[ul_flow]
        ul_bh = np.zeros(len(ul.edge))
        ul_bh[ul_flow[ul_relay_granted]] = ul_bits_tx[ul_flow[ul_relay_granted]]
        ul_direct = np.zeros(len(ul.edge))
        ul_direct[ul_flow[~ul_relay_granted]] = ul_bits_tx[ul_flow[~ul_relay_granted]]
        ul_in = np.zeros(len(ul.edge))
        ul_links = np.flatnonzero(~is_dl)
        ul_in[self.l_flow[ul_links]] = acc_bits[ul_links]
        ul_level, ul_drained, ul_admitted = buffer_step(ul.level, cap, ul_in, ul_bh)

        # PF averages track what each WAN grant actually carried
        dl_served = dl_direct + np.where(dl_use_relay, dl_admitted, 0.0)
        ul_served = ul_direct + ul_drained
        self.dl_pf.update(dl_served)
        self.ul_pf.update(ul_served)

        dl.level, ul.level = dl_level, ul_level
        dl.total_in += dl_admitted
        dl.total_out += dl_drained
        ul.total_in += ul_admitted
        ul.total_out += ul_drained

        if warmup and n_links:
            dl.grants[dl_flow] += 1
            ul.grants[ul_flow] += 1
            avail = hd_ok & ~(eligible & ~transmit)
            self.acc_rate_sum += np.where(avail, acc_rate, 0.0)
            self.warm_direct_dl += self.dl_rate_node[self.node_of[dl.edge]]
            self.warm_bh_dl += self.dl_rate_node[self.node_of[np.where(dl.relayed, dl.relay, dl.edge)]]
            i_sec = self.interf_prev[ul.sector] + self.noise_enb
            e_node = self.node_of[ul.edge]
            r_node = self.node_of[np.where(ul.relayed, ul.relay, ul.edge)]
            self.warm_direct_ul += rate_from_sinr(
                np.minimum(lin2db(self.ul_signal_node[e_node] / i_sec), pc.sinr_cap), 1.0, pc)
            self.warm_bh_ul += rate_from_sinr(
                np.minimum(lin2db(self.ul_signal_node[r_node] / i_sec), pc.sinr_cap), 1.0, pc)
            self.warm_n += 1

        info = {}
        if measure:
            dl.direct_bits += dl_direct
            dl.relay_bits += dl_drained
            ul.direct_bits += ul_direct
            ul.relay_bits += ul_drained
            # served-time SINR of the link that carried each grant
            dl.sinr_sum[dl_flow] += self.dl_sinr_lin_node[dl_tx_node[dl_flow]]
            dl.sinr_count[dl_flow] += 1
            ul.sinr_sum[ul_flow] += db2lin(ul_sinr[ul_secs])
            ul.sinr_count[ul_flow] += 1
            if n_links:
                self.acc_sinr_sum[transmit] += db2lin(acc_sinr[transmit])
                self.acc_sinr_count[transmit] += 1
            info = {
                "active_links": np.bincount(self.l_sector[transmit], minlength=self.n_sec) if n_links
                else np.zeros(self.n_sec, np.int64),
                "enb": (signal[ul_secs], ici[ul_secs], access_i[ul_secs]),
            }
            if self.trace is not None:
                self._record_trace(dl_grant, dl_use_relay, ul_grant, ul_use_relay, buf_ok, hd_ok, eligible,
                                   transmit)
        self.subframe += 1
        return info

    def _record_trace(self, dl_grant, dl_use_relay, ul_grant, ul_use_relay, buf_ok, hd_ok, eligible, transmit):
        sf = self.subframe
        for s in range(self.n_sec):
            for link, grant, use_relay, flows in (("DL", dl_grant, dl_use_relay, self.dl),
                                                  ("UL", ul_grant, ul_use_relay, self.ul)):
                f = grant[s]
                if f < 0:
                    self.trace.grants.append((sf, s, link, "none", -1))
                elif use_relay[f]:
                    self.trace.grants.append((sf, s, link, "backhaul", int(flows.relay[f])))
                else:
                    self.trace.grants.append((sf, s, link, "direct", int(flows.edge[f])))
        for i in range(len(self.l_flow)):
            if transmit[i]:
                state = "transmitting"
            elif not hd_ok[i]:
                state = "gated-halfduplex"
            elif not buf_ok[i]:
                state = "gated-buffer"
            elif not eligible[i]:
                state = "gated-radio"
            else:
                state = "yielded"
            edge = self.dl.edge[self.l_flow[i]] if self.l_dir[i] == 0 else self.ul.edge[self.l_flow[i]]
            self.trace.links.append((sf, int(self.l_sector[i]), int(edge), "DL" if self.l_dir[i] == 0 else "UL",
                                     state))

    # -- warm-up, pruning, measurement -----------------------------------

    def rate_estimates(self) -> dict[int, RateEstimate]:
        n = self.warm_n
        if n == 0:
            return {}
        out = {}
        acc_mean = self.acc_rate_sum / n
        for i in range(len(self.l_flow)):
            f = self.l_flow[i]
            if self.l_dir[i] == 0:
                flows, direct, bh = self.dl, self.warm_direct_dl[f] / n, self.warm_bh_dl[f] / n
            else:
                flows, direct, bh = self.ul, self.warm_direct_ul[f] / n, self.warm_bh_ul[f] / n
            out[int(flows.edge[f])] = RateEstimate(int(flows.edge[f]), float(flows.grants[f] / n), float(direct),
                                                   float(bh), float(acc_mean[i]))
        return out

    def prune(self) -> dict[int, RateEstimate]:
        estimates = self.rate_estimates()
        self.assignments = prune_relays(self.assignments, estimates, self.cfg.relay.prune_threshold)
        by_edge = {a.edge_ue: a.relay_ue for a in self.assignments}
        self.dl.relay = np.array([by_edge[u] for u in self.dl.edge], dtype=np.int64)
        self.ul.relay = np.array([by_edge[u] for u in self.ul.edge], dtype=np.int64)
        self._build_links()
        return estimates

    def run(self) -> DropMetrics:
        rc = self.cfg.run
        relayed_initial = int(self.dl.relayed.sum() + self.ul.relayed.sum())
        self.estimates: dict[int, RateEstimate] = {}
        if self.cfg.mode != "baseline" and rc.warmup_subframes > 0:
            for _ in range(rc.warmup_subframes):
                self.step(measure=False, warmup=True)
            self.estimates = self.prune()
        active = np.zeros(self.n_sec)
        active_by_sf = np.zeros(rc.subframes)
        sig, ici, acc = [], [], []
        for k in range(rc.subframes):
            info = self.step(measure=True)
            active += info["active_links"]
            active_by_sf[k] = info["active_links"].sum()
            sig.append(info["enb"][0])
            ici.append(info["enb"][1])
            acc.append(info["enb"][2])

        def avg_db(s, c):
            # the clamp only removes round-off: a mean of capped values cannot exceed the cap
            with np.errstate(divide="ignore", invalid="ignore"):
                avg = np.minimum(lin2db(s / np.maximum(c, 1)), self.cfg.power.sinr_cap)
                return np.where(c > 0, avg, np.nan)

        return DropMetrics(
            n_subframes=rc.subframes,
            n_sectors=self.n_sec,
            dl_direct_bits=self.dl.direct_bits.copy(),
            dl_relay_bits=self.dl.relay_bits.copy(),
            ul_direct_bits=self.ul.direct_bits.copy(),
            ul_relay_bits=self.ul.relay_bits.copy(),
            dl_sinr=avg_db(self.dl.sinr_sum, self.dl.sinr_count),
            ul_sinr=avg_db(self.ul.sinr_sum, self.ul.sinr_count),
            access_sinr=avg_db(self.acc_sinr_sum, self.acc_sinr_count),
            access_direction=self.l_dir.copy(),
            active_links_per_sector=float(active.sum() / (rc.subframes * self.n_sec)),
            active_links_by_subframe=active_by_sf,
            enb_signal=np.concatenate(sig),
            enb_ici=np.concatenate(ici),
            enb_access=np.concatenate(acc),
            relayed_initial=relayed_initial,
            relayed_after_prune=int(self.dl.relayed.sum() + self.ul.relayed.sum()),
            buffer_in=np.concatenate([self.dl.total_in, self.ul.total_in]),
            buffer_out=np.concatenate([self.dl.total_out, self.ul.total_out]),
            buffer_level=np.concatenate([self.dl.level, self.ul.level]),
        )


def run_drop(cfg: ScenarioConfig, drop: int, trace: TraceRecorder | None = None) -> DropMetrics:
    """Simulate one drop of the relay system (baseline, relay or relay-im)."""
    streams = drop_streams(cfg.run.seed, drop)
    world = build_world(cfg, streams)
    sim = RelaySimulator(world, streams.mac, trace)
    metrics = sim.run()
    if trace is not None:
        trace.assignments = list(sim.assignments)
        trace.dl_sinr = world.dl_sinr
    return metrics


def config_key(cfg: ScenarioConfig) -> str:
    flat = cfg.to_flat()
    flat.pop("run.drops", None)
    flat.pop("run.compare_baseline", None)
    blob = json.dumps(flat, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _run_drop_job(args):
    cfg, drop, with_trace = args
    trace = TraceRecorder() if with_trace else None
    metrics = run_drop(cfg, drop, trace)
    return drop, metrics, trace


def run_drops(cfg: ScenarioConfig, jobs: int | None = None, trace: bool = False,
              progress=None) -> tuple[MetricsAccumulator, dict[int, TraceRecorder]]:
    """Run every configured drop, possibly in parallel, and merge the results by drop id."""
    jobs = jobs or os.cpu_count() or 1
    drops = list(range(cfg.run.drops))
    acc = MetricsAccumulator(config_key(cfg))
    traces: dict[int, TraceRecorder] = {}
    work = [(cfg, d, trace) for d in drops]
    if jobs <= 1 or len(drops) == 1:
        results = map(_run_drop_job, work)
    else:
        pool = ProcessPoolExecutor(max_workers=min(jobs, len(drops)))
        results = pool.map(_run_drop_job, work)
    for drop, metrics, tr in results:
        acc.add(drop, metrics)
        if tr is not None:
            traces[drop] = tr
        if progress:
            progress(f"{cfg.mode}: drop {drop + 1}/{len(drops)} done")
    if jobs > 1 and len(drops) > 1:
        pool.shutdown()
    return acc, traces
