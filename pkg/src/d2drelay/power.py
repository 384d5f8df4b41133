"""Transmit-power rules, SINR assembly and the SINR-to-rate mapping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LinkTable


@dataclass(frozen=True)
class PowerConfig:
    p_max: float = 23.0  # dBm
    p0: float = -80.0  # dBm
    alpha: float = 0.8
    delta_acc: float = 20.0  # dB
    enb_tx_power: float = 46.0  # dBm, full band
    noise_fullband: float = -104.5  # dBm per bandwidth
    nf_ue: float = 9.0
    nf_enb: float = 5.0
    sinr_cap: float = 25.0  # dB
    bandwidth: float = 10e6  # Hz
    rbs_fullband: int = 50
    subframe: float = 1e-3  # s

    @property
    def ue_noise(self) -> float:
        return self.noise_fullband + self.nf_ue

    @property
    def enb_noise(self) -> float:
        return self.noise_fullband + self.nf_enb


def db2lin(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def lin2db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float))


def ul_tx_power(pl_serving, m_rbs, cfg: PowerConfig = PowerConfig()):
    """Open-loop fractional UL power in dBm for coupling loss ``pl_serving`` and ``m_rbs`` RBs."""
    m = np.asarray(m_rbs, dtype=float)
    if np.any(m < 1):
        raise ValueError("m_rbs must be >= 1")
    out = np.minimum(cfg.p_max, cfg.p0 + 10.0 * np.log10(m) + cfg.alpha * np.asarray(pl_serving, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def access_tx_power(pl_serving, cfg: PowerConfig = PowerConfig()):
    """Access-link power: full-band UL power backed off by ``delta_acc``."""
    out = ul_tx_power(pl_serving, cfg.rbs_fullband, cfg) - cfg.delta_acc
    return float(out) if np.ndim(out) == 0 else out


def cap_sinr(sinr_db, cfg: PowerConfig = PowerConfig()):
    return np.minimum(sinr_db, cfg.sinr_cap)


def sinr_from_components(signal_mw, interference_mw, noise_dbm: float, cfg: PowerConfig = PowerConfig()):
    """Capped SINR in dB from linear signal and interference powers (mW)."""
    out = cap_sinr(lin2db(np.asarray(signal_mw) / (np.asarray(interference_mw) + db2lin(noise_dbm))), cfg)
    return float(out) if np.ndim(out) == 0 else out


def sinr_dl(wan_gain: np.ndarray, serving: np.ndarray, cfg: PowerConfig = PowerConfig()) -> np.ndarray:
    """Full-buffer DL SINR per UE; every sector transmits at full power.

    ``wan_gain`` is (n_ues, n_sectors) in dB and ``serving`` the serving sector per UE.
    """
    wan_gain = np.atleast_2d(wan_gain)
    serving = np.atleast_1d(serving)
    rx = db2lin(cfg.enb_tx_power + wan_gain)
    rows = np.arange(len(serving))
    signal = rx[rows, serving]
    rx[rows, serving] = 0.0
    return sinr_from_components(signal, rx.sum(axis=1), cfg.ue_noise, cfg)


def sinr_ul(table: LinkTable, grants, tx_power, access_tx=(), access_power=(),
            cfg: PowerConfig = PowerConfig()):
    """UL SINR at every sector for one subframe.

    ``grants[s]`` is the UE transmitting to sector ``s`` (-1 for none) at
    ``tx_power[s]`` dBm. ``access_tx`` are UEs transmitting on access links at
    ``access_power`` dBm. Returns (sinr_db, signal_mw, ici_mw, access_mw) per
    sector; sectors without a grant get NaN SINR and zero signal.
    """
    grants = np.asarray(grants, dtype=np.int64)
    tx_power = np.asarray(tx_power, dtype=float)
    on = grants >= 0
    n_sec = len(grants)
    # rx[t, s]: power of sector t's granted UE at sector s
    rx = np.zeros((n_sec, n_sec))
    rx[on] = db2lin(tx_power[on, None] + table.wan_gain[grants[on]])
    signal = np.where(on, np.diag(rx), 0.0)
    ici = rx.sum(axis=0) - np.diag(rx)
    access_tx = np.asarray(access_tx, dtype=np.int64)
    if len(access_tx):
        acc = db2lin(np.asarray(access_power, dtype=float)[:, None] + table.wan_gain[access_tx]).sum(axis=0)
    else:
        acc = np.zeros(n_sec)
    sinr = np.full(n_sec, np.nan)
    sinr[on] = sinr_from_components(signal[on], ici[on] + acc[on], cfg.enb_noise, cfg)
    return sinr, signal, ici, acc


def sinr_access(table: LinkTable, tx, rx, tx_power, active, ul_tx=(), ul_power=(),
                cfg: PowerConfig = PowerConfig()) -> np.ndarray:
    """SINR at the receiver of every access link (dB).

    Interference is every UL WAN transmitter plus every other active access
    transmitter, all over D2D pathloss. Inactive links still get an SINR (what
    they would see if they were the only extra transmitter).
    """
    tx = np.asarray(tx, dtype=np.int64)
    rx = np.asarray(rx, dtype=np.int64)
    tx_power = np.asarray(tx_power, dtype=float)
    active = np.asarray(active, dtype=bool)
    signal = db2lin(tx_power - table.d2d_pathloss_pairs(tx, rx))
    interf = np.zeros(len(tx))
    if active.any():
        cross = db2lin(tx_power[active][None, :] - table.d2d_pathloss(rx, tx[active]))
        own = np.flatnonzero(active)
        cross[own, np.arange(len(own))] = 0.0
        interf += cross.sum(axis=1)
    ul_tx = np.asarray(ul_tx, dtype=np.int64)
    if len(ul_tx):
        interf += db2lin(np.asarray(ul_power, dtype=float)[None, :] - table.d2d_pathloss(rx, ul_tx)).sum(axis=1)
    return np.asarray(sinr_from_components(signal, interf, cfg.ue_noise, cfg))


def rate_from_sinr(sinr_db, bandwidth_fraction=1.0, cfg: PowerConfig = PowerConfig()):
    """Capped-Shannon bits delivered in one subframe."""
    se = np.log2(1.0 + db2lin(sinr_db))
    out = np.asarray(bandwidth_fraction, dtype=float) * cfg.bandwidth * cfg.subframe * se
    return float(out) if np.ndim(out) == 0 else out


def default_buffer_capacity(cfg: PowerConfig = PowerConfig()) -> float:
    """Two subframes of full-band traffic at the SINR cap."""
    return 2.0 * rate_from_sinr(cfg.sinr_cap, 1.0, cfg)
