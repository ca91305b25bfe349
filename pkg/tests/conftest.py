import numpy as np
import pytest

from fadbp import objective, oracles
from fadbp.beamformer import s_factor
from fadbp.channel import frm
from fadbp.position import e_factor, rx_curvature, rx_gradient, tx_curvature, tx_gradient
from fadbp.scenario import SystemConfig, build_scenario
from fadbp.state import partition

SMALL = dict(K=2, N=2, M=8, C=2, d=2, L_tx=2, L_rx=2)

VERDICTS: list[str] = []


def small_config(seed=0, **overrides):
    return SystemConfig(**{**SMALL, "seed": seed, "mode": "TRFA", **overrides})


def dense_gtilde(G, W):
    """sum over all antennas of G_k W_j, (K, K, Lt, d)."""
    return np.einsum("klm,jmd->kjld", G, W)


class Instance:
    """One scenario with a C=1 CU state whose auxiliaries are at their optimum."""

    def __init__(self, config, jitter=True):
        self.sc = build_scenario(config)
        rng = np.random.default_rng(config.seed + 1000)
        lo, hi = self.sc.regions.tx_lower, self.sc.regions.tx_upper
        self.T = rng.uniform(lo, hi) if jitter else self.sc.T0.copy()
        rlo, rhi = self.sc.regions.rx_lower, self.sc.regions.rx_upper
        R = rng.uniform(rlo, rhi) if jitter else self.sc.R0.copy()
        self.W = self.sc.W0.copy()
        _, _, self.cu = partition(self.sc, 1)
        self.cu.R = R
        self.cu.refresh_frm()
        self.refresh()

    @property
    def lam(self):
        return self.sc.wavelength

    @property
    def tx_dirs(self):
        return self.sc.paths.tx_dirs

    def G(self, T=None):
        return frm(self.T if T is None else T, self.tx_dirs, self.lam)

    def gtilde(self, T=None):
        return dense_gtilde(self.G(T), self.W)

    def refresh(self):
        links = objective.effective_links(self.gtilde(), self.cu.F, self.cu.prm)
        self.cu.gamma, self.cu.phi = objective.update_auxiliary(links, self.cu.noise,
                                                                self.cu.alpha)


@pytest.fixture
def verdict():
    def record(number, name, ok, detail=""):
        line = f"criterion {number} [{name}]: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        VERDICTS.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)


def _with_positions(inst, T=None, R=None):
    return oracles.dense_snapshot(inst.T if T is None else T, inst.cu.R if R is None else R,
                                  inst.W, inst.cu.prm, inst.tx_dirs, inst.cu.rx_dirs, inst.lam,
                                  inst.cu.gamma, inst.cu.phi)


def f_of_T(inst):
    """Oracle surrogate as a function of all transmit positions."""
    def f(T):
        return oracles.dense_f_quad(_with_positions(inst, T=T), inst.cu.alpha, inst.cu.noise)
    return f


def f_of_R(inst, k):
    """Oracle surrogate as a function of user k's receive positions."""
    def f(Rk):
        R = inst.cu.R.copy()
        R[k] = Rk
        return oracles.dense_f_quad(_with_positions(inst, R=R), inst.cu.alpha, inst.cu.noise)
    return f


def grad_T(inst, T=None):
    T = inst.T if T is None else T
    S = s_factor(inst.cu)
    return tx_gradient(T, inst.G(T), inst.W, S, e_factor(inst.cu, S), inst.gtilde(T),
                       inst.cu.alpha, inst.tx_dirs, inst.lam)[0]


def delta_T(inst):
    S = s_factor(inst.cu)
    W = inst.W
    Wt = np.einsum("tmd,sme->tsde", W.conj(), W)
    rownorm = np.linalg.norm(W, axis=2).sum(axis=1)
    return float(tx_curvature(W, Wt, rownorm, S, e_factor(inst.cu, S), inst.cu.alpha,
                              inst.lam).max())


def grad_R(inst, k, Rk=None):
    cu = inst.cu
    Rk = cu.R[k] if Rk is None else Rk
    return rx_gradient(Rk, frm(Rk, cu.rx_dirs[k], inst.lam), cu.phi[k], cu.gamma[k],
                       inst.gtilde()[k], k, cu.prm[k], cu.alpha[k], cu.rx_dirs[k], inst.lam)


def delta_R(inst, k):
    cu = inst.cu
    return rx_curvature(cu.phi[k], cu.gamma[k], inst.gtilde()[k], k, cu.prm[k], cu.alpha[k],
                        inst.lam)
