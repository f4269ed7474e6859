"""Fused numba element kernels: residual and analytic Jacobian for the
stabilized flow block and the phase-field block, plus step diagnostics.

Unknowns enter as midpoint ("tilde") averages of the old state and the
current iterate.  The flow Jacobian differentiates the strong residual
and both stabilization parameters with respect to the new velocity and
pressure; phase variables are frozen there and vice versa.  Cells are
cubes, so the element metric reduces to the scalar g = 4/h^2.
"""

import numpy as np
from numba import njit, prange

# tau denominator floor; the mass-flux cross term can be negative for
# extreme states
_THETA_FLOOR = 1e-30


@njit(cache=True, parallel=True)
def ns_kernel(h, N_tab, dNr_tab, d2Nr_tab, w_tab,
              vk, v1, pk, p1, phk, ph1, muk, mu1, fq,
              dt, re, we, pe, cn, fr, alpha, beta, gamma, xi, c_i,
              Ae, be):
    ne = h.shape[0]
    nq, nen = N_tab.shape
    dim = vk.shape[2]
    nd = dim + 1
    c2w = 1.0 / (2.0 * we)
    for e in prange(ne):
        s = 2.0 / h[e]
        detj = (h[e] / 2.0) ** dim
        dn = np.empty((nen, dim))
        vt = np.empty(dim)
        vdot = np.empty(dim)
        dvt = np.empty((dim, dim))
        dpt = np.empty(dim)
        dpht = np.empty(dim)
        dph1 = np.empty(dim)
        dmut = np.empty(dim)
        jf = np.empty(dim)
        hm = np.empty((dim, dim))
        rm = np.empty(dim)
        gal_adv = np.empty(nen)
        adv = np.empty(nen)
        dtau = np.empty((nen, dim))
        drdv = np.empty((nen, dim, dim))
        dna = np.empty(dim)
        for q in range(nq):
            W = w_tab[q] * detj
            for c in range(nen):
                for j in range(dim):
                    dn[c, j] = dNr_tab[q, c, j] * s

            # field values and derivatives at this point
            pt = 0.0
            pht = 0.0
            ph1q = 0.0
            for i in range(dim):
                vt[i] = 0.0
                vdot[i] = 0.0
                dpt[i] = 0.0
                dpht[i] = 0.0
                dph1[i] = 0.0
                dmut[i] = 0.0
                for j in range(dim):
                    dvt[i, j] = 0.0
                    hm[i, j] = 0.0
            for c in range(nen):
                Nc = N_tab[q, c]
                pmid = 0.5 * (pk[e, c] + p1[e, c])
                phmid = 0.5 * (phk[e, c] + ph1[e, c])
                mumid = 0.5 * (muk[e, c] + mu1[e, c])
                pt += Nc * pmid
                pht += Nc * phmid
                ph1q += Nc * ph1[e, c]
                for j in range(dim):
                    dpt[j] += dn[c, j] * pmid
                    dpht[j] += dn[c, j] * phmid
                    dph1[j] += dn[c, j] * ph1[e, c]
                    dmut[j] += dn[c, j] * mumid
                for i in range(dim):
                    vmid = 0.5 * (vk[e, c, i] + v1[e, c, i])
                    vt[i] += Nc * vmid
                    vdot[i] += Nc * (v1[e, c, i] - vk[e, c, i]) / dt
                    for j in range(dim):
                        dvt[i, j] += dn[c, j] * vmid
                        hm[i, j] += d2Nr_tab[q, c, i, j] * s * s * phmid

            phc = min(1.0, max(-1.0, ph1q))
            rho = alpha * phc + beta
            eta = gamma * phc + xi
            sat = 1.0 if -1.0 < ph1q < 1.0 else 0.0
            for j in range(dim):
                jf[j] = -alpha * dmut[j]

            g = 4.0 / (h[e] * h[e])
            vgv = 0.0
            vgj = 0.0
            for j in range(dim):
                vgv += vt[j] * g * vt[j]
                vgj += vt[j] * g * jf[j]
            theta = 4.0 / (dt * dt) + vgv + vgj / (rho * pe) \
                + c_i * (eta / (rho * re)) ** 2 * dim * g * g
            if theta < _THETA_FLOOR:
                theta = _THETA_FLOOR
            tau_m = theta ** -0.5
            tau_c = 1.0 / (dim * g * tau_m)

            # strong momentum residual (representable part) and divergence
            rc = 0.0
            for i in range(dim):
                acc = rho * vdot[i] + (1.0 / we) * dpt[i] - fq[e, q, i]
                if i == 1:
                    acc += rho / fr  # gravity along -y
                for j in range(dim):
                    acc += (rho * vt[j] + jf[j] / pe) * dvt[i, j]
                    acc += (cn / we) * hm[i, j] * dpht[j]
                    acc -= (1.0 / re) * gamma * sat * dph1[j] * dvt[i, j]
                rm[i] = acc
                rc += dvt[i, i]

            # column helpers, independent of the test row
            for c in range(nen):
                Nc = N_tab[q, c]
                ga = 0.0
                visc = 0.0
                for j in range(dim):
                    ga += (rho * vt[j] + jf[j] / pe) * dn[c, j]
                    visc += gamma * sat * dph1[j] * dn[c, j]
                gal_adv[c] = 0.5 * ga
                adv[c] = rho * Nc / dt + 0.5 * ga - 0.5 * visc / re
                for m in range(dim):
                    dtau[c, m] = -0.25 * tau_m ** 3 * Nc \
                        * (2.0 * g * vt[m] + g * jf[m] / (rho * pe))
                    for j in range(dim):
                        drdv[c, m, j] = 0.5 * rho * Nc * dvt[j, m]
                        if j == m:
                            drdv[c, m, j] += adv[c]

            for a in range(nen):
                Na = N_tab[q, a]
                dna_r = 0.0
                dna_v = 0.0
                dna_j = 0.0
                for j in range(dim):
                    dna[j] = dn[a, j]
                    dna_r += dna[j] * rm[j]
                    dna_v += dna[j] * vt[j]
                    dna_j += dna[j] * jf[j]

                # momentum rows
                for i in range(dim):
                    resid = rho * vdot[i] - fq[e, q, i]
                    if i == 1:
                        resid += rho / fr
                    rdvi = 0.0
                    dna_dvti = 0.0
                    dna_dphti = 0.0
                    for j in range(dim):
                        resid += (rho * vt[j] + jf[j] / pe) * dvt[i, j]
                        rdvi += rm[j] * dvt[i, j]
                        dna_dvti += dna[j] * dvt[i, j]
                        dna_dphti += dna[j] * dpht[j]
                    r = a * nd + i
                    be[e, r] += W * (
                        Na * resid
                        - (cn / we) * dpht[i] * dna_dphti
                        - (1.0 / we) * dna[i] * pt
                        + (1.0 / re) * eta * dna_dvti
                        - Na * tau_m * rdvi
                        + tau_m * dna_v * rm[i]
                        - (tau_m * tau_m / rho) * dna_r * rm[i]
                        + (dna_j / pe) * (tau_m / rho) * rm[i]
                        + (1.0 / we) * dna[i] * rho * tau_c * rc)

                    for c in range(nen):
                        Nc = N_tab[q, c]
                        dna_dnc = 0.0
                        r_dnc = 0.0
                        for j in range(dim):
                            dna_dnc += dna[j] * dn[c, j]
                            r_dnc += rm[j] * dn[c, j]
                        for m in range(dim):
                            dth = dtau[c, m]
                            dtc = -(tau_c / tau_m) * dth
                            dri = drdv[c, m, i]
                            dna_dr = 0.0
                            drdv_dvt_i = 0.0
                            for j in range(dim):
                                dna_dr += dna[j] * drdv[c, m, j]
                                drdv_dvt_i += drdv[c, m, j] * dvt[i, j]
                            val = Na * 0.5 * rho * Nc * dvt[i, m]
                            if i == m:
                                val += Na * (rho * Nc / dt + gal_adv[c])
                                val += (0.5 / re) * eta * dna_dnc
                                val -= Na * tau_m * 0.5 * r_dnc
                            val -= Na * (dth * rdvi + tau_m * drdv_dvt_i)
                            val += dth * dna_v * rm[i] \
                                + tau_m * 0.5 * Nc * dna[m] * rm[i] \
                                + tau_m * dna_v * dri
                            val -= (1.0 / rho) * (
                                2.0 * tau_m * dth * dna_r * rm[i]
                                + tau_m * tau_m * (dna_dr * rm[i]
                                                   + dna_r * dri))
                            val += (dna_j / pe) / rho * (dth * rm[i]
                                                         + tau_m * dri)
                            val += (1.0 / we) * dna[i] * rho \
                                * (dtc * rc + tau_c * 0.5 * dn[c, m])
                            Ae[e, r, c * nd + m] += W * val
                        # pressure column
                        dnc_dvt_i = 0.0
                        for j in range(dim):
                            dnc_dvt_i += dn[c, j] * dvt[i, j]
                        valp = -(1.0 / we) * dna[i] * 0.5 * Nc \
                            - Na * tau_m * c2w * dnc_dvt_i \
                            + tau_m * dna_v * c2w * dn[c, i] \
                            - (tau_m * tau_m / rho) * c2w \
                            * (dna_dnc * rm[i] + dna_r * dn[c, i]) \
                            + (dna_j / pe) * (tau_m / rho) * c2w * dn[c, i]
                        Ae[e, r, c * nd + dim] += W * valp

                # continuity row
                r = a * nd + dim
                be[e, r] += W * (Na * rc + (tau_m / rho) * dna_r)
                for c in range(nen):
                    dna_dnc = 0.0
                    for j in range(dim):
                        dna_dnc += dna[j] * dn[c, j]
                    for m in range(dim):
                        dna_dr = 0.0
                        for j in range(dim):
                            dna_dr += dna[j] * drdv[c, m, j]
                        val = Na * 0.5 * dn[c, m] \
                            + (1.0 / rho) * (dtau[c, m] * dna_r
                                             + tau_m * dna_dr)
                        Ae[e, r, c * nd + m] += W * val
                    Ae[e, r, c * nd + dim] += W * (tau_m / rho) * c2w \
                        * dna_dnc


@njit(cache=True, parallel=True)
def ch_kernel(h, N_tab, dNr_tab, w_tab,
              vk, v1, phk, ph1, muk, mu1, fphi, fmu,
              dt, pe, cn, Ae, be):
    ne = h.shape[0]
    nq, nen = N_tab.shape
    dim = vk.shape[2]
    for e in prange(ne):
        s = 2.0 / h[e]
        detj = (h[e] / 2.0) ** dim
        vt = np.empty(dim)
        dpht = np.empty(dim)
        dmut = np.empty(dim)
        for q in range(nq):
            W = w_tab[q] * detj
            pht = 0.0
            mut = 0.0
            phdot = 0.0
            for j in range(dim):
                vt[j] = 0.0
                dpht[j] = 0.0
                dmut[j] = 0.0
            for c in range(nen):
                Nc = N_tab[q, c]
                pht += Nc * 0.5 * (phk[e, c] + ph1[e, c])
                mut += Nc * 0.5 * (muk[e, c] + mu1[e, c])
                phdot += Nc * (ph1[e, c] - phk[e, c]) / dt
                for j in range(dim):
                    dcj = dNr_tab[q, c, j] * s
                    dpht[j] += dcj * 0.5 * (phk[e, c] + ph1[e, c])
                    dmut[j] += dcj * 0.5 * (muk[e, c] + mu1[e, c])
                    vt[j] += Nc * 0.5 * (vk[e, c, j] + v1[e, c, j])
            psi_p = pht ** 3 - pht
            psi_pp = 3.0 * pht * pht - 1.0
            for a in range(nen):
                Na = N_tab[q, a]
                dna_v = 0.0
                dna_dmut = 0.0
                dna_dpht = 0.0
                for j in range(dim):
                    daj = dNr_tab[q, a, j] * s
                    dna_v += daj * vt[j]
                    dna_dmut += daj * dmut[j]
                    dna_dpht += daj * dpht[j]
                be[e, 2 * a] += W * (Na * (phdot - fphi[e, q])
                                     - dna_v * pht
                                     + dna_dmut / (pe * cn))
                be[e, 2 * a + 1] += W * (Na * (psi_p - mut - fmu[e, q])
                                         + cn * cn * dna_dpht)
                for c in range(nen):
                    Nc = N_tab[q, c]
                    dna_dnc = 0.0
                    for j in range(dim):
                        dna_dnc += dNr_tab[q, a, j] * s \
                            * dNr_tab[q, c, j] * s
                    Ae[e, 2 * a, 2 * c] += W * (Na * Nc / dt
                                                - dna_v * 0.5 * Nc)
                    Ae[e, 2 * a, 2 * c + 1] += W * dna_dnc \
                        / (2.0 * pe * cn)
                    Ae[e, 2 * a + 1, 2 * c] += W * (Na * psi_pp * 0.5 * Nc
                                                    + 0.5 * cn * cn
                                                    * dna_dnc)
                    Ae[e, 2 * a + 1, 2 * c + 1] += W * (-0.5 * Na * Nc)


@njit(cache=True, parallel=True)
def energy_kernel(h, oy, qy, N_tab, dNr_tab, w_tab, v, phi,
                  alpha, beta, out):
    """Per-element [kin, psi, |grad phi|^2, rho*y, phi, (1-phi*)/2]."""
    ne = h.shape[0]
    nq, nen = N_tab.shape
    dim = v.shape[2]
    for e in prange(ne):
        s = 2.0 / h[e]
        detj = (h[e] / 2.0) ** dim
        for q in range(nq):
            W = w_tab[q] * detj
            v2 = 0.0
            for i in range(dim):
                vi = 0.0
                for c in range(nen):
                    vi += N_tab[q, c] * v[e, c, i]
                v2 += vi * vi
            ph = 0.0
            for c in range(nen):
                ph += N_tab[q, c] * phi[e, c]
            g2 = 0.0
            for j in range(dim):
                dj = 0.0
                for c in range(nen):
                    dj += dNr_tab[q, c, j] * s * phi[e, c]
                g2 += dj * dj
            yq = oy[e] + (qy[q] + 1.0) * h[e] / 2.0
            phc = min(1.0, max(-1.0, ph))
            rho = alpha * phc + beta
            out[e, 0] += W * 0.5 * rho * v2
            out[e, 1] += W * 0.25 * (ph * ph - 1.0) ** 2
            out[e, 2] += W * g2
            out[e, 3] += W * rho * yq
            out[e, 4] += W * ph
            out[e, 5] += W * 0.5 * (1.0 - phc)


@njit(cache=True, parallel=True)
def step_dissipation_kernel(h, N_tab, dNr_tab, w_tab,
                            vk, v1, ph1, muk, mu1,
                            gamma, xi, out):
    """Per-element [eta(phi^new)|grad v_tilde|^2, |grad mu_tilde|^2]."""
    ne = h.shape[0]
    nq, nen = N_tab.shape
    dim = vk.shape[2]
    for e in prange(ne):
        s = 2.0 / h[e]
        detj = (h[e] / 2.0) ** dim
        for q in range(nq):
            W = w_tab[q] * detj
            ph1q = 0.0
            for c in range(nen):
                ph1q += N_tab[q, c] * ph1[e, c]
            eta = gamma * min(1.0, max(-1.0, ph1q)) + xi
            gv2 = 0.0
            for i in range(dim):
                for j in range(dim):
                    dij = 0.0
                    for c in range(nen):
                        dij += dNr_tab[q, c, j] * s * 0.5 \
                            * (vk[e, c, i] + v1[e, c, i])
                    gv2 += dij * dij
            gm2 = 0.0
            for j in range(dim):
                dj = 0.0
                for c in range(nen):
                    dj += dNr_tab[q, c, j] * s * 0.5 \
                        * (muk[e, c] + mu1[e, c])
                gm2 += dj * dj
            out[e, 0] += W * eta * gv2
            out[e, 1] += W * gm2
