"""Reference implementation of the bound written with plain loops.

Shares nothing with the package's tensor code: one sequence at a time, one
group at a time, scalar ``math`` for the gates.  Used to cross-check the
vectorised forward pass and objective.
"""

import math

import numpy as np


def _sigmoid(v):
    return np.array([1.0 / (1.0 + math.exp(-a)) for a in v])


def _relu(v):
    return np.array([a if a > 0 else 0.0 for a in v])


def oracle_elbo(P, cfg, x, noise, lam):
    """Return (recon, kl, penalty) for batch ``x`` of shape (T, B, d)."""
    T, B, _ = x.shape
    H = cfg.H
    gs = cfg.group_spec
    recon = 0.0
    kl = 0.0
    per_step = [[0.0, 0.0] for _ in range(T)]
    for b in range(B):
        h = np.zeros(H)
        for t in range(T):
            xt = x[t, b]
            fx = P["phi_x.weight"] @ xt + P["phi_x.bias"]
            if cfg.static_mode:
                h = np.zeros(H)
            mu0 = P["prior.mean.weight"] @ h + P["prior.mean.bias"]
            s0 = np.exp(P["prior.log_scale.weight"] @ h + P["prior.log_scale.bias"])
            enc = np.concatenate([fx, h])
            if cfg.encoder_hidden:
                enc = _relu(P["encoder.hidden.weight"] @ enc + P["encoder.hidden.bias"])
            muq = P["encoder.mean.weight"] @ enc + P["encoder.mean.bias"]
            sq = np.exp(P["encoder.log_scale.weight"] @ enc + P["encoder.log_scale.bias"])
            z = muq + sq * noise[t, b]

            step_kl = 0.0
            for i in range(cfg.K):
                step_kl += (
                    math.log(s0[i] / sq[i]) + (sq[i] ** 2 + (muq[i] - mu0[i]) ** 2) / (2 * s0[i] ** 2) - 0.5
                )

            step_recon = 0.0
            for g in range(gs.G):
                rows = range(gs.slice(g).start, gs.slice(g).stop)
                u = P["loadings.W"][t, g] @ z
                inp = np.tanh(np.concatenate([u, h]))
                for r in rows:
                    w = np.concatenate([P["decoder.weight_u"][r], P["decoder.weight_h"][r]])
                    mean = float(w @ inp) + P["decoder.bias"][r]
                    s = math.exp(P["decoder.log_scale"][r])
                    step_recon += -0.5 * math.log(2 * math.pi) - math.log(s) - (xt[r] - mean) ** 2 / (2 * s * s)

            kl += step_kl
            recon += step_recon
            per_step[t][0] += step_recon
            per_step[t][1] += step_kl

            if cfg.static_mode:
                h = np.zeros(H)
                continue
            fz = P["phi_z.out.weight"] @ _relu(P["phi_z.hidden.weight"] @ z + P["phi_z.hidden.bias"]) + P["phi_z.out.bias"]
            gi = P["gru.input.weight"] @ np.concatenate([fx, fz]) + P["gru.input.bias"]
            gh = P["gru.hidden.weight"] @ h + P["gru.hidden.bias"]
            r_gate = _sigmoid(gi[:H] + gh[:H])
            u_gate = _sigmoid(gi[H : 2 * H] + gh[H : 2 * H])
            cand = np.tanh(gi[2 * H :] + r_gate * gh[2 * H :])
            h = (1 - u_gate) * cand + u_gate * h

    penalty = 0.0
    W = P["loadings.W"]
    for t in range(W.shape[0]):
        for g in range(W.shape[1]):
            for j in range(W.shape[3]):
                penalty += math.sqrt(sum(W[t, g, p, j] ** 2 for p in range(W.shape[2])))
    return recon, kl, lam * penalty, per_step
