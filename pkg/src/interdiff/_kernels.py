"""Compiled inner loops.

Everything here works on raw arrays so it can run under ``nogil`` from worker
threads.  Potentials are passed as ``(code, params, tab_r, tab_e)``; see
:meth:`interdiff.potential.PairPotential.kernel_args`.

Cell indices are flattened as ``cx + m*cy + m*m*cz``.
"""
import numpy as np
from numba import njit

ZERO = 0
GAUSSIAN = 1
WELL = 2
TABULATED = 3

INTERACTING = 0
GRADIENT = 1

# status codes returned by the dynamics kernel
OK = 0
STEP_TOO_LARGE = 1
NONFINITE_COEFFICIENT = 2
NONFINITE_FORCE = 3

_jit = dict(cache=True, nogil=True)


@njit(**_jit)
def phi_r2(code, params, tab_r, tab_e, r2):
    """Pair energy as a function of the squared distance."""
    if code == ZERO:
        return 0.0
    cut = params[0]
    if r2 >= cut * cut:
        return 0.0
    if code == GAUSSIAN:
        return params[1] * np.exp(-r2 / (params[2] * params[2]))
    if code == WELL:
        return -params[1] * (np.exp(-r2 / (params[2] * params[2])) - params[3])
    return np.interp(np.sqrt(r2), tab_r, tab_e)


@njit(**_jit)
def dphi_over_r(code, params, tab_r, tab_e, r2):
    """(1/r) dphi/dr, so that grad phi(x) = dphi_over_r * x."""
    if code == ZERO:
        return 0.0
    cut = params[0]
    if r2 >= cut * cut:
        return 0.0
    if code == GAUSSIAN:
        s2 = params[2] * params[2]
        return -2.0 * params[1] / s2 * np.exp(-r2 / s2)
    if code == WELL:
        s2 = params[2] * params[2]
        return 2.0 * params[1] / s2 * np.exp(-r2 / s2)
    r = np.sqrt(r2)
    if r <= tab_r[0] or r == 0.0:
        return 0.0
    k = np.searchsorted(tab_r, r) - 1
    slope = (tab_e[k + 1] - tab_e[k]) / (tab_r[k + 1] - tab_r[k])
    return slope / r


@njit(**_jit)
def min_image(dx, L):
    return dx - L * np.floor(dx / L + 0.5)


@njit(**_jit)
def wrap(x, L):
    y = x - L * np.floor(x / L)
    if y >= L:
        y = 0.0
    return y


@njit(**_jit)
def neumaier_add(s, comp, v):
    t = s + v
    if abs(s) >= abs(v):
        comp += (s - t) + v
    else:
        comp += (v - t) + s
    return t, comp


@njit(**_jit)
def cell_index(x, L, m, d):
    w = L / m
    idx = 0
    mult = 1
    for k in range(d):
        ci = int(x[k] / w)
        if ci >= m:
            ci = m - 1
        elif ci < 0:
            ci = 0
        idx += ci * mult
        mult *= m
    return idx


@njit(**_jit)
def neighbor_cells(c, m, d, out):
    """Write the distinct cells adjacent to ``c`` (itself included) into ``out``."""
    if m < 3:
        n = m ** d
        for k in range(n):
            out[k] = k
        return n
    cx = c % m
    cy = (c // m) % m
    cz = c // (m * m)
    lo_y, hi_y = (-1, 2) if d > 1 else (0, 1)
    lo_z, hi_z = (-1, 2) if d > 2 else (0, 1)
    k = 0
    for oz in range(lo_z, hi_z):
        for oy in range(lo_y, hi_y):
            for ox in range(-1, 2):
                out[k] = ((cx + ox + m) % m) + m * (((cy + oy + m) % m) + m * ((cz + oz + m) % m))
                k += 1
    return k


@njit(**_jit)
def build_csr(pos, n, L, m, d):
    """Counting-sort cell list; members of each cell appear in ascending index order."""
    ncell = m ** d
    cell_of = np.empty(n, np.int64)
    starts = np.zeros(ncell + 1, np.int64)
    for i in range(n):
        c = cell_index(pos[i], L, m, d)
        cell_of[i] = c
        starts[c + 1] += 1
    for c in range(ncell):
        starts[c + 1] += starts[c]
    fill = starts[:-1].copy()
    order = np.empty(n, np.int64)
    for i in range(n):
        c = cell_of[i]
        order[fill[c]] = i
        fill[c] += 1
    return cell_of, starts, order


@njit(**_jit)
def pair_r2(xi, xj, L, d):
    r2 = 0.0
    for k in range(d):
        dx = min_image(xi[k] - xj[k], L)
        r2 += dx * dx
    return r2


# ---------------------------------------------------------------------------
# energies on a CSR cell list


@njit(**_jit)
def local_energy_csr(x, exclude, pos, starts, order, L, m, d, code, params, tab_r, tab_e):
    """Sum of phi(x - y) over y != pos[exclude], in ascending particle index order."""
    if code == ZERO:
        return 0.0
    nb = np.empty(27, np.int64)
    c = cell_index(x, L, m, d)
    nn = neighbor_cells(c, m, d, nb)
    total = 0
    for a in range(nn):
        total += starts[nb[a] + 1] - starts[nb[a]]
    cand = np.empty(total, np.int64)
    k = 0
    for a in range(nn):
        for p in range(starts[nb[a]], starts[nb[a] + 1]):
            cand[k] = order[p]
            k += 1
    cand.sort()
    s = 0.0
    comp = 0.0
    for j in cand:
        if j == exclude:
            continue
        s, comp = neumaier_add(s, comp, phi_r2(code, params, tab_r, tab_e, pair_r2(x, pos[j], L, d)))
    return s + comp


@njit(**_jit)
def local_energy_brute(x, exclude, pos, n, L, d, code, params, tab_r, tab_e):
    s = 0.0
    comp = 0.0
    for j in range(n):
        if j == exclude:
            continue
        s, comp = neumaier_add(s, comp, phi_r2(code, params, tab_r, tab_e, pair_r2(x, pos[j], L, d)))
    return s + comp


@njit(**_jit)
def local_sums(pos, n, L, m, d, code, params, tab_r, tab_e, want_force):
    """Per-particle interaction sums and forces -sum_y grad phi(x - y)."""
    s_out = np.zeros(n)
    f_out = np.zeros((n, d))
    if code == ZERO or n < 2:
        return s_out, f_out
    cell_of, starts, order = build_csr(pos, n, L, m, d)
    nb = np.empty(27, np.int64)
    dx = np.empty(d)
    for i in range(n):
        nn = neighbor_cells(cell_of[i], m, d, nb)
        s = 0.0
        comp = 0.0
        for a in range(nn):
            for p in range(starts[nb[a]], starts[nb[a] + 1]):
                j = order[p]
                if j == i:
                    continue
                r2 = 0.0
                for k in range(d):
                    dx[k] = min_image(pos[i, k] - pos[j, k], L)
                    r2 += dx[k] * dx[k]
                s, comp = neumaier_add(s, comp, phi_r2(code, params, tab_r, tab_e, r2))
                if want_force:
                    g = dphi_over_r(code, params, tab_r, tab_e, r2)
                    for k in range(d):
                        f_out[i, k] -= g * dx[k]
        s_out[i] = s + comp
    return s_out, f_out


@njit(**_jit)
def min_pair_distance(pos, n, L, d):
    """Exact minimum pair distance; cell search first, brute force as fallback."""
    best = np.inf
    m = int(np.floor(L / ((L ** d / max(n, 1)) ** (1.0 / d))))
    if m >= 3 and m ** d <= 4 * n + 8:
        cell_of, starts, order = build_csr(pos, n, L, m, d)
        nb = np.empty(27, np.int64)
        for i in range(n):
            nn = neighbor_cells(cell_of[i], m, d, nb)
            for a in range(nn):
                for p in range(starts[nb[a]], starts[nb[a] + 1]):
                    j = order[p]
                    if j > i:
                        r2 = pair_r2(pos[i], pos[j], L, d)
                        if r2 < best:
                            best = r2
        if np.sqrt(best) < L / m:
            return np.sqrt(best)
        best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            r2 = pair_r2(pos[i], pos[j], L, d)
            if r2 < best:
                best = r2
    return np.sqrt(best)


@njit(**_jit)
def pair_histogram(pos, n, L, d, rmax, nbins, counts):
    """Add unordered min-image pair distances below ``rmax`` to ``counts``."""
    dr = rmax / nbins
    for i in range(n):
        for j in range(i + 1, n):
            r = np.sqrt(pair_r2(pos[i], pos[j], L, d))
            if r < rmax:
                b = int(r / dr)
                if b >= nbins:
                    b = nbins - 1
                counts[b] += 1


@njit(**_jit)
def window_counts(pos, n, L, d, side, offsets, out):
    """Count points in cubes [o, o+side)^d (periodic) for each offset row."""
    for w in range(offsets.shape[0]):
        cnt = 0
        for i in range(n):
            inside = True
            for k in range(d):
                u = pos[i, k] - offsets[w, k]
                u = u - L * np.floor(u / L)
                if u >= side:
                    inside = False
                    break
            if inside:
                cnt += 1
        out[w] = cnt


# ---------------------------------------------------------------------------
# grand-canonical Metropolis


@njit(**_jit)
def birth_acceptance(z, V, n, dE):
    """min(1, zV/(n+1) e^{-dE}) for inserting into an n-point state."""
    return np.exp(min(0.0, np.log(z * V / (n + 1)) - dE))


@njit(**_jit)
def death_acceptance(z, V, n, dE):
    """min(1, n/(zV) e^{+dE}) for deleting from an n-point state."""
    return np.exp(min(0.0, np.log(n / (z * V)) + dE))


@njit(**_jit)
def translate_acceptance(dE):
    return np.exp(min(0.0, -dE))


@njit(**_jit)
def _local_energy_cells(x, exclude, pos, members, counts, L, m, d, code, params, tab_r, tab_e):
    if code == ZERO:
        return 0.0
    nb = np.empty(27, np.int64)
    nn = neighbor_cells(cell_index(x, L, m, d), m, d, nb)
    s = 0.0
    comp = 0.0
    for a in range(nn):
        c = nb[a]
        for p in range(counts[c]):
            j = members[c, p]
            if j == exclude:
                continue
            s, comp = neumaier_add(s, comp, phi_r2(code, params, tab_r, tab_e, pair_r2(x, pos[j], L, d)))
    return s + comp


@njit(**_jit)
def _cell_remove(i, pcell, pslot, members, counts):
    c = pcell[i]
    s = pslot[i]
    last = counts[c] - 1
    moved = members[c, last]
    members[c, s] = moved
    pslot[moved] = s
    counts[c] = last


@njit(**_jit)
def _cell_append(i, c, pcell, pslot, members, counts):
    members[c, counts[c]] = i
    pslot[i] = counts[c]
    pcell[i] = c
    counts[c] += 1


@njit(**_jit)
def mcmc_moves(pos, state, members, counts, pcell, pslot, L, m, d,
               code, params, tab_r, tab_e, z, p_birth, p_death, delta,
               U, G, accepted, proposed):
    """Run ``len(U)`` Metropolis moves in place.

    ``U`` rows hold uniforms ``[type, pick, accept, radius, x_1..x_d]`` and ``G``
    rows hold the Gaussian direction of a translation.  Returns the number of
    moves completed; fewer than ``len(U)`` means the buffers are full.
    """
    cap = pos.shape[0]
    V = L ** d
    newx = np.empty(d)
    for k in range(U.shape[0]):
        n = state[0]
        u = U[k, 0]
        if u < p_birth:
            if n >= cap:
                return k
            proposed[0] += 1
            for a in range(d):
                newx[a] = U[k, 4 + a] * L
            dE = _local_energy_cells(newx, -1, pos, members, counts, L, m, d, code, params, tab_r, tab_e)
            if U[k, 2] < birth_acceptance(z, V, n, dE):
                for a in range(d):
                    pos[n, a] = newx[a]
                _cell_append(n, cell_index(newx, L, m, d), pcell, pslot, members, counts)
                state[0] = n + 1
                accepted[0] += 1
        elif u < p_birth + p_death:
            proposed[1] += 1
            if n == 0:
                continue
            i = min(int(U[k, 1] * n), n - 1)
            dE = _local_energy_cells(pos[i], i, pos, members, counts, L, m, d, code, params, tab_r, tab_e)
            if U[k, 2] < death_acceptance(z, V, n, dE):
                _cell_remove(i, pcell, pslot, members, counts)
                last = n - 1
                if i != last:
                    for a in range(d):
                        pos[i, a] = pos[last, a]
                    c2 = pcell[last]
                    s2 = pslot[last]
                    members[c2, s2] = i
                    pcell[i] = c2
                    pslot[i] = s2
                state[0] = last
                accepted[1] += 1
        else:
            proposed[2] += 1
            if n == 0:
                continue
            i = min(int(U[k, 1] * n), n - 1)
            norm = 0.0
            for a in range(d):
                norm += G[k, a] * G[k, a]
            norm = np.sqrt(norm)
            if norm == 0.0:
                continue
            rad = delta * U[k, 3] ** (1.0 / d)
            for a in range(d):
                newx[a] = wrap(pos[i, a] + rad * G[k, a] / norm, L)
            e_old = _local_energy_cells(pos[i], i, pos, members, counts, L, m, d, code, params, tab_r, tab_e)
            e_new = _local_energy_cells(newx, i, pos, members, counts, L, m, d, code, params, tab_r, tab_e)
            if U[k, 2] < translate_acceptance(e_new - e_old):
                c_new = cell_index(newx, L, m, d)
                if c_new != pcell[i]:
                    _cell_remove(i, pcell, pslot, members, counts)
                    _cell_append(i, c_new, pcell, pslot, members, counts)
                for a in range(d):
                    pos[i, a] = newx[a]
                accepted[2] += 1
    return U.shape[0]


# ---------------------------------------------------------------------------
# SDE integration


@njit(**_jit)
def sde_steps(pos, unwrapped, L, m, d, code, params, tab_r, tab_e, kind, dt, xi, bound,
              record_every, out):
    """Synchronous Euler-Maruyama steps; ``xi`` has shape (steps, n, d).

    Every ``record_every`` steps the unwrapped positions are written to the
    next row of ``out``.  Returns ``(status, step)``; ``step`` is the failing
    step on error.
    """
    n = pos.shape[0]
    sq = np.sqrt(2.0 * dt)
    disp = np.empty((n, d))
    rec = 0
    bound2 = bound * bound
    for t in range(xi.shape[0]):
        s, f = local_sums(pos, n, L, m, d, code, params, tab_r, tab_e, kind == GRADIENT)
        for i in range(n):
            if kind == INTERACTING:
                amp = sq * np.exp(0.5 * s[i])
                if not np.isfinite(amp):
                    return NONFINITE_COEFFICIENT, t
                for k in range(d):
                    disp[i, k] = amp * xi[t, i, k]
            else:
                for k in range(d):
                    if not np.isfinite(f[i, k]):
                        return NONFINITE_FORCE, t
                    disp[i, k] = f[i, k] * dt + sq * xi[t, i, k]
            r2 = 0.0
            for k in range(d):
                r2 += disp[i, k] * disp[i, k]
            if r2 > bound2:
                return STEP_TOO_LARGE, t
        for i in range(n):
            for k in range(d):
                unwrapped[i, k] += disp[i, k]
                pos[i, k] = wrap(pos[i, k] + disp[i, k], L)
        if (t + 1) % record_every == 0:
            out[rec] = unwrapped
            rec += 1
    return OK, xi.shape[0]


@njit(**_jit)
def pair_energy_matrix(pos, n, L, d, code, params, tab_r, tab_e):
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            e = phi_r2(code, params, tab_r, tab_e, pair_r2(pos[i], pos[j], L, d))
            out[i, j] = e
            out[j, i] = e
    return out


@njit(**_jit)
def local_energies_at(xs, pos, starts, order, L, m, d, code, params, tab_r, tab_e):
    """local_energy_csr for each query row of ``xs`` (no exclusion)."""
    out = np.empty(xs.shape[0])
    for q in range(xs.shape[0]):
        out[q] = local_energy_csr(xs[q], -1, pos, starts, order, L, m, d, code, params, tab_r, tab_e)
    return out
