"""Numba-compiled numerical core shared by the geometry and integrator modules.

Everything here operates on flat parameter arrays so the hot path stays inside
compiled code.  Layouts:

profile params ``P`` (float64[13]):
    [0] a0   [1] alpha  [2] a_inf  [3] beta  [4] x_lo  [5] x_hi
    [6:12]   quintic coefficients of log b on the blend interval,
             in s = (x - x_lo) / (x_hi - x_lo)
    [12]     1 / (x_hi - x_lo)

covariance params ``C`` (float64[7]):
    [0] kind (0 = isotropic, 1 = diagonal profile)
    [1] v
    [2] axial a     [3] axial c      (entry = a + c / (1 + x))
    [4] transverse a[5] transverse c
    [6] s_max       (operator-norm bound on the matrix square root)

step params ``SP`` (float64[6]):
    [0] dt_max  [1] eta  [2] t_max  [3] lambda_tol  [4] r_max
    [5] tol_boundary_rel

path state ``SF`` (float64[d + 5]):
    [0] t  [1] x  [2:2+d] y  [2+d] L  [3+d] err_x  [4+d] err_rho

path counters ``SI`` (int64[8]):
    [0] steps  [1] status  [2] next_level  [3] rec_count  [4] buf_pos
    [5] cusp_steps  [6] reflect_events  [7] rec_overflow
"""

import numpy as np
from numba import njit

STATUS_RUNNING = 0
STATUS_REACHED_RMAX = 1
STATUS_TIME_BUDGET = 2
STATUS_ERROR_REFLECT = 3
STATUS_ERROR_STEPS = 4

NEED_REFILL = 0
TERMINATED = 1


@njit(cache=True)
def b_val(P, x):
    """Boundary profile b(x); 0 for x <= 0."""
    if x <= 0.0:
        return 0.0
    if x <= P[4]:
        a0 = P[0]
        al = P[1]
        if al == 0.5:
            return a0 * np.sqrt(x)
        return a0 * x ** al
    if x >= P[5]:
        ai = P[2]
        be = P[3]
        if be == 0.0:
            return ai
        if be == 0.5:
            return ai * np.sqrt(x)
        if be == -1.0:
            return ai / x
        if be == -2.0:
            return ai / (x * x)
        return ai * x ** be
    s = (x - P[4]) * P[12]
    q = P[6] + s * (P[7] + s * (P[8] + s * (P[9] + s * (P[10] + s * P[11]))))
    return np.exp(q)


@njit(cache=True)
def b_derivs(P, x):
    """(b'(x), b''(x)) for x > 0, piecewise analytic."""
    if x <= P[4]:
        a0 = P[0]
        al = P[1]
        bp = a0 * al * x ** (al - 1.0)
        bpp = a0 * al * (al - 1.0) * x ** (al - 2.0)
        return bp, bpp
    if x >= P[5]:
        ai = P[2]
        be = P[3]
        if be == 0.0:
            return 0.0, 0.0
        bp = ai * be * x ** (be - 1.0)
        bpp = ai * be * (be - 1.0) * x ** (be - 2.0)
        return bp, bpp
    s = (x - P[4]) * P[12]
    q = P[6] + s * (P[7] + s * (P[8] + s * (P[9] + s * (P[10] + s * P[11]))))
    q1 = P[7] + s * (2.0 * P[8] + s * (3.0 * P[9] + s * (4.0 * P[10] + s * 5.0 * P[11])))
    q2 = 2.0 * P[8] + s * (6.0 * P[9] + s * (12.0 * P[10] + s * 20.0 * P[11]))
    b = np.exp(q)
    lb1 = q1 * P[12]          # d/dx log b
    lb2 = q2 * P[12] * P[12]  # d2/dx2 of the quintic term
    bp = b * lb1
    bpp = b * (lb1 * lb1 + lb2)
    return bp, bpp


@njit(cache=True)
def b_many(P, xs, out):
    for i in range(xs.shape[0]):
        out[i] = b_val(P, xs[i])


@njit(cache=True)
def inside(P, x, rho, tol_rel):
    """Containment |rho| <= b(x) within the relative boundary tolerance."""
    if x < 0.0:
        return False
    b = b_val(P, x)
    return abs(rho) <= b + tol_rel * (1.0 + b)


@njit(cache=True)
def _foot_obj(P, x, a, xp):
    db = a - b_val(P, xp)
    dx = x - xp
    return dx * dx + db * db


@njit(cache=True)
def nearest_foot(P, x, a):
    """Abscissa x' >= 0 minimizing (x - x')^2 + (a - b(x'))^2, a = ||y||.

    Newton from x' = x first (cheap for small overshoots, b' small), with a
    sampled-bracket + golden-section fallback, then a final Newton polish.
    """
    # Newton fast path
    xp = x if x > 0.0 else 0.0
    ok = False
    if xp > 0.0:
        for _ in range(12):
            bp, bpp = b_derivs(P, xp)
            b = b_val(P, xp)
            h1 = -2.0 * (x - xp) - 2.0 * (a - b) * bp
            h2 = 2.0 + 2.0 * bp * bp - 2.0 * (a - b) * bpp
            if h2 <= 0.0:
                break
            step = h1 / h2
            xn = xp - step
            if xn <= 0.0:
                break
            if abs(step) <= 1e-13 * (1.0 + abs(xp)):
                xp = xn
                ok = True
                break
            xp = xn
    if ok and _foot_obj(P, x, a, xp) <= _foot_obj(P, x, a, max(x, 0.0)) + 1e-300:
        return xp

    # Robust path: bracket by sampling, expand geometrically if the minimum
    # sits on an endpoint, then golden section.
    guess = abs(a - b_val(P, max(x, 0.0)))
    if x < 0.0:
        guess = max(guess, np.sqrt(x * x + a * a))
    if guess <= 0.0:
        guess = 1e-8 * (1.0 + abs(x))
    lo = x - 4.0 * guess
    if lo < 0.0:
        lo = 0.0
    hi = x + 4.0 * guess
    if hi <= lo:
        hi = lo + 8.0 * guess
    for _ in range(200):
        n = 17
        best = 0
        fbest = 1e300
        for i in range(n):
            xi = lo + (hi - lo) * i / (n - 1.0)
            fi = _foot_obj(P, x, a, xi)
            if fi < fbest:
                fbest = fi
                best = i
        if best == 0 and lo > 0.0:
            hi = lo + (hi - lo) / (n - 1.0)
            lo = max(0.0, lo - (hi - lo) * 64.0)
        elif best == n - 1:
            lo = hi - (hi - lo) / (n - 1.0)
            hi = hi + (hi - lo) * 64.0
        else:
            w = (hi - lo) / (n - 1.0)
            lo = max(0.0, lo + (best - 1) * w)
            hi = lo + 2.0 * w
            break
    gr = 0.6180339887498949
    c = hi - gr * (hi - lo)
    d = lo + gr * (hi - lo)
    fc = _foot_obj(P, x, a, c)
    fd = _foot_obj(P, x, a, d)
    for _ in range(120):
        if hi - lo <= 1e-13 * (1.0 + abs(lo)):
            break
        if fc < fd:
            hi = d
            d = c
            fd = fc
            c = hi - gr * (hi - lo)
            fc = _foot_obj(P, x, a, c)
        else:
            lo = c
            c = d
            fc = fd
            d = lo + gr * (hi - lo)
            fd = _foot_obj(P, x, a, d)
    xp = 0.5 * (lo + hi)
    # derivative polish
    for _ in range(4):
        if xp <= 0.0:
            return 0.0
        bp, bpp = b_derivs(P, xp)
        b = b_val(P, xp)
        h1 = -2.0 * (x - xp) - 2.0 * (a - b) * bp
        h2 = 2.0 + 2.0 * bp * bp - 2.0 * (a - b) * bpp
        if h2 <= 0.0:
            break
        xn = xp - h1 / h2
        if xn < 0.0:
            xn = 0.0
        xp = xn
    return xp


@njit(cache=True)
def phi_plane(P, s0, c0, xf):
    """Reflection field at boundary abscissa xf in (x, rho) half-plane
    coordinates; rho is the coordinate along the outward transverse
    direction u.  Returns (phi_x, phi_rho).  At the apex the field is e_x."""
    if xf <= 0.0:
        return 1.0, 0.0
    bp, _ = b_derivs(P, xf)
    den = np.sqrt(1.0 + bp * bp)
    return bp / den + s0, -1.0 / den - (c0 - 1.0)


@njit(cache=True)
def resolve_reflection_plane(P, s0, c0, xs, rs, lam_tol, max_iters, tol_rel):
    """Oblique push-back of an exterior proposal, in (x, rho) coordinates.

    rho is signed along the proposal's transverse direction.  Returns
    (x', rho', dL, ok); dL is the accumulated multiplier of phi.
    """
    dL = 0.0
    for _ in range(max_iters):
        if inside(P, xs, rs, tol_rel):
            return xs, rs, dL, True
        sgn = 1.0 if rs >= 0.0 else -1.0
        a = abs(rs)
        xf = nearest_foot(P, xs, a)
        px, pr = phi_plane(P, s0, c0, xf)
        pr = sgn * pr
        # bracket the crossing: double lam until inside
        dxf = xs - xf
        drf = a - b_val(P, xf)
        lam_hi = np.sqrt(dxf * dxf + drf * drf)
        if lam_hi < lam_tol:
            lam_hi = lam_tol
        okb = False
        for _ in range(200):
            if inside(P, xs + lam_hi * px, rs + lam_hi * pr, tol_rel):
                okb = True
                break
            lam_hi *= 2.0
        if not okb:
            return xs, rs, dL, False
        lam_lo = 0.0
        while lam_hi - lam_lo > lam_tol:
            mid = 0.5 * (lam_lo + lam_hi)
            if inside(P, xs + mid * px, rs + mid * pr, tol_rel):
                lam_hi = mid
            else:
                lam_lo = mid
        xs = xs + lam_hi * px
        rs = rs + lam_hi * pr
        dL += lam_hi
    if inside(P, xs, rs, tol_rel):
        return xs, rs, dL, True
    return xs, rs, dL, False


@njit(cache=True)
def root_entries(C, x):
    """Diagonal entries (axial, transverse) of the symmetric root of Sigma."""
    if C[0] == 0.0:
        return C[1], C[1]
    ra = np.sqrt(C[2] + C[3] / (1.0 + x))
    rt = np.sqrt(C[4] + C[5] / (1.0 + x))
    return ra, rt


@njit(cache=True)
def step_loop(P, d, C, s0, c0, SP, max_reflect_iters, record_stride, max_steps,
              levels, hits, SF, SI, records, buf):
    """Advance one path until termination or buffer exhaustion.

    Returns NEED_REFILL when the normal buffer is consumed, TERMINATED
    otherwise (SI[1] then holds the terminal status).
    """
    dt_max = SP[0]
    eta = SP[1]
    t_max = SP[2]
    lam_tol = SP[3]
    r_max = SP[4]
    tol_rel = SP[5]
    inv_smax = 1.0 / C[6]
    nlev = levels.shape[0]
    rec_cap = records.shape[0]
    buf_len = buf.shape[0]
    nd = d + 1

    t = SF[0]
    x = SF[1]
    L = SF[2 + d]
    pos = SI[4]

    while True:
        # termination checks against the current state, so degenerate
        # configurations (level <= x0, t_max = 0) stop before any step
        nl = SI[2]
        while nl < nlev and x >= levels[nl]:
            hits[nl] = t
            nl += 1
        SI[2] = nl
        if SI[1] == STATUS_RUNNING:
            if x >= r_max:
                SI[1] = STATUS_REACHED_RMAX
            elif t >= t_max:
                SI[1] = STATUS_TIME_BUDGET
        if SI[1] != STATUS_RUNNING:
            SF[0] = t
            SF[1] = x
            SF[2 + d] = L
            SI[4] = pos
            return TERMINATED
        if pos + nd > buf_len:
            SF[0] = t
            SF[1] = x
            SF[2 + d] = L
            SI[4] = pos
            return NEED_REFILL
        if SI[0] >= max_steps:
            SI[1] = STATUS_ERROR_STEPS
            continue

        b = b_val(P, x)
        dt = eta * (b * inv_smax) * (b * inv_smax)
        if dt > dt_max:
            dt = dt_max
        sq = np.sqrt(dt)
        ra, rt = root_entries(C, x)

        xs = x + sq * ra * buf[pos]
        rho2 = 0.0
        for j in range(d):
            yv = SF[2 + j] + sq * rt * buf[pos + 1 + j]
            SF[2 + j] = yv
            rho2 += yv * yv
        pos += nd
        rho = np.sqrt(rho2)

        dL = 0.0
        if not inside(P, xs, rho, tol_rel):
            xn, rn, dL, ok = resolve_reflection_plane(
                P, s0, c0, xs, rho, lam_tol, max_reflect_iters, tol_rel)
            if not ok:
                SF[3 + d] = xs
                SF[4 + d] = rho
                SI[1] = STATUS_ERROR_REFLECT
                continue
            if rho > 0.0:
                scale = rn / rho
                for j in range(d):
                    SF[2 + j] *= scale
            else:
                SF[2] = rn
                for j in range(1, d):
                    SF[2 + j] = 0.0
            xs = xn
            SI[6] += 1
        x = xs
        t += dt
        L += dL
        SI[0] += 1
        if x < P[4]:
            SI[5] += 1

        terminal = (x >= r_max or t >= t_max
                    or SI[1] != STATUS_RUNNING)
        if record_stride > 0 and (SI[0] % record_stride == 0 or terminal):
            rc = SI[3]
            if rc < rec_cap:
                rho2 = 0.0
                for j in range(d):
                    rho2 += SF[2 + j] * SF[2 + j]
                records[rc, 0] = t
                records[rc, 1] = x
                records[rc, 2] = np.sqrt(rho2)
                records[rc, 3] = L
                SI[3] = rc + 1
            else:
                SI[7] = 1


@njit(cache=True)
def strip_transverse_loop(half_width, c0, sigma, dt, n_steps, buf, state):
    """1-D benchmark: transverse coordinate on [-b, b] with push-back of
    magnitude c0.  state = [V, L, consumed_steps]; returns NEED_REFILL/TERMINATED."""
    V = state[0]
    L = state[1]
    k = int(state[2])
    sq = sigma * np.sqrt(dt)
    buf_len = buf.shape[0]
    pos = 0
    while k < n_steps:
        if pos >= buf_len:
            state[0] = V
            state[1] = L
            state[2] = k
            return NEED_REFILL
        V += sq * buf[pos]
        pos += 1
        if V > half_width:
            L += (V - half_width) / c0
            V = half_width
        elif V < -half_width:
            L += (-V - half_width) / c0
            V = -half_width
        k += 1
    state[0] = V
    state[1] = L
    state[2] = k
    return TERMINATED


@njit(cache=True)
def strip_walk_loop(half_width, c0, h, n_steps, buf, state):
    """Discrete +-h walk with boundary pushes; buf holds uniforms in [0,1)."""
    V = state[0]
    L = state[1]
    k = int(state[2])
    buf_len = buf.shape[0]
    pos = 0
    while k < n_steps:
        if pos >= buf_len:
            state[0] = V
            state[1] = L
            state[2] = k
            return NEED_REFILL
        if buf[pos] < 0.5:
            V += h
        else:
            V -= h
        pos += 1
        if V > half_width:
            L += (V - half_width) / c0
            V = half_width
        elif V < -half_width:
            L += (-V - half_width) / c0
            V = -half_width
        k += 1
    state[0] = V
    state[1] = L
    state[2] = k
    return TERMINATED
