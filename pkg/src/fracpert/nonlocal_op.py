"""Principal-value evaluation of the perturbation operator S^b.

``apply_Sb`` works on any vectorized scalar field. ``apply_Sb_to_green_ball``
evaluates S^b_x G_B(x, y) for radial b in the plane with a quadrature that
is split at lam = (delta_B(x) ^ |x-y|)/2 and at L = |x-y|/2:

* |w| < lam: symmetrized second difference, polar about x;
* lam < |w| < L: polar about x on log-spaced panels, Jacobi panel at the boundary;
* |u - x| > L: polar about y with the pole u = y removed by a Jacobi weight and
  the hole B(x, L) cut out by a sine substitution in the angle.
"""

import math

import numba as nb
import numpy as np

from ._kernels import green_ball_prefactor, green_factor, green_ball_pt
from .jump_kernel import CALLBACK, TRUNCATED_STABLE, ZERO
from .quadrature import NumericalError, gauss_jacobi, gauss_legendre, sphere_area, sphere_rule
from .special import normalizing_constant


class CancelToken:
    """Cooperative cancellation flag checked between long quadrature batches."""

    def __init__(self):
        self.cancelled = False

    def cancel(self):
        self.cancelled = True

    def check(self):
        if self.cancelled:
            raise InterruptedError("evaluation cancelled")


# -- generic S^b f -----------------------------------------------------------

def _window(rho, R):
    """Smooth cutoff: 1 on [0, R], 0 beyond 2R, C-infinity in between."""
    s = np.clip((rho - R) / R, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / s), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / (1.0 - s)), 0.0)
    return b / (a + b)


def _sb_parts(params, b, f, x, inner, far, n_rad, n_dir, method, grad, panel_width):
    d, be = params.d, params.beta
    x = np.asarray(x, dtype=float)
    dirs, wdir = sphere_rule(d, n_dir)
    fx = float(f(x[None, :])[0])

    # inner ball |z| < inner, radial weight rho^{1-beta}
    s, ws = gauss_jacobi(n_rad, 1.0 - be, 0.0)
    rho = inner * s
    z = rho[:, None, None] * dirs[None, :, :]
    pts_p = x + z
    bz = b(np.broadcast_to(x, z.shape), z)
    if method == "symmetric":
        fp = f(pts_p.reshape(-1, d)).reshape(z.shape[:2])
        fm = f((x - z).reshape(-1, d)).reshape(z.shape[:2])
        core = 0.5 * (fp + fm - 2.0 * fx)
    else:
        g = grad(x[None, :])[0] if grad is not None else _fd_grad(f, x)
        fp = f(pts_p.reshape(-1, d)).reshape(z.shape[:2])
        core = fp - fx - z @ g
    inner_val = inner ** (2.0 - be) * np.sum(ws[:, None] * wdir[None, :] * core * bz / rho[:, None] ** 2)

    # outer region |z| > inner, smooth window between far and 2 far
    xg, wg = gauss_legendre(8)
    n_pan = int(math.ceil((2.0 * far - inner) / panel_width))
    edges = np.linspace(inner, 2.0 * far, n_pan + 1)
    rr = (0.5 * (edges[1:] - edges[:-1])[:, None] * xg + 0.5 * (edges[1:] + edges[:-1])[:, None]).ravel()
    wr = (0.5 * (edges[1:] - edges[:-1])[:, None] * wg).ravel()
    win = _window(rr, far)
    wwin = wr * win * rr ** (-1.0 - be)
    if not b.is_radial:
        return inner_val, _outer_sum(params, b, f, x, fx, rr, wwin, dirs, wdir)
    # ring means of the even part of f; rings far out need more directions in the plane
    means = np.empty(rr.size)
    if d == 2:
        n_ring = n_dir * np.maximum(1, np.ceil(rr / (4.0 * inner)).astype(int))
        for n in np.unique(n_ring):
            sel = n_ring == n
            dn, wn = sphere_rule(2, int(n))
            means[sel] = _ring_means(f, x, rr[sel], dn, wn)
    else:
        means = _ring_means(f, x, rr, dirs, wdir)
    area = float(np.sum(wdir))
    bw = wwin * b.radial(rr) * area
    # far-field model: beyond the window f is replaced by its mean over the window shell,
    # taken against a smooth bump so oscillating f average out fast
    bump = wr * win * (1.0 - win)
    f_inf = float(np.sum(bump * means) / np.sum(bump))
    tail = b.tail_weight(params, inner)
    outer = float(np.sum(bw * means)) + f_inf * (tail - float(np.sum(bw))) - fx * tail
    return inner_val, outer


def _ring_means(f, x, rr, dirs, wdir):
    z = rr[:, None, None] * dirs[None, :, :]
    d = x.size
    fp = f((x + z).reshape(-1, d)).reshape(z.shape[:2])
    fm = f((x - z).reshape(-1, d)).reshape(z.shape[:2])
    return (0.5 * (fp + fm)) @ wdir / np.sum(wdir)


def _outer_sum(params, b, f, x, fx, rr, wwin, dirs, wdir):
    z = rr[:, None, None] * dirs[None, :, :]
    bz = b(np.broadcast_to(x, z.shape), z)
    fp = f((x + z).reshape(-1, params.d)).reshape(z.shape[:2])
    fm = f((x - z).reshape(-1, params.d)).reshape(z.shape[:2])
    core = 0.5 * (fp + fm) - fx
    return float(np.sum(wwin[:, None] * wdir[None, :] * core * bz))


def _fd_grad(f, x, h=1e-5):
    d = x.size
    e = np.eye(d) * h
    return (f(x + e) - f(x - e)) / (2.0 * h)


def apply_Sb(params, b, f, x, scale=1.0, tol=1e-7, inner=1.0, far=60.0, n_rad=40, n_dir=64,
             method="symmetric", grad=None, panel_width=0.5, return_error=False):
    """S^b f(x) = A(d,-beta) PV int (f(x+z) - f(x)) b(x,z) |z|^{-d-beta} dz.

    ``f`` maps an (n, d) array of points to n values. ``method`` is
    ``"symmetric"`` (second difference, the default) or ``"gradient"``
    (first-order Taylor compensation inside |z| < inner). The error estimate
    compares the rule against a coarser one and a longer cutoff.
    """
    if b.kind == ZERO:
        return (0.0, 0.0) if return_error else 0.0
    cb = normalizing_constant(params.d, params.beta)
    for cut in (far, 1.5 * far, 2.0 * far):
        # slowly decaying or low-frequency f: lengthen the far cutoff before giving up
        args = (inner, cut, n_rad, n_dir, method, grad, panel_width)
        i1, o1 = _sb_parts(params, b, f, x, *args)
        i2, _ = _sb_parts(params, b, f, x, inner, cut, n_rad // 2, n_dir, method, grad, panel_width)
        _, o2 = _sb_parts(params, b, f, x, inner, 1.5 * cut, n_rad, n_dir, method, grad, panel_width)
        val = cb * (i1 + o1)
        err = cb * (abs(i1 - i2) + abs(o1 - o2))
        if not np.isfinite(val):
            raise NumericalError("non-finite S^b value")
        if err <= tol * max(scale, abs(val)):
            break
    else:
        raise NumericalError(f"S^b quadrature error {err:.3g} above tolerance", err)
    return (val, err) if return_error else val


# -- S^b_x G_B(x, y) in the plane ------------------------------------------

@nb.njit(cache=True)
def _bval(rho, kind, a, cut, ratio, expo):
    if kind == 1:
        return a
    if kind == 2:
        if rho >= cut:
            return -ratio * rho**expo
        return 0.0
    return 0.0


@nb.njit(cache=True)
def _grad_gb(x, y, c, R, alpha, cst, out):
    px = R * R - (x[0] - c[0]) ** 2 - (x[1] - c[1]) ** 2
    py = (R * R - (y[0] - c[0]) ** 2 - (y[1] - c[1]) ** 2) / (R * R)
    d0 = x[0] - y[0]
    d1 = x[1] - y[1]
    r2 = d0 * d0 + d1 * d1
    z = px * py / r2
    F = green_factor(z, 2, alpha)
    dF = z ** (0.5 * alpha - 1.0) / (1.0 + z)
    rp = r2 ** (0.5 * (alpha - 2.0))
    for k in range(2):
        dk = x[k] - y[k]
        gz = py * (-2.0 * (x[k] - c[k]) / r2 - 2.0 * px * dk / (r2 * r2))
        out[k] = cst * ((alpha - 2.0) * rp / r2 * F * dk + rp * dF * gz)


@nb.njit(cache=True)
def _ray_exit(p, e, c, R):
    # distance from p (inside) along unit e to the circle |u - c| = R
    q0 = p[0] - c[0]
    q1 = p[1] - c[1]
    pe = q0 * e[0] + q1 * e[1]
    disc = pe * pe + R * R - q0 * q0 - q1 * q1
    if disc < 0.0:
        disc = 0.0
    return -pe + math.sqrt(disc)


@nb.njit(cache=True)
def _sb_green_ball_2d(x, y, c, R, alpha, beta, cst, kind, a, cut, ratio, expo, absolute,
                      gj_in_s, gj_in_w, gl_x, gl_w, gjb_s, gjb_w, gjy_s, gjy_w, n_ang):
    """Bracket [I_in + I_out - G T] of S^b_x G_B(x, y), without the A(d,-beta) factor."""
    u = np.empty(2)
    v = np.empty(2)
    e = np.empty(2)
    gx = np.empty(2)
    dxc = math.sqrt((x[0] - c[0]) ** 2 + (x[1] - c[1]) ** 2)
    dyc = math.sqrt((y[0] - c[0]) ** 2 + (y[1] - c[1]) ** 2)
    deltax = R - dxc
    deltay = R - dyc
    r = math.sqrt((x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2)
    lam = 0.5 * min(deltax, r)
    L = 0.5 * r
    gxy = green_ball_pt(x, y, c, R, 2, alpha, cst)
    if absolute:
        _grad_gb(x, y, c, R, alpha, cst, gx)

    # inner disc |w| < lam
    inner = 0.0
    n_in = gj_in_s.size
    n_th = 32
    for j in range(n_th):
        th = math.pi * (j + 0.5) / n_th
        e[0] = math.cos(th)
        e[1] = math.sin(th)
        for i in range(n_in):
            rho = lam * gj_in_s[i]
            bv = _bval(rho, kind, a, cut, ratio, expo)
            if bv == 0.0:
                continue
            u[0] = x[0] + rho * e[0]
            u[1] = x[1] + rho * e[1]
            v[0] = x[0] - rho * e[0]
            v[1] = x[1] - rho * e[1]
            gp = green_ball_pt(u, y, c, R, 2, alpha, cst)
            gm = green_ball_pt(v, y, c, R, 2, alpha, cst)
            if absolute:
                lin = rho * (gx[0] * e[0] + gx[1] * e[1])
                core = abs(gp - gxy - lin) + abs(gm - gxy + lin)
                bv = abs(bv)
            else:
                core = gp + gm - 2.0 * gxy
            inner += gj_in_w[i] * (math.pi / n_th) * core * bv / (rho * rho)
    inner *= lam ** (2.0 - beta)

    # annulus lam < |w| < L about x
    ann = 0.0
    ng = gl_x.size
    nb_ = gjb_s.size
    # angles where the boundary sits exactly at distance L: break the angular rule there
    cosx = 0.0
    thx = 0.0
    if dxc > 0.0:
        thx = math.atan2(x[1] - c[1], x[0] - c[0])
        cosx = (R * R - dxc * dxc - L * L) / (2.0 * L * dxc)
    brk = np.empty(4)
    nbrk = 0
    if dxc > 0.0 and cosx < 1.0 and cosx > -1.0:
        tstar = math.acos(cosx)
        brk[0] = thx - tstar
        brk[1] = thx + tstar
        nbrk = 2
    # angular panels
    n_pan = max(n_ang // ng, 4)
    edges = np.empty(n_pan + 1 + nbrk)
    base = thx - math.pi
    for k in range(n_pan + 1):
        edges[k] = base + 2.0 * math.pi * k / n_pan
    for k in range(nbrk):
        t = brk[k]
        while t < base:
            t += 2.0 * math.pi
        while t > base + 2.0 * math.pi:
            t -= 2.0 * math.pi
        edges[n_pan + 1 + k] = t
    edges = np.sort(edges)
    for k in range(edges.size - 1):
        t0 = edges[k]
        t1 = edges[k + 1]
        if t1 - t0 < 1e-15:
            continue
        for m in range(ng):
            th = 0.5 * (t1 - t0) * gl_x[m] + 0.5 * (t1 + t0)
            wth = 0.5 * (t1 - t0) * gl_w[m]
            e[0] = math.cos(th)
            e[1] = math.sin(th)
            rb = _ray_exit(x, e, c, R)
            hit = rb < L
            rend = rb if hit else L
            if rend <= lam:
                continue
            # boundary panel with Jacobi weight (rb - rho)^{alpha/2}
            rsplit = rend
            if hit:
                rsplit = max(lam, 0.5 * rb)
                h = rb - rsplit
                for i in range(nb_):
                    rho = rsplit + h * gjb_s[i]
                    bv = _bval(rho, kind, a, cut, ratio, expo)
                    if absolute:
                        bv = abs(bv)
                    u[0] = x[0] + rho * e[0]
                    u[1] = x[1] + rho * e[1]
                    g = green_ball_pt(u, y, c, R, 2, alpha, cst)
                    ann += wth * h ** (1.0 + 0.5 * alpha) * gjb_w[i] * g * bv * rho ** (-1.0 - beta) / (rb - rho) ** (0.5 * alpha)
            # log-spaced panels on [lam, rsplit], breaking at the b cutoff
            if rsplit > lam:
                s0 = math.log(lam)
                s1 = math.log(rsplit)
                npl = int(math.ceil((s1 - s0) / 0.5))
                if npl < 1:
                    npl = 1
                for p in range(npl):
                    a0 = s0 + (s1 - s0) * p / npl
                    a1 = s0 + (s1 - s0) * (p + 1) / npl
                    lc = math.log(cut) if kind == 2 else -1e300
                    nsub = 2 if (kind == 2 and a0 < lc and lc < a1) else 1
                    for q in range(nsub):
                        lo = a0
                        hi = a1
                        if nsub == 2:
                            if q == 0:
                                hi = lc
                            else:
                                lo = lc
                        for i in range(ng):
                            sv = 0.5 * (hi - lo) * gl_x[i] + 0.5 * (hi + lo)
                            rho = math.exp(sv)
                            bv = _bval(rho, kind, a, cut, ratio, expo)
                            if bv == 0.0:
                                continue
                            if absolute:
                                bv = abs(bv)
                            u[0] = x[0] + rho * e[0]
                            u[1] = x[1] + rho * e[1]
                            g = green_ball_pt(u, y, c, R, 2, alpha, cst)
                            ann += wth * 0.5 * (hi - lo) * gl_w[i] * g * bv * rho ** (-beta)

    # far part |u - x| > L, polar about y
    far = 0.0
    thxy = math.atan2(x[1] - y[1], x[0] - y[0])
    thc = math.asin(L / r)  # = pi/6
    s_c = math.sin(thc)
    s_near = 0.25 * min(deltay, L)
    # outside the cone: angular panels graded toward the tangent directions of the boundary at y
    ob = np.empty(64)
    nob = 0
    ob[nob] = thxy + thc
    nob += 1
    ob[nob] = thxy + 2.0 * math.pi - thc
    nob += 1
    n_out = max(n_ang // ng, 6)
    for k in range(1, n_out):
        ob[nob] = thxy + thc + (2.0 * math.pi - 2.0 * thc) * k / n_out
        nob += 1
    if dyc > 0.0 and deltay < 0.25 * R:
        thn = math.atan2(y[1] - c[1], y[0] - c[0])
        w0 = 0.5 * math.sqrt(deltay / R)
        for sgn in (-1.0, 1.0):
            tt = thn + sgn * 0.5 * math.pi
            ww = w0
            for k in range(8):
                for side in (-1.0, 1.0):
                    t = tt + side * ww
                    while t < thxy + thc:
                        t += 2.0 * math.pi
                    while t > thxy + 2.0 * math.pi - thc:
                        t -= 2.0 * math.pi
                    if t > thxy + thc and t < thxy + 2.0 * math.pi - thc and nob < 64:
                        ob[nob] = t
                        nob += 1
                ww *= 2.0
            t = tt
            while t < thxy + thc:
                t += 2.0 * math.pi
            while t > thxy + 2.0 * math.pi - thc:
                t -= 2.0 * math.pi
            if t > thxy + thc and t < thxy + 2.0 * math.pi - thc and nob < 64:
                ob[nob] = t
                nob += 1
    oedges = np.sort(ob[:nob])
    for part in range(2):
        if part == 0:
            npanel = 3
        else:
            npanel = oedges.size - 1
        for k in range(npanel):
            if part == 0:
                p0 = -0.5 * math.pi + math.pi * k / npanel
                p1 = -0.5 * math.pi + math.pi * (k + 1) / npanel
            else:
                p0 = oedges[k]
                p1 = oedges[k + 1]
                if p1 - p0 < 1e-15:
                    continue
            for m in range(ng):
                tv = 0.5 * (p1 - p0) * gl_x[m] + 0.5 * (p1 + p0)
                wt = 0.5 * (p1 - p0) * gl_w[m]
                in_cone = part == 0
                if in_cone:
                    sp = math.sin(tv)
                    th = thxy + math.asin(s_c * sp)
                    wt *= s_c * math.cos(tv) / math.sqrt(1.0 - s_c * s_c * sp * sp)
                else:
                    th = tv
                e[0] = math.cos(th)
                e[1] = math.sin(th)
                ry = _ray_exit(y, e, c, R)
                # pieces along the ray
                if in_cone:
                    psi = th - thxy
                    half = L * math.cos(tv)
                    t1 = r * math.cos(psi) - half
                    t2 = r * math.cos(psi) + half
                else:
                    t1 = ry
                    t2 = ry
                # piece 1: [0, min(t1, ry)]; piece 2: [t2, ry] if t2 < ry
                for piece in range(2):
                    if piece == 0:
                        lo = 0.0
                        hi = min(t1, ry)
                        at_boundary = ry <= t1
                    else:
                        if not in_cone or t2 >= ry:
                            continue
                        lo = t2
                        hi = ry
                        at_boundary = True
                    if hi <= lo:
                        continue
                    far += wt * _far_ray(x, y, e, c, R, alpha, beta, cst, kind, a, cut, ratio, expo,
                                         absolute, lo, hi, at_boundary, s_near, L,
                                         gl_x, gl_w, gjb_s, gjb_w, gjy_s, gjy_w, u)

    # tail term  -G(x,y) int_{|w|>lam} b |w|^{-2-beta} dw
    if kind == 1:
        tail = abs(a) if absolute else a
        tail *= 2.0 * math.pi * lam ** (-beta) / beta
    elif kind == 2:
        tail = 2.0 * math.pi * ratio * max(lam, cut) ** (-alpha) / alpha
        if not absolute:
            tail = -tail
    else:
        tail = 0.0
    if absolute:
        return inner + ann + far + gxy * tail
    return inner + ann + far - gxy * tail


@nb.njit(cache=True)
def _far_ray(x, y, e, c, R, alpha, beta, cst, kind, a, cut, ratio, expo, absolute,
             lo, hi, at_boundary, s_near, L, gl_x, gl_w, gjb_s, gjb_w, gjy_s, gjy_w, u):
    # int_lo^hi rho G(y + rho e, y) b(|u-x|) |u-x|^{-2-beta} drho
    total = 0.0
    ng = gl_x.size
    # Jacobi panel at the boundary end
    bstart = hi
    if at_boundary:
        db = math.sqrt((y[0] + hi * e[0] - x[0]) ** 2 + (y[1] + hi * e[1] - x[1]) ** 2)
        h = min(0.5 * (hi - lo), 0.5 * max(L, db))
        if lo == 0.0:
            h = min(h, 0.5 * hi)
        bstart = hi - h
        for i in range(gjb_s.size):
            rho = bstart + h * gjb_s[i]
            total += h ** (1.0 + 0.5 * alpha) * gjb_w[i] * _far_f(x, y, e, rho, c, R, alpha, beta, cst, kind, a,
                                                                   cut, ratio, expo, absolute, u) / (hi - rho) ** (0.5 * alpha)
    start = lo
    if lo == 0.0:
        # pole at y: rho * G ~ rho^{alpha - 1}
        h0 = min(s_near, bstart)
        for i in range(gjy_s.size):
            rho = h0 * gjy_s[i]
            total += h0**alpha * gjy_w[i] * _far_f(x, y, e, rho, c, R, alpha, beta, cst, kind, a, cut, ratio,
                                                   expo, absolute, u) / rho ** (alpha - 1.0)
        start = h0
    # panels no wider than 0.6 rho or 0.6 |u - x| (the two length scales of the integrand)
    rxy = math.sqrt((x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2)
    p = start
    while p < bstart * (1.0 - 1e-14):
        step = min(max(0.6 * p, 1e-300), 0.6 * max(L, abs(p - rxy)))
        q = min(p + step, bstart)
        if bstart - q < 0.2 * step:
            q = bstart
        for i in range(ng):
            rho = 0.5 * (q - p) * gl_x[i] + 0.5 * (q + p)
            total += 0.5 * (q - p) * gl_w[i] * _far_f(x, y, e, rho, c, R, alpha, beta, cst, kind, a, cut,
                                                      ratio, expo, absolute, u)
        p = q
    return total


@nb.njit(cache=True)
def _far_f(x, y, e, rho, c, R, alpha, beta, cst, kind, a, cut, ratio, expo, absolute, u):
    u[0] = y[0] + rho * e[0]
    u[1] = y[1] + rho * e[1]
    dist = math.sqrt((u[0] - x[0]) ** 2 + (u[1] - x[1]) ** 2)
    bv = _bval(dist, kind, a, cut, ratio, expo)
    if bv == 0.0:
        return 0.0
    if absolute:
        bv = abs(bv)
    g = green_ball_pt(u, y, c, R, 2, alpha, cst)
    return rho * g * bv * dist ** (-2.0 - beta)


class _Rules:
    def __init__(self, params, n_in=16, n_gl=12, n_bd=12, n_pole=12, n_ang=192):
        al, be = params.alpha, params.beta
        self.gj_in = gauss_jacobi(n_in, 1.0 - be, 0.0)
        x, w = gauss_legendre(n_gl)
        self.gl = (np.ascontiguousarray(x), np.ascontiguousarray(w))
        self.gjb = gauss_jacobi(n_bd, 0.0, 0.5 * al)
        self.gjy = gauss_jacobi(n_pole, al - 1.0, 0.0)
        self.n_ang = n_ang


def _b_args(params, b):
    if b.kind == CALLBACK:
        raise NotImplementedError("S^b G_B quadrature needs a radial b")
    ratio = b.ratio if b.ratio is not None else 0.0
    expo = b.exponent if b.exponent is not None else 0.0
    return b.kind, b.a, b.cutoff, ratio, expo


def _check_pair(params, ball, x, y):
    if params.d != 2:
        raise NotImplementedError("S^b G_B quadrature is implemented for d = 2")
    for p in (x, y):
        if np.linalg.norm(p - ball.center) >= ball.radius:
            raise ValueError("points must lie inside the ball")
    if np.all(x == y):
        raise ValueError("x and y must differ")


def apply_Sb_to_green_ball(params, b, ball, x, y, absolute=False, rules=None, return_error=False):
    """S^b_x G_B(x, y), with G_B extended by zero outside B.

    ``absolute=True`` returns the majorant |S^b_x| G_B(x, y): gradient
    compensation inside |w| < lam and absolute values throughout.
    The error estimate compares against a rule with about half the nodes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_pair(params, ball, x, y)
    if b.kind == ZERO:
        return (0.0, 0.0) if return_error else 0.0
    cb = normalizing_constant(2, params.beta)
    if b.kind == TRUNCATED_STABLE and ball.diameter <= b.cutoff:
        # every jump that stays in the ball has b = 0: only the tail term survives
        from .exact_ball import green_ball
        val = cb * b.ratio * sphere_area(2) * b.cutoff ** (-params.alpha) / params.alpha * green_ball(params, ball, x, y)
        return (val, 0.0) if return_error else val
    rules = rules or _default_rules(params)
    val = cb * _eval_rules(params, b, ball, x, y, absolute, rules)
    if not return_error and not np.isfinite(val):
        raise NumericalError("non-finite S^b G_B value")
    if return_error:
        coarse = cb * _eval_rules(params, b, ball, x, y, absolute, _coarse_rules(params))
        return val, abs(val - coarse)
    return val


def _eval_rules(params, b, ball, x, y, absolute, rules):
    kind, a, cut, ratio, expo = _b_args(params, b)
    return _sb_green_ball_2d(
        x, y, ball.center, ball.radius, params.alpha, params.beta, green_ball_prefactor(2, params.alpha),
        kind, a, cut, ratio, expo, absolute,
        rules.gj_in[0], rules.gj_in[1], rules.gl[0], rules.gl[1], rules.gjb[0], rules.gjb[1],
        rules.gjy[0], rules.gjy[1], rules.n_ang,
    )


_RULE_CACHE = {}


def _default_rules(params):
    key = ("fine", params.alpha, params.beta)
    if key not in _RULE_CACHE:
        _RULE_CACHE[key] = _Rules(params)
    return _RULE_CACHE[key]


def _coarse_rules(params):
    key = ("coarse", params.alpha, params.beta)
    if key not in _RULE_CACHE:
        _RULE_CACHE[key] = _Rules(params, n_in=8, n_gl=8, n_bd=6, n_pole=6, n_ang=96)
    return _RULE_CACHE[key]


def sb_green_ball_matrix(params, b, ball, xs, ys, absolute=False, rules=None, token=None):
    """Matrix of S^b_x G_B(x, y) over point lists (rows x, columns y); diagonal entries left nan."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    out = np.full((len(xs), len(ys)), np.nan)
    rules = rules or _default_rules(params)
    for i, x in enumerate(xs):
        if token is not None:
            token.check()
        for j, y in enumerate(ys):
            if np.all(x == y):
                continue
            out[i, j] = apply_Sb_to_green_ball(params, b, ball, x, y, absolute=absolute, rules=rules)
    return out


def sb_bound_sweep(params, b, ball, n_pairs=500, seed=0, rules=None):
    """Fit C with |S^b| G_B(x, y) <= C ||b|| h_B(x, y) over stratified pairs.

    Returns a dict with the fitted constant, per-pair ratios, the pairs, their
    stratum labels and an "extremeness" scale min(delta(x), delta(y), |x-y|)/radius.
    """
    from .geometry import profile_hD, stratified_pairs

    rng = np.random.default_rng(seed)
    xs, ys, labels = stratified_pairs(ball, n_pairs, rng)
    rules = rules or _coarse_rules(params)
    norm = b.A if b.A > 0 else 1.0
    ratios = np.empty(len(xs))
    for i in range(len(xs)):
        v = apply_Sb_to_green_ball(params, b, ball, xs[i], ys[i], absolute=True, rules=rules)
        ratios[i] = v / (norm * profile_hD(ball, params, xs[i], ys[i]))
    scale = np.minimum(np.minimum(ball.delta(xs), ball.delta(ys)), np.linalg.norm(xs - ys, axis=1)) / ball.radius
    return {"C": float(np.max(ratios)), "ratios": ratios, "xs": xs, "ys": ys, "labels": labels, "scale": scale}
