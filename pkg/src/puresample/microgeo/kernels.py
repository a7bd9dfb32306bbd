"""Per-walk tracing kernels (numba, nogil) for the microgeometry variants.

Each kernel traces a chunk of walks for one color channel. Walk randomness
comes from a per-walk SplitMix64 counter stream keyed from the caller's
stream, so outputs are a pure function of (scene, channel, entry point,
key) no matter how chunks are scheduled.

Status codes: 0 = absorbed (roulette), 1 = exited, 2 = trapped (event or
traversal cap hit; reported separately, treated as absorbed downstream).
"""

import numpy as np
from numba import njit

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)
_S30 = U64(30)
_S27 = U64(27)
_S31 = U64(31)
_S11 = U64(11)
_INV53 = 1.0 / 9007199254740992.0

STATUS_ABSORBED = 0
STATUS_EXITED = 1
STATUS_TRAPPED = 2

KIND_LAMBERTIAN = 0
KIND_MIRROR = 1
KIND_ROUGH_CONDUCTOR = 2
KIND_ROUGH_DIELECTRIC = 3
KIND_PHASE_ISOTROPIC = 4
KIND_PHASE_HG = 5


@njit(cache=True, inline="always")
def _mix64(x):
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


@njit(cache=True, inline="always")
def _rng_next(state):
    state = state + _GOLDEN
    return _mix64(state), state


@njit(cache=True, inline="always")
def _rng_uniform(state):
    z, state = _rng_next(state)
    return float(z >> _S11) * _INV53, state


@njit(cache=True)
def expand_keys(base, out):
    s = U64(base)
    for i in range(out.shape[0]):
        out[i] = _mix64(s + U64(i + 1) * _GOLDEN)


# -- frames and reflections ---------------------------------------------------


@njit(cache=True, inline="always")
def _frame_from_normal(nx, ny, nz):
    # Duff et al. branchless orthonormal basis
    s = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (s + nz)
    b = nx * ny * a
    t1x, t1y, t1z = 1.0 + s * nx * nx * a, s * b, -s * nx
    t2x, t2y, t2z = b, s + ny * ny * a, -ny
    return t1x, t1y, t1z, t2x, t2y, t2z


@njit(cache=True, inline="always")
def _to_local(vx, vy, vz, nx, ny, nz, t1x, t1y, t1z, t2x, t2y, t2z):
    return (
        vx * t1x + vy * t1y + vz * t1z,
        vx * t2x + vy * t2y + vz * t2z,
        vx * nx + vy * ny + vz * nz,
    )


@njit(cache=True, inline="always")
def _to_world(vx, vy, vz, nx, ny, nz, t1x, t1y, t1z, t2x, t2y, t2z):
    return (
        vx * t1x + vy * t2x + vz * nx,
        vx * t1y + vy * t2y + vz * ny,
        vx * t1z + vy * t2z + vz * nz,
    )


# -- GGX microfacet helpers ----------------------------------------------------


@njit(cache=True, inline="always")
def _ggx_lambda(z, alpha):
    # Smith lambda for GGX; z is |cos theta| of the direction
    z = abs(z)
    if z >= 1.0 - 1e-12:
        return 0.0
    if z <= 1e-12:
        return 1e16
    a2 = alpha * alpha
    t2 = (1.0 - z * z) / (z * z)
    return 0.5 * (-1.0 + np.sqrt(1.0 + a2 * t2))


@njit(cache=True, inline="always")
def _ggx_sample_vndf(wx, wy, wz, alpha, u1, u2):
    # Heitz 2018; w must have wz > 0
    vx, vy, vz = alpha * wx, alpha * wy, wz
    inv = 1.0 / np.sqrt(vx * vx + vy * vy + vz * vz)
    vx, vy, vz = vx * inv, vy * inv, vz * inv
    lensq = vx * vx + vy * vy
    if lensq > 1e-16:
        inv_l = 1.0 / np.sqrt(lensq)
        t1x, t1y, t1z = -vy * inv_l, vx * inv_l, 0.0
    else:
        t1x, t1y, t1z = 1.0, 0.0, 0.0
    t2x = vy * t1z - vz * t1y
    t2y = vz * t1x - vx * t1z
    t2z = vx * t1y - vy * t1x
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    p1 = r * np.cos(phi)
    p2 = r * np.sin(phi)
    s = 0.5 * (1.0 + vz)
    p2 = (1.0 - s) * np.sqrt(max(0.0, 1.0 - p1 * p1)) + s * p2
    p3 = np.sqrt(max(0.0, 1.0 - p1 * p1 - p2 * p2))
    hx = p1 * t1x + p2 * t2x + p3 * vx
    hy = p1 * t1y + p2 * t2y + p3 * vy
    hz = p1 * t1z + p2 * t2z + p3 * vz
    mx, my, mz = alpha * hx, alpha * hy, max(1e-9, hz)
    inv = 1.0 / np.sqrt(mx * mx + my * my + mz * mz)
    return mx * inv, my * inv, mz * inv


@njit(cache=True, inline="always")
def _fresnel_dielectric(cos_i, eta):
    # eta = n_transmitted / n_incident, cos_i > 0. Returns (F, cos_t).
    sin2_t = (1.0 - cos_i * cos_i) / (eta * eta)
    if sin2_t >= 1.0:
        return 1.0, 0.0
    cos_t = np.sqrt(1.0 - sin2_t)
    rs = (cos_i - eta * cos_t) / (cos_i + eta * cos_t)
    rp = (eta * cos_i - cos_t) / (eta * cos_i + cos_t)
    return 0.5 * (rs * rs + rp * rp), cos_t


# -- single micro-event in the local frame ------------------------------------


@njit(cache=True)
def micro_event(kind, p0, roughness, ior, wix, wiy, wiz, state):
    """Sample one interaction. ``(wix, wiy, wiz)`` points toward the source
    in the local frame with wiz > 0 for surfaces (any direction for phase
    kinds, where it is the propagation direction). Returns the outgoing
    propagation direction, the importance weight clamped to [0, 1], and the
    advanced RNG state.
    """
    if kind == KIND_LAMBERTIAN:
        u1, state = _rng_uniform(state)
        u2, state = _rng_uniform(state)
        r = np.sqrt(u1)
        phi = 2.0 * np.pi * u2
        ox = r * np.cos(phi)
        oy = r * np.sin(phi)
        oz = np.sqrt(max(0.0, 1.0 - u1))
        return ox, oy, oz, min(1.0, p0), state
    if kind == KIND_MIRROR:
        return -wix, -wiy, wiz, min(1.0, p0), state
    if kind == KIND_ROUGH_CONDUCTOR:
        u1, state = _rng_uniform(state)
        u2, state = _rng_uniform(state)
        mx, my, mz = _ggx_sample_vndf(wix, wiy, wiz, roughness, u1, u2)
        c = wix * mx + wiy * my + wiz * mz
        ox = 2.0 * c * mx - wix
        oy = 2.0 * c * my - wiy
        oz = 2.0 * c * mz - wiz
        if c <= 0.0 or oz <= 0.0:
            return ox, oy, oz, 0.0, state
        li = _ggx_lambda(wiz, roughness)
        lo = _ggx_lambda(oz, roughness)
        w = p0 * (1.0 + li) / (1.0 + li + lo)
        return ox, oy, oz, min(1.0, w), state
    if kind == KIND_ROUGH_DIELECTRIC:
        u1, state = _rng_uniform(state)
        u2, state = _rng_uniform(state)
        u3, state = _rng_uniform(state)
        mx, my, mz = _ggx_sample_vndf(wix, wiy, wiz, roughness, u1, u2)
        c = wix * mx + wiy * my + wiz * mz
        if c <= 0.0:
            return -wix, -wiy, -wiz, 0.0, state
        f, cos_t = _fresnel_dielectric(c, ior)
        li = _ggx_lambda(wiz, roughness)
        if u3 < f:
            ox = 2.0 * c * mx - wix
            oy = 2.0 * c * my - wiy
            oz = 2.0 * c * mz - wiz
            if oz <= 0.0:
                return ox, oy, oz, 0.0, state
        else:
            inv_eta = 1.0 / ior
            ox = -wix * inv_eta + (c * inv_eta - cos_t) * mx
            oy = -wiy * inv_eta + (c * inv_eta - cos_t) * my
            oz = -wiz * inv_eta + (c * inv_eta - cos_t) * mz
            inv = 1.0 / np.sqrt(ox * ox + oy * oy + oz * oz)
            ox, oy, oz = ox * inv, oy * inv, oz * inv
            if oz >= 0.0:
                return ox, oy, oz, 0.0, state
        lo = _ggx_lambda(oz, roughness)
        w = (1.0 + li) / (1.0 + li + lo)
        return ox, oy, oz, min(1.0, w), state
    if kind == KIND_PHASE_ISOTROPIC:
        u1, state = _rng_uniform(state)
        u2, state = _rng_uniform(state)
        ct = 1.0 - 2.0 * u1
        st = np.sqrt(max(0.0, 1.0 - ct * ct))
        phi = 2.0 * np.pi * u2
        return st * np.cos(phi), st * np.sin(phi), ct, 1.0, state
    # Henyey-Greenstein around the propagation direction (wi here is the
    # current travel direction, not a surface frame).
    g = p0
    u1, state = _rng_uniform(state)
    u2, state = _rng_uniform(state)
    if abs(g) < 1e-3:
        ct = 1.0 - 2.0 * u1
    else:
        sq = (1.0 - g * g) / (1.0 + g - 2.0 * g * u1)
        ct = (1.0 + g * g - sq * sq) / (2.0 * g)
    ct = min(1.0, max(-1.0, ct))
    st = np.sqrt(max(0.0, 1.0 - ct * ct))
    phi = 2.0 * np.pi * u2
    t1x, t1y, t1z, t2x, t2y, t2z = _frame_from_normal(wix, wiy, wiz)
    lx, ly = st * np.cos(phi), st * np.sin(phi)
    ox = lx * t1x + ly * t2x + ct * wix
    oy = lx * t1y + ly * t2y + ct * wiy
    oz = lx * t1z + ly * t2z + ct * wiz
    return ox, oy, oz, 1.0, state


# -- flat analytic surface -----------------------------------------------------


@njit(cache=True, nogil=True)
def trace_flat(kind, p0, roughness, ior, wi, keys, out_status, out_wo, out_events):
    n = wi.shape[0]
    for i in range(n):
        state = keys[i]
        ox, oy, oz, w, state = micro_event(
            kind, p0, roughness, ior, wi[i, 0], wi[i, 1], wi[i, 2], state
        )
        u, state = _rng_uniform(state)
        out_events[i] = 1
        if u < w and oz > 0.0:
            out_status[i] = STATUS_EXITED
            out_wo[i, 0] = ox
            out_wo[i, 1] = oy
            out_wo[i, 2] = oz
        else:
            out_status[i] = STATUS_ABSORBED
            out_wo[i, 0] = 0.0
            out_wo[i, 1] = 0.0
            out_wo[i, 2] = 0.0


# -- heightfield ----------------------------------------------------------------


@njit(cache=True, inline="always")
def _tri_intersect(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, cx, cy, cz):
    # Moller-Trumbore; returns (hit, t)
    e1x, e1y, e1z = bx - ax, by - ay, bz - az
    e2x, e2y, e2z = cx - ax, cy - ay, cz - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return False, 0.0
    inv = 1.0 / det
    tx, ty, tz = ox - ax, oy - ay, oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -1e-9 or u > 1.0 + 1e-9:
        return False, 0.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -1e-9 or u + v > 1.0 + 1e-9:
        return False, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= 1e-9:
        return False, 0.0
    return True, t


@njit(cache=True)
def _hf_dda(heights, hx, hy, hmin, hmax, ox, oy, oz, dx, dy, dz, skip_ci, skip_cj, skip_tri):
    """March the xy projection of the ray across grid cells; in each cell
    test the two triangles of the periodically tiled heightfield. Returns
    (code, t, nx, ny, nz, ci, cj, tri) with code 1 = hit, 0 = escaped
    upward, 2 = traversal cap exceeded.
    """
    ncells = heights.shape[0]
    # start below the hmax plane when coming from above
    if oz > hmax:
        if dz >= 0.0:
            return 0, 0.0, 0.0, 0.0, 0.0, 0, 0, 0
        tstart = (hmax - oz) / dz
        ox += dx * tstart
        oy += dy * tstart
        oz = hmax
    else:
        tstart = 0.0

    ci = int(np.floor(ox / hx))
    cj = int(np.floor(oy / hy))
    step_i = 1 if dx > 0.0 else -1
    step_j = 1 if dy > 0.0 else -1
    big = 1e30
    if dx != 0.0:
        t_dx = abs(hx / dx)
        nxt = (ci + (1 if dx > 0.0 else 0)) * hx
        t_mx = (nxt - ox) / dx
    else:
        t_dx = big
        t_mx = big
    if dy != 0.0:
        t_dy = abs(hy / dy)
        nxt = (cj + (1 if dy > 0.0 else 0)) * hy
        t_my = (nxt - oy) / dy
    else:
        t_dy = big
        t_my = big

    horiz = np.sqrt(dx * dx + dy * dy)
    cell_h = min(hx, hy)
    if dz > 1e-12:
        # escape is guaranteed; bound the march by the climb to hmax
        cells = int(min(2e8, (hmax - oz) / dz * (horiz / cell_h))) + 4 * ncells + 16
    elif dz < -1e-12:
        # a hit is guaranteed at or above hmin; bound by the descent
        cells = int(min(2e8, (oz - hmin) / (-dz) * (horiz / cell_h))) + 4 * ncells + 16
    else:
        cells = 64 * ncells
    t_cell = 0.0
    for _ in range(cells):
        wi_ = ci % ncells
        wj_ = cj % ncells
        x0 = ci * hx
        y0 = cj * hy
        x1 = x0 + hx
        y1 = y0 + hy
        h00 = heights[wi_, wj_]
        h10 = heights[(wi_ + 1) % ncells, wj_]
        h01 = heights[wi_, (wj_ + 1) % ncells]
        h11 = heights[(wi_ + 1) % ncells, (wj_ + 1) % ncells]
        t_exit = t_mx if t_mx < t_my else t_my
        best_t = big
        best_tri = -1
        hmax_cell = max(max(h00, h10), max(h01, h11))
        z_enter = oz + dz * t_cell
        z_exit = oz + dz * t_exit
        if min(z_enter, z_exit) <= hmax_cell + 1e-9:
            if not (skip_ci == ci and skip_cj == cj and skip_tri == 0):
                hit, t = _tri_intersect(ox, oy, oz, dx, dy, dz, x0, y0, h00, x1, y0, h10, x1, y1, h11)
                if hit and t < best_t and t <= t_exit + 1e-9:
                    best_t = t
                    best_tri = 0
            if not (skip_ci == ci and skip_cj == cj and skip_tri == 1):
                hit, t = _tri_intersect(ox, oy, oz, dx, dy, dz, x0, y0, h00, x1, y1, h11, x0, y1, h01)
                if hit and t < best_t and t <= t_exit + 1e-9:
                    best_t = t
                    best_tri = 1
        if best_tri >= 0:
            if best_tri == 0:
                e1x, e1y, e1z = hx, 0.0, h10 - h00
                e2x, e2y, e2z = hx, hy, h11 - h00
            else:
                e1x, e1y, e1z = hx, hy, h11 - h00
                e2x, e2y, e2z = 0.0, hy, h01 - h00
            nx = e1y * e2z - e1z * e2y
            ny = e1z * e2x - e1x * e2z
            nz = e1x * e2y - e1y * e2x
            inv = 1.0 / np.sqrt(nx * nx + ny * ny + nz * nz)
            return 1, tstart + best_t, nx * inv, ny * inv, nz * inv, ci, cj, best_tri
        # z range on the next segment is monotone; escape once above hmax
        if dz > 0.0 and oz + dz * t_exit > hmax:
            return 0, 0.0, 0.0, 0.0, 0.0, 0, 0, 0
        if t_mx < t_my:
            ci += step_i
            t_cell = t_mx
            t_mx += t_dx
        else:
            cj += step_j
            t_cell = t_my
            t_my += t_dy
        skip_ci = -2 ** 60  # skip applies only to the first cell
        if t_cell > 1e28:
            break
    return 2, 0.0, 0.0, 0.0, 0.0, 0, 0, 0


@njit(cache=True, nogil=True)
def trace_heightfield(
    heights,
    hx,
    hy,
    kind_map,
    p0_map,
    rough_map,
    ior_map,
    wi,
    entry,
    keys,
    max_events,
    out_status,
    out_wo,
    out_events,
):
    nwalks = wi.shape[0]
    ncells = heights.shape[0]
    hmax = heights[0, 0]
    hmin = heights[0, 0]
    for a in range(ncells):
        for b in range(ncells):
            if heights[a, b] > hmax:
                hmax = heights[a, b]
            if heights[a, b] < hmin:
                hmin = heights[a, b]
    hmax += 1e-6
    ext_x = hx * ncells
    ext_y = hy * ncells
    for i in range(nwalks):
        state = keys[i]
        px = entry[i, 0] * ext_x
        py = entry[i, 1] * ext_y
        pz = hmax + 1e-5
        dx_, dy_, dz_ = -wi[i, 0], -wi[i, 1], -wi[i, 2]
        status = STATUS_TRAPPED
        events = 0
        skip_ci = -2 ** 60
        skip_cj = 0
        skip_tri = 0
        for _ in range(max_events):
            code, t, nx, ny, nz, ci, cj, tri = _hf_dda(
                heights, hx, hy, hmin, hmax, px, py, pz, dx_, dy_, dz_, skip_ci, skip_cj, skip_tri
            )
            if code == 0:
                status = STATUS_EXITED
                break
            if code == 2:
                status = STATUS_TRAPPED
                break
            events += 1
            px += dx_ * t
            py += dy_ * t
            pz += dz_ * t
            ti = ci % ncells
            tj = cj % ncells
            kind = kind_map[ti, tj]
            p0 = p0_map[ti, tj]
            rough = rough_map[ti, tj]
            ior = ior_map[ti, tj]
            t1x, t1y, t1z, t2x, t2y, t2z = _frame_from_normal(nx, ny, nz)
            lx, ly, lz = _to_local(-dx_, -dy_, -dz_, nx, ny, nz, t1x, t1y, t1z, t2x, t2y, t2z)
            if lz <= 0.0:
                status = STATUS_ABSORBED
                break
            ox, oy, oz, w, state = micro_event(kind, p0, rough, ior, lx, ly, lz, state)
            u, state = _rng_uniform(state)
            if u >= w or oz <= 0.0:
                status = STATUS_ABSORBED
                break
            dx_, dy_, dz_ = _to_world(ox, oy, oz, nx, ny, nz, t1x, t1y, t1z, t2x, t2y, t2z)
            px += nx * 1e-10
            py += ny * 1e-10
            pz += nz * 1e-10
            skip_ci, skip_cj, skip_tri = ci, cj, tri
        out_events[i] = events
        out_status[i] = status
        if status == STATUS_EXITED:
            out_wo[i, 0] = dx_
            out_wo[i, 1] = dy_
            out_wo[i, 2] = dz_
        else:
            out_status[i] = status
            out_wo[i, 0] = 0.0
            out_wo[i, 1] = 0.0
            out_wo[i, 2] = 0.0


# -- sphere field ----------------------------------------------------------------


@njit(cache=True, nogil=True)
def trace_spherefield(
    sx,
    sy,
    radius,
    ext_x,
    ext_y,
    kind,
    p0,
    rough,
    ior,
    gkind,
    gp0,
    grough,
    gior,
    wi,
    entry,
    keys,
    max_events,
    out_status,
    out_wo,
    out_events,
):
    nwalks = wi.shape[0]
    nsph = sx.shape[0]
    top = 2.0 * radius + 1e-6
    for i in range(nwalks):
        state = keys[i]
        px = entry[i, 0] * ext_x
        py = entry[i, 1] * ext_y
        pz = top + 1e-5
        dx_, dy_, dz_ = -wi[i, 0], -wi[i, 1], -wi[i, 2]
        status = STATUS_TRAPPED
        events = 0
        for _ in range(max_events):
            # wrap into the base tile; neighbors are covered by 3x3 copies
            px -= np.floor(px / ext_x) * ext_x
            py -= np.floor(py / ext_y) * ext_y
            advanced = False
            nx = 0.0
            ny = 0.0
            nz = 1.0
            k_ = kind
            q0 = p0
            rg = rough
            io = ior
            # advance flights one tile at a time so the 3x3 copies suffice
            for _seg in range(4096):
                best_t = 1e30
                hit_k = -1
                hit_ti = 0
                hit_tj = 0
                for k in range(nsph):
                    for ti in range(-1, 2):
                        for tj in range(-1, 2):
                            cx = sx[k] + ti * ext_x
                            cy = sy[k] + tj * ext_y
                            ocx = px - cx
                            ocy = py - cy
                            ocz = pz - radius
                            bq = ocx * dx_ + ocy * dy_ + ocz * dz_
                            cq = ocx * ocx + ocy * ocy + ocz * ocz - radius * radius
                            disc = bq * bq - cq
                            if disc <= 0.0:
                                continue
                            sq = np.sqrt(disc)
                            t = -bq - sq
                            if t <= 1e-9:
                                t = -bq + sq
                            if t > 1e-9 and t < best_t:
                                best_t = t
                                hit_k = k
                                hit_ti = ti
                                hit_tj = tj
                t_ground = 1e30
                if dz_ < 0.0:
                    t_ground = -pz / dz_
                t_tile = min(ext_x, ext_y)
                if hit_k >= 0 and best_t <= t_tile and best_t < t_ground:
                    px += dx_ * best_t
                    py += dy_ * best_t
                    pz += dz_ * best_t
                    cx = sx[hit_k] + hit_ti * ext_x
                    cy = sy[hit_k] + hit_tj * ext_y
                    nx = (px - cx) / radius
                    ny = (py - cy) / radius
                    nz = (pz - radius) / radius
                    inv = 1.0 / np.sqrt(nx * nx + ny * ny + nz * nz)
                    nx, ny, nz = nx * inv, ny * inv, nz * inv
                    k_, q0, rg, io = kind, p0, rough, ior
                    advanced = True
                    break
                if t_ground <= t_tile and t_ground < best_t:
                    px += dx_ * t_ground
                    py += dy_ * t_ground
                    pz = 0.0
                    nx, ny, nz = 0.0, 0.0, 1.0
                    k_, q0, rg, io = gkind, gp0, grough, gior
                    advanced = True
                    break
                if dz_ > 0.0 and pz > top:
                    break
                # nothing within a tile: advance and rewrap
                px += dx_ * t_tile
                py += dy_ * t_tile
                pz += dz_ * t_tile
                px -= np.floor(px / ext_x) * ext_x
                py -= np.floor(py / ext_y) * ext_y
                if dz_ > 0.0 and pz > top:
                    break
            if not advanced:
                if dz_ > 0.0:
                    status = STATUS_EXITED
                else:
                    status = STATUS_TRAPPED
                break
            events += 1
            t1x, t1y, t1z, t2x, t2y, t2z = _frame_from_normal(nx, ny, nz)
            lx, ly, lz = _to_local(-dx_, -dy_, -dz_, nx, ny, nz, t1x, t1y, t1z, t2x, t2y, t2z)
            if lz <= 0.0:
                status = STATUS_ABSORBED
                break
            ox, oy, oz, w, state = micro_event(k_, q0, rg, io, lx, ly, lz, state)
            u, state = _rng_uniform(state)
            if u >= w or oz <= 0.0:
                status = STATUS_ABSORBED
                break
            dx_, dy_, dz_ = _to_world(ox, oy, oz, nx, ny, nz, t1x, t1y, t1z, t2x, t2y, t2z)
            # nudge off the surface
            px += nx * 1e-9
            py += ny * 1e-9
            pz += nz * 1e-9
        out_events[i] = events
        out_status[i] = status
        if status == STATUS_EXITED:
            out_wo[i, 0] = dx_
            out_wo[i, 1] = dy_
            out_wo[i, 2] = dz_
        else:
            out_wo[i, 0] = 0.0
            out_wo[i, 1] = 0.0
            out_wo[i, 2] = 0.0


# -- layered slab -----------------------------------------------------------------


@njit(cache=True, nogil=True)
def trace_slab(
    top_rough,
    top_ior,
    has_bottom,
    bot_refl,
    bot_rough,
    sigma_t,
    ss_albedo,
    phase_kind,
    phase_g,
    thickness,
    wi,
    keys,
    max_events,
    out_status,
    out_wo,
    out_events,
):
    nwalks = wi.shape[0]
    for i in range(nwalks):
        state = keys[i]
        dx_, dy_, dz_ = -wi[i, 0], -wi[i, 1], -wi[i, 2]
        z = thickness
        inside = False
        status = STATUS_TRAPPED
        events = 0
        for _ in range(max_events):
            if not inside:
                # at the top interface coming from outside
                events += 1
                lx, ly, lz = -dx_, -dy_, -dz_
                if lz <= 0.0:
                    status = STATUS_ABSORBED
                    break
                ox, oy, oz, w, state = micro_event(
                    KIND_ROUGH_DIELECTRIC, 0.0, top_rough, top_ior, lx, ly, lz, state
                )
                u, state = _rng_uniform(state)
                if u >= w:
                    status = STATUS_ABSORBED
                    break
                if oz > 0.0:
                    status = STATUS_EXITED
                    dx_, dy_, dz_ = ox, oy, oz
                    break
                dx_, dy_, dz_ = ox, oy, oz
                inside = True
                z = thickness
                continue
            # free flight inside the medium
            if sigma_t > 0.0:
                u, state = _rng_uniform(state)
                s = -np.log(1.0 - u) / sigma_t
            else:
                s = 1e30
            if dz_ < 0.0:
                d_bound = -z / dz_ if z > 0.0 else 0.0
                going_down = True
            elif dz_ > 0.0:
                d_bound = (thickness - z) / dz_
                going_down = False
            else:
                d_bound = 1e30
                going_down = False
            if s < d_bound:
                # collision in the medium
                events += 1
                z += dz_ * s
                u, state = _rng_uniform(state)
                if u >= ss_albedo:
                    status = STATUS_ABSORBED
                    break
                ox, oy, oz, w, state = micro_event(
                    phase_kind, phase_g, 0.0, 0.0, dx_, dy_, dz_, state
                )
                dx_, dy_, dz_ = ox, oy, oz
                continue
            if going_down:
                events += 1
                z = 0.0
                if has_bottom == 0:
                    status = STATUS_ABSORBED
                    break
                lx, ly, lz = -dx_, -dy_, -dz_
                if lz <= 0.0:
                    status = STATUS_ABSORBED
                    break
                ox, oy, oz, w, state = micro_event(
                    KIND_ROUGH_CONDUCTOR, bot_refl, bot_rough, 1.0, lx, ly, lz, state
                )
                u, state = _rng_uniform(state)
                if u >= w or oz <= 0.0:
                    status = STATUS_ABSORBED
                    break
                dx_, dy_, dz_ = ox, oy, oz
                continue
            # top interface from below: mirror the frame so the sampler sees
            # the incident direction from above, with inverted relative IOR
            events += 1
            z = thickness
            lx, ly, lz = -dx_, -dy_, dz_
            if lz <= 0.0:
                status = STATUS_ABSORBED
                break
            ox, oy, oz, w, state = micro_event(
                KIND_ROUGH_DIELECTRIC, 0.0, top_rough, 1.0 / top_ior, lx, ly, lz, state
            )
            u, state = _rng_uniform(state)
            if u >= w:
                status = STATUS_ABSORBED
                break
            if oz > 0.0:
                # reflected back down into the medium (mirrored frame)
                dx_, dy_, dz_ = ox, oy, -oz
                continue
            # refracted out; unmirror: world z points up
            status = STATUS_EXITED
            dx_, dy_, dz_ = ox, oy, -oz
            break
        out_events[i] = events
        out_status[i] = status
        if status == STATUS_EXITED and dz_ > 0.0:
            out_wo[i, 0] = dx_
            out_wo[i, 1] = dy_
            out_wo[i, 2] = dz_
        else:
            if status == STATUS_EXITED:
                out_status[i] = STATUS_ABSORBED
            out_wo[i, 0] = 0.0
            out_wo[i, 1] = 0.0
            out_wo[i, 2] = 0.0
