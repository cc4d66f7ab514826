"""Single-threaded numba kernels for rasterization and importance sweeps.

Per-pixel contributor lists are built CSR-style in two passes: a geometric
count, then a fill that walks Gaussians front to back so every pixel's list
comes out depth-sorted. All kernels run without threading, so accumulation
order (and therefore output) is deterministic.
"""

import numpy as np
from numba import njit

ALPHA_MAX = 0.99


@njit(cache=True)
def count_contributors(order, means2d, conic, radii, height, width, cutoff, counts):
    """Count per pixel how many Gaussians pass the ellipse test."""
    total = 0
    for oi in range(order.shape[0]):
        g = order[oi]
        u = means2d[g, 0]
        v = means2d[g, 1]
        r = radii[g]
        x0 = max(0, int(np.floor(u - r)))
        x1 = min(width - 1, int(np.ceil(u + r)))
        y0 = max(0, int(np.floor(v - r)))
        y1 = min(height - 1, int(np.ceil(v + r)))
        a, b, c = conic[g, 0], conic[g, 1], conic[g, 2]
        for py in range(y0, y1 + 1):
            dy = py - v
            for px in range(x0, x1 + 1):
                dx = px - u
                q2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if q2 <= cutoff:
                    counts[py * width + px] += 1
                    total += 1
    return total


@njit(cache=True)
def fill_contributors(
    order, means2d, conic, radii, ohat, height, width, cutoff,
    offsets, cursor, cgauss, calpha, cg2,
):
    """Scatter (gaussian, alpha, G2) into per-pixel slots in depth order."""
    for oi in range(order.shape[0]):
        g = order[oi]
        u = means2d[g, 0]
        v = means2d[g, 1]
        r = radii[g]
        x0 = max(0, int(np.floor(u - r)))
        x1 = min(width - 1, int(np.ceil(u + r)))
        y0 = max(0, int(np.floor(v - r)))
        y1 = min(height - 1, int(np.ceil(v + r)))
        a, b, c = conic[g, 0], conic[g, 1], conic[g, 2]
        oh = ohat[g]
        for py in range(y0, y1 + 1):
            dy = py - v
            for px in range(x0, x1 + 1):
                dx = px - u
                q2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                if q2 <= cutoff:
                    pix = py * width + px
                    slot = offsets[pix] + cursor[pix]
                    cursor[pix] += 1
                    g2 = np.exp(-0.5 * q2)
                    alpha = oh * g2
                    if alpha > ALPHA_MAX:
                        alpha = ALPHA_MAX
                    cgauss[slot] = g
                    calpha[slot] = alpha
                    cg2[slot] = g2


@njit(cache=True)
def blend(
    offsets, counts, cgauss, calpha, colors, background, stop_threshold,
    image, t_before, t_final, n_used,
):
    """Front-to-back compositing; stops a pixel once T drops below threshold."""
    n_pix = counts.shape[0]
    for pix in range(n_pix):
        t = 1.0
        used = 0
        r = 0.0
        g = 0.0
        b = 0.0
        base = offsets[pix]
        for k in range(counts[pix]):
            if t < stop_threshold:
                break
            slot = base + k
            gid = cgauss[slot]
            alpha = calpha[slot]
            t_before[slot] = t
            w = alpha * t
            r += colors[gid, 0] * w
            g += colors[gid, 1] * w
            b += colors[gid, 2] * w
            t *= 1.0 - alpha
            used += 1
        image[pix, 0] = r + background[0] * t
        image[pix, 1] = g + background[1] * t
        image[pix, 2] = b + background[2] * t
        t_final[pix] = t
        n_used[pix] = used


@njit(cache=True)
def blend_backward(
    offsets, n_used, cgauss, calpha, cg2, t_before, t_final,
    means2d, conic, ohat, colors, background, grad_image, width,
    grad_means2d, grad_conic, grad_colors, grad_ohat,
):
    """Exact gradients of the composite w.r.t. screen-space quantities.

    Walks each pixel back to front keeping the suffix sum S_k of everything
    behind contributor k, so dC/dalpha_k = c_k T_k - S_k / (1 - alpha_k).
    """
    n_pix = n_used.shape[0]
    for pix in range(n_pix):
        used = n_used[pix]
        if used == 0:
            continue
        px = pix % width
        py = pix // width
        dl0 = grad_image[pix, 0]
        dl1 = grad_image[pix, 1]
        dl2 = grad_image[pix, 2]
        s0 = background[0] * t_final[pix]
        s1 = background[1] * t_final[pix]
        s2 = background[2] * t_final[pix]
        base = offsets[pix]
        for k in range(used - 1, -1, -1):
            slot = base + k
            gid = cgauss[slot]
            alpha = calpha[slot]
            t = t_before[slot]
            c0 = colors[gid, 0]
            c1 = colors[gid, 1]
            c2 = colors[gid, 2]
            one_m = 1.0 - alpha
            dlda = (
                dl0 * (c0 * t - s0 / one_m)
                + dl1 * (c1 * t - s1 / one_m)
                + dl2 * (c2 * t - s2 / one_m)
            )
            w = alpha * t
            grad_colors[gid, 0] += dl0 * w
            grad_colors[gid, 1] += dl1 * w
            grad_colors[gid, 2] += dl2 * w
            s0 += c0 * w
            s1 += c1 * w
            s2 += c2 * w
            if alpha >= ALPHA_MAX:
                continue  # clamped: no gradient into opacity or geometry
            g2 = cg2[slot]
            grad_ohat[gid] += dlda * g2
            dldg2 = dlda * ohat[gid]
            u = means2d[gid, 0]
            v = means2d[gid, 1]
            dx = px - u
            dy = py - v
            ca, cb, cc = conic[gid, 0], conic[gid, 1], conic[gid, 2]
            w0 = ca * dx + cb * dy
            w1 = cb * dx + cc * dy
            grad_means2d[gid, 0] += dldg2 * g2 * w0
            grad_means2d[gid, 1] += dldg2 * g2 * w1
            grad_conic[gid, 0] += dldg2 * (-0.5 * dx * dx * g2)
            grad_conic[gid, 1] += dldg2 * (-dx * dy * g2)
            grad_conic[gid, 2] += dldg2 * (-0.5 * dy * dy * g2)


@njit(cache=True)
def importance_sweep(offsets, counts, cgauss, alpha_attr, gamma, out):
    """Accumulate gamma * alpha * T per Gaussian over depth-sorted pixel lists.

    Transmittance multiplies attribute opacities of the overlapping Gaussians
    in front, not their pixel-blending alphas.
    """
    n_pix = counts.shape[0]
    for pix in range(n_pix):
        t = 1.0
        base = offsets[pix]
        for k in range(counts[pix]):
            gid = cgauss[base + k]
            a = alpha_attr[gid]
            out[gid] += gamma[gid] * a * t
            t *= 1.0 - a
