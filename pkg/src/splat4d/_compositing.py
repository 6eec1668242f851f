"""Compiled per-pixel alpha-compositing kernels and their analytic backward pass.

The rasterizer front end (projection, covariance mapping, tile binning) runs
in torch; these kernels do the sequential front-to-back blending per pixel and
the matching reverse sweep that accumulates gradients with respect to screen
centers, inverse 2D covariances (conics), view depths, opacities and colors.
"""

from __future__ import annotations

import math

import numba
import numpy as np
import torch

# contributions with exp(power) below exp(POWER_MIN) are skipped; keep this
# far below render tolerances so the cutoff never shows up in gradient checks
POWER_MIN = -25.0


@numba.njit(cache=True)
def _forward_kernel(centers, conic, z, op, colors, cand, offsets, tiles,
                    rgb, depth_num, acc, a_max, t_eps):
    ntiles = offsets.shape[0] - 1
    for t in range(ntiles):
        x0, y0, tw, th = tiles[t, 0], tiles[t, 1], tiles[t, 2], tiles[t, 3]
        for py in range(y0, y0 + th):
            for px in range(x0, x0 + tw):
                trans = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                dn = 0.0
                a_sum = 0.0
                for ci in range(offsets[t], offsets[t + 1]):
                    if trans <= t_eps:
                        break
                    i = cand[ci]
                    dx = px - centers[i, 0]
                    dy = py - centers[i, 1]
                    power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) \
                        - conic[i, 1] * dx * dy
                    if power < POWER_MIN:
                        continue
                    a = op[i] * math.exp(power)
                    if a > a_max:
                        a = a_max
                    w = a * trans
                    c0 += w * colors[i, 0]
                    c1 += w * colors[i, 1]
                    c2 += w * colors[i, 2]
                    dn += w * z[i]
                    a_sum += w
                    trans *= 1.0 - a
                rgb[py, px, 0] = c0
                rgb[py, px, 1] = c1
                rgb[py, px, 2] = c2
                depth_num[py, px] = dn
                acc[py, px] = a_sum


@numba.njit(cache=True)
def _backward_kernel(centers, conic, z, op, colors, cand, offsets, tiles,
                     d_rgb, d_depth_num, d_acc,
                     g_centers, g_conic, g_z, g_op, g_colors,
                     a_max, t_eps, max_hits):
    a_buf = np.empty(max_hits)
    t_buf = np.empty(max_hits)
    p_buf = np.empty(max_hits)
    i_buf = np.empty(max_hits, dtype=np.int64)
    ntiles = offsets.shape[0] - 1
    for t in range(ntiles):
        x0, y0, tw, th = tiles[t, 0], tiles[t, 1], tiles[t, 2], tiles[t, 3]
        for py in range(y0, y0 + th):
            for px in range(x0, x0 + tw):
                # replay the forward blend, recording each contribution
                trans = 1.0
                n = 0
                for ci in range(offsets[t], offsets[t + 1]):
                    if trans <= t_eps:
                        break
                    i = cand[ci]
                    dx = px - centers[i, 0]
                    dy = py - centers[i, 1]
                    power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) \
                        - conic[i, 1] * dx * dy
                    if power < POWER_MIN:
                        continue
                    a = op[i] * math.exp(power)
                    if a > a_max:
                        a = a_max
                    a_buf[n] = a
                    t_buf[n] = trans
                    p_buf[n] = power
                    i_buf[n] = i
                    n += 1
                    trans *= 1.0 - a
                if n == 0:
                    continue
                dc0 = d_rgb[py, px, 0]
                dc1 = d_rgb[py, px, 1]
                dc2 = d_rgb[py, px, 2]
                ddn = d_depth_num[py, px]
                da_ = d_acc[py, px]
                # reverse sweep: suffix holds sum_{k>j} w_k g_k
                suffix = 0.0
                for j in range(n - 1, -1, -1):
                    i = i_buf[j]
                    a = a_buf[j]
                    tj = t_buf[j]
                    w = a * tj
                    g = dc0 * colors[i, 0] + dc1 * colors[i, 1] + dc2 * colors[i, 2] \
                        + ddn * z[i] + da_
                    dl_da = tj * g - suffix / (1.0 - a)
                    suffix += w * g
                    g_colors[i, 0] += w * dc0
                    g_colors[i, 1] += w * dc1
                    g_colors[i, 2] += w * dc2
                    g_z[i] += w * ddn
                    if a < a_max:  # clamp saturates the alpha path
                        gauss = math.exp(p_buf[j])
                        g_op[i] += gauss * dl_da
                        d_power = a * dl_da
                        dx = px - centers[i, 0]
                        dy = py - centers[i, 1]
                        g_conic[i, 0] += -0.5 * dx * dx * d_power
                        g_conic[i, 1] += -dx * dy * d_power
                        g_conic[i, 2] += -0.5 * dy * dy * d_power
                        g_centers[i, 0] += (conic[i, 0] * dx + conic[i, 1] * dy) * d_power
                        g_centers[i, 1] += (conic[i, 1] * dx + conic[i, 2] * dy) * d_power


class CompositeImage(torch.autograd.Function):
    """Front-to-back compositing over pre-binned tiles.

    Inputs: per-splat screen centers (M, 2), conics (M, 3) as (A, B, C) of the
    inverse 2D covariance, view depths (M,), opacities (M,), colors (M, 3) in
    [0, 1]; flattened depth-sorted candidate indices with per-tile offsets.
    Outputs: rgb (H, W, 3), unnormalized depth numerator (H, W), accumulated
    alpha (H, W).
    """

    @staticmethod
    def forward(ctx, centers, conic, z, op, colors, cand, offsets, tiles,
                height, width, a_max, t_eps):
        c_np = np.ascontiguousarray(centers.detach().numpy())
        k_np = np.ascontiguousarray(conic.detach().numpy())
        z_np = np.ascontiguousarray(z.detach().numpy())
        o_np = np.ascontiguousarray(op.detach().numpy())
        col_np = np.ascontiguousarray(colors.detach().numpy())
        cand_np = cand.numpy()
        off_np = offsets.numpy()
        tiles_np = tiles.numpy()
        rgb = np.zeros((height, width, 3))
        depth_num = np.zeros((height, width))
        acc = np.zeros((height, width))
        _forward_kernel(c_np, k_np, z_np, o_np, col_np, cand_np, off_np, tiles_np,
                        rgb, depth_num, acc, a_max, t_eps)
        ctx.save_for_backward(centers, conic, z, op, colors, cand, offsets, tiles)
        ctx.blend = (a_max, t_eps)
        return (torch.from_numpy(rgb), torch.from_numpy(depth_num), torch.from_numpy(acc))

    @staticmethod
    def backward(ctx, d_rgb, d_depth_num, d_acc):
        centers, conic, z, op, colors, cand, offsets, tiles = ctx.saved_tensors
        a_max, t_eps = ctx.blend
        m = centers.shape[0]
        g_centers = np.zeros((m, 2))
        g_conic = np.zeros((m, 3))
        g_z = np.zeros(m)
        g_op = np.zeros(m)
        g_colors = np.zeros((m, 3))
        counts = (offsets[1:] - offsets[:-1])
        max_hits = int(counts.max()) if m and counts.numel() else 1
        _backward_kernel(
            centers.detach().numpy(), conic.detach().numpy(), z.detach().numpy(),
            op.detach().numpy(), colors.detach().numpy(),
            cand.numpy(), offsets.numpy(), tiles.numpy(),
            np.ascontiguousarray(d_rgb.detach().numpy()),
            np.ascontiguousarray(d_depth_num.detach().numpy()),
            np.ascontiguousarray(d_acc.detach().numpy()),
            g_centers, g_conic, g_z, g_op, g_colors, a_max, t_eps, max(max_hits, 1),
        )
        return (torch.from_numpy(g_centers), torch.from_numpy(g_conic),
                torch.from_numpy(g_z), torch.from_numpy(g_op),
                torch.from_numpy(g_colors), None, None, None, None, None, None, None)
