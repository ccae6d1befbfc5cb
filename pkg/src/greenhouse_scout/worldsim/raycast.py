"""Vectorised ray casting against spheres, boxes, discs and vertical cylinders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("pepper", "table", "pot", "leaf", "stem")
_EPS = 1e-9


def ray_sphere(o, d, c, r):
    """Nearest positive hit distance, rays (R,3) x spheres (M,3) -> (R,M), inf on miss."""
    oc = o[:, None, :] - c[None, :, :]
    b = np.einsum("rk,rmk->rm", d, oc)
    cc = np.einsum("rmk,rmk->rm", oc, oc) - r[None, :] ** 2
    disc = b * b - cc
    t = np.full(disc.shape, np.inf)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    near = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
    t[ok] = near[ok]
    return t


def ray_box(o, d, lo, hi):
    """Slab test, rays (R,3) x boxes (M,3) -> (R,M)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo[None, :, :] - o[:, None, :]) * inv[:, None, :]
        t2 = (hi[None, :, :] - o[:, None, :]) * inv[:, None, :]
    # parallel rays: inside the slab -> (-inf, inf), outside -> empty
    par = d[:, None, :] == 0
    inside = (o[:, None, :] >= lo[None]) & (o[:, None, :] <= hi[None])
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    tn = tmin.max(axis=2)
    tf = tmax.min(axis=2)
    hit = (tn <= tf) & (tf > _EPS)
    t = np.where(tn > _EPS, tn, tf)
    return np.where(hit, t, np.inf)


def ray_disc(o, d, c, n, r):
    """Planar discs with centre c, unit normal n, radius r -> (R,M)."""
    denom = d @ n.T
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.einsum("mk,rmk->rm", n, c[None] - o[:, None]) / denom
    p = o[:, None, :] + t[..., None] * d[:, None, :]
    inside = np.sum((p - c[None]) ** 2, axis=2) <= r[None] ** 2
    ok = (np.abs(denom) > 1e-12) & (t > _EPS) & inside
    return np.where(ok, t, np.inf)


def ray_vcylinder(o, d, base, height, r):
    """Capped vertical cylinders standing on ``base`` -> (R,M)."""
    ox = o[:, None, 0] - base[None, :, 0]
    oy = o[:, None, 1] - base[None, :, 1]
    dx, dy = d[:, None, 0], d[:, None, 1]
    A = dx * dx + dy * dy
    B = ox * dx + oy * dy
    C = ox * ox + oy * oy - r[None] ** 2
    disc = B * B - A * C
    out = np.full(np.broadcast_shapes(A.shape, C.shape), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, 0.0))
        ts = [(-B - sq) / A, (-B + sq) / A]
    for t in ts:
        z = o[:, None, 2] + t * d[:, None, 2]
        ok = (disc >= 0) & (A > 1e-14) & (t > _EPS) & (z >= base[None, :, 2]) & (z <= base[None, :, 2] + height[None])
        out = np.where(ok & (t < out), t, out)
    # end caps
    for zc in (base[:, 2], base[:, 2] + height):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (zc[None] - o[:, None, 2]) / d[:, None, 2]
        px = ox + t * dx
        py = oy + t * dy
        ok = (np.abs(d[:, None, 2]) > 1e-14) & (t > _EPS) & (px * px + py * py <= r[None] ** 2)
        out = np.where(ok & (t < out), t, out)
    return out


@dataclass
class Scene:
    """Flat primitive arrays. Each group keeps a kind code (index into KINDS)
    and an owner id (plant index, pepper index, row index...)."""

    sph_c: np.ndarray
    sph_r: np.ndarray
    sph_kind: np.ndarray
    sph_owner: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    box_kind: np.ndarray
    box_owner: np.ndarray
    disc_c: np.ndarray
    disc_n: np.ndarray
    disc_r: np.ndarray
    disc_owner: np.ndarray
    cyl_base: np.ndarray
    cyl_h: np.ndarray
    cyl_r: np.ndarray
    cyl_owner: np.ndarray

    @classmethod
    def empty(cls) -> "Scene":
        z3 = np.zeros((0, 3))
        z1 = np.zeros(0)
        zi = np.zeros(0, dtype=int)
        return cls(z3, z1, zi, zi, z3, z3, zi, zi, z3, z3, z1, zi, z3, z1, z1, zi)

    @property
    def n_primitives(self) -> int:
        return len(self.sph_r) + len(self.box_lo) + len(self.disc_r) + len(self.cyl_r)

    def offsets(self):
        a = len(self.sph_r)
        b = a + len(self.box_lo)
        c = b + len(self.disc_r)
        return a, b, c

    def kind_of(self, pid: np.ndarray) -> np.ndarray:
        """Kind code per global primitive id (-1 for no hit)."""
        a, b, c = self.offsets()
        kinds = np.concatenate([
            self.sph_kind, self.box_kind,
            np.full(len(self.disc_r), KINDS.index("leaf")),
            np.full(len(self.cyl_r), KINDS.index("stem")),
        ]).astype(int)
        pid = np.asarray(pid)
        return np.where(pid >= 0, kinds[np.clip(pid, 0, None)] if len(kinds) else -1, -1)

    def bounding_spheres(self):
        """Centre and radius enclosing each primitive, in global id order."""
        bc = 0.5 * (self.box_lo + self.box_hi)
        br = 0.5 * np.linalg.norm(self.box_hi - self.box_lo, axis=1)
        cc = self.cyl_base + np.column_stack([np.zeros((len(self.cyl_h), 2)), self.cyl_h / 2])
        cr = np.hypot(self.cyl_r, self.cyl_h / 2)
        return (np.vstack([self.sph_c, bc, self.disc_c, cc]),
                np.concatenate([self.sph_r, br, self.disc_r, cr]))

    def subset(self, keep: np.ndarray) -> tuple["Scene", np.ndarray]:
        """Scene restricted to the global ids in ``keep`` and the id map back."""
        keep = np.asarray(keep, dtype=bool)
        a, b, c = self.offsets()
        ks, kb, kd, kc = keep[:a], keep[a:b], keep[b:c], keep[c:]
        sub = Scene(
            self.sph_c[ks], self.sph_r[ks], self.sph_kind[ks], self.sph_owner[ks],
            self.box_lo[kb], self.box_hi[kb], self.box_kind[kb], self.box_owner[kb],
            self.disc_c[kd], self.disc_n[kd], self.disc_r[kd], self.disc_owner[kd],
            self.cyl_base[kc], self.cyl_h[kc], self.cyl_r[kc], self.cyl_owner[kc],
        )
        return sub, np.flatnonzero(keep)

    def hit_matrix(self, o, d) -> np.ndarray:
        """Hit distances (R, n_primitives) in global id order."""
        parts = []
        if len(self.sph_r):
            parts.append(ray_sphere(o, d, self.sph_c, self.sph_r))
        if len(self.box_lo):
            parts.append(ray_box(o, d, self.box_lo, self.box_hi))
        if len(self.disc_r):
            parts.append(ray_disc(o, d, self.disc_c, self.disc_n, self.disc_r))
        if len(self.cyl_r):
            parts.append(ray_vcylinder(o, d, self.cyl_base, self.cyl_h, self.cyl_r))
        if not parts:
            return np.full((len(o), 0), np.inf)
        return np.hstack(parts)

    def cast(self, o, d, t_max=np.inf, chunk: int = 8192, exclude=None):
        """Nearest hit per ray: (t, primitive id); t = inf and id = -1 on miss.

        ``exclude`` optionally gives one global primitive id per ray to ignore.
        """
        o = np.atleast_2d(np.asarray(o, dtype=float))
        d = np.atleast_2d(np.asarray(d, dtype=float))
        if len(o) == 1 and len(d) > 1:
            o = np.broadcast_to(o, d.shape)
        t_max = np.broadcast_to(np.asarray(t_max, dtype=float), (len(d),))
        t_out = np.full(len(d), np.inf)
        id_out = np.full(len(d), -1, dtype=int)
        if self.n_primitives == 0:
            return t_out, id_out
        step = max(1, chunk * 64 // max(self.n_primitives, 1))
        for s in range(0, len(d), step):
            sl = slice(s, s + step)
            H = self.hit_matrix(o[sl], d[sl])
            if exclude is not None:
                ex = np.asarray(exclude)[sl]
                rows = np.flatnonzero(ex >= 0)
                H[rows, ex[rows]] = np.inf
            k = np.argmin(H, axis=1)
            t = H[np.arange(len(k)), k]
            hit = t <= t_max[sl]
            t_out[sl] = np.where(hit, t, np.inf)
            id_out[sl] = np.where(hit, k, -1)
        return t_out, id_out
