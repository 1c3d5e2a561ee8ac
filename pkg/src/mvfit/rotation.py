"""Rotation helpers: Euler angles, quaternions and dual quaternions.

Conventions used everywhere in this package:
  * Euler angles are (ax, ay, az) with R = Rz(az) @ Ry(ay) @ Rx(ax),
    i.e. the x rotation is applied to the vector first.
  * Quaternions are (w, x, y, z).
  * All torch code runs in float64.

Functions take and return torch tensors so they stay differentiable; the
few numpy callers go through ``numpy()`` on the result.
"""

import torch

DTYPE = torch.float64


def to_tensor(x):
    """Coerce array-likes to a float64 torch tensor (shares nothing)."""
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(x, dtype=DTYPE)


def axis_rotation(axis: str, angle):
    """3x3 rotation about a coordinate axis ('x' | 'y' | 'z')."""
    angle = to_tensor(angle).reshape(())
    c, s = torch.cos(angle), torch.sin(angle)
    one = torch.ones((), dtype=DTYPE)
    zero = torch.zeros((), dtype=DTYPE)
    if axis == "x":
        rows = [one, zero, zero, zero, c, -s, zero, s, c]
    elif axis == "y":
        rows = [c, zero, s, zero, one, zero, -s, zero, c]
    elif axis == "z":
        rows = [c, -s, zero, s, c, zero, zero, zero, one]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return torch.stack(rows).reshape(3, 3)


def euler_to_matrix(angles):
    """Euler (..., 3) -> rotation matrices (..., 3, 3), R = Rz @ Ry @ Rx."""
    angles = to_tensor(angles)
    ax, ay, az = angles[..., 0], angles[..., 1], angles[..., 2]
    cx, sx = torch.cos(ax), torch.sin(ax)
    cy, sy = torch.cos(ay), torch.sin(ay)
    cz, sz = torch.cos(az), torch.sin(az)
    r00 = cz * cy
    r01 = cz * sy * sx - sz * cx
    r02 = cz * sy * cx + sz * sx
    r10 = sz * cy
    r11 = sz * sy * sx + cz * cx
    r12 = sz * sy * cx - cz * sx
    r20 = -sy
    r21 = cy * sx
    r22 = cy * cx
    rows = torch.stack(
        [r00, r01, r02, r10, r11, r12, r20, r21, r22], dim=-1
    )
    return rows.reshape(angles.shape[:-1] + (3, 3))


def matrix_to_quat(R):
    """Rotation matrix (3, 3) -> unit quaternion (w, x, y, z).

    Shepperd-style pivot on the largest diagonal combination; the branch is
    chosen on detached values so autograd only sees the selected formula.
    The overall sign is arbitrary (q and -q encode the same rotation).
    """
    R = to_tensor(R)
    t0 = 1.0 + R[0, 0] + R[1, 1] + R[2, 2]
    t1 = 1.0 + R[0, 0] - R[1, 1] - R[2, 2]
    t2 = 1.0 - R[0, 0] + R[1, 1] - R[2, 2]
    t3 = 1.0 - R[0, 0] - R[1, 1] + R[2, 2]
    pivot = int(torch.argmax(torch.stack([t0, t1, t2, t3]).detach()))
    if pivot == 0:
        s = 2.0 * torch.sqrt(t0)
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif pivot == 1:
        s = 2.0 * torch.sqrt(t1)
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif pivot == 2:
        s = 2.0 * torch.sqrt(t2)
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = 2.0 * torch.sqrt(t3)
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return torch.stack([w, x, y, z])


def quat_to_matrix(q):
    """Unit quaternion(s) (..., 4) -> rotation matrices (..., 3, 3)."""
    q = to_tensor(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    )
    return rows.reshape(q.shape[:-1] + (3, 3))


def quat_mul(a, b):
    """Hamilton product of quaternion batches (..., 4)."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def quat_conj(q):
    return torch.cat([q[..., :1], -q[..., 1:]], dim=-1)


def rigid_to_dualquat(R, t):
    """Rigid transform (R, t) -> unit dual quaternion (real (4,), dual (4,))."""
    qr = matrix_to_quat(R)
    t = to_tensor(t)
    tq = torch.cat([torch.zeros(1, dtype=DTYPE), t])
    qd = 0.5 * quat_mul(tq, qr)
    return qr, qd


def dualquat_to_rigid(qr, qd):
    """Dual quaternion(s) (..., 4) -> (R (..., 3, 3), t (..., 3)).

    Inputs need not be pre-normalized; the real-part norm divides both.
    """
    norm = torch.linalg.norm(qr, dim=-1, keepdim=True)
    qr_n = qr / norm
    qd_n = qd / norm
    R = quat_to_matrix(qr_n)
    t = 2.0 * quat_mul(qd_n, quat_conj(qr_n))[..., 1:]
    return R, t
