"""Synthetic frames and templates shared by the tracker tests."""

import numpy as np

from evtrack.geometry import CameraIntrinsics, PoseSE3, TemplateView, project_points
from evtrack.representations import EventFrame, FrameKind, RepresentationConfig, gaussian_blur

K = CameraIntrinsics(200.0, 200.0, 120.0, 90.0, 240, 180)


def smooth_frame(K=K, coeffs=(10.0, 0.5, 0.4, 0.001)) -> EventFrame:
    """Bilinear polynomial ``a + b u + c v + d u v`` as a negative, blurred frame.

    Its bilinear interpolant is the polynomial itself and the unit-step
    central difference is its exact gradient, so finite differences of the
    residuals agree with the analytic Jacobian to rounding.
    """
    a, b, c, d = coeffs
    v, u = np.mgrid[0:K.height, 0:K.width].astype(float)
    return EventFrame(a + b * u + c * v + d * u * v, 0, FrameKind.NEGATIVE_TS, blurred=True)


def plane_template(n=800, seed=0, depth=3.0, K=K, margin=25) -> TemplateView:
    rng = np.random.default_rng(seed)
    px = rng.uniform([margin, margin], [K.width - 1 - margin, K.height - 1 - margin], (n, 2))
    d = depth * (1.0 + 0.2 * rng.uniform(-1, 1, n))
    return TemplateView(PoseSE3.identity(), px, d, K)


def valley_frame(template: TemplateView, T_cr: PoseSE3, K=K) -> EventFrame:
    """Negative blurred frame with dark dots where the template lands under ``T_cr``."""
    uv, ok = project_points(T_cr @ template.points(K), K)
    img = np.full((K.height, K.width), 255.0)
    iu = np.rint(uv[ok]).astype(int)
    keep = (iu[:, 0] >= 0) & (iu[:, 0] < K.width) & (iu[:, 1] >= 0) & (iu[:, 1] < K.height)
    img[iu[keep, 1], iu[keep, 0]] = 0.0
    return gaussian_blur(EventFrame(img, 0, FrameKind.NEGATIVE_EM), RepresentationConfig())


def mean_reprojection(template: TemplateView, A: PoseSE3, B: PoseSE3, K=K) -> float:
    P = template.points(K)
    ua, _ = project_points(A @ P, K)
    ub, _ = project_points(B @ P, K)
    return float(np.linalg.norm(ua - ub, axis=1).mean())
