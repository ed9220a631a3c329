"""Fisheye camera model and rig calibration files.

Frames
------
Ground (ego) frame: x to the right of the vehicle, y forward, z up, origin
at the ego reference point on the ground. Camera frame: OpenCV convention,
x right, y down, z along the optical axis. A camera stores the rigid map
``X_cam = R @ X_ground + t``.

Projection
----------
For a camera-frame point with angle ``theta`` from the optical axis the
distorted angle is ``theta_d = theta (1 + k1 theta^2 + k2 theta^4 +
k3 theta^6 + k4 theta^8)``. The ``kannala_brandt`` model places the image
point at radius ``theta_d`` (equidistant when all k are zero); the
``pinhole`` model uses ``tan(theta_d)`` and is an exact pinhole camera
when all k are zero. Pixel coordinates follow the OpenCV convention
(integer coordinates are pixel centers).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

logger = logging.getLogger(__name__)

MODELS = ("kannala_brandt", "pinhole")
NEWTON_ITERS = 10
NEWTON_TOL = 1e-10

__all__ = [
    "FisheyeCamera",
    "look_at",
    "load_rig",
    "save_rig",
    "rig_to_dict",
    "rig_from_dict",
    "CalibrationError",
    "fixture_rig_path",
]


class CalibrationError(ValueError):
    pass


@dataclass
class FisheyeCamera:
    focal: tuple
    principal: tuple
    distortion: tuple = (0.0, 0.0, 0.0, 0.0)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    image_size: tuple = (1280, 800)
    name: str = "camera"
    model: str = "kannala_brandt"
    max_fov_deg: float = 190.0

    def __post_init__(self):
        self.focal = tuple(float(v) for v in self.focal)
        self.principal = tuple(float(v) for v in self.principal)
        self.distortion = tuple(float(v) for v in self.distortion)
        self.image_size = tuple(int(v) for v in self.image_size)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if len(self.focal) != 2 or min(self.focal) <= 0:
            raise CalibrationError(f"{self.name}: focal lengths must be two positive values")
        if len(self.principal) != 2 or len(self.image_size) != 2:
            raise CalibrationError(f"{self.name}: principal point and image size need 2 values")
        if len(self.distortion) != 4:
            raise CalibrationError(f"{self.name}: expected 4 distortion coefficients")
        if min(self.image_size) <= 1:
            raise CalibrationError(f"{self.name}: image size must exceed 1x1")
        if self.model not in MODELS:
            raise CalibrationError(f"{self.name}: model must be one of {MODELS}")
        r = self.rotation
        if (not np.allclose(r @ r.T, np.eye(3), atol=1e-6)
                or abs(np.linalg.det(r) - 1.0) > 1e-6):
            raise CalibrationError(f"{self.name}: rotation is not a proper orthonormal matrix")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(self.translation))):
            raise CalibrationError(f"{self.name}: pose contains non-finite values")
        self._max_theta = self._valid_theta_limit()

    # -- angular model ----------------------------------------------------

    def _theta_d(self, theta):
        k1, k2, k3, k4 = self.distortion
        t2 = theta * theta
        return theta * (1 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))

    def _theta_d_prime(self, theta):
        k1, k2, k3, k4 = self.distortion
        t2 = theta * theta
        return 1 + t2 * (3 * k1 + t2 * (5 * k2 + t2 * (7 * k3 + t2 * 9 * k4)))

    def _valid_theta_limit(self) -> float:
        limit = math.radians(self.max_fov_deg) / 2
        if self.model == "pinhole":
            limit = min(limit, math.radians(89.0))
        grid = np.linspace(0.0, limit, 2001)
        bad = np.nonzero(self._theta_d_prime(grid) <= 0)[0]
        if bad.size:
            limit = float(grid[max(bad[0] - 1, 0)])
        if self.model == "pinhole":
            ok = np.nonzero(self._theta_d(grid[grid <= limit]) < math.radians(89.0))[0]
            limit = float(grid[ok[-1]]) if ok.size else 0.0
        return limit

    def _undistort_theta(self, theta_d):
        theta = np.array(theta_d, dtype=float)
        for _ in range(NEWTON_ITERS):
            step = (self._theta_d(theta) - theta_d) / self._theta_d_prime(theta)
            theta = theta - step
            if np.all(np.abs(step) < NEWTON_TOL):
                break
        return theta

    # -- pose helpers -------------------------------------------------------

    @property
    def position(self) -> np.ndarray:
        """Camera center in the ground frame."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Unit optical axis expressed in the ground frame."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def axis_ground_point(self) -> np.ndarray:
        """Where the optical axis meets z = 0; falls back to the point below
        the camera when the axis does not point at the ground."""
        c, d = self.position, self.optical_axis
        if d[2] < -1e-9 and c[2] > 0:
            return (c - c[2] / d[2] * d)[:2]
        return c[:2].copy()

    # -- projection -----------------------------------------------------------

    def project(self, points):
        """Project ground-frame 3D points, shape (N, 3).

        Returns ``(uv, valid)``: pixel coordinates (N, 2) and a mask that is
        False behind the camera, beyond the field of view or off the sensor.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        pc = pts @ self.rotation.T + self.translation
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        rho = np.hypot(x, y)
        norm = np.hypot(rho, z)
        if np.any(norm == 0):
            raise ValueError("point coincides with the camera optical center")
        theta = np.arctan2(rho, z)
        theta_d = self._theta_d(theta)
        radius = theta_d if self.model == "kannala_brandt" else np.tan(
            np.minimum(theta_d, math.radians(89.0)))
        safe = np.where(rho > 0, rho, 1.0)
        cos_p = np.where(rho > 0, x / safe, 1.0)
        sin_p = np.where(rho > 0, y / safe, 0.0)
        u = self.focal[0] * radius * cos_p + self.principal[0]
        v = self.focal[1] * radius * sin_p + self.principal[1]
        w, h = self.image_size
        valid = ((theta <= self._max_theta)
                 & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1))
        return np.stack([u, v], axis=1), valid

    def project_ground(self, points):
        """Project points on the ground plane, shape (N, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.project(np.column_stack([pts, np.zeros(len(pts))]))

    def project_ground_point(self, point):
        """Single ground point to a pixel, or None when it is not visible."""
        uv, valid = self.project_ground([point])
        return tuple(uv[0]) if valid[0] else None

    def pixel_rays(self, uv):
        """Unit viewing rays (ground frame) for pixels, plus a validity mask."""
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        mx = (uv[:, 0] - self.principal[0]) / self.focal[0]
        my = (uv[:, 1] - self.principal[1]) / self.focal[1]
        radius = np.hypot(mx, my)
        theta_d = radius if self.model == "kannala_brandt" else np.arctan(radius)
        theta = self._undistort_theta(theta_d)
        safe = np.where(radius > 0, radius, 1.0)
        cos_p = np.where(radius > 0, mx / safe, 1.0)
        sin_p = np.where(radius > 0, my / safe, 0.0)
        st = np.sin(theta)
        rays_cam = np.stack([st * cos_p, st * sin_p, np.cos(theta)], axis=1)
        valid = (theta >= 0) & (theta <= self._max_theta)
        return rays_cam @ self.rotation, valid

    def unproject_to_ground(self, uv):
        """Intersect pixel rays with z = 0. Returns ``(points (N, 2), valid)``."""
        rays, valid = self.pixel_rays(uv)
        c = self.position
        dz = rays[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(dz < -1e-12, -c[2] / dz, np.nan)
        valid &= np.isfinite(s) & (s > 0)
        pts = c[None, :2] + s[:, None] * rays[:, :2]
        return np.where(valid[:, None], pts, np.nan), valid


def look_at(position, target, up=(0.0, 0.0, 1.0)):
    """Rotation and translation for a camera at ``position`` aimed at ``target``."""
    position = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - position
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [0.0, 1.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rotation = np.stack([x, y, z])
    return rotation, -rotation @ position


# -- calibration files ----------------------------------------------------------

_FIELDS = ("focal", "principal", "distortion", "rotation", "translation", "image_size")


def rig_to_dict(rig) -> dict:
    cams = {}
    for cam in rig:
        cams[cam.name] = {
            "model": cam.model,
            "focal": list(cam.focal),
            "principal": list(cam.principal),
            "distortion": list(cam.distortion),
            "rotation": cam.rotation.tolist(),
            "translation": cam.translation.tolist(),
            "image_size": list(cam.image_size),
            "max_fov_deg": cam.max_fov_deg,
        }
    return {"cameras": cams}


def rig_from_dict(data) -> list[FisheyeCamera]:
    if not isinstance(data, dict) or not isinstance(data.get("cameras"), dict):
        raise CalibrationError("rig file must contain a 'cameras' mapping")
    rig = []
    for name, entry in data["cameras"].items():
        if not isinstance(entry, dict):
            raise CalibrationError(f"camera {name!r}: expected a mapping")
        missing = [f for f in _FIELDS if f not in entry]
        if missing:
            raise CalibrationError(f"camera {name!r}: missing fields {missing}")
        try:
            rig.append(FisheyeCamera(
                focal=entry["focal"], principal=entry["principal"],
                distortion=entry["distortion"], rotation=entry["rotation"],
                translation=entry["translation"], image_size=entry["image_size"],
                name=str(name), model=entry.get("model", "kannala_brandt"),
                max_fov_deg=float(entry.get("max_fov_deg", 190.0)),
            ))
        except CalibrationError:
            raise
        except (TypeError, ValueError) as exc:
            raise CalibrationError(f"camera {name!r}: {exc}") from exc
    if not rig:
        raise CalibrationError("rig file defines no cameras")
    return rig


def load_rig(path) -> list[FisheyeCamera]:
    path = Path(path)
    with path.open() as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise CalibrationError(f"{path}: not valid YAML: {exc}") from exc
    return rig_from_dict(data)


def save_rig(rig, path) -> None:
    with Path(path).open("w") as fh:
        yaml.safe_dump(rig_to_dict(rig), fh, sort_keys=False)


def fixture_rig_path() -> Path:
    """Path of the bundled four-camera rig used by tests and examples."""
    return Path(str(resources.files("polyslot") / "data" / "fixture_rig.yaml"))
