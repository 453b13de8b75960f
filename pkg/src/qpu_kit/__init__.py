"""qpu-kit: quaternion product units for rotation-invariant learning on 3D skeletons."""

__version__ = "0.1.0"
