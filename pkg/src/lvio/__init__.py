"""lvio: tightly coupled lidar-visual-inertial odometry."""

__version__ = "0.1.0"
