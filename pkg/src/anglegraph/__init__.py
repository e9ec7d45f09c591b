"""Graph-neural-network 3D object detection on LiDAR point clouds."""

__version__ = "0.1.0"
