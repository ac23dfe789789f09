"""Single-IMU gait phase segmentation with IMU-Net."""

__version__ = "0.1.0"
