"""imuloc: a desk-scale synthetic lab for action-aware inertial localization.

Pipeline: synthetic scenes and head-mounted IMU streams -> contrastive
alignment of IMU and point-cloud encoders -> heatmap-based sequential
localization with location-aware action recognition -> evaluation against a
dead-reckoning baseline.
"""

__version__ = "0.1.0"
