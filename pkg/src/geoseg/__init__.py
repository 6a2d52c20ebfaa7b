"""Point-cloud semantic segmentation with geometric features and boundary-aware training, at desk scale."""

__version__ = "0.1.0"
