"""Contour tree neural networks for surface segmentation."""
