"""Hybrid short-range score / long-range flow point cloud filtering."""

__version__ = "0.1.0"
