"""Unit tests for the ReID post-processing engine.

This package contains unit tests for feature ingestion, feature-space
transformations, distances, re-ranking, clustering, evaluation and the
pipeline driver.
"""
