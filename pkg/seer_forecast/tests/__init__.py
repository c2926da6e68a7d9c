"""Tests for seer_forecast."""
