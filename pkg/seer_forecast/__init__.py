"""Initialize seer_forecast."""

__version__ = '0.1.dev0'
