"""Test suite; ``oracles`` holds the independent reference implementations."""
