"""Bundled experiment suites."""
