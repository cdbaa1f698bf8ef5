"""Shipped box configurations (rectangles in box-local units)."""
