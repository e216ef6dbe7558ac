"""Dependencies for API routes."""
