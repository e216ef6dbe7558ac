"""API endpoints module.""" 