"""Core functionality module.""" 