"""Single image reflection removal with frequency prompts."""
