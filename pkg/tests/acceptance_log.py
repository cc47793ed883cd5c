"""Per-criterion result lines collected during the acceptance run."""
LINES: list[str] = []
