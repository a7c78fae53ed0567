"""GA-solved episodes distilled into a daily buy-twice-or-skip policy."""
