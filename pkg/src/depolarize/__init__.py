"""Moderating expressed opinions to depolarize social networks."""
