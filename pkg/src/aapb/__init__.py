"""Adaptive anchor/target score blending for classifier-free guidance, with analytic oracles."""
