"""
hailcast - patch-conditioned diffusion nowcasting of convective radar echoes.

Core Features:
- Reverse-mode tensor numerics with gradient verification
- Synthetic advected-storm radar simulator and FGT1 dataset layout
- Target/reference patch tiling with exact stitching
- Spatiotemporal sinusoidal modulation of attention queries and keys
- Self/cross-attention denoiser trained with the epsilon objective
- DDPM/DDIM samplers, tiled full-field nowcasts and verification scores
"""

__version__ = "1.0.0"
