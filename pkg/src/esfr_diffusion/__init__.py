"""ESFR diffusion on periodic triangle meshes with IP and BR2 fluxes."""
