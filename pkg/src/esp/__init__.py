"""Electromagnetic signal processing: wave-domain models for communication links.

Submodules
----------
em       free-space dyadic Green's function and radiated fields
dof      degrees of freedom of apertures and links
modes    communication modes, water-filling, cascaded scattering
circuit  loaded dipole arrays and dynamic scattering array precoders
sim      stacked intelligent metasurfaces
ris      reconfigurable intelligent surfaces
scm      self-conjugating metasurface uplink
cli      scenario runner
"""
__version__ = "0.1.0"
SCHEMA_VERSION = 1
