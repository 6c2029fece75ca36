"""Adiabatic piston: microscopic simulation versus the averaged equation."""

from .geometry import Container, first_hit, specular_reflect, subdomain_measure
from .states import Region, SlowState

__all__ = ["Container", "Region", "SlowState", "first_hit", "specular_reflect",
           "subdomain_measure"]
__version__ = "0.1.0"
