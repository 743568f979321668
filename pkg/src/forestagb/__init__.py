"""Aboveground biomass mapping with stacked ensembles and multi-scale map agreement."""

__version__ = "0.1.0"
