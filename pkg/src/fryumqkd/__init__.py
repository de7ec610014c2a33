"""Equiprobable fryum-wheel segmentation and key-rate tools for position/momentum BBM92."""

__version__ = "0.1.0"
