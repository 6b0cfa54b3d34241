"""Packet speed and cost of geographic routing in mobile delay-tolerant networks."""
