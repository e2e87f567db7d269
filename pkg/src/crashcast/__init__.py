"""crashcast: scripted traffic-collision scenarios, edge-time features, and
interval forecasts of congestion and emissions on synthetic road networks."""

__version__ = "0.1.0"
