"""tollsim: queue-based multi-agent traffic simulation with an
interval-based congestion toll controller, fleet energy-tax projection and a
policy analysis toolkit."""

__version__ = "0.1.0"
