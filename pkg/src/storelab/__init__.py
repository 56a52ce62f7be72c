"""Dead-store laboratory: MiniASM toolchain, execution oracle, and graph classifier."""

__version__ = "0.1.0"
