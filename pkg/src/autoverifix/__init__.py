"""Two-stage LLM pipeline for functionally correct Verilog generation."""

__version__ = "0.1.0"
