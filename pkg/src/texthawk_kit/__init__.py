"""Desk-scale fine-grained visual perception pipeline: shape-adaptive cropping,
two-stage visual token compression with multi-level cross-attention,
spherically interpolated positional embeddings, query proposal, coordinate
grounding and packed training batches."""

__version__ = "0.1.0"
