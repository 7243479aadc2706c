"""Colour-formation embeddings for splicing localization."""
