"""Two-stage auctions: a stage-one contest for the right to meet an entrant in a
second-price stage two, with and without bid commitment."""

__version__ = "0.1.0"
