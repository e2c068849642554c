"""Personality-aware neural collaborative filtering.

Pipeline pieces: review ingestion and active-user filtering, OCEAN score
handling, an MLP-based NCF recommender with personality features, and
leave-one-out HR/NDCG evaluation.
"""

__version__ = "0.1.0"
