"""framebench: how the framing of a ward sepsis risk-prediction task shapes
sample counts, class balance, missingness, metrics and explanations.

Pipeline modules: synthetic cohorts (synthgen), data model and ingestion
(cohort), Sepsis-3 labels (sepsis3), sample framings (framing), window
features (features), boosted trees (gbdt), Shapley attributions (treeshap),
cross-validated metrics (evaluation), figures (svgplot), CLI (cli).
"""

__version__ = "0.1.0"
