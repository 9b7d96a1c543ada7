"""Variability of small classifiers under deep ensembling and transfer learning.

Two analyses on desk-scale models: bootstrap deep-ensemble curves over the
number of averaged models, and ROC-AUC barriers along straight lines between
trained weight vectors.
"""

__version__ = "0.1.0"
