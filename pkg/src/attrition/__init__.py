"""College dropout early-warning workbench.

Synthetic administrative cohorts with a planted dropout mechanism,
observation-span feature engineering, chained-equation imputation, six
classifier families trained from first principles, imbalance-aware
evaluation, and permutation feature importance.
"""

__version__ = "0.1.0"
