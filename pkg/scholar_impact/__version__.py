"""Version information for the scholar impact toolkit"""

__version__ = "0.3.0"
__description__ = "Same-period normalized citation impact metrics, datasets and predictors"
