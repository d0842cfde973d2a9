"""Scholarly impact toolkit: TNCSI_SP labels, impact predictors and ranking evaluation"""

from .__version__ import __version__
