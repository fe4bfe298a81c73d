"""muon_lab: a desk-scale laboratory for mini-batch SGD and Muon on
Holder-smooth empirical risks under heavy-tailed stochastic gradient noise."""

__version__ = "0.1.0"
