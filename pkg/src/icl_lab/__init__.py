"""Desk-scale laboratory for context scaling versus task scaling in
in-context learning.

Subpackages grow roughly bottom-up: ``ndtensor`` (autodiff), ``taskgen``
(synthetic prompt distributions), ``featmap`` (attention-derived feature
maps), ``models``, ``baselines``, ``trainer``, and the ``cli`` entry point.
"""

__version__ = "0.1.0"
