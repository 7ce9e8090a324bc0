"""Meta-learning laboratory for in-context learning over finite hypothesis classes.

Builds synthetic episodes that pair a literal description of a finite
hypothesis class with labeled examples from one of its members, trains small
sequence models on them from scratch, and measures how well the models
identify hypotheses and predict labels against exact version-space oracles.
"""

__version__ = "0.1.0"
