"""Instance embeddings for hierarchical analog netlists.

Modules: ``netlist`` (parsing, placements, targets), ``graph`` (edge-typed
instance graph), ``features``, ``textembed`` (subword skip-gram), ``autodiff``
(reverse-mode engine + Adam), ``model`` (embedding network and heads),
``train``, ``datagen`` (synthetic corpora) and ``cli``.
"""

__version__ = "0.1.0"
