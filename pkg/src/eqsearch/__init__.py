"""eqsearch: an end-to-end search engine for mathematical expressions.

Pipeline: LaTeX sources -> corpus of MathML display equations -> one-hot
feature graphs -> graph-convolutional 64-d embeddings trained with
contextual similarity and masked-node objectives -> exact / RP-tree
nearest-neighbor retrieval with IR metrics and concentration-bound
evaluation for dependent data.
"""

from .corpus import (Corpus, EquationRecord, PaperRecord, Relation, RelationPair,
                     extract_citations, extract_equations, extract_relation_pairs,
                     load_corpus, save_corpus)
from .graph import (ExpressionGraph, MaskedGraph, Vocabulary, augment_identifiers,
                    build_vocabulary, encode, mask_nodes)
from .latex import LatexSyntaxError, UnbalancedGroupError, compile_latex_subset
from .model import EquationEncoder, load_checkpoint, positional_embedding, save_checkpoint
from .sampling import SamplingMethod, TripletSample, TripletSampler, sample_triplet
from .training import FinetuneConfig, TrainConfig, finetune_contrastive, train

__version__ = "0.1.0"

__all__ = [
    "Corpus", "EquationRecord", "PaperRecord", "Relation", "RelationPair",
    "extract_citations", "extract_equations", "extract_relation_pairs",
    "load_corpus", "save_corpus",
    "ExpressionGraph", "MaskedGraph", "Vocabulary", "augment_identifiers",
    "build_vocabulary", "encode", "mask_nodes",
    "LatexSyntaxError", "UnbalancedGroupError", "compile_latex_subset",
    "EquationEncoder", "load_checkpoint", "positional_embedding", "save_checkpoint",
    "SamplingMethod", "TripletSample", "TripletSampler", "sample_triplet",
    "FinetuneConfig", "TrainConfig", "finetune_contrastive", "train",
    "__version__",
]
