"""Synthetic datasets with exact oracles."""

from .io import read_jsonl, read_meta, write_jsonl
from .listops import ListopsExample, gen_listops, listops_oracle, listops_tree
from .logic import (RELATIONS, LogicExample, filter_systematic_split, gen_logic, logic_relation_oracle,
                    parse_formula, render)
from .text import MASK, PAD, UNK, MaskedBatch, Vocab, build_vocab, gen_toy_corpus, mask_tokens, unigram_perplexity

__all__ = [
    "read_jsonl", "read_meta", "write_jsonl",
    "ListopsExample", "gen_listops", "listops_oracle", "listops_tree",
    "RELATIONS", "LogicExample", "filter_systematic_split", "gen_logic", "logic_relation_oracle",
    "parse_formula", "render",
    "MASK", "PAD", "UNK", "MaskedBatch", "Vocab", "build_vocab", "gen_toy_corpus", "mask_tokens",
    "unigram_perplexity",
]
