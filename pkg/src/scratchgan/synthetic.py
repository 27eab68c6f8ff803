"""A small topic grammar for desk-scale experiments.

Every sentence picks one topic and draws all content words from it. Two-clause
sentences join the clauses with a three-token connective, so a 5-gram model
cannot see the topic when it starts the second clause while a recurrent model
can. The module also writes a topic-structured "pretrained" embedding file
standing in for GloVe vectors.
"""

from __future__ import annotations

import dataclasses

import numpy as np

DETERMINERS = ["the", "a", "every", "one"]
CONNECTIVE = [",", "and", "then"]
END = "."
FUNCTION_WORDS = DETERMINERS + CONNECTIVE + [END]


@dataclasses.dataclass
class TopicGrammar:
    num_topics: int = 4
    nouns_per_topic: int = 16
    verbs_per_topic: int = 10
    adjectives_per_topic: int = 10
    adjective_prob: float = 0.35
    two_clause_prob: float = 0.8
    zipf: float = 1.1

    def words(self, topic: int) -> dict[str, list[str]]:
        return {
            "noun": [f"n{topic}_{i}" for i in range(self.nouns_per_topic)],
            "verb": [f"v{topic}_{i}" for i in range(self.verbs_per_topic)],
            "adj": [f"j{topic}_{i}" for i in range(self.adjectives_per_topic)],
        }

    def vocabulary(self) -> list[str]:
        out = list(FUNCTION_WORDS)
        for k in range(self.num_topics):
            for ws in self.words(k).values():
                out.extend(ws)
        return out

    def _pick(self, options: list[str], rng: np.random.Generator) -> str:
        w = 1.0 / np.arange(1, len(options) + 1) ** self.zipf
        return options[rng.choice(len(options), p=w / w.sum())]

    def _noun_phrase(self, words, rng) -> list[str]:
        out = [DETERMINERS[rng.integers(len(DETERMINERS))]]
        if rng.random() < self.adjective_prob:
            out.append(self._pick(words["adj"], rng))
        out.append(self._pick(words["noun"], rng))
        return out

    def _clause(self, words, rng) -> list[str]:
        return self._noun_phrase(words, rng) + [self._pick(words["verb"], rng)] + self._noun_phrase(words, rng)

    def sentence(self, rng: np.random.Generator) -> list[str]:
        words = self.words(int(rng.integers(self.num_topics)))
        out = self._clause(words, rng)
        if rng.random() < self.two_clause_prob:
            out += CONNECTIVE + self._clause(words, rng)
        return out + [END]

    def sample(self, n: int, seed: int) -> list[list[str]]:
        rng = np.random.default_rng(seed)
        return [self.sentence(rng) for _ in range(n)]

    def embeddings(self, dim: int = 16, seed: int = 0, spread: float = 0.35) -> dict[str, np.ndarray]:
        """Content words cluster around a per-topic centroid; function words sit
        near the origin."""
        rng = np.random.default_rng(seed)
        centroids = rng.normal(0.0, 1.0, (self.num_topics, dim))
        table = {w: rng.normal(0.0, spread, dim) for w in FUNCTION_WORDS}
        for k in range(self.num_topics):
            for ws in self.words(k).values():
                for w in ws:
                    table[w] = centroids[k] + rng.normal(0.0, spread, dim)
        return table


def make_desk_corpus(out_dir, n_train: int = 10000, n_valid: int = 2000, seed: int = 0,
                     embedding_dim: int = 16, grammar: TopicGrammar | None = None) -> dict[str, str]:
    """Writes train.txt, valid.txt and embeddings.txt under ``out_dir``."""
    from pathlib import Path

    from .corpus import write_embedding_file, write_sentences

    grammar = grammar or TopicGrammar()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": str(out / "train.txt"), "valid": str(out / "valid.txt"),
             "embeddings": str(out / "embeddings.txt")}
    write_sentences(paths["train"], grammar.sample(n_train, seed))
    write_sentences(paths["valid"], grammar.sample(n_valid, seed + 1))
    table = grammar.embeddings(embedding_dim, seed)
    write_embedding_file(paths["embeddings"], list(table), np.stack(list(table.values())))
    return paths
