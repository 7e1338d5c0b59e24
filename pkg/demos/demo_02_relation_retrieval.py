"""
Swapping a fake relation for similar real ones
==============================================

A user says "child" where the graph says "son". Relation retrieval replaces
each relation missing from the vocabulary with its top-k most similar
vocabulary entries and grounds every combination.

Character trigrams cannot see that "child" and "son" mean the same thing,
so this demo uses a tiny hand-made embedding table instead.
"""

from kgetool import fixtures
from kgetool.extraction import extract_relation_retrieval
from kgetool.kg import RelationPath
from kgetool.similarity import LexicalSimilarity, VectorFileSimilarity

kg = fixtures.family_kg()
vocab = kg.sorted_relations()
path = RelationPath("Alice", ("child",))

print("lexical top-3:", LexicalSimilarity().top_k("child", vocab, 3))

# One axis per relation, with "child" leaning towards "son".
dims = len(vocab)
table = {r: [1.0 if i == j else 0.0 for j in range(dims)] for i, r in enumerate(vocab)}
table["child"] = [0.9 if r == "son" else 0.1 for r in vocab]
sim = VectorFileSimilarity(table)
print("embedding top-3:", sim.top_k("child", vocab, 3))

for k in (1, 2):
    result = extract_relation_retrieval(kg, path, sim, k=k)
    print(f"k={k}: {result.candidate_count_pre_filter} substitution(s) ->", sorted(result.links))
