"""
Retrieving link documents instead of walking the graph
======================================================

Every KG link becomes a one-sentence document. For each question the top-n
documents are retrieved and graded as if they were an extracted sub-graph.
Coverage can only grow with n, because a longer prefix of the same ranking
always contains the shorter one.
"""

from kgetool import fixtures
from kgetool.harness import docs_baseline
from kgetool.kg import links_to_documents
from kgetool.similarity import LexicalSimilarity

kg = fixtures.family_kg()
docs = links_to_documents(kg)
print(len(docs), "documents, e.g.", docs[6].text)

series = docs_baseline(fixtures.samples(), kg, LexicalSimilarity())
print(" n    F1  coverage")
for row in series:
    print(f"{row['n']:2d} {row['f1']:6.2f} {row['coverage']:8.2f}")
