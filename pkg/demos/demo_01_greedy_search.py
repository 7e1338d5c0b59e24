"""
Grounding a path with a made-up relation
========================================

A model asked for Bob's mother's favourite alcohol store, but the family
graph has no ``prefer_alcohol_store`` relation. Greedy search keeps going
anyway: at the step it cannot match, it follows every edge out of Alice.
"""

from kgetool import fixtures
from kgetool.extraction import extract_exact, extract_greedy
from kgetool.search_parser import parse_kg_search

kg = fixtures.family_kg()
print(kg.stats())

# The raw model reply, reasoning and all.
reply = "Bob's mom is Alice, so: KG.search(Start=Bob, Path=[mother, prefer_alcohol_store])"
[path] = parse_kg_search(reply).searches
print(path)

# Plain label matching finds nothing.
print("exact:", extract_exact(kg, path).grounded)

# Greedy search recovers every link around Alice.
result = extract_greedy(kg, path)
print("fake relations:", result.fake_relation_count)
print("walks admitted:", result.candidate_count_pre_filter)
for grounded in result.sorted_paths():
    print("  ", " -> ".join(f"{t.head} {t.relation} {t.tail}" for t in grounded.links))
