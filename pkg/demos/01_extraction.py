"""
Tags, aliases and canonical keys from post titles
=================================================

Set tags live inside balanced brackets; person aliases are capitalised
runs in the free text around them. Canonicalisation folds case and
punctuation so that "T-Bone", "T Bone" and "Tbone" become one key.
"""
from crowdnet.corpus import PostRecord, bracket_pairs, filter_tagged_titles
from crowdnet.mentions import LexiconConfig, canonicalize_alias, emit_mentions, extract_aliases, extract_tags

titles = [
    "T-Bone (Black Kings) spotted on 64th",
    "rip Lil Tim [TG] [O Block]",
    "Breaking: King Von's (O Block) new track",
    "nothing to see here",
]

# Only titles with at least one bracket pass the corpus filter.
posts = [PostRecord(str(i), 0, t) for i, t in enumerate(titles)]
tagged = list(filter_tagged_titles(posts))
print("tagged titles:", [p.title for p in tagged])

for t in titles:
    print(f"{t!r}\n  pairs={bracket_pairs(t)} tags={extract_tags(t)} aliases={extract_aliases(t)}")

# Merge rules and exclusions come from the lexicon.
lex = LexiconConfig(merge_map={"timmy": "liltim"}, exclude_list={"obama"})
for surface in ["T-Bone", "T Bone", "Tbone", "Timmy", "Obama"]:
    print(f"{surface!r:10} -> {canonicalize_alias(surface, lex)}")

# One mention event per (post, alias), carrying the post's tags.
for ev in emit_mentions(tagged, lex):
    print(ev.post_id, ev.alias_key, ev.tags)
