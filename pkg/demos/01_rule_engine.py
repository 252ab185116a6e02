"""Walkthrough: the declarative knowledge model and consistency reasoning.

Loads the 14-activity rule file, evaluates a few context states, and shows the
open-world behaviour: activities are excluded only by contradicting evidence,
and observing more context can only shrink the consistent set.
"""

from nesyhar import ContextState, load_knowledge

model = load_knowledge("configs/domino.rules")
print(f"activities ({model.num_activities}):", ", ".join(model.activity_names))
print(f"context predicates: {model.vocabulary.size}")
print()

states = [
    ("nothing observed", ContextState()),
    ("outdoors", ContextState.from_pairs(["location_type=outdoor"])),
    ("outdoors, moving fast", ContextState.from_pairs(
        ["location_type=outdoor", "speed=high"])),
    ("outdoors, fast, on a transit route", ContextState.from_pairs(
        ["location_type=outdoor", "speed=high", "transport_route=true"])),
]

previous = None
for title, state in states:
    consistent = model.consistent_activities(state)
    vector = model.consistency_vector(state)
    print(f"-- {title}")
    print(f"   consistent ({len(consistent)}): "
          + ", ".join(a for a in model.activity_names if a in consistent))
    print(f"   vector: {' '.join(map(str, vector))}")
    if previous is not None:
        # more evidence never re-admits an excluded activity
        assert consistent <= previous, "monotonicity violated"
    previous = consistent
print()
print("each extra observation only ever shrank the consistent set (monotonicity).")
