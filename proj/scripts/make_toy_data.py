#!/usr/bin/env python3
"""Regenerates the bundled toy dataset under data/toy/.

The corpus is built from small word banks on purpose: the toy language
model trains over the export vocabulary, so the global word count stays
low while passages remain lexically distinctive per animal.

Output formatting matches the pipeline's canonical JSONL writer
(sorted keys, compact separators), so ingest -> serialize round-trips
byte-identically.
"""
import json
import os

ANIMALS = [
    "kestrel", "osprey", "marmot", "lynx", "otter", "puffin", "gannet",
    "ibex", "stoat", "wombat", "quokka", "tapir", "saola", "markhor",
    "serow", "dugong", "narwhal", "caracal", "fossa", "genet", "hyrax",
    "jerboa", "kinkajou", "margay", "pangolin",
]

# fact slot -> (passage template, follow-up question template)
FACTS = [
    ("diet", "The {a} feeds mainly on {x} and forages near {y}.",
     "what does it eat"),
    ("habitat", "The {a} lives in {y} habitat across the region.",
     "where does it live"),
    ("migration", "The {a} migration follows {y} routes each season.",
     "what about its migration"),
    ("breeding", "The {a} breeding season begins when {x} appear.",
     "when is its breeding season"),
    ("lifespan", "The {a} lifespan reaches many seasons in the wild.",
     "how long is its lifespan"),
    ("predators", "Main predators of the {a} include larger hunters near {y}.",
     "what are its predators"),
    ("vocalization", "The {a} vocalization sounds like sharp calls at dusk.",
     "what does its vocalization sound like"),
    ("territory", "Each {a} territory covers ground marked along {y}.",
     "how big is its territory"),
    ("offspring", "The {a} offspring stay hidden while {x} are scarce.",
     "how many offspring does it raise"),
    ("conservation", "The {a} conservation status depends on {y} protection.",
     "what is its conservation status"),
]

X_BANK = ["seeds", "insects", "grasses", "berries"]
Y_BANK = ["ridges", "wetland", "woodland", "coastline"]


def passage(animal_idx, fact_idx):
    animal = ANIMALS[animal_idx]
    fact, template, _ = FACTS[fact_idx]
    text = template.format(a=animal,
                           x=X_BANK[(animal_idx + fact_idx) % len(X_BANK)],
                           y=Y_BANK[(animal_idx * 3 + fact_idx) % len(Y_BANK)])
    return {
        "passage_id": f"{animal}-{fact}",
        "text": text,
        "source_doc": f"wiki/{animal}",
    }


def answer_for(animal_idx, fact_idx):
    return passage(animal_idx, fact_idx)["text"]


def conversation(i):
    animal = i % len(ANIMALS)
    other = (i + 7) % len(ANIMALS)
    shifted = i % 3 == 0  # every third conversation switches topic at turn 5
    turns = []
    for t in range(1, 9):
        current = other if (shifted and t >= 5) else animal
        fact_idx = (i + t * 3) % len(FACTS)
        fact, _, question_template = FACTS[fact_idx]
        if t == 1:
            question = f"what is known about the {ANIMALS[current]} {fact}"
        elif shifted and t == 5:
            question = f"switching topics what about the {ANIMALS[current]} {fact}"
        else:
            question = question_template
        gold = [f"{ANIMALS[current]}-{fact}"]
        if t == 7 and i % 5 == 4:
            gold = []  # retained but non-evaluable
        human = None
        if i % 2 == 0 and t >= 2 and gold:
            human = (question_template
                     .replace("its", f"the {ANIMALS[current]}")
                     .replace(" it ", f" the {ANIMALS[current]} "))
        turns.append({
            "turn_id": t,
            "question": question,
            "answer": answer_for(current, fact_idx) if t < 8 else "",
            "gold_passage_ids": gold,
            "human_rewrite": human,
        })
    return {"conv_id": f"toy{i:03d}", "turns": turns}


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "..", "data", "toy")
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, "passages.jsonl"), "w") as f:
        for a in range(len(ANIMALS)):
            for x in range(len(FACTS)):
                f.write(json.dumps(passage(a, x), sort_keys=True,
                                   separators=(",", ":")) + "\n")

    with open(os.path.join(out_dir, "conversations.jsonl"), "w") as f:
        for i in range(25):
            f.write(json.dumps(conversation(i), sort_keys=True,
                               separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
