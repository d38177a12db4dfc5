#!/usr/bin/env python3
"""Extract coreference annotations from a MultiWOZ 2.3 data.json into the
annotation file read by `cdst ingest --coref`.

Expected input: for user turns (even log indices) a "coreference" object
mapping "<Domain>-<Act>" to a list of entries whose first two items are the
act slot name and the value, e.g.

    "coreference": {"Train-Inform": [["Day", "saturday", ...]]}

Output entries carry only slot and value; the loader locates the antecedent
as the most recent earlier mention of the value.

    python tools/convert_multiwoz23_coref.py MultiWOZ_2.3/data.json coref.json
"""

import argparse
import json
import sys
from collections import Counter

# Act slot names -> ontology slot names, per domain where they differ.
ACT_SLOTS = {
    "area": "area", "name": "name", "type": "type", "food": "food", "price": "pricerange",
    "pricerange": "pricerange", "stars": "stars", "internet": "internet", "parking": "parking",
    "depart": "departure", "departure": "departure", "dest": "destination", "destination": "destination",
    "arrive": "arriveby", "arriveby": "arriveby", "leave": "leaveat", "leaveat": "leaveat",
    "people": "book people", "stay": "book stay", "time": "book time",
}


def slot_name(domain: str, act_slot: str):
    s = act_slot.strip().lower()
    if s == "day":
        return f"{domain}-day" if domain == "train" else f"{domain}-book day"
    if s == "people" and domain == "train":
        return "train-book people"
    mapped = ACT_SLOTS.get(s)
    return f"{domain}-{mapped}" if mapped else None


def convert(data: dict, slots: set):
    out, skipped = {}, Counter()
    for dialogue_id, dialogue in data.items():
        for log_index, turn in enumerate(dialogue.get("log", [])):
            coref = turn.get("coreference")
            if not coref:
                continue
            if log_index % 2:
                skipped["system turn"] += 1
                continue
            if not isinstance(coref, dict):
                sys.exit(f"{dialogue_id} turn {log_index}: 'coreference' is not an object; unexpected layout")
            for act, entries in coref.items():
                domain = act.split("-")[0].lower()
                for entry in entries:
                    if not isinstance(entry, list) or len(entry) < 2:
                        sys.exit(f"{dialogue_id} turn {log_index}: entry {entry!r} is not [slot, value, ...]")
                    name = slot_name(domain, str(entry[0]))
                    if name not in slots:
                        skipped[f"slot {domain}/{entry[0]}"] += 1
                        continue
                    labels = out.setdefault(dialogue_id, {}).setdefault(str(log_index // 2), [])
                    label = {"slot": name, "value": str(entry[1]).strip().lower()}
                    if label not in labels:
                        labels.append(label)
    return out, skipped


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data", help="MultiWOZ 2.3 data.json")
    ap.add_argument("out", help="annotation file to write")
    ap.add_argument("--slots", default=None, help="slot inventory JSON (default: data/slots.json)")
    args = ap.parse_args()

    from pathlib import Path

    slots_path = Path(args.slots) if args.slots else Path(__file__).resolve().parent.parent / "data" / "slots.json"
    inventory = json.loads(slots_path.read_text())["slots"]
    slots = {f"{s['domain']}-{s['slot']}" for s in inventory}
    with open(args.data) as f:
        data = json.load(f)
    out, skipped = convert(data, slots)
    with open(args.out, "w") as f:
        json.dump(out, f, indent=1, sort_keys=True)
    labels = sum(len(v) for turns in out.values() for v in turns.values())
    print(f"{labels} labels in {len(out)} dialogues")
    for reason, n in sorted(skipped.items()):
        print(f"skipped {n}: {reason}")


if __name__ == "__main__":
    main()
