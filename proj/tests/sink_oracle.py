"""Recomputes sink flags from an attention JSONL dump in one pass and compares
them with the sinks.csv written by `vasparse analyze`."""

import csv
import json
import statistics
import sys


def main(dump_path: str, sinks_path: str, threshold: float = 4.0) -> int:
    heads = set()
    column_mass = {}
    length = 0
    modalities = []
    with open(dump_path) as f:
        for line in f:
            rec = json.loads(line)
            if rec["type"] == "sequence":
                modalities = rec["modalities"]
                continue
            if rec["type"] != "attention":
                continue
            heads.add((rec["layer"], rec["head"]))
            length = max(length, rec["step"] + 1)
            for pos, val in zip(rec["positions"], rec["values"]):
                column_mass[pos] = column_mass.get(pos, 0.0) + val

    mass = [column_mass.get(j, 0.0) / len(heads) for j in range(length)]
    cutoff = threshold * statistics.median(mass)
    expected = [int(m > cutoff) for m in mass]

    with open(sinks_path) as f:
        rows = list(csv.DictReader(f))
    if len(rows) != length:
        print(f"FAIL length {len(rows)} != {length}")
        return 1
    bad = 0
    for j, row in enumerate(rows):
        if int(row["sink_flag"]) != expected[j] or abs(float(row["cumulative_mass"]) - mass[j]) > 1e-9:
            bad += 1
        if modalities and row["modality"] != modalities[j]:
            bad += 1
    flagged = [j for j, e in enumerate(expected) if e]
    print(f"{'PASS' if bad == 0 else 'FAIL'} {len(flagged)} sinks {flagged}, {bad} mismatches")
    return 0 if bad == 0 else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2], *(float(a) for a in sys.argv[3:])))
