#!/usr/bin/env python3
"""Regenerate the bundled training corpus (src/segmark/data/corpus.txt).

The corpus is synthetic traffic-log prose produced from a seeded template
grammar. It exists so the n-gram provider can be trained from a clean
checkout without any external download. Regeneration with the default seed
is byte-stable.
"""
from __future__ import annotations

import argparse
import random
from pathlib import Path

DETS = ["the", "a", "one", "every", "each", "this", "that", "another", "some", "our"]

NOUNS = [
    "car", "truck", "bus", "driver", "sensor", "camera", "beacon", "signal",
    "intersection", "road", "lane", "vehicle", "network", "system", "report",
    "operator", "junction", "bridge", "tunnel", "highway", "detour", "shuttle",
    "train", "tram", "cyclist", "pedestrian", "drone", "scooter", "van",
    "convoy", "patrol", "gateway", "node", "radar", "satellite", "antenna",
    "controller", "monitor", "dashboard", "archive", "ledger", "dataset",
    "stream", "packet", "message", "alert", "incident", "hazard", "barrier",
    "ramp", "toll", "depot", "terminal", "dock", "crossing", "corridor",
    "grid", "zone", "district", "region", "city", "suburb", "airport",
    "harbor", "station", "platform", "garage", "fleet", "route", "queue",
    "light", "sign", "marker", "curb", "median", "shoulder", "overpass",
    "roundabout", "crosswalk", "detector", "relay", "server", "channel",
    "buffer", "record", "snapshot", "forecast", "model", "survey",
    "audit", "permit", "license", "manifest", "schedule", "window",
    "storm", "fog", "rain", "snow", "wind", "crowd", "parade", "festival",
]

VERBS = [
    "moves", "stops", "turns", "merges", "accelerates", "brakes", "drifts",
    "signals", "reports", "records", "detects", "tracks", "predicts",
    "updates", "routes", "reroutes", "queues", "waits", "passes", "yields",
    "crosses", "enters", "exits", "approaches", "departs", "monitors",
    "measures", "logs", "streams", "encodes", "decodes", "verifies",
    "checks", "flags", "blocks", "clears", "resumes", "slows", "idles",
    "parks", "reverses", "circles", "climbs", "descends", "follows",
    "leads", "escorts", "scans", "pings", "syncs", "archives", "replays",
    "forwards", "filters", "samples", "aggregates", "broadcasts", "halts",
    "restarts", "stalls", "swerves", "overtakes", "tailgates", "honks",
]

ADVS = [
    "quickly", "slowly", "safely", "smoothly", "suddenly", "steadily",
    "briefly", "carefully", "randomly", "rarely", "often", "always",
    "never", "gently", "sharply", "silently", "reliably", "roughly",
    "nearly", "twice", "again", "early", "late", "eastward", "westward",
    "northbound", "southbound", "uphill", "downhill", "overnight",
]

ADJS = [
    "busy", "quiet", "icy", "wet", "dry", "dark", "bright", "narrow",
    "wide", "long", "short", "heavy", "light", "fast", "slow", "stable",
    "faulty", "noisy", "clean", "rough", "smooth", "crowded", "empty",
    "remote", "local", "central", "northern", "southern", "eastern",
    "western", "primary", "backup", "digital", "secure", "open", "closed",
    "blocked", "elevated", "parallel", "temporary", "automated", "manual",
]

PREPS = [
    "into", "onto", "across", "along", "through", "beyond", "near",
    "behind", "beside", "under", "over", "toward", "past", "around",
    "within", "between", "above", "below", "outside", "inside",
]

OPENERS = [
    "meanwhile", "however", "later", "afterwards", "eventually", "usually",
    "sometimes", "elsewhere", "upstream", "downstream", "yesterday",
    "today", "tonight", "overnight", "afterward", "initially", "finally",
    "occasionally", "likewise", "consequently",
]

TERMINALS = ["."] * 40 + ["!"] * 3 + ["?"] * 3


def _sentence(rng: random.Random) -> str:
    det, noun, verb = rng.choice(DETS), rng.choice(NOUNS), rng.choice(VERBS)
    shape = rng.randrange(7)
    if shape == 0:
        words = [det, rng.choice(ADJS), noun, verb, rng.choice(ADVS)]
    elif shape == 1:
        words = [det, noun, verb, rng.choice(PREPS), rng.choice(DETS), rng.choice(NOUNS)]
    elif shape == 2:
        words = [rng.choice(OPENERS), det, noun, verb, rng.choice(ADVS),
                 rng.choice(PREPS), rng.choice(DETS), rng.choice(ADJS), rng.choice(NOUNS)]
    elif shape == 3:
        words = [det, noun, "and", rng.choice(DETS), rng.choice(NOUNS), verb,
                 rng.choice(PREPS), rng.choice(DETS), rng.choice(NOUNS)]
    elif shape == 4:
        words = ["when", det, noun, verb, ",", rng.choice(DETS),
                 rng.choice(NOUNS), rng.choice(VERBS), rng.choice(ADVS)]
    elif shape == 5:
        words = [det, rng.choice(ADJS), noun, verb, rng.choice(PREPS),
                 rng.choice(DETS), rng.choice(ADJS), rng.choice(NOUNS)]
    else:
        words = [rng.choice(OPENERS), ",", det, noun, verb, rng.choice(ADVS)]
    words[-1] += rng.choice(TERMINALS)
    return " ".join(words)


def build_corpus(seed: int, target_bytes: int) -> str:
    rng = random.Random(seed)
    lines, size = [], 0
    while size < target_bytes:
        line = " ".join(_sentence(rng) for _ in range(rng.randrange(6, 12)))
        lines.append(line)
        size += len(line) + 1
    return "\n".join(lines) + "\n"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=20250809)
    ap.add_argument("--bytes", type=int, default=50_000)
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parents[1] / "src" / "segmark" / "data" / "corpus.txt")
    args = ap.parse_args()

    text = build_corpus(args.seed, args.bytes)
    vocab = set(text.split())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(text, encoding="utf-8")
    print(f"wrote {args.out} ({len(text)} bytes, vocab {len(vocab)})")


if __name__ == "__main__":
    main()
