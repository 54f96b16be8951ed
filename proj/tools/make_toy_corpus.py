#!/usr/bin/env python3
"""Generate the 200-record toy corpus used by the end-to-end tests.

Three themes (air quality, evacuation, rebuilding) across three subreddits,
40 posts and 160 comments between 2025-01-07 and 2025-01-12 UTC.
"""

import argparse
import json
import random

THEMES = {
    "air": {
        "words": "air quality smoke mask masks n95 purifier filter ash asthma lungs breathing health "
                 "particulate pollution toxic aqi hepa indoor cough doctor".split(),
        "urls": ["https://www.airnow.gov/", "https://www.cdc.gov/wildfires/", "https://www.purpleair.com/map"],
    },
    "evac": {
        "words": "evacuation evacuate warning order zone route traffic firefighters containment crews "
                 "flames wind shelter alert road canyon brush helicopter drop".split(),
        "urls": ["https://www.watchduty.org/", "https://www.fire.ca.gov/incidents", "https://lafd.org/alerts"],
    },
    "rebuild": {
        "words": "rebuild insurance claim home house lost everything destroyed family neighbors donations "
                 "community recovery permits debris grief heartbroken memories".split(),
        "urls": ["https://www.gofundme.com/", "https://www.fema.gov/disaster", "https://www.redcross.org/"],
    },
}
FILLER = "today still many people area near right now really think need".split()
SUBREDDITS = {"altadena": "eaton", "pacificpalisades": "palisades", "LosAngeles": None}
PLACE = {"eaton": ["eaton", "altadena"], "palisades": ["palisades", "pali"], None: ["la", "county"]}
START = 1736208000  # 2025-01-07T00:00:00Z
SPAN = 5 * 86400


def sentence(rng, theme, subreddit, n):
    words = [rng.choice(THEMES[theme]["words"]) for _ in range(n)]
    words += [rng.choice(FILLER) for _ in range(3)]
    words.append(rng.choice(PLACE[SUBREDDITS[subreddit]]))
    rng.shuffle(words)
    return " ".join(words)


def generate(seed):
    rng = random.Random(seed)
    themes = sorted(THEMES)
    subs = sorted(SUBREDDITS)
    records = []
    posts = []
    for i in range(40):
        theme = themes[i % 3]
        sub = subs[(i // 3) % 3]
        pid = f"p{i:03d}"
        body = sentence(rng, theme, sub, 14)
        if i % 4 == 0:
            body += " " + rng.choice(THEMES[theme]["urls"])
        records.append({
            "id": pid, "kind": "post", "subreddit": sub, "author_hash": f"a{rng.randrange(50):02d}",
            "created_utc": START + rng.randrange(SPAN), "title": sentence(rng, theme, sub, 4),
            "body": body, "score": rng.randrange(100),
        })
        posts.append((pid, theme, sub))
    for j in range(160):
        pid, post_theme, sub = posts[j % 40]
        theme = post_theme if rng.random() < 0.8 else rng.choice(themes)
        body = sentence(rng, theme, sub, 12)
        if j % 5 == 0:
            body += " " + rng.choice(THEMES[theme]["urls"])
        records.append({
            "id": f"c{j:03d}", "kind": "comment", "parent_id": f"t3_{pid}", "link_id": f"t3_{pid}",
            "subreddit": sub, "author_hash": f"a{rng.randrange(50):02d}",
            "created_utc": START + rng.randrange(SPAN), "body": body, "score": rng.randrange(40),
        })
    return records


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    with open(args.out, "w", encoding="utf-8") as f:
        for r in generate(args.seed):
            f.write(json.dumps(r, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
