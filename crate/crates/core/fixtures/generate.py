#!/usr/bin/env python3
"""Regenerate the HAR corpora and lookup tables in this directory.

Output is deterministic; rerun after editing the layouts below.
"""

import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

HERE = Path(__file__).resolve().parent

WHOIS = [
    ("23.32.0.0/11", "Akamai Technologies, Inc."),
    ("151.101.0.0/16", "Fastly, Inc."),
    ("172.217.0.0/16", "Google LLC"),
    ("52.84.0.0/15", "Amazon.com, Inc."),
    ("185.152.64.0/22", "DataCamp Limited"),
    ("185.172.148.0/22", "proinity GmbH"),
    ("195.154.0.0/16", "Online SAS"),
    ("47.95.0.0/16", "Hangzhou Alibaba Advertising Co.,Ltd."),
    ("4.0.0.0/9", "Level 3 Parent, LLC"),
    ("198.51.100.0/24", "Example Hosting"),
]

# prefix, city, country, continent, lat, lon
GEO = [
    ("23.32.1.0/24", "Johannesburg", "ZA", "AF", -26.2041, 28.0473),
    ("23.32.2.0/24", "Cambridge", "US", "NA", 42.3736, -71.1097),
    ("23.32.3.0/24", "Port Louis", "MU", "AF", -20.1609, 57.5012),
    ("151.101.120.0/24", "Paris", "FR", "EU", 48.8566, 2.3522),
    ("172.217.0.0/16", "Paris", "FR", "EU", 48.8566, 2.3522),
    ("52.84.0.0/15", "Frankfurt", "DE", "EU", 50.1109, 8.6821),
    ("185.152.64.0/22", "Paris", "FR", "EU", 48.8566, 2.3522),
    ("185.172.148.0/22", "Zurich", "CH", "EU", 47.3769, 8.5417),
    ("195.154.0.0/16", "Paris", "FR", "EU", 48.8566, 2.3522),
    ("47.95.0.0/16", "Beijing", "CN", "AS", 39.9042, 116.4074),
    ("198.51.100.0/24", "San Jose", "US", "NA", 37.3382, -121.8863),
    ("4.0.0.0/9", "London", "GB", "EU", 51.5074, -0.1278),
]

NS = [
    ("lefigaro.fr", "dns.d4p.net,dns2.d4p.net"),
    ("akamaized.net", "a1-64.akam.net,a2-64.akam.net"),
    ("fastly.net", "ns1.fastly.net"),
    ("googleapis.com", "ns1.google.com"),
    ("cloudfront.net", "ns-1.awsdns-00.com"),
    ("cdn77.org", "ns1.cdn77.org"),
    ("kxcdn.com", "ns1.keycdn.com"),
    ("csdn.net", "ns1.alidns.com"),
    ("csdnimg.cn", "ns1.alidns.com"),
    ("example.com", "ns1.example.com"),
]

MIMES = [
    ("text/html", 30_000),
    ("application/javascript", 40_000),
    ("text/css", 12_000),
    ("image/jpeg", 25_000),
    ("image/png", 8_000),
    ("font/woff2", 20_000),
    ("application/json", 2_000),
]


def iso(t):
    return t.isoformat(timespec="milliseconds").replace("+00:00", "Z")


def entry(rng, page_start, offset_ms, url, ip, version, headers, mime):
    mime_type, size = mime
    size = int(size * rng.uniform(0.5, 1.5))
    phases = {
        "blocked": round(rng.uniform(0, 5), 1),
        "dns": round(rng.uniform(0, 20), 1),
        "connect": round(rng.uniform(0, 30), 1),
        "send": 0.2,
        "wait": round(rng.uniform(10, 120), 1),
        "receive": round(rng.uniform(1, 60), 1),
    }
    return {
        "pageref": "page_1",
        "startedDateTime": iso(page_start + timedelta(milliseconds=offset_ms)),
        "time": round(sum(phases.values()), 1),
        "request": {"method": "GET", "url": url, "httpVersion": version, "headers": []},
        "response": {
            "status": 200,
            "httpVersion": version,
            "headers": [{"name": k, "value": v} for k, v in headers],
            "content": {"size": size, "mimeType": mime_type},
            "bodySize": size,
            "headersSize": 300,
        },
        "serverIPAddress": ip,
        "timings": phases,
    }


def har(page_url, start, entries, on_load):
    return {
        "log": {
            "version": "1.2",
            "creator": {"name": "fixture-generator", "version": "1"},
            "browser": {"name": "Chrome", "version": "120.0"},
            "pages": [
                {
                    "startedDateTime": iso(start),
                    "id": "page_1",
                    "title": page_url,
                    "pageTimings": {"onContentLoad": round(on_load * 0.6, 1), "onLoad": on_load},
                }
            ],
            "entries": entries,
        }
    }


def build(rng, page_url, start, groups):
    """groups: list of (count, host, ip_list, headers, versions)."""
    rows = []
    for count, host, ips, headers, versions in groups:
        for i in range(count):
            rows.append((host, ips[i % len(ips)], headers, versions[i % len(versions)]))
    first = rows[0]
    # The document request goes first; the rest are interleaved.
    rest = rows[1:]
    rng.shuffle(rest)
    entries = []
    offset = 0.0
    for n, (host, ip, headers, version) in enumerate([first] + rest):
        url = page_url if n == 0 else f"https://{host}/assets/{n}"
        mime = MIMES[0] if n == 0 else MIMES[1 + n % (len(MIMES) - 1)]
        entries.append(entry(rng, start, offset, url, ip, version, headers, mime))
        offset += rng.uniform(2, 15)
    end = max(offset + e["time"] for e in entries)
    return har(page_url, start, entries, round(end + 50, 1))


def write_tables(dest):
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "whois.tsv").write_text(
        "# ip_prefix\tassignee\n" + "".join(f"{p}\t{a}\n" for p, a in WHOIS)
    )
    (dest / "geo.tsv").write_text(
        "# ip_prefix\tcity\tcountry\tcontinent\tlatitude\tlongitude\n"
        + "".join("\t".join(map(str, row)) + "\n" for row in GEO)
    )
    (dest / "ns.tsv").write_text(
        "# domain\tns1,ns2,...\n" + "".join(f"{d}\t{n}\n" for d, n in NS)
    )


def dump(path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1) + "\n")


def main():
    rng = random.Random(20190101)
    write_tables(HERE / "tables")

    example_start = datetime(2019, 2, 1, 10, 0, tzinfo=timezone.utc)
    example = har(
        "https://www.example.com/",
        example_start,
        [
            entry(
                rng,
                example_start,
                0,
                "https://www.example.com/",
                "151.101.120.175",
                "h2",
                [
                    ("X-Served-By", "cache-iad2132-IAD, cache-cdg20761-CDG"),
                    ("X-Cache", "MISS, HIT"),
                    ("X-Cache-Hits", "0, 1"),
                    ("X-App-Cache", "HIT"),
                ],
                MIMES[0],
            )
        ],
        250.0,
    )
    dump(HERE / "example" / "example.com.har", example)
    dump(
        HERE / "example" / "example.com.paint.json",
        [{"name": "first-paint", "offset_ms": 180.0}],
    )

    hit = [("X-Cache", "TCP_HIT")]
    lefigaro = build(
        rng,
        "https://www.lefigaro.fr/",
        datetime(2019, 3, 12, 9, 30, tzinfo=timezone.utc),
        [
            (55, "www.lefigaro.fr", ["195.154.10.1", "195.154.10.2"], [], ["h2", "http/1.1"]),
            (45, "static.lefigaro.akamaized.net", ["23.32.1.10"], hit, ["h2"]),
            (12, "img.lefigaro.akamaized.net", ["23.32.2.10"], hit, ["h2", "http/1.1"]),
            (3, "ads.lefigaro.akamaized.net", ["23.32.3.10"], hit, ["http/1.1"]),
            (25, "lefigaro.global.ssl.fastly.net", ["151.101.120.80"],
             [("X-Served-By", "cache-cdg20741-CDG"), ("X-Cache", "HIT")], ["h2"]),
            (7, "fonts.googleapis.com", ["172.217.18.10"], [], ["h3-29", "h2"]),
            (2, "d1.cloudfront.net", ["52.84.1.2"], [("X-Cache", "Hit from cloudfront")], ["h2"]),
            (1, "lefigaro.cdn77.org", ["185.152.65.1"], [], ["http/1.1"]),
            (1, "lefigaro.kxcdn.com", ["185.172.149.1"], [], ["h2"]),
        ],
    )
    dump(HERE / "lefigaro" / "lefigaro.fr.har", lefigaro)

    csdn = build(
        rng,
        "https://www.csdn.net/",
        datetime(2019, 4, 2, 8, 0, tzinfo=timezone.utc),
        [
            (50, "www.csdn.net", ["47.95.1.1", "47.95.1.2"], [], ["h2"] * 3 + ["http/1.1"] * 2),
            (2, "ads.example.com", ["198.51.100.7"], [], ["http/1.1"]),
            (81, "csdnimg.cn", ["4.2.2.1", "4.2.2.2"], [], ["h2"] * 6 + ["http/1.1"] * 3),
        ],
    )
    dump(HERE / "csdn" / "csdn.net.har", csdn)

    (HERE / "campaign.json").write_text(
        json.dumps(
            {
                "browser": {"name": "Chrome", "version": "120.0"},
                "policy": "H2",
                "window": {"width": 1920, "height": 1080},
                "adblock": False,
                "timeout_ms": 18000,
                "probe": {
                    "id": "probe-paris-1",
                    "location": {"city": "Paris", "country": "FR"},
                    "access_network": {"kind": "Fiber", "operator": "Orange"},
                },
                "websites": ["www.example.com", "www.lefigaro.fr", "www.csdn.net"],
                "fixtures": "tables",
            },
            indent=2,
        )
        + "\n"
    )


if __name__ == "__main__":
    main()
