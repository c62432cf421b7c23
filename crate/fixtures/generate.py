"""Regenerates the bundled 5-station, 60-day fixture and its expected totals.

Run from any directory: python3 fixtures/generate.py
"""

import csv
import json
import math
import random
from datetime import date, datetime, timedelta
from pathlib import Path

HERE = Path(__file__).resolve().parent
FIRST = date(2024, 8, 15)
N_DAYS = 60
SWITCH = date(2024, 9, 16)  # first day written to the month-first file

STATIONS = [
    # cpid, lon, lat, class, public, tariff start, neighbourhood
    ("51001", -4.2518, 55.8609, "AC", "true", "", "City Centre"),
    ("51002", -4.2731, 55.8702, "Rapid", "true", "", "Woodlands"),
    ("51003", -4.2305, 55.8531, "AC", "true", "2024-09-15", "Calton"),
    ("51004", -4.2890, 55.8485, "AC", "false", "", "Kinning Park"),
    ("51005", -4.2412, 55.8788, "AC", "true", "2024-09-15", "Royston"),
]

HEADER = ["CPID", "Start Date", "Start Time", "End Date", "End Time", "Duration", "Total kWh", "Cost", "Site", "Local Authority"]


def poisson(rng, lam):
    limit, k, p = math.exp(-lam), 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def fmt_date(d, month_first):
    return d.strftime("%m/%d/%Y") if month_first else d.strftime("%d/%m/%Y")


def fmt_duration(minutes):
    return f"{minutes // 60}:{minutes % 60:02d}:00"


def session_row(cpid, start, minutes, kwh, cost, month_first):
    end = start + timedelta(minutes=minutes)
    return [
        cpid,
        fmt_date(start.date(), month_first),
        start.strftime("%H:%M"),
        fmt_date(end.date(), month_first),
        end.strftime("%H:%M"),
        fmt_duration(minutes),
        f"{kwh:.2f}",
        f"{cost:.2f}",
        f"Site {cpid}",
        "Glasgow City",
    ]


def main():
    rng = random.Random(20240815)
    days = [FIRST + timedelta(days=t) for t in range(N_DAYS)]

    weather = []
    for t, d in enumerate(days):
        weather.append((d.isoformat(), round(15.0 - 6.0 * t / N_DAYS + rng.uniform(-2, 2), 1),
                        round(rng.uniform(1.5, 9.0), 1), round(rng.uniform(60, 95), 1)))

    files = {False: [], True: []}
    kept = {}
    for s_idx, (cpid, _, _, klass, public, tariff, _) in enumerate(STATIONS):
        for t, d in enumerate(days):
            wd = d.weekday()
            eta = 0.7 + (0.6 if klass == "Rapid" else 0.0) + (0.2 if public == "true" else 0.0)
            eta += {4: 0.25, 5: -0.1, 6: -0.45}.get(wd, 0.0) + 0.15 * math.sin(t / 8.0 + s_idx)
            n = poisson(rng, math.exp(eta))
            # Every station is active on the first and last fixture day.
            if t in (0, N_DAYS - 1) and n == 0:
                n = 1
            free = tariff != "" and d < date.fromisoformat(tariff)
            for _ in range(n):
                start = datetime(d.year, d.month, d.day, rng.randint(6, 21), rng.randint(0, 59))
                minutes = rng.randint(20, 180)
                kwh = rng.uniform(3.0, 70.0 if klass == "Rapid" else 40.0)
                cost = 0.0 if free else 0.45 * kwh
                month_first = d >= SWITCH
                files[month_first].append(session_row(cpid, start, minutes, kwh, cost, month_first))
                kept[(cpid, d)] = kept.get((cpid, d), 0) + 1

    # Records that the curation rules must drop, one rule each.
    bad = {"null-entry": 0, "unparseable-timestamp": 0, "excluded-cpid": 0, "zero-duration": 0,
           "zero-energy": 0, "over-capacity": 0, "over-tariff": 0, "missing-station": 0}

    def add_bad(rule, row, month_first):
        files[month_first].append(row)
        bad[rule] += 1

    d0 = datetime(2024, 8, 20, 10, 0)
    d1 = datetime(2024, 9, 25, 14, 30)
    row = session_row("51001", d0, 60, 10.0, 4.5, False)
    row[0] = ""
    add_bad("null-entry", row, False)
    row = session_row("51002", d1, 60, 10.0, 4.5, True)
    row[6] = ""
    add_bad("null-entry", row, True)
    row = session_row("51001", d0, 60, 10.0, 4.5, False)
    row[1] = "not a date"
    add_bad("unparseable-timestamp", row, False)
    for k in range(4):
        add_bad("excluded-cpid", session_row("62266", d0 + timedelta(days=k), 45, 12.0, 5.4, False), False)
    row = session_row("51003", d1, 60, 10.0, 4.5, True)
    row[5] = "0:00:00"
    add_bad("zero-duration", row, True)
    add_bad("zero-energy", session_row("51004", d0, 60, 0.0, 0.0, False), False)
    add_bad("over-capacity", session_row("51002", d1, 90, 150.0, 20.0, True), True)
    add_bad("over-tariff", session_row("51005", d0, 90, 30.0, 75.0, False), False)
    for k in range(2):
        add_bad("missing-station", session_row("59999", d1 + timedelta(days=k), 30, 8.0, 3.6, True), True)

    for month_first, name in ((False, "sessions_dayfirst.csv"), (True, "sessions_monthfirst.csv")):
        rows = files[month_first]
        rng.shuffle(rows)
        with open(HERE / name, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(HEADER)
            w.writerows(rows)

    with open(HERE / "stations.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["cpid", "lon", "lat", "connector_class", "is_public_access", "tariff_start_date", "neighbourhood"])
        w.writerows(STATIONS)

    with open(HERE / "weather.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["date", "temp_c", "wind_ms", "humidity_pct"])
        w.writerows(weather)

    first_seen, last_seen = {}, {}
    for cpid, d in kept:
        first_seen[cpid] = min(first_seen.get(cpid, d), d)
        last_seen[cpid] = max(last_seen.get(cpid, d), d)
    active_rows = sum((last_seen[c] - first_seen[c]).days + 1 for c in first_seen)
    calendar = sorted({d for (_, d) in kept})
    n_input = sum(len(r) for r in files.values())
    expected = {
        "n_cpids": len(first_seen),
        "n_days": (calendar[-1] - calendar[0]).days + 1,
        "first_day": calendar[0].isoformat(),
        "last_day": calendar[-1].isoformat(),
        "total_sessions": sum(kept.values()),
        "session_day_records": len(kept),
        "panel_rows_active_window": active_rows,
        "input_records": n_input,
        "dropped": {k: v for k, v in sorted(bad.items())},
        "date_policies": {"sessions_dayfirst.csv": "day-first", "sessions_monthfirst.csv": "month-first"},
    }
    with open(HERE / "expected.json", "w") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
