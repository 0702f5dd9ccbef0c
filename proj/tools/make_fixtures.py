#!/usr/bin/env python3
"""Writes the small synthetic registry extracts under data/ used by tests and demos."""
import csv
import datetime as dt
import math
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "data"
START = dt.date(2020, 9, 1)
DAYS = 91
COUNTIES = [(1, "Schleswig-Holstein", 1002, "SK Kiel", 6.0),
            (5, "Nordrhein-Westfalen", 5374, "LK Oberbergischer Kreis", 10.0),
            (5, "Nordrhein-Westfalen", 5315, "SK Köln", 25.0)]
AGE_GROUPS = [("A00-A04", 0.04), ("A05-A14", 0.09), ("A15-A34", 0.33),
              ("A35-A59", 0.33), ("A60-A79", 0.15), ("A80+", 0.06)]
CASE_HEADER = ["FID", "IdBundesland", "Bundesland", "Landkreis", "Altersgruppe", "Geschlecht",
               "AnzahlFall", "AnzahlTodesfall", "Refdatum", "IdLandkreis", "Datenstand", "NeuerFall",
               "NeuerTodesfall", "Meldedatum", "NeuGenesen", "AnzahlGenesen", "IstErkrankungsbeginn",
               "Altersgruppe2"]
ICU_HEADER = ["bundesland", "gemeindeschluessel", "anzahl_meldebereiche", "faelle_covid_aktuell",
              "faelle_covid_aktuell_beatmet", "anzahl_standorte", "betten_frei", "betten_belegt",
              "daten_stand"]


def main():
    rng = random.Random(20201212)
    OUT.mkdir(exist_ok=True)
    fid = 0
    with open(OUT / "cases_sample.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CASE_HEADER)
        for d in range(DAYS):
            day = START + dt.timedelta(days=d)
            for state, state_name, county, county_name, base in COUNTIES:
                level = base * math.exp(0.03 * d)
                for group, share in AGE_GROUPS:
                    for sex, sex_share in (("M", 0.49), ("W", 0.49), ("unbekannt", 0.02)):
                        lam = level * share * sex_share
                        n = sum(1 for _ in range(int(lam * 3) + 3) if rng.random() < lam / (int(lam * 3) + 3))
                        if n == 0:
                            continue
                        fid += 1
                        stamp = day.strftime("%Y/%m/%d 00:00:00")
                        report = (day + dt.timedelta(days=rng.randint(0, 3))).strftime("%Y/%m/%d 00:00:00")
                        w.writerow([fid, state, state_name, county_name, group, sex, n, 0, stamp, county,
                                    "12.12.2020, 00:00 Uhr", 0, -9, report, 0, n, 1, "Nicht übermittelt"])
            if d % 30 == 17:
                fid += 1
                w.writerow([fid, 5, "Nordrhein-Westfalen", "SK Köln", "A35-A59", "M", -1, 0,
                            day.strftime("%Y/%m/%d 00:00:00"), 5315, "12.12.2020, 00:00 Uhr", -1, -9,
                            day.strftime("%Y/%m/%d 00:00:00"), 0, 0, 1, "Nicht übermittelt"])
    with open(OUT / "icu_sample.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(ICU_HEADER)
        for d in range(14, DAYS):
            day = START + dt.timedelta(days=d)
            for state, _, county, _, base in COUNTIES:
                occupied = max(0, round(base * 0.12 * math.exp(0.03 * (d - 14)) + rng.gauss(0, 1)))
                vent = min(occupied, max(0, round(occupied * 0.45 + rng.gauss(0, 0.7))))
                w.writerow([state, county, 3, occupied, vent, 2, 20 + rng.randint(0, 10), 60 + occupied,
                            day.isoformat()])


if __name__ == "__main__":
    main()
