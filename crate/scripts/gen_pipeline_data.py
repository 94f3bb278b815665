#!/usr/bin/env python3
"""Generates the bundled pipeline data deterministically.

Outputs (under data/pipeline/):
  corpus.jsonl       ~1000 short encyclopedic documents
  task.jsonl         ~100 QA examples with a 0/1 score
  logprobs.jsonl     per-token log-probs for each example rendered with the
                     default template "Q: {x}\\nA: {y}"
  generations.jsonl  model-style generations for the novelty check

The log-probs come from an add-one bigram model fitted on the corpus, plus a
little seeded noise, so frequent corpus continuations score higher.

Usage: python3 scripts/gen_pipeline_data.py [out_dir]
"""

import json
import math
import random
import re
import sys
from collections import Counter
from pathlib import Path

SEED = 20240917

COUNTRIES = [
    ("France", "Paris", "French", "Europe", "euro", "the Eiffel Tower"),
    ("Germany", "Berlin", "German", "Europe", "euro", "the Brandenburg Gate"),
    ("Italy", "Rome", "Italian", "Europe", "euro", "the Colosseum"),
    ("Spain", "Madrid", "Spanish", "Europe", "euro", "the Prado Museum"),
    ("Portugal", "Lisbon", "Portuguese", "Europe", "euro", "the Belem Tower"),
    ("Greece", "Athens", "Greek", "Europe", "euro", "the Acropolis"),
    ("Poland", "Warsaw", "Polish", "Europe", "zloty", "the Royal Castle"),
    ("Sweden", "Stockholm", "Swedish", "Europe", "krona", "the Vasa Museum"),
    ("Norway", "Oslo", "Norwegian", "Europe", "krone", "the Opera House"),
    ("Finland", "Helsinki", "Finnish", "Europe", "euro", "the Suomenlinna fortress"),
    ("Austria", "Vienna", "German", "Europe", "euro", "the Schonbrunn Palace"),
    ("Hungary", "Budapest", "Hungarian", "Europe", "forint", "the Parliament Building"),
    ("Japan", "Tokyo", "Japanese", "Asia", "yen", "the Tokyo Tower"),
    ("China", "Beijing", "Chinese", "Asia", "yuan", "the Forbidden City"),
    ("India", "New Delhi", "Hindi", "Asia", "rupee", "the India Gate"),
    ("Thailand", "Bangkok", "Thai", "Asia", "baht", "the Grand Palace"),
    ("Vietnam", "Hanoi", "Vietnamese", "Asia", "dong", "the Temple of Literature"),
    ("Indonesia", "Jakarta", "Indonesian", "Asia", "rupiah", "the National Monument"),
    ("Egypt", "Cairo", "Arabic", "Africa", "pound", "the Great Pyramid"),
    ("Kenya", "Nairobi", "Swahili", "Africa", "shilling", "the Nairobi National Park"),
    ("Nigeria", "Abuja", "English", "Africa", "naira", "the Aso Rock"),
    ("Morocco", "Rabat", "Arabic", "Africa", "dirham", "the Hassan Tower"),
    ("Ghana", "Accra", "English", "Africa", "cedi", "the Independence Arch"),
    ("Brazil", "Brasilia", "Portuguese", "South America", "real", "the Cathedral of Brasilia"),
    ("Argentina", "Buenos Aires", "Spanish", "South America", "peso", "the Obelisk"),
    ("Peru", "Lima", "Spanish", "South America", "sol", "the Plaza Mayor"),
    ("Chile", "Santiago", "Spanish", "South America", "peso", "the Costanera Center"),
    ("Colombia", "Bogota", "Spanish", "South America", "peso", "the Gold Museum"),
    ("Canada", "Ottawa", "English", "North America", "dollar", "the Parliament Hill"),
    ("Mexico", "Mexico City", "Spanish", "North America", "peso", "the Zocalo"),
    ("Cuba", "Havana", "Spanish", "North America", "peso", "the Malecon"),
    ("Australia", "Canberra", "English", "Oceania", "dollar", "the Parliament House"),
    ("New Zealand", "Wellington", "English", "Oceania", "dollar", "the Te Papa museum"),
    ("Turkey", "Ankara", "Turkish", "Asia", "lira", "the Anitkabir"),
    ("Iran", "Tehran", "Persian", "Asia", "rial", "the Azadi Tower"),
    ("Ireland", "Dublin", "Irish", "Europe", "euro", "the Trinity College library"),
]

FILLER = [
    "The region has a long history of trade and migration.",
    "Tourism is an important part of the local economy.",
    "The climate varies from the coast to the mountains.",
    "Many visitors arrive during the summer months.",
    "Public transport connects the major districts.",
    "The old town contains markets, churches and small museums.",
    "Agriculture remains common in the rural provinces.",
    "Several universities are located in the metropolitan area.",
    "Local festivals celebrate music, food and seasonal harvests.",
    "The railway network was expanded during the last century.",
]


def fact_sentences(c):
    country, capital, lang, cont, cur, landmark = c
    return [
        f"The capital of {country} is {capital}.",
        f"{capital} is the capital city of {country}.",
        f"{capital} is known for {landmark}.",
        f"The official language of {country} is {lang}.",
        f"People in {country} speak {lang}.",
        f"{country} is a country in {cont}.",
        f"The currency of {country} is the {cur}.",
        f"Visitors to {capital} often see {landmark}.",
    ]


def questions(c):
    country, capital, lang, cont, cur, landmark = c
    return [
        (f"What is the capital of {country}?", f"The capital of {country} is {capital}."),
        (f"Which language is spoken in {country}?", f"People in {country} speak {lang}."),
        (f"On which continent is {country}?", f"{country} is a country in {cont}."),
        (f"What is the currency of {country}?", f"The currency of {country} is the {cur}."),
        (f"What is {capital} known for?", f"{capital} is known for {landmark}."),
    ]


WORD = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")


def words(text):
    return WORD.findall(text.lower())


LLM_TOKEN = re.compile(r"\s*[A-Za-z0-9']+|\s*[^\sA-Za-z0-9']|\s+$")


def llm_tokens(text):
    toks = LLM_TOKEN.findall(text)
    assert "".join(toks) == text, text
    return toks


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/pipeline")
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)

    # Popularity falls off with list position, so some facts are far more
    # frequent in the corpus than others.
    weights = [1.0 / (i + 1) ** 0.9 for i in range(len(COUNTRIES))]
    docs = []
    for _ in range(1000):
        c = rng.choices(COUNTRIES, weights=weights)[0]
        facts = fact_sentences(c)
        k = rng.randint(1, 3)
        body = rng.sample(facts, k) + rng.sample(FILLER, rng.randint(1, 2))
        rng.shuffle(body)
        docs.append(" ".join(body))
    with open(out / "corpus.jsonl", "w") as f:
        for d in docs:
            f.write(json.dumps({"text": d}) + "\n")

    unigram = Counter()
    bigram = Counter()
    for d in docs:
        w = words(d)
        unigram.update(w)
        bigram.update(zip(w, w[1:]))
    vocab = len(unigram) + 1

    pool = [(c, q) for c in COUNTRIES for q in questions(c)]
    rng.shuffle(pool)
    examples = []
    for i, (c, (x, y)) in enumerate(pool[:100]):
        rank = COUNTRIES.index(c)
        p_correct = 0.95 - 0.6 * rank / len(COUNTRIES)
        score = 1.0 if rng.random() < p_correct else 0.0
        examples.append({"input": x, "output": y, "score": score})
    with open(out / "task.jsonl", "w") as f:
        for e in examples:
            f.write(json.dumps(e) + "\n")

    with open(out / "logprobs.jsonl", "w") as f:
        for i, e in enumerate(examples):
            text = f"Q: {e['input']}\nA: {e['output']}"
            toks = llm_tokens(text)
            offsets, pos = [], 0
            for t in toks:
                offsets.append(pos)
                pos += len(t)
            lps, prev = [], None
            for t in toks:
                w = t.strip().lower()
                num = bigram[(prev, w)] + 1 if prev else unigram[w] + 1
                den = (unigram[prev] if prev else sum(unigram.values())) + vocab
                lp = math.log(num / den) - 0.05 * rng.random()
                lps.append(round(min(lp, 0.0), 6))
                prev = w if w else prev
            f.write(json.dumps({
                "example_id": i,
                "model_id": "toy-bigram",
                "tokens": toks,
                "logprobs": lps,
                "offsets": offsets,
            }) + "\n")

    novel_words = ["zorblat", "quindle", "mervask", "tolluna", "brisket"]
    with open(out / "generations.jsonl", "w") as f:
        for i, e in enumerate(examples[:40]):
            gen = e["output"]
            if i % 2 == 1:
                parts = gen.rstrip(".").split(" ")
                parts[-1] = rng.choice(novel_words)
                gen = " ".join(parts) + "."
            f.write(json.dumps({"example_id": i, "input": e["input"], "generated": gen}) + "\n")


if __name__ == "__main__":
    main()
