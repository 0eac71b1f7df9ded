"""Write a synthetic evaluation manifest (masks + vocab + manifest.jsonl).

The generated layouts intentionally include records that each filter clause
rejects: person-class objects (when --with-person), object counts outside
2..4, and sub-5% masks.
"""
import argparse

from tcig.core import ClassVocabulary, default_vocabulary
from tcig.evalharness import synthetic_records, write_manifest


def vocabulary_with_person() -> ClassVocabulary:
    base = default_vocabulary()
    pairs = [(e.name, e.color) for e in base.entries]
    pairs.append(("person", (0.7, 0.5, 0.3)))
    return ClassVocabulary.from_pairs(pairs)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    parser.add_argument("--records", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--size", type=int, default=24)
    parser.add_argument("--with-person", action="store_true",
                        help="Include a person class so the exclusion clause fires.")
    args = parser.parse_args()

    vocab = vocabulary_with_person() if args.with_person else default_vocabulary()
    records = synthetic_records(
        args.records, vocab, width=args.size, height=args.size, seed=args.seed
    )
    path = write_manifest(records, args.out_dir)
    print(f"wrote {len(records)} records to {path}")


if __name__ == "__main__":
    main()
