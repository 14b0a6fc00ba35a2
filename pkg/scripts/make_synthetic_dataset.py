#!/usr/bin/env python3
"""Write synthetic QA dataset files in the formats the evaluate command reads.

Produces either a CSQA-style JSONL file (5-choice records) or a DocVQA-style
JSON file (OCR token context), so the full experiment loop can run without
downloading anything.
"""

import argparse
import json

from promptsan.evaluation import synthetic_qa_records


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--dataset", choices=("csqa", "docvqa"), default="csqa")
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    records = synthetic_qa_records(args.n, seed=args.seed, dataset=args.dataset)
    if args.dataset == "csqa":
        with open(args.out, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(
                    json.dumps(
                        {
                            "id": record.id,
                            "answerKey": record.gold,
                            "question": {
                                "stem": record.question,
                                "choices": [
                                    {"label": c.label, "text": c.text} for c in record.choices
                                ],
                            },
                        }
                    )
                    + "\n"
                )
    else:
        doc = {
            "dataset_name": "synthetic-docvqa",
            "data": [
                {
                    "questionId": record.id,
                    "question": record.question,
                    "answers": [record.gold],
                    "ocr_tokens": list(record.context),
                }
                for record in records
            ],
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    print(f"wrote {len(records)} {args.dataset} records to {args.out}")


if __name__ == "__main__":
    main()
