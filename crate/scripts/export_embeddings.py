#!/usr/bin/env python3
"""Fill a stance embedding cache with pooled vectors from a Hugging Face model.

`stance train-ensemble` and `stance evaluate` write `<cache>.requests.jsonl`
when a pre-trained encoder needs vectors the cache does not hold. Each line
carries the cache key, the cache id ("<model>/<pooling>") and the exact
rendered input. This script encodes those inputs and appends records to the
cache in the format the Rust side reads.

    python scripts/export_embeddings.py \
        --requests runs/roberta-large/embeddings.bin.requests.jsonl \
        --cache runs/roberta-large/embeddings.bin \
        --model roberta-large
"""

import argparse
import hashlib
import json
import os
import struct
import sys

MAGIC = b"STEMBC01"
VERSION = 1


def encode_record(key: bytes, values) -> bytes:
    dim = struct.pack("<I", len(values))
    body = struct.pack("<%df" % len(values), *values)
    digest = hashlib.sha256(key + dim + body).digest()
    return key + dim + body + digest[:8]


def open_cache_for_append(path: str):
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        f = open(path, "wb")
        f.write(MAGIC + struct.pack("<I", VERSION))
        return f
    with open(path, "rb") as f:
        head = f.read(12)
    if head[:8] != MAGIC:
        sys.exit(f"{path} is not an embedding cache")
    if struct.unpack("<I", head[8:12])[0] != VERSION:
        sys.exit(f"{path} has an unsupported cache version")
    return open(path, "ab")


def read_requests(path: str, cache_id: str):
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            r = json.loads(line)
            if r["cache_id"] != cache_id:
                sys.exit(f"request for {r['cache_id']} does not match --model/--pooling ({cache_id})")
            out.append((bytes.fromhex(r["key"]), r["input"]))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--requests", required=True)
    ap.add_argument("--cache", required=True)
    ap.add_argument("--model", required=True, help="Hugging Face model id, e.g. roberta-large")
    ap.add_argument("--pooling", choices=["pooler", "cls"], default="pooler")
    ap.add_argument("--max-tokens", type=int, default=512)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--device", default=None)
    args = ap.parse_args()

    import torch
    from transformers import AutoModel, AutoTokenizer

    cache_id = f"{args.model}/{args.pooling}"
    requests = read_requests(args.requests, cache_id)
    if not requests:
        print("no requests")
        return

    device = args.device or ("cuda" if torch.cuda.is_available() else "cpu")
    tok = AutoTokenizer.from_pretrained(args.model)
    model = AutoModel.from_pretrained(args.model).to(device).eval()

    written = 0
    with open_cache_for_append(args.cache) as out, torch.no_grad():
        for i in range(0, len(requests), args.batch_size):
            batch = requests[i : i + args.batch_size]
            # the rendered inputs already carry the model's start/separator/end markers
            enc = tok(
                [text for _, text in batch],
                add_special_tokens=False,
                truncation=True,
                max_length=args.max_tokens,
                padding=True,
                return_tensors="pt",
            ).to(device)
            res = model(**enc)
            if args.pooling == "pooler":
                pooled = res.pooler_output
            else:
                pooled = res.last_hidden_state[:, 0]
            for (key, _), vec in zip(batch, pooled.float().cpu().tolist()):
                out.write(encode_record(key, vec))
                written += 1
    print(f"appended {written} vectors to {args.cache}")


if __name__ == "__main__":
    main()
