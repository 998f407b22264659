"""Regenerate the frozen test fixtures.

Requires: transformers, torch, safetensors, cryptography, numpy.

  python3 scripts/make_clip_vocab.py bpe_simple_vocab_16e6.txt.gz assets/clip
  python3 scripts/gen_fixtures.py

Outputs
  assets/tiny-encoder/{model.safetensors,config.json}  seeded CLIP text tower (f16 storage)
  crates/core/tests/fixtures/tokenizer_corpus.json      prompt -> reference ids
  crates/core/tests/fixtures/encoder_hidden.safetensors prompt -> reference last_hidden_state
  crates/core/tests/fixtures/latent_vectors.json        ChaCha20 + Box-Muller normals
"""
import itertools
import json
import math
import os
import random
import struct

import numpy as np
import torch
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms
from safetensors.torch import save_file
from transformers import CLIPTextConfig, CLIPTextModel, CLIPTokenizerFast

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ASSETS = os.path.join(ROOT, "assets")
FIXTURES = os.path.join(ROOT, "crates", "core", "tests", "fixtures")

QUOTED = [
    "a headshot of a woman",
    "a headshot of a man",
    "a nurse, man, glasses",
    "a nurse",
    "man, glasses",
    "man with eyeglasses",
    "a dog",
    "painting",
    "a person with an eyeglass",
    "a person with mustache",
    "A woman with eyeglasses",
    "A man with mustache",
    "A woman",
    "a man",
    "sea",
    "eyeglasses",
    "dressed woman",
    "dressed man",
    "Makeup",
    "a photo of a cat",
]

EDGE = [
    "",
    "   ",
    "A   Dog",
    "HELLO World!!!",
    "it's a dog's life",
    "they'll've done it, I'd say",
    "café crème brûlée",
    "café au lait",
    "naïve façade",
    "Zoë's résumé",
    "1234 5678",
    "3.14159 radians",
    "#hashtag @user",
    "emoji 🐶🎨 dog",
    "日本語のテキスト",
    "tab\tseparated\nnewline",
    "hyphen-ated words--and dashes",
    "(parenthesized) [bracketed] {braced}",
    "a photo of a cat, trending on artstation, 8k, octane render",
    "Hi there",
    "hello world!!!",
    "Hello Båstad",
    "ÀÉÎÕÜ uppercase accents",
    "snake_case and CamelCase",
]

SUBJECTS = ["a woman", "a man", "a nurse", "a dog", "a cat", "a car", "an old man", "a young girl"]
ATTRS = ["eyeglasses", "a mustache", "makeup", "blue eyes", "a beard", "a hat", "red lipstick"]
TEMPLATES = [
    "a photo of {s}",
    "a headshot of {s} with {a}",
    "{s} with {a}",
    "a painting of {s}, {a}",
    "portrait of {s} wearing {a}, 4k, highly detailed",
    "{s} by the sea",
]

_words = random.Random(7)
LONG = " ".join(
    _words.choice(["red", "dog", "painting", "sunset", "over", "the", "mountains", "glasses", "woman"])
    for _ in range(200)
)

ENCODER_PROMPTS = [
    "a headshot of a woman",
    "a headshot of a man",
    "a nurse",
    "a dog",
    "eyeglasses",
    "a person with an eyeglass",
    "painting",
    "man, glasses",
    "a nurse, man, glasses",
    "a photo of a cat",
    "sea",
    "dressed woman",
    "",
    LONG,
]


def corpus():
    out = list(QUOTED) + list(EDGE) + [LONG, LONG[:300]]
    for t, s, a in itertools.product(TEMPLATES, SUBJECTS, ATTRS):
        p = t.format(s=s, a=a)
        if p not in out:
            out.append(p)
    rng = random.Random(0)
    head = out[: len(QUOTED) + len(EDGE) + 2]
    rest = out[len(head):]
    rng.shuffle(rest)
    return head + rest[:200]


def write_tokenizer_corpus(tok):
    rows = []
    for p in corpus():
        ids = tok(p, padding="max_length", max_length=77, truncation=True).input_ids
        rows.append({"prompt": p, "ids": ids})
    with open(os.path.join(FIXTURES, "tokenizer_corpus.json"), "w", encoding="utf-8") as f:
        json.dump(rows, f, ensure_ascii=False, indent=0)
    print("tokenizer corpus:", len(rows))


def build_tiny_encoder():
    cfg = CLIPTextConfig(
        vocab_size=49408,
        hidden_size=32,
        intermediate_size=128,
        num_hidden_layers=2,
        num_attention_heads=4,
        max_position_embeddings=77,
        hidden_act="quick_gelu",
        layer_norm_eps=1e-5,
        bos_token_id=49406,
        eos_token_id=49407,
        pad_token_id=49407,
        attn_implementation="eager",
    )
    torch.manual_seed(1234)
    model = CLIPTextModel(cfg).eval()
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "layer_norm" in name:
                if name.endswith("weight"):
                    p.copy_(1.0 + 0.2 * torch.randn_like(p))
                else:
                    p.copy_(0.1 * torch.randn_like(p))
            elif "embedding" in name:
                p.copy_(0.5 * torch.randn_like(p))
            elif name.endswith("weight"):
                p.copy_(torch.randn_like(p) / math.sqrt(p.shape[1]))
            else:
                p.copy_(0.05 * torch.randn_like(p))
            # storage is f16; compute on the exact f16 values widened to f32
            p.copy_(p.half().float())
    out_dir = os.path.join(ASSETS, "tiny-encoder")
    os.makedirs(out_dir, exist_ok=True)
    tensors = {k: v.half().contiguous() for k, v in model.state_dict().items() if "position_ids" not in k}
    save_file(tensors, os.path.join(out_dir, "model.safetensors"), metadata={"format": "pt"})
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(
            {
                "hidden_size": cfg.hidden_size,
                "intermediate_size": cfg.intermediate_size,
                "num_hidden_layers": cfg.num_hidden_layers,
                "num_attention_heads": cfg.num_attention_heads,
                "max_position_embeddings": cfg.max_position_embeddings,
                "vocab_size": cfg.vocab_size,
                "hidden_act": cfg.hidden_act,
                "layer_norm_eps": cfg.layer_norm_eps,
            },
            f,
            indent=2,
        )
    return model


def write_encoder_fixtures(model, tok):
    tensors = {}
    meta = {}
    with torch.no_grad():
        for i, p in enumerate(ENCODER_PROMPTS):
            ids = tok(p, padding="max_length", max_length=77, truncation=True, return_tensors="pt").input_ids
            hidden = model(input_ids=ids).last_hidden_state[0].float().contiguous()
            tensors[f"hidden.{i}"] = hidden
            tensors[f"ids.{i}"] = ids[0].to(torch.int64).contiguous()
            meta[f"prompt.{i}"] = p
    meta["count"] = str(len(ENCODER_PROMPTS))
    save_file(tensors, os.path.join(FIXTURES, "encoder_hidden.safetensors"), metadata=meta)
    print("encoder fixtures:", len(ENCODER_PROMPTS))


def chacha20_u64s(seed, n):
    key = struct.pack("<Q", seed) + bytes(24)
    enc = Cipher(algorithms.ChaCha20(key, bytes(16)), mode=None).encryptor()
    stream = enc.update(bytes(8 * n))
    return [struct.unpack_from("<Q", stream, 8 * i)[0] for i in range(n)]


def box_muller(seed, count):
    words = chacha20_u64s(seed, count + (count % 2))
    out = []
    for a, b in zip(words[0::2], words[1::2]):
        u1 = ((a >> 11) + 1) * 2.0**-53
        u2 = (b >> 11) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        out.append(float(np.float32(r * math.cos(2.0 * math.pi * u2))))
        out.append(float(np.float32(r * math.sin(2.0 * math.pi * u2))))
    return words, out[:count]


def write_latent_vectors():
    rows = []
    for seed in [0, 7, 42, 2**63 + 5]:
        words, normals = box_muller(seed, 16)
        rows.append({"seed": seed, "u64": [str(w) for w in words[:4]], "normals": normals})
    with open(os.path.join(FIXTURES, "latent_vectors.json"), "w") as f:
        json.dump(rows, f, indent=1)


def main():
    os.makedirs(FIXTURES, exist_ok=True)
    clip = os.path.join(ASSETS, "clip")
    tok = CLIPTokenizerFast(os.path.join(clip, "vocab.json"), os.path.join(clip, "merges.txt"))
    write_tokenizer_corpus(tok)
    model = build_tiny_encoder()
    write_encoder_fixtures(model, tok)
    write_latent_vectors()


if __name__ == "__main__":
    main()
