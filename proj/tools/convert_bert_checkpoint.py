#!/usr/bin/env python3
"""Convert a Hugging Face BERT checkpoint into the encoder directory format.

Output directory layout (what `encoder_choice: pretrained` reads):
  config.json   transformer shape
  encoder.bin   parameters, CDSTPRM1 format, float64
  vocab.txt     WordPiece vocabulary, copied

    python tools/convert_bert_checkpoint.py prajjwal1/bert-medium-dir checkpoints/bert-medium
"""

import argparse
import json
import shutil
import struct
import sys
from pathlib import Path

import numpy as np

MAGIC = b"CDSTPRM1"


def load_state_dict(src: Path) -> dict:
    if (src / "model.safetensors").exists():
        from safetensors.numpy import load_file

        return dict(load_file(str(src / "model.safetensors")))
    if (src / "pytorch_model.bin").exists():
        import torch

        sd = torch.load(src / "pytorch_model.bin", map_location="cpu", weights_only=True)
        return {k: v.to(torch.float64).numpy() for k, v in sd.items()}
    sys.exit(f"no model.safetensors or pytorch_model.bin in {src}")


def get(sd: dict, name: str) -> np.ndarray:
    for key in (name, "bert." + name):
        if key in sd:
            return np.asarray(sd[key], dtype=np.float64)
    # Old TF-converted checkpoints name LayerNorm parameters gamma/beta.
    alt = name.replace("LayerNorm.weight", "LayerNorm.gamma").replace("LayerNorm.bias", "LayerNorm.beta")
    for key in (alt, "bert." + alt):
        if key in sd:
            return np.asarray(sd[key], dtype=np.float64)
    sys.exit(f"checkpoint has no tensor {name}")


def row(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1)


def convert(sd: dict, layers: int) -> list:
    """(name, matrix) pairs. Linear weights are stored in x out."""
    out = [
        ("embeddings.word", get(sd, "embeddings.word_embeddings.weight")),
        ("embeddings.position", get(sd, "embeddings.position_embeddings.weight")),
        ("embeddings.type", get(sd, "embeddings.token_type_embeddings.weight")),
        ("embeddings.ln.gain", row(get(sd, "embeddings.LayerNorm.weight"))),
        ("embeddings.ln.bias", row(get(sd, "embeddings.LayerNorm.bias"))),
    ]
    linear = {
        "query": "attention.self.query",
        "key": "attention.self.key",
        "value": "attention.self.value",
        "attention_output": "attention.output.dense",
        "intermediate": "intermediate.dense",
        "output": "output.dense",
    }
    norms = {"attention_ln": "attention.output.LayerNorm", "output_ln": "output.LayerNorm"}
    for i in range(layers):
        hf = f"encoder.layer.{i}."
        ours = f"layer.{i}."
        for name in ("query", "key", "value", "attention_output"):
            out.append((ours + name + ".weight", get(sd, hf + linear[name] + ".weight").T))
            out.append((ours + name + ".bias", row(get(sd, hf + linear[name] + ".bias"))))
            if name == "attention_output":
                out.append((ours + "attention_ln.gain", row(get(sd, hf + norms["attention_ln"] + ".weight"))))
                out.append((ours + "attention_ln.bias", row(get(sd, hf + norms["attention_ln"] + ".bias"))))
        for name in ("intermediate", "output"):
            out.append((ours + name + ".weight", get(sd, hf + linear[name] + ".weight").T))
            out.append((ours + name + ".bias", row(get(sd, hf + linear[name] + ".bias"))))
        out.append((ours + "output_ln.gain", row(get(sd, hf + norms["output_ln"] + ".weight"))))
        out.append((ours + "output_ln.bias", row(get(sd, hf + norms["output_ln"] + ".bias"))))
    return out


def write_parameters(path: Path, params: list) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(params)))
        for name, m in params:
            b = name.encode()
            f.write(struct.pack("<I", len(b)))
            f.write(b)
            f.write(struct.pack("<QQ", m.shape[0], m.shape[1]))
            f.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("src", type=Path, help="Hugging Face model directory")
    ap.add_argument("out", type=Path, help="output directory")
    ap.add_argument("--identifier", default=None, help="encoder identifier (default: source directory name)")
    args = ap.parse_args()

    hf = json.loads((args.src / "config.json").read_text())
    if hf.get("hidden_act", "gelu") != "gelu":
        sys.exit(f"unsupported activation {hf['hidden_act']} (only exact gelu)")
    if hf.get("position_embedding_type", "absolute") != "absolute":
        sys.exit("only absolute position embeddings are supported")
    config = {
        "vocab_size": hf["vocab_size"],
        "hidden_size": hf["hidden_size"],
        "num_hidden_layers": hf["num_hidden_layers"],
        "num_attention_heads": hf["num_attention_heads"],
        "intermediate_size": hf["intermediate_size"],
        "max_position_embeddings": hf["max_position_embeddings"],
        "type_vocab_size": hf["type_vocab_size"],
        "layer_norm_eps": hf.get("layer_norm_eps", 1e-12),
        "initializer_range": hf.get("initializer_range", 0.02),
        "identifier": args.identifier or args.src.resolve().name,
    }
    params = convert(load_state_dict(args.src), config["num_hidden_layers"])

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    write_parameters(args.out / "encoder.bin", params)
    shutil.copyfile(args.src / "vocab.txt", args.out / "vocab.txt")
    print(f"wrote {len(params)} tensors to {args.out}")


if __name__ == "__main__":
    main()
