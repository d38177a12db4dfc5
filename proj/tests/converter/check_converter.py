"""Round trip: random BertModel -> converter -> C++ encoder, compared with
the Hugging Face forward pass in float64.

Usage: check_converter.py <encoder_dump exe> <converter script> <work dir>
Exits 77 (skipped) when torch or transformers is missing.
"""

import json
import shutil
import subprocess
import sys
from pathlib import Path

try:
    import torch
    from transformers import BertConfig, BertModel
except ImportError:
    print("torch/transformers not installed; skipping")
    sys.exit(77)

import numpy as np

TOL = 1e-9

dump, converter, work = sys.argv[1], sys.argv[2], Path(sys.argv[3])
shutil.rmtree(work, ignore_errors=True)
hf_dir, out_dir = work / "hf", work / "converted"

torch.manual_seed(0)
config = BertConfig(vocab_size=40, hidden_size=16, num_hidden_layers=2, num_attention_heads=4,
                    intermediate_size=24, max_position_embeddings=32, type_vocab_size=2,
                    hidden_dropout_prob=0.0, attention_probs_dropout_prob=0.0)
model = BertModel(config, add_pooling_layer=False).double().eval()
# Non-trivial norm parameters so a swapped gain/bias would show.
with torch.no_grad():
    for name, p in model.named_parameters():
        if "LayerNorm" in name:
            p.add_(0.1 * torch.randn_like(p))
model.save_pretrained(hf_dir, safe_serialization=True)
(hf_dir / "vocab.txt").write_text("\n".join(["[PAD]", "[UNK]", "[CLS]", "[SEP]"] + [f"w{i}" for i in range(36)]) + "\n")

subprocess.run([sys.executable, converter, str(hf_dir), str(out_dir)], check=True)

worst = 0.0
for ids, segs in [([2, 5, 9, 3, 11, 3], [0, 0, 0, 0, 1, 1]), ([2, 39, 3], [0, 1, 1]), (list(range(2, 32)), [0] * 15 + [1] * 15)]:
    with torch.no_grad():
        ref = model(input_ids=torch.tensor([ids]), token_type_ids=torch.tensor([segs])).last_hidden_state[0].numpy()
    got = json.loads(subprocess.run([dump, str(out_dir), ",".join(map(str, ids)), ",".join(map(str, segs))],
                                    check=True, capture_output=True, text=True).stdout)
    worst = max(worst, float(abs(ref - np.array(got)).max()))

print(f"max abs difference {worst:.3e}")
sys.exit(0 if worst < TOL else 1)
