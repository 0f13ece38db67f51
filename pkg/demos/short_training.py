"""Train for a few epochs on a small corpus, then evaluate and look at how
features and the transition matrix react to a flip.

Run with ``python3 demos/short_training.py [work_dir]``; it takes about a
minute on one CPU core.
"""
import json
import sys
from pathlib import Path

from scribbleseg import scribbledata as sd
from scribbleseg.config import config_from_dict
from scribbleseg.gridtransform import TransformSpec
from scribbleseg.trainer import evaluate, load_split, train, variation_report

work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
corpus = work / "corpus"
sd.generate_corpus(sd.CorpusConfig(seed=0, n_train=120, n_val=30), corpus)

# Half the epochs warm up on scribbles and soft entropy, then the
# eigenspace term joins in.
cfg = config_from_dict({"corpus": str(corpus), "epochs": 8, "seed": 0})
model, logs = train(cfg, work / "run")
for r in logs:
    ss = f"{r['self_supervision']:.4f}" if "self_supervision" in r else "  --  "
    print(f"epoch {r['epoch']} [{r['stage']:>6}] pCE {r['partial_ce']:.3f} "
          f"entropy {r['soft_entropy']:.3f} ss {ss} alpha {r['alpha']:+.3f} val mIoU {r['val_miou']:.3f}")

report = evaluate(work / "run" / "checkpoint.pt", corpus, "val")
print("per-class IoU:", [round(v, 3) for v in report.per_class_iou])

# Relative change of each quantity when the input is flipped.
table = variation_report(model, load_split(corpus, "val"), TransformSpec.flip())
print(json.dumps({k: round(v, 1) for k, v in table.items()}))
