import sys, time
import numpy as np
sys.path.insert(0, "/root/pkg/src")
from polyseq import datagen, evaluation
from polyseq.model import Detector, ModelConfig, Trainer, images_to_tensor

mode = sys.argv[1] if len(sys.argv) > 1 else "parallel"
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 6000

gc = datagen.GenConfig(task="gates", image_w=64, image_h=64, n_min=1, n_max=4, seed=42)
scenes = [datagen.generate_scene(gc, i) for i in range(64)]
gts = evaluation.gts_from_scenes(scenes)

if mode == "parallel":
    mc = ModelConfig(task="gates", d_model=64, n_heads=4, enc_layers=2, dec_layers=2,
                     n_queries=12, ffn_mult=2)
else:
    mc = ModelConfig(task="gates", decode_mode="autoregressive", d_model=64, n_heads=4,
                     enc_layers=2, dec_layers=2, ffn_mult=2, max_seq_len=16)
model = Detector(mc, seed=0)
trainer = Trainer(model, lr=3e-4, lr_backbone=3e-5)

def eval_map50():
    dets = []
    if mode == "parallel":
        for s0 in range(0, 64, 8):
            batch = scenes[s0:s0+8]
            preds = model.predict_parallel(images_to_tensor(batch))
            for s, p in zip(batch, preds):
                dets.extend(evaluation.detections_from_parallel(p, s.index, "gates"))
    else:
        for s in scenes:
            mem = model.forward_image(images_to_tensor([s]))[0]
            pred = model.greedy_decode(mem)
            objs, confs = model.ar_detections(pred)
            dets.extend(evaluation.detections_from_ar(objs, confs, s.index))
    return evaluation.ap_at_iou(dets, gts, 0.5, resolution=512)

def sentence_acc():
    from polyseq import seqcodec
    hits = 0
    for s in scenes:
        mem = model.forward_image(images_to_tensor([s]))[0]
        pred = model.greedy_decode(mem)
        want = [t.cls for t in seqcodec.encode_scene(s.labels, "gates")]
        got = [t.cls for t in pred.tokens]
        hits += got == want
    return hits / 64

t0 = time.perf_counter()
for step in range(1, steps + 1):
    i0 = ((step - 1) * 8) % 64
    loss = trainer.step(scenes[i0:i0+8])
    if step % 250 == 0 or step == steps:
        ap = eval_map50()
        extra = f" sent_acc={sentence_acc():.3f}" if mode == "ar" else ""
        print(f"step {step} loss {loss:.3f} mAP@0.5 {ap:.3f}{extra} "
              f"elapsed {time.perf_counter()-t0:.0f}s", flush=True)
        if ap >= 0.97 and (mode == "parallel" or sentence_acc() >= 0.95):
            print("target reached, stopping early", flush=True)
            break
print(f"TOTAL {time.perf_counter()-t0:.0f}s", flush=True)
