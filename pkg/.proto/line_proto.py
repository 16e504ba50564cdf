import sys, time
import numpy as np
sys.path.insert(0, "/root/pkg/src")
from polyseq import datagen, evaluation
from polyseq.model import Detector, ModelConfig, Trainer, images_to_tensor

mode = sys.argv[1]            # parallel | ar
seed = int(sys.argv[2])
steps = int(sys.argv[3]) if len(sys.argv) > 3 else 12000
drop = int(sys.argv[4]) if len(sys.argv) > 4 else 8000

gc = datagen.GenConfig(task="line", image_w=64, image_h=64, n_min=1, n_max=1, seed=seed)
held = [datagen.generate_scene(gc, 10_000_019 + i) for i in range(64)]

if mode == "parallel":
    mc = ModelConfig(task="line", d_model=64, n_heads=4, enc_layers=2, dec_layers=2,
                     n_queries=24, ffn_mult=2)
else:
    mc = ModelConfig(task="line", decode_mode="autoregressive", d_model=64, n_heads=4,
                     enc_layers=2, dec_layers=2, ffn_mult=2, max_seq_len=16)
model = Detector(mc, seed=seed)
trainer = Trainer(model, lr=3e-4, lr_backbone=3e-5, lr_drop_step=drop)

def ap(scenes):
    dets = []
    if mode == "parallel":
        for s0 in range(0, len(scenes), 8):
            batch = scenes[s0:s0+8]
            preds = model.predict_parallel(images_to_tensor(batch))
            for s, p in zip(batch, preds):
                dets.extend(evaluation.detections_from_parallel(p, s.index, "line"))
    else:
        for s in scenes:
            mem = model.forward_image(images_to_tensor([s]))[0]
            pred = model.greedy_decode(mem)
            objs, confs = model.ar_detections(pred)
            dets.extend(evaluation.detections_from_ar(objs, confs, s.index))
    gts = evaluation.gts_from_scenes(scenes)
    rep = evaluation.map_l1_lines(dets, gts)
    return rep.ap_per_threshold[0.05], rep.ap_per_threshold[0.1], rep.mean_ap

t0 = time.perf_counter()
cpu0 = time.process_time()
for step in range(1, steps + 1):
    batch = [datagen.generate_scene(gc, (step - 1) * 8 + k) for k in range(8)]
    loss = trainer.step(batch)
    if step % 1000 == 0 or step == steps:
        a05, a10, m = ap(held)
        print(f"step {step} loss {loss:.4f} held ap05={a05:.3f} ap10={a10:.3f} "
              f"map={m:.3f} cpu {time.process_time()-cpu0:.0f}s "
              f"wall {time.perf_counter()-t0:.0f}s", flush=True)
print(f"TOTAL cpu {time.process_time()-cpu0:.0f}s wall {time.perf_counter()-t0:.0f}s",
      flush=True)
