import sys, time
import numpy as np
sys.path.insert(0, "/root/pkg/src")
from polyseq import datagen, evaluation
from polyseq.model import Detector, ModelConfig, Trainer, images_to_tensor

n_queries = int(sys.argv[1])
seed = int(sys.argv[2])
steps = int(sys.argv[3]) if len(sys.argv) > 3 else 16000
drop = int(sys.argv[4]) if len(sys.argv) > 4 else 12000

gc = datagen.GenConfig(task="gates", image_w=64, image_h=64, n_min=1, n_max=4, seed=seed)
monitor = [datagen.generate_scene(gc, 10_000_019 + i) for i in range(64)]
final = [datagen.generate_scene(gc, 20_000_019 + i) for i in range(256)]

mc = ModelConfig(task="gates", d_model=64, n_heads=4, enc_layers=2, dec_layers=2,
                 n_queries=n_queries, ffn_mult=2)
model = Detector(mc, seed=seed)
trainer = Trainer(model, lr=3e-4, lr_backbone=3e-5, lr_drop_step=drop)

def scores(scenes):
    dets = []
    for s0 in range(0, len(scenes), 8):
        batch = scenes[s0:s0+8]
        preds = model.predict_parallel(images_to_tensor(batch))
        for s, p in zip(batch, preds):
            dets.extend(evaluation.detections_from_parallel(p, s.index, "gates"))
    gts = evaluation.gts_from_scenes(scenes)
    rep = evaluation.map_iou(dets, gts, "gates", resolution=512)
    return rep.ap_per_threshold[0.5], rep.mean_ap

t0 = time.perf_counter()
cpu0 = time.process_time()
for step in range(1, steps + 1):
    batch = [datagen.generate_scene(gc, (step - 1) * 8 + k) for k in range(8)]
    loss = trainer.step(batch)
    if step % 1000 == 0 or step == steps:
        a50, m = scores(monitor)
        print(f"step {step} loss {loss:.4f} held ap50={a50:.3f} map={m:.3f} "
              f"cpu {time.process_time()-cpu0:.0f}s wall {time.perf_counter()-t0:.0f}s",
              flush=True)
a50, m = scores(final)
print(f"FINAL 256 scenes ap50={a50:.3f} map={m:.3f}", flush=True)
print(f"TOTAL cpu {time.process_time()-cpu0:.0f}s wall {time.perf_counter()-t0:.0f}s",
      flush=True)
