"""Quickstart: plant groups in a small synthetic corpus, train, and read the scores.

Runs in about ten seconds:

    python3 demos/quickstart.py
"""
import numpy as np

from socialact import (
    LabelSet,
    SynthConfig,
    TrainConfig,
    ModelConfig,
    LossWeights,
    evaluate,
    infer_social,
    synth_corpus,
    train,
)

labels = LabelSet.cad()

# A corpus of 60 scenes. Each actor's feature grid is its group's centroid plus
# a prototype for its own action plus per-cell noise, so group membership is
# recoverable from the features but not trivially from the action labels.
synth = SynthConfig(n_scenes=120, P=3, D=16, D_g=16, seed=3)
scenes, batches = synth_corpus(synth)
train_s = [s for s in scenes if s.split == "train"]
train_b = [b for s, b in zip(scenes, batches) if s.split == "train"]
test_s = [s for s in scenes if s.split == "test"]
test_b = [b for s, b in zip(scenes, batches) if s.split == "test"]
print(f"{len(train_s)} training scenes, {len(test_s)} test scenes")

s = test_s[0]
print(f"first test scene: {s.n_actors} actors in {len(s.groups)} group(s)")
for g in s.groups:
    print("   members", sorted(g.members), "->", labels.social_labels[g.activity])

# Small model, short schedule. Stage 1 trains the action head only; stage 2 adds
# the group activity and edge (co-membership) terms.
model_cfg = ModelConfig.for_labels(labels, P=3, D=16, D_g=16, E=16, H=4, dropout_p=0.0)
cfg = TrainConfig(
    model=model_cfg,
    stage1_epochs=20,
    stage2_epochs=40,
    batch_size=1,
    lr_start=1e-3,
    lr_end=1e-4,
    weights=LossWeights(lambda1=5.0, lambda2=50.0),
    seed=0,
)
result = train(train_s, train_b, cfg, labels)
first = next(r for r in result.log if r["stage"] == 2)
last = result.log[-1]
print(f"stage 2: loss {first['loss']:.3f} -> {last['loss']:.3f}, edge {first['edge']:.3f} -> {last['edge']:.3f}")

# Spectral partition of the learned attention affinity vs. the baselines
for mode in ("group", "individuals", "learn2cluster"):
    rep = evaluate(result.model, test_s, test_b, mode, labels)
    r = rep.rates()
    print(f"{mode:>13}: membership {r['membership_acc']:.3f}  social {r['social_acc']:.3f}")

pred = infer_social(result.model, test_b[0], "learn2cluster")
print("predicted groups for the first test scene:")
for members, act in zip(pred.partition.groups, pred.group_activity):
    print("   members", sorted(members), "->", labels.social_labels[act])
print("predicted actions:", [labels.action_labels[a] for a in np.asarray(pred.actor_action)])
