"""Reproduce the grouping trend: learned affinity beats plain clustering beats one group.

Trains two models on the trend profile (configs/trend.json): one with the
edge loss and one without it. Prints membership accuracy for every evaluation
mode and writes figures to the output directory. Takes roughly two minutes on
one CPU core.

    python3 demos/trend.py [out_dir]
"""
import sys
import time
from pathlib import Path

from socialact import LabelSet, evaluate, load_config, synth_corpus, train
from socialact.plotting import plot_group_histogram, plot_loss_curves, plot_metric_bars

out = Path(sys.argv[1] if len(sys.argv) > 1 else "trend_out")
out.mkdir(parents=True, exist_ok=True)
labels = LabelSet.cad()
cfg = load_config(Path(__file__).parent.parent / "configs" / "trend.json")

scenes, batches = synth_corpus(cfg.synth_config(labels))
split = {name: ([s for s in scenes if s.split == name],
                [b for s, b in zip(scenes, batches) if s.split == name]) for name in ("train", "test")}
b = batches[0]
model_cfg = cfg.model_config(labels, b.P, b.D, b.D_g)

runs = {}
for name, run_cfg in (("learn2cluster", cfg), ("cluster", cfg.with_overrides(lambda2=0.0))):
    t0 = time.perf_counter()
    runs[name] = train(*split["train"], run_cfg.train_config(model_cfg), labels)
    print(f"trained {name} model in {time.perf_counter() - t0:.0f}s")

# group and individuals do not look at the affinity, so which model backs them
# only changes the activity predictions, not membership
rates = {}
for mode, model_name in (("group", "cluster"), ("individuals", "cluster"),
                         ("cluster", "cluster"), ("learn2cluster", "learn2cluster")):
    rep = evaluate(runs[model_name].model, *split["test"], mode, labels)
    rates[mode] = rep.rates()
    print(f"{mode:>13}: membership {rates[mode]['membership_acc']:.3f}  "
          f"social {rates[mode]['social_acc']:.3f}  individual {rates[mode]['individual_acc']:.3f}")

m = {mode: r["membership_acc"] for mode, r in rates.items()}
trend_ok = m["learn2cluster"] > m["cluster"] > m["group"]
print("learn2cluster > cluster > group:", trend_ok)

written = plot_group_histogram(scenes, labels, out)
written += plot_loss_curves({k: r.log for k, r in runs.items()}, out)
written += plot_metric_bars(rates, out)
for p in written:
    print("wrote", p)
