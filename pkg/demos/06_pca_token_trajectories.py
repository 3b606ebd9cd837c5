"""PCA trajectories of CLS tokens across the model stages.

One PCA is fitted on the base model's test-set CLS tokens; the tokens of
ten probe policies (prediction deciles) are projected with that same fit at
every later stage, so the effect of outcome decoration, in-context
attention and joint fine-tuning is directly visible as movement in a fixed
plane. Writes pca_trajectories.csv; pass --plot for a PNG (needs
matplotlib).
"""

import copy
import sys

from iclct import data as D
from iclct.analysis import compute_stage_tokens, decile_probe_indices, pca_trajectories
from iclct.config import ModelConfig, PhaseConfig, RunConfig
from iclct.training import phase1_train, phase2_train, phase3_finetune

train_t = D.synthetic_portfolio(3000, seed=8)
test_t = D.synthetic_portfolio(800, seed=18)
vocab, stats = D.VocabularyMap.fit(train_t), D.TrainStats.fit(train_t)
train, test = D.encode(train_t, vocab, stats), D.encode(test_t, vocab, stats)

cfg = RunConfig(
    model=ModelConfig(dim=16, heads=2, encoder_layers=1, icl_layers=2),
    phase1=PhaseConfig(lr=1e-3, epochs=3, patience=3, batch_size=512),
    phase2=PhaseConfig(lr=3e-4, epochs=1, patience=1, context_size=300,
                       chunk_size=100, k_neighbors=16),
    phase3=PhaseConfig(lr=3e-5, epochs=1, patience=1, context_size=300,
                       chunk_size=100, k_neighbors=16),
    seed=8,
)

b1, _ = phase1_train(train, cfg)
b2, _ = phase2_train(copy.deepcopy(b1), train, cfg)
b3, _ = phase3_finetune(copy.deepcopy(b2), train, cfg)

probes = decile_probe_indices(b1.predict_plain(test) / test.v, 10)
probe_ds = test.subset(probes)
stages = compute_stage_tokens(probe_ds, train, b2, b3, phase1_bundle=b1,
                              phase_cfg=cfg.phase2)
six = {s: t for s, t in stages.items() if s != "ct-base"}
pca, projections = pca_trajectories(b1.embed_eval(test), six, k=2)

print(f"explained variance of the two leading components: "
      f"{pca.explained_variance[0]:.4f}, {pca.explained_variance[1]:.4f}")

with open("pca_trajectories.csv", "w", encoding="utf-8") as fh:
    fh.write("probe,stage,pc1,pc2\n")
    for stage, proj in sorted(projections.items()):
        for p in range(proj.shape[0]):
            fh.write(f"{p},{stage},{proj[p, 0]:.6g},{proj[p, 1]:.6g}\n")
print("wrote pca_trajectories.csv")

if "--plot" in sys.argv:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 6))
    for stage, proj in sorted(projections.items()):
        ax.scatter(proj[:, 0], proj[:, 1], label=stage, s=25)
    for p in range(10):
        xs = [projections[s][p, 0] for s in ("pre-base", "pre-decorated", "pre-final")]
        ys = [projections[s][p, 1] for s in ("pre-base", "pre-decorated", "pre-final")]
        ax.plot(xs, ys, color="grey", linewidth=0.6)
    ax.set_xlabel("pc1")
    ax.set_ylabel("pc2")
    ax.legend(fontsize=8)
    fig.savefig("pca_trajectories.png", dpi=150)
    print("wrote pca_trajectories.png")
