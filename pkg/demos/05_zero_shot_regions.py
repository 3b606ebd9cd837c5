"""Zero-shot prediction for regions never seen during training.

The lowest-exposure regions are held out entirely and relabeled "unseen";
a second group of small regions stays in training under the same "unseen"
label so the model learns a parameter for it. At inference the held-out
rows carry no usable region label, and the in-context mechanism has to fill
the gap from similar training policies.
"""

import numpy as np

from iclct import data as D
from iclct.config import ModelConfig, PhaseConfig, RunConfig
from iclct.decoder import NullModel, poisson_deviance
from iclct.training import deterministic_guard, phase1_train, phase2_train

table = D.synthetic_portfolio(12000, seed=12)
train_t, test_t, rep = D.zero_shot_split(table)
print(f"train: {rep.train_policies} policies ({rep.train_relabeled} relabeled unseen), "
      f"frequency {100 * rep.frequency('train'):.2f}%")
print(f"test:  {rep.test_policies} policies (all unseen regions), "
      f"frequency {100 * rep.frequency('test'):.2f}%")

rows = D.regional_summary(table)
print("\nlowest-exposure regions (the zero-shot test set):")
for r in rows[:5]:
    print(f"  {r.region}: {r.claims:.0f} claims, exposure {r.exposure:.0f}, "
          f"rate {r.rate:.2f}, own-rate deviance {r.deviance:.3f}")

vocab, stats = D.VocabularyMap.fit(train_t), D.TrainStats.fit(train_t)
train, test = D.encode(train_t, vocab, stats), D.encode(test_t, vocab, stats)
unseen_train = train.subset(np.flatnonzero(train_t.col("Region") == D.UNSEEN))

cfg = RunConfig(
    model=ModelConfig(dim=16, heads=2, encoder_layers=1, icl_layers=2),
    phase1=PhaseConfig(lr=1e-3, epochs=5, patience=3, batch_size=512),
    phase2=PhaseConfig(lr=3e-4, epochs=1, patience=1, context_size=400,
                       chunk_size=100, k_neighbors=32),
    seed=12,
)

with deterministic_guard():
    null = NullModel.fit(train.y, train.v)
    print(f"\nnull model   unseen-train {100 * poisson_deviance(unseen_train.y, null.predict(unseen_train.v).mu):.3f}  "
          f"test {100 * poisson_deviance(test.y, null.predict(test.v).mu):.3f}")

    bundle, _ = phase1_train(train, cfg)
    print(f"phase 1      unseen-train {100 * poisson_deviance(unseen_train.y, bundle.predict_plain(unseen_train)):.3f}  "
          f"test {100 * poisson_deviance(test.y, bundle.predict_plain(test)):.3f}")

    bundle, _ = phase2_train(bundle, train, cfg)
    mu_in = bundle.icl_predict(unseen_train, train, cfg.phase2)
    mu_out = bundle.icl_predict(test, train, cfg.phase2)
    print(f"phase 2 icl  unseen-train {100 * poisson_deviance(unseen_train.y, mu_in):.3f}  "
          f"test {100 * poisson_deviance(test.y, mu_out):.3f}")
