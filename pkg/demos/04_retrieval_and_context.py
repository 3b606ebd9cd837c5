"""Exact cosine retrieval and context assembly for chunked inference.

Shows the neighbor search in CLS-embedding space, the pooled/deduplicated
ranking of candidates for a target chunk, and the chunk plan that drives
in-context inference.
"""

import numpy as np

from iclct import data as D
from iclct.config import ModelConfig, RunConfig
from iclct.retrieval import assemble_context, build_index, chunked_inference_plan, knn
from iclct.training import ModelBundle

table = D.synthetic_portfolio(2000, seed=9)
vocab, stats = D.VocabularyMap.fit(table), D.TrainStats.fit(table)
ds = D.encode(table, vocab, stats)

cfg = RunConfig(model=ModelConfig(dim=16, heads=2, encoder_layers=1))
bundle = ModelBundle(cfg, ds.cat_cardinalities(), ds.cont.shape[1], seed=9)

embeddings = bundle.embed_eval(ds)
index = build_index(embeddings, np.arange(ds.n))

print("nearest neighbors of row 0 (id, cosine similarity):")
for nid, sim in knn(index, embeddings[0], 5):
    print(f"  {nid:5d}  {sim:.6f}  Region={table.col('Region')[nid]}  "
          f"DrivAge={table.col('DrivAge')[nid]:.0f}")

chunk = embeddings[100:150]
asm = assemble_context(index, chunk, k=16, c=120, exclude_ids=np.arange(100, 150))
print(f"\ncontext assembly for a 50-row chunk: pool {asm.pool_size} candidates, "
      f"kept {len(asm.selected_ids)}")
print(f"best/worst kept similarity: {asm.selected_scores[0]:.4f} / {asm.selected_scores[-1]:.4f}")

plan = chunked_inference_plan(index, embeddings[:450], m=200, k=16, c=120)
print(f"\nchunk plan over 450 targets: {[(sl.start, sl.stop) for sl, _ in plan]}")
