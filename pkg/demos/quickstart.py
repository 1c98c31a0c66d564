"""End-to-end tour at toy scale (under a minute on one core).

Generates a small paired image/tabular set, pre-trains with the three
objectives, compares masked reconstruction against mean imputation, fits a
linear probe and runs a short missingness sweep.

    python demos/quickstart.py
"""

import numpy as np

from tip_ssl.data import SynthConfig, feature_importance, synth_generate
from tip_ssl.harness import (
    FinetuneConfig,
    evaluate_classification,
    evaluate_imputation,
    finetune,
    mean_impute_baseline,
    reports_to_table,
    run_missingness_sweep,
)
from tip_ssl.model import ModelConfig, TIPModel
from tip_ssl.ssl import PretrainConfig, pretrain_loop
from tip_ssl.vision import VisionConfig

model_cfg = ModelConfig(d_model=32, n_heads=4, tab_layers=2, interact_layers=2, proj_dim=16, gi_hidden=64,
                        gt_hidden=32, vision=VisionConfig(image_size=8, widths=(16, 16), strides=(1, 2)))
data = synth_generate(SynthConfig(n_samples=600, image_size=8, seed=0))
train, val, test = data.split("train"), data.split("val"), data.split("test")
print(f"{len(data)} samples, {data.schema.n_categorical} categorical + {data.schema.n_continuous} continuous columns")

model = TIPModel(model_cfg, data.schema, seed=0)
res = pretrain_loop(train, model, PretrainConfig(epochs=8, batch_size=32, lr=2e-3, warmup_epochs=1),
                    log=lambda r: None)
print("epoch mean loss:", " ".join(f"{x:.3f}" for x in res.epoch_losses))
last = res.trace[-1]
print(f"last step: itc {last['l_itc']:.3f}  itm {last['l_itm']:.3f}  mtr {last['l_mtr']:.3f}")

reports = evaluate_imputation(model, test, [0.3, 0.5])
reports += [mean_impute_baseline(test, s) for s in (0.3, 0.5)]
print(reports_to_table(reports))

finetune(model, train, val, FinetuneConfig(epochs=40))
print(f"linear probe test accuracy {evaluate_classification(model, test).value:.3f} (chance 0.25)")

ranking, scores = feature_importance(train.values, train.labels, data.schema)
print("columns by importance:", [data.schema.columns[j].name for j in ranking])
sweep = run_missingness_sweep(model, test, ["MIFM", "LIFM"], [0.0, 0.25, 0.5], [0], importance=ranking)
print(reports_to_table(sweep))
