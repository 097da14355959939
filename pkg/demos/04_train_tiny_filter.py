"""
Training a small joint spatial/spectral filter
==============================================

A scaled-down FT-JNF is trained on a few simulated scenes for a couple of
hundred steps. The loss should drop steadily. With so little data the model
will not generalise. The point is to see the training loop and the
checkpoint format.
"""
import tempfile
from pathlib import Path

import numpy as np

from jnfbench.corpus import SyntheticCorpus
from jnfbench.dataset import simulate_dataset
from jnfbench.evaluation import PipelineSpec, evaluate, format_table
from jnfbench.neural import ModelConfig, build_model, load_checkpoint
from jnfbench.training import TrainConfig, fit_input_scale, train

corpus = SyntheticCorpus(seed=0, size=6 * 6)
data = simulate_dataset(corpus, {"train": 4, "val": 1, "test": 1}, root_seed=0)

scale = fit_input_scale(data["train"])
model = build_model(ModelConfig("FT-JNF", hidden=(16, 8), input_scale=scale), np.random.default_rng(0))
cfg = TrainConfig(batch_size=2, crop_seconds=1.0, max_epochs=100, max_steps=120, seed=0)

run_dir = Path(tempfile.mkdtemp(prefix="jnf-demo-"))
state = train(model, data["train"], cfg, data["val"], run_dir=run_dir)
losses = state.step_losses
print(f"{len(losses)} steps: loss {losses[0]:.1f} -> {np.mean(losses[-10:]):.1f} (mean of last 10)")
print("best epoch", state.best_epoch, "with validation loss", round(state.best_validation_loss, 1))

restored = load_checkpoint(run_dir / "best.ckpt", expect_variant="FT-JNF")
reports = evaluate([PipelineSpec(["identity"]), PipelineSpec([restored], tag="FT-JNF (tiny)"),
                    PipelineSpec(["mvdr-oracle"])], data["test"])
print(format_table(reports))
