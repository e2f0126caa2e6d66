"""Small run configs for harness tests."""

import shutil
import tempfile
from pathlib import Path

TINY = """
# one hidden layer, four classes
model=mlp
depth=1
width=16
vocab_size=8
max_len=6
n_classes=4
n_train=192
n_val=48
optimizer=adam
epochs_pretrain=8
pretrain_learning_rate=0.05
learning_rate=0.05
epochs_train=2
epochs_finetune=1
batch_size=32
target_sparsity=0.1
tasks=permute
methods=structured,unstructured
sparsities=0.001,0.0025,0.005,0.01
seeds=0
"""

TINY_TRANSFORMER = """
model=transformer
layers=1
heads=2
d_model=8
vocab_size=8
max_len=5
n_classes=4
n_train=64
n_val=32
optimizer=adam
epochs_pretrain=2
pretrain_learning_rate=0.02
learning_rate=0.02
epochs_train=1
epochs_finetune=1
batch_size=32
"""


class TempDirMixin:
    def make_tmp(self):
        tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, tmp)
        return tmp

    def write_config(self, tmp, text=TINY, name="run.cfg"):
        path = tmp / name
        path.write_text(text, encoding="utf-8")
        return path
